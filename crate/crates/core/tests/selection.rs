//! Selection rules against exhaustive search over the proposal set.

use duel_align::agent::selection::{select_first_ts, select_pair_uncertainty, select_second_bai};
use duel_align::erm::{EpistemicRewardModel, HeadOptimizer, RewardHead};
use duel_align::mlp::Mlp;
use duel_align::space::{ContextVec, ResponseRef, Universe};
use duel_align::{sigmoid, RngStream};

const FIXTURES: u64 = 1000;
const P: usize = 6;

struct Fixture {
    erm: EpistemicRewardModel<f64>,
    universe: Universe<f64>,
    candidates: Vec<ResponseRef<f64>>,
}

fn fixture(seed: u64) -> Fixture {
    let mut rng = RngStream::root(seed).child("fixture");
    let k = 1 + rng.index(8);
    let heads = (0..k)
        .map(|_| RewardHead::new(Mlp::random(P, &[4], &mut rng)))
        .collect();
    let erm = EpistemicRewardModel::from_heads(heads, 0.5, 0.01, HeadOptimizer::Sgd).unwrap();

    let n = 2 + rng.index(11);
    let mut feats: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        // some actions copy an earlier action's features to force exact ties
        if i > 0 && rng.uniform() < 0.25 {
            let j = rng.index(i);
            feats.push(feats[j].clone());
        } else {
            feats.push((0..P).map(|_| rng.uniform() * 2.0 - 1.0).collect());
        }
    }
    let universe = Universe {
        context: ContextVec::new(vec![0.0]).unwrap(),
        responses: feats
            .into_iter()
            .enumerate()
            .map(|(i, f)| ResponseRef::new(i, f).unwrap())
            .collect(),
    };

    let size = 1 + rng.index(n);
    let mut ids: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ids.swap(i, rng.index(i + 1));
    }
    let candidates = ids[..size].iter().map(|&i| universe.responses[i].clone()).collect();
    Fixture { erm, universe, candidates }
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Highest score, lowest action id among equal scores.
fn best(pool: &[&ResponseRef<f64>], score: impl Fn(&ResponseRef<f64>) -> f64) -> Option<usize> {
    let scores: Vec<f64> = pool.iter().map(|c| score(c)).collect();
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    pool.iter()
        .zip(&scores)
        .filter(|(_, &s)| s == top)
        .map(|(c, _)| c.action_id)
        .min()
}

#[test]
fn first_ts_matches_exhaustive_argmax() {
    for seed in 0..FIXTURES {
        let f = fixture(seed);
        let mut rng = RngStream::root(seed).child("ts");
        let k = f.erm.posterior_sample(&mut rng.clone());
        let head = &f.erm.heads()[k];
        let pool: Vec<&ResponseRef<f64>> = f.candidates.iter().collect();
        let expected = best(&pool, |c| head.reward_features(&c.features).unwrap()).unwrap();
        let got = select_first_ts(&f.erm, &f.candidates, &mut rng).unwrap();
        assert_eq!(got.action_id, expected, "fixture {seed}");
    }
}

#[test]
fn second_bai_matches_exhaustive_variance_search() {
    for seed in 0..FIXTURES {
        let f = fixture(seed);
        let mut rng = RngStream::root(seed).child("first");
        let first = f.candidates[rng.index(f.candidates.len())].clone();
        let pvar = |b: &ResponseRef<f64>| {
            let probs: Vec<f64> = f
                .erm
                .heads()
                .iter()
                .map(|h| sigmoid(h.reward_features(&first.features).unwrap() - h.reward_features(&b.features).unwrap()))
                .collect();
            variance(&probs)
        };
        let inside: Vec<&ResponseRef<f64>> = f.candidates.iter().filter(|c| c.action_id != first.action_id).collect();
        let (expected, fallback) = match best(&inside, pvar) {
            Some(id) => (id, false),
            None => {
                let all: Vec<&ResponseRef<f64>> =
                    f.universe.responses.iter().filter(|c| c.action_id != first.action_id).collect();
                (best(&all, pvar).unwrap(), true)
            }
        };
        let got = select_second_bai(&f.erm, &f.candidates, &first, &f.universe).unwrap();
        assert_eq!((got.response.action_id, got.fallback), (expected, fallback), "fixture {seed}");
    }
}

#[test]
fn uncertainty_pair_matches_exhaustive_pair_search() {
    let mut checked = 0;
    for seed in 0..FIXTURES * 2 {
        let f = fixture(seed);
        if f.candidates.len() < 2 {
            assert!(select_pair_uncertainty(&f.erm, &f.candidates).is_err());
            continue;
        }
        let rewards: Vec<Vec<f64>> = f
            .candidates
            .iter()
            .map(|c| f.erm.heads().iter().map(|h| h.reward_features(&c.features).unwrap()).collect())
            .collect();
        let mut pairs = Vec::new();
        for i in 0..f.candidates.len() {
            for j in 0..f.candidates.len() {
                let (a, b) = (f.candidates[i].action_id, f.candidates[j].action_id);
                if a < b {
                    let diffs: Vec<f64> = rewards[i].iter().zip(&rewards[j]).map(|(x, y)| x - y).collect();
                    pairs.push((variance(&diffs), a, b));
                }
            }
        }
        let top = pairs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let expected = pairs
            .iter()
            .filter(|p| p.0 == top)
            .map(|p| (p.1, p.2))
            .min()
            .unwrap();
        let (a, b) = select_pair_uncertainty(&f.erm, &f.candidates).unwrap();
        assert_eq!((a.action_id, b.action_id), expected, "fixture {seed}");
        checked += 1;
        if checked == FIXTURES {
            break;
        }
    }
    assert_eq!(checked, FIXTURES);
}
