//! Dueling-response selection rules over a proposal set `S_t`.

use serde::{Deserialize, Serialize};

use crate::erm::EpistemicRewardModel;
use crate::error::{input_err, Result};
use crate::math::{population_variance, sigmoid};
use crate::policy::SoftmaxPolicy;
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::space::{ResponseRef, Universe};

/// Resampling cap before the passive pair falls back to the policy's runner-up.
pub const PASSIVE_RESAMPLE_CAP: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// Two independent draws from the current policy.
    PassivePair,
    /// Thompson sampling for both responses (explore & exploit).
    EeTs { retry_cap: usize },
    /// Thompson sample first, max preference-variance second (best-arm identification).
    BaiTs,
    /// Pair whose reward difference has the largest ensemble variance.
    UncertaintyPair,
}

/// The second response of a duel and whether a fallback produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondChoice<T> {
    pub response: ResponseRef<T>,
    pub fallback: bool,
}

/// Position of the best score, ties to the lower action id.
fn argmax_by_id<T: Scalar>(
    candidates: &[ResponseRef<T>],
    score: impl Fn(usize) -> T,
    skip: Option<usize>,
) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if Some(c.action_id) == skip {
            continue;
        }
        let s = score(i);
        best = match best {
            None => Some((i, s)),
            Some((bi, bs)) => {
                if s > bs || (s == bs && c.action_id < candidates[bi].action_id) {
                    Some((i, s))
                } else {
                    Some((bi, bs))
                }
            }
        };
    }
    best.map(|(i, _)| i)
}

/// Draws one head and returns the proposal it ranks highest.
pub fn select_first_ts<'a, T: Scalar>(
    erm: &EpistemicRewardModel<T>,
    candidates: &'a [ResponseRef<T>],
    rng: &mut RngStream,
) -> Result<&'a ResponseRef<T>> {
    if candidates.is_empty() {
        return input_err("empty proposal set");
    }
    let k = erm.posterior_sample(rng);
    let head = &erm.heads()[k];
    let rewards = candidates
        .iter()
        .map(|c| head.reward_features(&c.features))
        .collect::<Result<Vec<_>>>()?;
    let i = argmax_by_id(candidates, |i| rewards[i], None).unwrap();
    Ok(&candidates[i])
}

/// Repeats "sample a head, take its argmax over `S_t`" until the result
/// differs from `first`, at most `retry_cap` times. On exhaustion the last
/// head's best response other than `first` is used: from `S_t` when it has
/// one, otherwise from the whole universe.
pub fn select_second_ee<T: Scalar>(
    erm: &EpistemicRewardModel<T>,
    candidates: &[ResponseRef<T>],
    first: &ResponseRef<T>,
    universe: &Universe<T>,
    rng: &mut RngStream,
    retry_cap: usize,
) -> Result<SecondChoice<T>> {
    if candidates.is_empty() {
        return input_err("empty proposal set");
    }
    let table = erm.reward_table(candidates)?;
    let mut last = erm.posterior_sample(rng);
    let tries = retry_cap.max(1);
    for attempt in 0..tries {
        if attempt > 0 {
            last = erm.posterior_sample(rng);
        }
        let row = &table[last];
        let i = argmax_by_id(candidates, |i| row[i], None).unwrap();
        if candidates[i].action_id != first.action_id {
            return Ok(SecondChoice {
                response: candidates[i].clone(),
                fallback: false,
            });
        }
    }
    let row = &table[last];
    if let Some(i) = argmax_by_id(candidates, |i| row[i], Some(first.action_id)) {
        return Ok(SecondChoice {
            response: candidates[i].clone(),
            fallback: true,
        });
    }
    let head = &erm.heads()[last];
    let all = universe
        .responses
        .iter()
        .map(|c| head.reward_features(&c.features))
        .collect::<Result<Vec<_>>>()?;
    universe_fallback(universe, first, |i| all[i])
}

fn universe_fallback<T: Scalar>(
    universe: &Universe<T>,
    first: &ResponseRef<T>,
    score: impl Fn(usize) -> T,
) -> Result<SecondChoice<T>> {
    match argmax_by_id(&universe.responses, score, Some(first.action_id)) {
        Some(i) => Ok(SecondChoice {
            response: universe.responses[i].clone(),
            fallback: true,
        }),
        None => input_err("universe has no response distinct from the first"),
    }
}

/// `argmax_{b ∈ S_t \ {first}} V_k[σ(r_k(x,first) − r_k(x,b))]`. With a
/// singleton proposal set the maximization runs over the universe instead.
pub fn select_second_bai<T: Scalar>(
    erm: &EpistemicRewardModel<T>,
    candidates: &[ResponseRef<T>],
    first: &ResponseRef<T>,
    universe: &Universe<T>,
) -> Result<SecondChoice<T>> {
    let first_rewards = erm.head_rewards(first)?;
    let variances = |pool: &[ResponseRef<T>]| -> Result<Vec<T>> {
        let table = erm.reward_table(pool)?;
        Ok((0..pool.len())
            .map(|i| {
                let probs: Vec<T> = table
                    .iter()
                    .zip(&first_rewards)
                    .map(|(row, &rf)| sigmoid(rf - row[i]))
                    .collect();
                population_variance(&probs)
            })
            .collect())
    };
    let v = variances(candidates)?;
    if let Some(i) = argmax_by_id(candidates, |i| v[i], Some(first.action_id)) {
        return Ok(SecondChoice {
            response: candidates[i].clone(),
            fallback: false,
        });
    }
    let all = variances(&universe.responses)?;
    universe_fallback(universe, first, |i| all[i])
}

/// Unordered pair of `S_t` maximizing `V_k[r_k(a) − r_k(b)]`; ties resolve to
/// the lexicographically smallest `(min id, max id)`.
pub fn select_pair_uncertainty<'a, T: Scalar>(
    erm: &EpistemicRewardModel<T>,
    candidates: &'a [ResponseRef<T>],
) -> Result<(&'a ResponseRef<T>, &'a ResponseRef<T>)> {
    if candidates.len() < 2 {
        return input_err("uncertainty selection needs at least two proposals");
    }
    let table = erm.reward_table(candidates)?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&i| candidates[i].action_id);
    let mut best: Option<(usize, usize, T)> = None;
    let mut diffs = vec![T::zero(); table.len()];
    for (oi, &i) in order.iter().enumerate() {
        for &j in &order[oi + 1..] {
            for (d, row) in diffs.iter_mut().zip(&table) {
                *d = row[i] - row[j];
            }
            let v = population_variance(&diffs);
            if best.map_or(true, |(_, _, bv)| v > bv) {
                best = Some((i, j, v));
            }
        }
    }
    let (i, j, _) = best.unwrap();
    Ok((&candidates[i], &candidates[j]))
}

/// Two distinct draws from `π_θ`. The second is resampled up to
/// [`PASSIVE_RESAMPLE_CAP`] times, then replaced by the highest-logit action
/// other than the first. Returns `(y, y', fallback)`.
pub fn select_pair_passive<T: Scalar>(
    policy: &SoftmaxPolicy<T>,
    universe: &Universe<T>,
    rng: &mut RngStream,
) -> Result<(ResponseRef<T>, ResponseRef<T>, bool)> {
    if universe.len() < 2 {
        return input_err("passive selection needs at least two actions");
    }
    let w: Vec<f64> = policy.probs(universe).into_iter().map(|p| p.as_f64()).collect();
    let a = rng.categorical(&w);
    for _ in 0..PASSIVE_RESAMPLE_CAP {
        let b = rng.categorical(&w);
        if b != a {
            return Ok((universe.responses[a].clone(), universe.responses[b].clone(), false));
        }
    }
    let logits = policy.logits(universe);
    let b = argmax_by_id(&universe.responses, |i| logits[i], Some(a)).unwrap();
    Ok((universe.responses[a].clone(), universe.responses[b].clone(), true))
}

/// Samples `n` responses from `π_θ` and keeps the one with the highest
/// ensemble-mean reward (lowest action id on ties).
pub fn best_of_n<T: Scalar>(
    policy: &SoftmaxPolicy<T>,
    erm: &EpistemicRewardModel<T>,
    universe: &Universe<T>,
    n: usize,
    rng: &mut RngStream,
) -> Result<ResponseRef<T>> {
    if n == 0 {
        return input_err("best-of-n needs n >= 1");
    }
    let w: Vec<f64> = policy.probs(universe).into_iter().map(|p| p.as_f64()).collect();
    let sampled: Vec<ResponseRef<T>> = (0..n)
        .map(|_| universe.responses[rng.categorical(&w)].clone())
        .collect();
    let means = sampled
        .iter()
        .map(|c| erm.mean_reward(c))
        .collect::<Result<Vec<_>>>()?;
    let i = argmax_by_id(&sampled, |i| means[i], None).unwrap();
    Ok(sampled[i].clone())
}
