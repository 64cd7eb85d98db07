//! Regret, win rates, total preference and von Neumann winner checks.

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::math::sigmoid;
use crate::oracle::{Judgement, OracleSpec};
use crate::policy::{ReferencePolicy, SoftmaxPolicy};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::space::{FeatureMap, ResponseRef, Universe};

/// Largest universe [`TotalPreferenceMode::Exact`] will enumerate.
pub const EXACT_MAX_ACTIONS: usize = 1024;
/// Bounds of instances accepted by [`von_neumann_check`].
pub const VON_NEUMANN_MAX_ACTIONS: usize = 16;
pub const VON_NEUMANN_MAX_CONTEXTS: usize = 8;
/// Above this many deterministic policies the check minimizes per context
/// instead of listing every policy explicitly.
pub const VON_NEUMANN_EXPLICIT_LIMIT: u64 = 1 << 16;

/// `r*(x,y*) − (r*(x,y) + r*(x,y'))/2` with `y*` the exact best response.
pub fn immediate_regret<T: Scalar>(
    oracle: &OracleSpec<T>,
    universe: &Universe<T>,
    y: &ResponseRef<T>,
    y_prime: &ResponseRef<T>,
) -> Result<T> {
    let best = oracle.reward_features(&oracle.best_response(universe)?.features)?;
    let x = &universe.context;
    let half = T::lit(0.5);
    let r = best - half * (oracle.reward(x, y)? + oracle.reward(x, y_prime)?);
    Ok(r.max(T::zero()))
}

/// Running mean of judgement scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WinTally {
    pub wins: u64,
    pub ties: u64,
    pub losses: u64,
}

impl WinTally {
    pub fn record(&mut self, j: Judgement) {
        match j {
            Judgement::Win => self.wins += 1,
            Judgement::Tie => self.ties += 1,
            Judgement::Loss => self.losses += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.wins + self.ties + self.losses
    }

    /// `(wins + ties/2) / total`, or `None` before any judgement.
    pub fn rate(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| (self.wins as f64 + 0.5 * self.ties as f64) / n as f64)
    }
}

/// Mean score of a set of judgements (both responses of every duel).
pub fn online_win_rate(judgements: &[Judgement]) -> Result<f64> {
    let mut tally = WinTally::default();
    judgements.iter().for_each(|&j| tally.record(j));
    tally
        .rate()
        .ok_or_else(|| crate::Error::Input("no judged responses".into()))
}

/// Fixed holdout contexts with one frozen reference response each.
#[derive(Clone, Debug)]
pub struct EvalSuite<T> {
    pub holdout: Vec<Universe<T>>,
    /// Reference action id per holdout context.
    pub references: Vec<usize>,
    pub eval_period: u64,
}

impl<T: Scalar> EvalSuite<T> {
    /// Draws `n` holdout contexts and a `π_ref` reference response for each.
    pub fn generate(
        feature_map: &FeatureMap<T>,
        reference: &ReferencePolicy<T>,
        n: usize,
        eval_period: u64,
        rng: &RngStream,
    ) -> Result<Self> {
        let mut ctx_rng = rng.child("holdout-contexts");
        let mut ref_rng = rng.child("holdout-references");
        let d = feature_map.dims().context_dim;
        let mut holdout = Vec::with_capacity(n);
        let mut references = Vec::with_capacity(n);
        for _ in 0..n {
            let u = feature_map.universe(&crate::space::ContextVec::sample(d, &mut ctx_rng))?;
            references.push(reference.policy().sample(&u, &mut ref_rng));
            holdout.push(u);
        }
        Ok(Self {
            holdout,
            references,
            eval_period,
        })
    }

    pub fn len(&self) -> usize {
        self.holdout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.holdout.is_empty()
    }
}

/// Greedy response of `policy` against the reference on every holdout context.
pub fn offline_win_rate<T: Scalar>(
    policy: &SoftmaxPolicy<T>,
    suite: &EvalSuite<T>,
    oracle: &OracleSpec<T>,
) -> Result<f64> {
    if suite.is_empty() {
        return input_err("evaluation suite is empty");
    }
    let mut tally = WinTally::default();
    for (u, &r) in suite.holdout.iter().zip(&suite.references) {
        let greedy = policy.greedy_response(u);
        tally.record(oracle.judge(&u.context, greedy, u.get(r)?)?);
    }
    Ok(tally.rate().unwrap())
}

/// A policy viewed as a distribution over the universe of each context.
pub trait ResponseDistribution<T: Scalar> {
    /// Probabilities indexed by action id for the `index`-th context.
    fn distribution(&self, universe: &Universe<T>, index: usize) -> Vec<T>;
}

impl<T: Scalar> ResponseDistribution<T> for SoftmaxPolicy<T> {
    fn distribution(&self, universe: &Universe<T>, _index: usize) -> Vec<T> {
        self.probs(universe)
    }
}

impl<T: Scalar> ResponseDistribution<T> for ReferencePolicy<T> {
    fn distribution(&self, universe: &Universe<T>, _index: usize) -> Vec<T> {
        self.policy().probs(universe)
    }
}

/// One fixed action per context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeterministicPolicy {
    pub actions: Vec<usize>,
}

impl<T: Scalar> ResponseDistribution<T> for DeterministicPolicy {
    fn distribution(&self, universe: &Universe<T>, index: usize) -> Vec<T> {
        let mut p = vec![T::zero(); universe.len()];
        p[self.actions[index]] = T::one();
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TotalPreferenceMode {
    /// Sum over the full product distribution.
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

/// `E_x E_{a∼π} E_{a'∼μ} P(a ≻ a' | x)`.
pub fn total_preference<T: Scalar>(
    pi: &dyn ResponseDistribution<T>,
    mu: &dyn ResponseDistribution<T>,
    contexts: &[Universe<T>],
    oracle: &OracleSpec<T>,
    mode: TotalPreferenceMode,
) -> Result<f64> {
    if contexts.is_empty() {
        return input_err("no contexts");
    }
    let rewards = reward_table(oracle, contexts)?;
    total_preference_from(pi, mu, contexts, &rewards, mode)
}

fn reward_table<T: Scalar>(oracle: &OracleSpec<T>, contexts: &[Universe<T>]) -> Result<Vec<Vec<f64>>> {
    contexts
        .iter()
        .map(|u| Ok(oracle.rewards(u)?.into_iter().map(|r| r.as_f64()).collect()))
        .collect()
}

/// [`total_preference`] with `r*` already evaluated on every universe.
fn total_preference_from<T: Scalar>(
    pi: &dyn ResponseDistribution<T>,
    mu: &dyn ResponseDistribution<T>,
    contexts: &[Universe<T>],
    table: &[Vec<f64>],
    mode: TotalPreferenceMode,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, u) in contexts.iter().enumerate() {
        if matches!(mode, TotalPreferenceMode::Exact) && u.len() > EXACT_MAX_ACTIONS {
            return input_err(format!(
                "exact total preference refuses universes above {EXACT_MAX_ACTIONS} actions"
            ));
        }
        let rewards = &table[i];
        let p: Vec<f64> = pi.distribution(u, i).into_iter().map(|v| v.as_f64()).collect();
        let q: Vec<f64> = mu.distribution(u, i).into_iter().map(|v| v.as_f64()).collect();
        total += match mode {
            TotalPreferenceMode::Exact => {
                let mut s = 0.0;
                for (a, &pa) in p.iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    for (b, &qb) in q.iter().enumerate() {
                        if qb != 0.0 {
                            s += pa * qb * sigmoid(rewards[a] - rewards[b]);
                        }
                    }
                }
                s
            }
            TotalPreferenceMode::MonteCarlo { samples, seed } => {
                if samples == 0 {
                    return input_err("Monte Carlo mode needs at least one sample");
                }
                let mut rng = RngStream::root(seed).child_indexed("total-preference", i as u64);
                (0..samples)
                    .map(|_| sigmoid(rewards[rng.categorical(&p)] - rewards[rng.categorical(&q)]))
                    .sum::<f64>()
                    / samples as f64
            }
        };
    }
    Ok(total / contexts.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VonNeumannReport {
    /// `r*`-greedy action per context.
    pub winner: Vec<usize>,
    pub passed: bool,
    /// Smallest `total_preference(π*, π')` over all deterministic `π'`.
    pub min_total_preference: f64,
    /// Number of deterministic policies covered, `N_A^{contexts}`.
    pub policies_covered: u64,
    /// Whether every policy was evaluated one by one.
    pub enumerated_explicitly: bool,
    /// `J(π*) = E_x max_y r*(x, y)`.
    pub optimal_value: f64,
}

/// Verifies that the `r*`-greedy policy beats or ties every deterministic
/// policy in total preference.
///
/// Total preference against a deterministic `π'` is a mean of per-context
/// terms that each depend only on `π'(x)`, so its minimum over all
/// `N_A^C` policies is attained by minimizing every context separately.
/// Small instances are additionally enumerated policy by policy.
pub fn von_neumann_check<T: Scalar>(oracle: &OracleSpec<T>, contexts: &[Universe<T>]) -> Result<VonNeumannReport> {
    if contexts.is_empty() {
        return input_err("no contexts");
    }
    if contexts.len() > VON_NEUMANN_MAX_CONTEXTS || contexts.iter().any(|u| u.len() > VON_NEUMANN_MAX_ACTIONS) {
        return input_err(format!(
            "instance too large: at most {VON_NEUMANN_MAX_ACTIONS} actions and {VON_NEUMANN_MAX_CONTEXTS} contexts"
        ));
    }
    let winner: Vec<usize> = contexts
        .iter()
        .map(|u| oracle.best_response(u).map(|r| r.action_id))
        .collect::<Result<_>>()?;
    let star = DeterministicPolicy { actions: winner.clone() };
    let sizes: Vec<usize> = contexts.iter().map(|u| u.len()).collect();
    let covered = sizes.iter().try_fold(1u64, |acc, &n| acc.checked_mul(n as u64));
    let explicit = covered.is_some_and(|c| c <= VON_NEUMANN_EXPLICIT_LIMIT);

    let table = reward_table(oracle, contexts)?;
    let mut min_pref = f64::INFINITY;
    if explicit {
        // odometer over all deterministic policies
        let mut actions = vec![0usize; contexts.len()];
        loop {
            let other = DeterministicPolicy { actions: actions.clone() };
            let v = total_preference_from(&star, &other, contexts, &table, TotalPreferenceMode::Exact)?;
            min_pref = min_pref.min(v);
            let mut i = 0;
            while i < actions.len() {
                actions[i] += 1;
                if actions[i] < sizes[i] {
                    break;
                }
                actions[i] = 0;
                i += 1;
            }
            if i == actions.len() {
                break;
            }
        }
    } else {
        let mut worst = Vec::with_capacity(contexts.len());
        for (r, &w) in table.iter().zip(&winner) {
            let (a, _) = r
                .iter()
                .enumerate()
                .map(|(a, &ra)| (a, sigmoid(r[w] - ra)))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
            worst.push(a);
        }
        min_pref = total_preference_from(
            &star,
            &DeterministicPolicy { actions: worst },
            contexts,
            &table,
            TotalPreferenceMode::Exact,
        )?;
    }

    let optimal_value = contexts
        .iter()
        .zip(&winner)
        .map(|(u, &w)| oracle.reward_features(&u.responses[w].features).map(|r| r.as_f64()))
        .sum::<Result<f64>>()?
        / contexts.len() as f64;

    Ok(VonNeumannReport {
        winner,
        passed: min_pref >= 0.5 - 1e-12,
        min_total_preference: min_pref,
        policies_covered: covered.unwrap_or(u64::MAX),
        enumerated_explicitly: explicit,
        optimal_value,
    })
}

/// First evaluation whose offline win rate reaches `threshold`, as its
/// oracle-query count. Evaluations are `(oracle_queries, offline_win_rate)`.
pub fn queries_to_threshold(evals: &[(u64, f64)], threshold: f64) -> Option<u64> {
    evals.iter().find(|(_, w)| *w >= threshold).map(|(q, _)| *q)
}
