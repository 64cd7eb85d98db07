//! Per-round orchestration of the online agents.

use serde::{Deserialize, Serialize};

use super::labeling::mixed_label;
use super::selection::{
    select_first_ts, select_pair_passive, select_pair_uncertainty, select_second_bai,
    select_second_ee, SecondChoice, SelectionStrategy,
};
use crate::erm::{EpistemicRewardModel, ErmConfig};
use crate::error::{input_err, Error, Result};
use crate::experience::{ExperienceBuffer, LabelSource, PreferenceTriplet};
use crate::oracle::PreferenceLabeler;
use crate::policy::{DapKind, DapLoss, ReferencePolicy, SoftmaxPolicy};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::space::{ResponseRef, Universe};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub strategy: SelectionStrategy,
    /// Oracle share of the label mixture once burn-in is over.
    pub gamma: f64,
    /// Oracle labels collected at `γ = 1` before switching to `gamma`.
    pub gamma_burn_in: u64,
    /// Policy samples per round (`M`).
    pub proposals: usize,
    /// Reward-model gradient steps per round.
    pub m_batches: usize,
    pub erm_batch_size: usize,
    /// Duels per policy step (`b`).
    pub policy_batch_size: usize,
    pub dap: DapKind,
    pub beta: f64,
    pub policy_lr: f64,
    pub temperature: f64,
    pub erm: ErmConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            strategy: SelectionStrategy::BaiTs,
            gamma: 0.7,
            gamma_burn_in: 1000,
            proposals: 20,
            m_batches: 5,
            erm_batch_size: 8,
            policy_batch_size: 1,
            dap: DapKind::Dpo,
            beta: DapKind::Dpo.default_beta(),
            policy_lr: 5e-2,
            temperature: crate::policy::DEFAULT_TEMPERATURE,
            erm: ErmConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return input_err("gamma must lie in [0, 1]");
        }
        if self.proposals < 2 {
            return input_err("at least two proposals per round are required");
        }
        if self.policy_batch_size == 0 {
            return input_err("policy batch size must be positive");
        }
        if let SelectionStrategy::EeTs { retry_cap } = self.strategy {
            if retry_cap == 0 {
                return input_err("retry cap must be at least 1");
            }
        }
        if self.uses_reward_model() && self.erm.ensemble_size == 0 {
            return input_err("ensemble size must be positive");
        }
        Ok(())
    }

    pub fn uses_reward_model(&self) -> bool {
        self.strategy != SelectionStrategy::PassivePair
    }
}

/// What happened in one round, before metrics are attached.
#[derive(Clone, Debug, PartialEq)]
pub struct DuelOutcome<T> {
    pub round: u64,
    pub first: ResponseRef<T>,
    pub second: ResponseRef<T>,
    pub triplet: PreferenceTriplet<T>,
    pub proposal_set_size: usize,
    /// Ensemble preference variance of the executed pair (before learning).
    pub pair_variance: Option<f64>,
    pub fallback: bool,
    pub gamma: f64,
}

/// Independent random streams of one agent.
#[derive(Clone, Debug)]
struct Streams {
    proposals: RngStream,
    selection: RngStream,
    mixture: RngStream,
    oracle: RngStream,
    synthetic: RngStream,
    replay: RngStream,
}

/// The online agent: SEA variants and the passive online baseline.
#[derive(Clone, Debug)]
pub struct OnlineAgent<T> {
    config: AgentConfig,
    policy: SoftmaxPolicy<T>,
    reference: ReferencePolicy<T>,
    loss: DapLoss<T>,
    erm: Option<EpistemicRewardModel<T>>,
    buffer: ExperienceBuffer<T>,
    pending: Vec<PreferenceTriplet<T>>,
    streams: Streams,
    round: u64,
    oracle_queries: u64,
}

impl<T: Scalar> OnlineAgent<T> {
    /// `π_θ⁰ = π_ref`, random ensemble, empty experience.
    pub fn new(config: AgentConfig, reference: ReferencePolicy<T>, rng: &RngStream) -> Result<Self> {
        config.validate()?;
        let feature_dim = reference.policy().theta().len();
        let erm = if config.uses_reward_model() {
            Some(EpistemicRewardModel::new(feature_dim, &config.erm, &rng.child("erm-init"))?)
        } else {
            None
        };
        let policy = reference.policy().with_temperature(T::lit(config.temperature))?;
        let loss = DapLoss::new(config.dap, T::lit(config.beta))?;
        Ok(Self {
            policy,
            reference,
            loss,
            erm,
            buffer: ExperienceBuffer::new(),
            pending: Vec::new(),
            streams: Streams {
                proposals: rng.child("proposals"),
                selection: rng.child("selection"),
                mixture: rng.child("mixture"),
                oracle: rng.child("oracle"),
                synthetic: rng.child("synthetic"),
                replay: rng.child("replay"),
            },
            round: 0,
            oracle_queries: 0,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn policy(&self) -> &SoftmaxPolicy<T> {
        &self.policy
    }

    pub fn reference(&self) -> &ReferencePolicy<T> {
        &self.reference
    }

    pub fn reward_model(&self) -> Option<&EpistemicRewardModel<T>> {
        self.erm.as_ref()
    }

    pub fn buffer(&self) -> &ExperienceBuffer<T> {
        &self.buffer
    }

    pub fn rounds(&self) -> u64 {
        self.round
    }

    pub fn oracle_queries(&self) -> u64 {
        self.oracle_queries
    }

    /// Mixture ratio in effect for the next round.
    pub fn current_gamma(&self) -> f64 {
        if self.oracle_queries < self.config.gamma_burn_in {
            1.0
        } else {
            self.config.gamma
        }
    }

    fn select(&mut self, universe: &Universe<T>, candidates: &[ResponseRef<T>]) -> Result<(ResponseRef<T>, SecondChoice<T>)> {
        let erm = self.erm.as_ref();
        let rng = &mut self.streams.selection;
        match self.config.strategy {
            SelectionStrategy::PassivePair => unreachable!("passive pairs do not use proposals"),
            SelectionStrategy::EeTs { retry_cap } => {
                let erm = erm.unwrap();
                let first = select_first_ts(erm, candidates, rng)?.clone();
                let second = select_second_ee(erm, candidates, &first, universe, rng, retry_cap)?;
                Ok((first, second))
            }
            SelectionStrategy::BaiTs => {
                let erm = erm.unwrap();
                let first = select_first_ts(erm, candidates, rng)?.clone();
                let second = select_second_bai(erm, candidates, &first, universe)?;
                Ok((first, second))
            }
            SelectionStrategy::UncertaintyPair => {
                let erm = erm.unwrap();
                if candidates.len() >= 2 {
                    let (a, b) = select_pair_uncertainty(erm, candidates)?;
                    Ok((a.clone(), SecondChoice { response: b.clone(), fallback: false }))
                } else {
                    // widen to the universe for the partner of the lone proposal
                    let first = candidates[0].clone();
                    let mut best: Option<(usize, T)> = None;
                    let fr = erm.head_rewards(&first)?;
                    for (i, c) in universe.responses.iter().enumerate() {
                        if c.action_id == first.action_id {
                            continue;
                        }
                        let diffs: Vec<T> = erm.head_rewards(c)?.iter().zip(&fr).map(|(r, f)| *f - *r).collect();
                        let v = crate::math::population_variance(&diffs);
                        if best.map_or(true, |(_, bv)| v > bv) {
                            best = Some((i, v));
                        }
                    }
                    let (i, _) = best.ok_or_else(|| Error::Input("universe has a single action".into()))?;
                    Ok((first, SecondChoice { response: universe.responses[i].clone(), fallback: true }))
                }
            }
        }
    }

    /// One environment round on context `x_t` (given with its universe).
    pub fn step(&mut self, universe: &Universe<T>, labeler: &mut dyn PreferenceLabeler<T>) -> Result<DuelOutcome<T>> {
        let round = self.round + 1;
        self.step_inner(universe, labeler, round)
            .map_err(|e| Error::Round { round, source: Box::new(e) })
    }

    fn step_inner(&mut self, universe: &Universe<T>, labeler: &mut dyn PreferenceLabeler<T>, round: u64) -> Result<DuelOutcome<T>> {
        let x = &universe.context;
        let (first, second, proposal_set_size) = if self.config.strategy == SelectionStrategy::PassivePair {
            let (a, b, fallback) = select_pair_passive(&self.policy, universe, &mut self.streams.proposals)?;
            (a, SecondChoice { response: b, fallback }, 2)
        } else {
            let candidates = self.policy.sample_candidates(universe, self.config.proposals, &mut self.streams.proposals)?;
            let (a, b) = self.select(universe, &candidates)?;
            (a, b, candidates.len())
        };

        let pair_variance = match &self.erm {
            Some(erm) => Some(erm.preference_variance(x, &first, &second.response)?.as_f64()),
            None => None,
        };

        let gamma = self.current_gamma();
        let g = self.streams.mixture.uniform();
        let triplet = match &self.erm {
            Some(erm) => mixed_label(
                g,
                gamma,
                labeler,
                erm,
                x,
                &first,
                &second.response,
                &mut self.streams.oracle,
                &mut self.streams.synthetic,
                round,
            )?,
            None => labeler.label(x, &first, &second.response, &mut self.streams.oracle, round)?,
        };
        if triplet.source == LabelSource::OracleLabel {
            self.oracle_queries += 1;
            self.buffer.push(triplet.clone())?;
        }

        if let Some(erm) = self.erm.as_mut() {
            erm.erm_update(&self.buffer, self.config.m_batches, self.config.erm_batch_size, &mut self.streams.replay)?;
        }

        self.pending.push(triplet.clone());
        if self.pending.len() >= self.config.policy_batch_size {
            let batch: Vec<&PreferenceTriplet<T>> = self.pending.iter().collect();
            self.policy.policy_update(&batch, &self.loss, &self.reference, T::lit(self.config.policy_lr))?;
            self.pending.clear();
        }

        self.round = round;
        Ok(DuelOutcome {
            round,
            first,
            second: second.response,
            triplet,
            proposal_set_size,
            pair_variance,
            fallback: second.fallback,
            gamma,
        })
    }
}
