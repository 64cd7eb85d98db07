//! Epistemic reward model: an ensemble of anchored MLP reward heads.
//!
//! Each head is trained on the oracle-labeled buffer with the Bradley–Terry
//! negative log-likelihood plus `λ‖φ_k − φ_k⁰‖²`, which pulls it towards its
//! own random initialization and keeps the ensemble spread out where data is
//! scarce. Sampling a head uniformly is a draw from the approximate reward
//! posterior.

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::experience::{ExperienceBuffer, PreferenceTriplet};
use crate::math::{neg_log_sigmoid, population_variance, sigmoid};
use crate::mlp::{Mlp, Tape};
use crate::rng::RngStream;
use crate::scalar::{squared_distance, Scalar};
use crate::space::{ContextVec, ResponseRef};
use crate::UpdateStatus;

pub const DEFAULT_HEAD_HIDDEN: [usize; 2] = [16, 16];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadOptimizer {
    Sgd,
    Adam,
}

impl std::str::FromStr for HeadOptimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(format!("unknown optimizer `{other}` (sgd|adam)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RewardHead<T> {
    net: Mlp<T>,
    anchor: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adam: Option<AdamState<T>>,
}

impl<T: Scalar> RewardHead<T> {
    /// Wraps a network; its current weights become the immutable anchor.
    pub fn new(net: Mlp<T>) -> Self {
        let anchor = net.params().to_vec();
        Self {
            net,
            anchor,
            adam: None,
        }
    }

    /// Head whose anchor differs from its current weights.
    pub fn with_anchor(net: Mlp<T>, anchor: Vec<T>) -> Result<Self> {
        if anchor.len() != net.params().len() {
            return input_err("anchor length differs from parameter count");
        }
        Ok(Self {
            net,
            anchor,
            adam: None,
        })
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn params(&self) -> &[T] {
        self.net.params()
    }

    pub fn anchor(&self) -> &[T] {
        &self.anchor
    }

    /// `‖φ − φ⁰‖²`.
    pub fn anchor_sq_distance(&self) -> T {
        squared_distance(self.net.params(), &self.anchor)
    }

    pub fn reward_features(&self, features: &[T]) -> Result<T> {
        self.net.forward(features)
    }

    /// `r_φ(x, y)` on the cached joint features of `y`.
    pub fn reward(&self, _x: &ContextVec<T>, y: &ResponseRef<T>) -> Result<T> {
        self.net.forward(&y.features)
    }

    /// Mean of `−ln σ(r(x,y⁺) − r(x,y⁻))` over the batch.
    pub fn nll_loss(&self, batch: &[&PreferenceTriplet<T>]) -> Result<T> {
        if batch.is_empty() {
            return input_err("loss over an empty batch");
        }
        let mut total = T::zero();
        for t in batch {
            let margin = self.net.forward(&t.winner.features)? - self.net.forward(&t.loser.features)?;
            total = total + neg_log_sigmoid(margin);
        }
        Ok(total / T::from_usize(batch.len()).unwrap())
    }

    /// NLL and its gradient with respect to the head parameters.
    pub fn nll_grad(&self, batch: &[&PreferenceTriplet<T>]) -> Result<(T, Vec<T>)> {
        if batch.is_empty() {
            return input_err("gradient over an empty batch");
        }
        let n = T::from_usize(batch.len()).unwrap();
        let mut grad = vec![T::zero(); self.net.params().len()];
        let mut total = T::zero();
        let (mut tw, mut tl) = (Tape::<T>::default(), Tape::<T>::default());
        for t in batch {
            if t.winner.features.len() != self.net.input_dim() || t.loser.features.len() != self.net.input_dim() {
                return input_err("triplet feature dimension does not match head");
            }
            let margin = self.net.forward_tape(&t.winner.features, &mut tw)
                - self.net.forward_tape(&t.loser.features, &mut tl);
            total = total + neg_log_sigmoid(margin);
            // d/dm −ln σ(m) = −σ(−m)
            let coeff = -sigmoid(-margin) / n;
            self.net.backward_tape(&mut tw, coeff, &mut grad);
            self.net.backward_tape(&mut tl, -coeff, &mut grad);
        }
        Ok((total / n, grad))
    }

    /// Regularized per-head loss `NLL + λ‖φ − φ⁰‖²` and its gradient.
    pub fn regularized_grad(&self, batch: &[&PreferenceTriplet<T>], lambda: T) -> Result<(T, Vec<T>)> {
        let (nll, mut grad) = self.nll_grad(batch)?;
        let two_lambda = lambda + lambda;
        for ((g, &w), &w0) in grad.iter_mut().zip(self.net.params()).zip(&self.anchor) {
            *g = *g + two_lambda * (w - w0);
        }
        Ok((nll + lambda * self.anchor_sq_distance(), grad))
    }

    fn apply_step(&mut self, grad: &[T], lr: T, optimizer: HeadOptimizer) {
        match optimizer {
            HeadOptimizer::Sgd => {
                for (w, &g) in self.net.params_mut().iter_mut().zip(grad) {
                    *w = *w - lr * g;
                }
            }
            HeadOptimizer::Adam => {
                let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
                let n = grad.len();
                let state = self.adam.get_or_insert_with(|| AdamState {
                    m: vec![T::zero(); n],
                    v: vec![T::zero(); n],
                    t: 0,
                });
                state.t += 1;
                let c1 = T::one() - b1.powi(state.t as i32);
                let c2 = T::one() - b2.powi(state.t as i32);
                for (i, w) in self.net.params_mut().iter_mut().enumerate() {
                    let g = grad[i];
                    state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
                    state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
                    let mhat = state.m[i] / c1;
                    let vhat = state.v[i] / c2;
                    *w = *w - lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErmConfig {
    pub ensemble_size: usize,
    pub hidden: Vec<usize>,
    pub lambda_reg: f64,
    pub learning_rate: f64,
    pub optimizer: HeadOptimizer,
}

impl Default for ErmConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 20,
            hidden: DEFAULT_HEAD_HIDDEN.to_vec(),
            lambda_reg: 0.5,
            learning_rate: 1e-2,
            optimizer: HeadOptimizer::Sgd,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EpistemicRewardModel<T> {
    heads: Vec<RewardHead<T>>,
    lambda_reg: T,
    learning_rate: T,
    optimizer: HeadOptimizer,
}

impl<T: Scalar> EpistemicRewardModel<T> {
    /// `K` independently initialized heads over `feature_dim` inputs.
    pub fn new(feature_dim: usize, config: &ErmConfig, rng: &RngStream) -> Result<Self> {
        if config.ensemble_size == 0 {
            return input_err("ensemble needs at least one head");
        }
        let heads = (0..config.ensemble_size)
            .map(|k| {
                let mut r = rng.child_indexed("head", k as u64);
                RewardHead::new(Mlp::random(feature_dim, &config.hidden, &mut r))
            })
            .collect();
        Self::from_heads(heads, config.lambda_reg, config.learning_rate, config.optimizer)
    }

    pub fn from_heads(
        heads: Vec<RewardHead<T>>,
        lambda_reg: f64,
        learning_rate: f64,
        optimizer: HeadOptimizer,
    ) -> Result<Self> {
        if heads.is_empty() {
            return input_err("ensemble needs at least one head");
        }
        if lambda_reg < 0.0 || !lambda_reg.is_finite() {
            return input_err("lambda_reg must be finite and non-negative");
        }
        if learning_rate <= 0.0 || !learning_rate.is_finite() {
            return input_err("learning rate must be positive");
        }
        Ok(Self {
            heads,
            lambda_reg: T::lit(lambda_reg),
            learning_rate: T::lit(learning_rate),
            optimizer,
        })
    }

    pub fn heads(&self) -> &[RewardHead<T>] {
        &self.heads
    }

    pub fn ensemble_size(&self) -> usize {
        self.heads.len()
    }

    pub fn lambda_reg(&self) -> T {
        self.lambda_reg
    }

    /// `Σ_k [NLL_k + λ‖φ_k − φ_k⁰‖²]`.
    pub fn erm_loss(&self, batch: &[&PreferenceTriplet<T>]) -> Result<T> {
        let mut total = T::zero();
        for h in &self.heads {
            total = total + h.nll_loss(batch)? + self.lambda_reg * h.anchor_sq_distance();
        }
        Ok(total)
    }

    /// Runs `m_batches` gradient steps, each on a fresh batch of `b` triplets
    /// shared by all heads.
    pub fn erm_update(
        &mut self,
        buffer: &ExperienceBuffer<T>,
        m_batches: usize,
        b: usize,
        rng: &mut RngStream,
    ) -> Result<UpdateStatus> {
        if buffer.is_empty() {
            log::warn!("reward model update skipped: experience buffer is empty");
            return Ok(UpdateStatus::Skipped);
        }
        if m_batches == 0 || b == 0 {
            return Ok(UpdateStatus::Applied { steps: 0 });
        }
        for _ in 0..m_batches {
            let batch = buffer.sample_batch(b, rng)?;
            for head in &mut self.heads {
                let (_, grad) = head.regularized_grad(&batch, self.lambda_reg)?;
                head.apply_step(&grad, self.learning_rate, self.optimizer);
            }
        }
        Ok(UpdateStatus::Applied { steps: m_batches })
    }

    /// Index of a uniformly drawn head.
    pub fn posterior_sample(&self, rng: &mut RngStream) -> usize {
        rng.index(self.heads.len())
    }

    /// Every head's reward for one response.
    pub fn head_rewards(&self, y: &ResponseRef<T>) -> Result<Vec<T>> {
        self.heads.iter().map(|h| h.reward_features(&y.features)).collect()
    }

    /// Rewards of all heads over a candidate set, `table[k][i]`.
    pub fn reward_table(&self, candidates: &[ResponseRef<T>]) -> Result<Vec<Vec<T>>> {
        self.heads
            .iter()
            .map(|h| candidates.iter().map(|c| h.reward_features(&c.features)).collect())
            .collect()
    }

    pub fn mean_reward(&self, y: &ResponseRef<T>) -> Result<T> {
        let r = self.head_rewards(y)?;
        Ok(r.iter().copied().sum::<T>() / T::from_usize(r.len()).unwrap())
    }

    /// Population variance over heads of `σ(r_k(x,y) − r_k(x,b))`.
    pub fn preference_variance(
        &self,
        _x: &ContextVec<T>,
        y: &ResponseRef<T>,
        b: &ResponseRef<T>,
    ) -> Result<T> {
        let probs = self
            .heads
            .iter()
            .map(|h| Ok(sigmoid(h.reward_features(&y.features)? - h.reward_features(&b.features)?)))
            .collect::<Result<Vec<T>>>()?;
        Ok(population_variance(&probs))
    }

    /// Mean over heads of `‖φ_k − φ_k⁰‖`.
    pub fn mean_anchor_distance(&self) -> T {
        let n = T::from_usize(self.heads.len()).unwrap();
        self.heads.iter().map(|h| h.anchor_sq_distance().sqrt()).sum::<T>() / n
    }
}
