//! Ground-truth reward `r*` and Bradley–Terry preference labeling.

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::experience::{LabelSource, PreferenceTriplet};
use crate::math::sigmoid;
use crate::mlp::Mlp;
use crate::rng::RngStream;
use crate::scalar::{dot, Scalar};
use crate::space::{ContextVec, ResponseRef, Universe};

/// Margin inside which two rewards are judged a tie.
pub const TIE_EPSILON: f64 = 1e-9;

/// Hidden widths of the nonlinear ground-truth reward.
pub const ORACLE_MLP_HIDDEN: [usize; 2] = [16, 16];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Winner drawn from `Ber(σ(r*(y) − r*(y')))`.
    Bernoulli,
    /// Higher `r*` always wins; exact ties go to the lower action id.
    Deterministic,
}

impl LabelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelMode::Bernoulli => "bernoulli",
            LabelMode::Deterministic => "deterministic",
        }
    }
}

impl std::str::FromStr for LabelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bernoulli" => Ok(Self::Bernoulli),
            "deterministic" => Ok(Self::Deterministic),
            other => Err(format!("unknown label mode `{other}` (bernoulli|deterministic)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Linear,
    Mlp,
}

impl std::str::FromStr for RewardKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Self::Linear),
            "mlp" => Ok(Self::Mlp),
            other => Err(format!("unknown reward kind `{other}` (linear|mlp)")),
        }
    }
}

/// The implicit reward function over joint features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum TrueReward<T> {
    Linear { weights: Vec<T> },
    Mlp(Mlp<T>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Judgement {
    Win,
    Tie,
    Loss,
}

impl Judgement {
    /// Win = 1, Tie = 0.5, Loss = 0.
    pub fn score(self) -> f64 {
        match self {
            Judgement::Win => 1.0,
            Judgement::Tie => 0.5,
            Judgement::Loss => 0.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Judgement::Win => Judgement::Loss,
            Judgement::Tie => Judgement::Tie,
            Judgement::Loss => Judgement::Win,
        }
    }
}

/// Outcome of labeling a canonically ordered pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelDecision {
    pub first_wins: bool,
    /// `P(first ≻ second)`.
    pub prob: f64,
}

/// Labels one pair from its two rewards. `first` must be the response with
/// the lower action id. Bernoulli draws come from the stream keyed by
/// `(seed, pair_index)`, so the outcome does not depend on how pairs are
/// batched together.
pub fn decide_label(
    first_reward: f64,
    second_reward: f64,
    mode: LabelMode,
    seed: u64,
    pair_index: u64,
) -> LabelDecision {
    let prob = sigmoid(first_reward - second_reward);
    let first_wins = match mode {
        LabelMode::Deterministic => first_reward >= second_reward,
        LabelMode::Bernoulli => {
            let mut rng = RngStream::root(seed).child_indexed("pair", pair_index);
            rng.uniform() < prob
        }
    };
    LabelDecision { first_wins, prob }
}

/// Anything able to turn a duel into an oracle-labeled triplet.
pub trait PreferenceLabeler<T: Scalar> {
    fn label(
        &mut self,
        context: &ContextVec<T>,
        y: &ResponseRef<T>,
        y_prime: &ResponseRef<T>,
        rng: &mut RngStream,
        round: u64,
    ) -> Result<PreferenceTriplet<T>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OracleSpec<T> {
    pub reward: TrueReward<T>,
    pub label_mode: LabelMode,
    pub seed: u64,
}

impl<T: Scalar> OracleSpec<T> {
    pub fn linear(weights: Vec<T>, label_mode: LabelMode) -> Self {
        Self {
            reward: TrueReward::Linear { weights },
            label_mode,
            seed: 0,
        }
    }

    /// Random ground truth over `feature_dim` features, drawn from `seed`.
    pub fn random(kind: RewardKind, feature_dim: usize, seed: u64, label_mode: LabelMode) -> Self {
        let mut rng = RngStream::root(seed).child("oracle-reward");
        let reward = match kind {
            RewardKind::Linear => TrueReward::Linear {
                weights: (0..feature_dim).map(|_| T::lit(rng.normal())).collect(),
            },
            RewardKind::Mlp => {
                let mut net = Mlp::random(feature_dim, &ORACLE_MLP_HIDDEN, &mut rng);
                // output layer scaled so reward spread is comparable to the linear oracle
                let n = net.params().len();
                let out_start = n - ORACLE_MLP_HIDDEN[1] - 1;
                for p in &mut net.params_mut()[out_start..] {
                    *p = *p * T::lit(4.0);
                }
                TrueReward::Mlp(net)
            }
        };
        Self {
            reward,
            label_mode,
            seed,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match &self.reward {
            TrueReward::Linear { weights } => weights.len(),
            TrueReward::Mlp(net) => net.input_dim(),
        }
    }

    /// `r*` evaluated directly on joint features.
    pub fn reward_features(&self, features: &[T]) -> Result<T> {
        if features.len() != self.feature_dim() {
            return input_err(format!(
                "oracle expects {} features, got {}",
                self.feature_dim(),
                features.len()
            ));
        }
        Ok(match &self.reward {
            TrueReward::Linear { weights } => dot(weights, features),
            TrueReward::Mlp(net) => net.forward_unchecked(features),
        })
    }

    /// `r*(x, y)`. The context enters only through the joint features.
    pub fn reward(&self, _x: &ContextVec<T>, y: &ResponseRef<T>) -> Result<T> {
        self.reward_features(&y.features)
    }

    /// `P(y ≻ y' | x) = σ(r*(x,y) − r*(x,y'))`.
    pub fn preference_prob(
        &self,
        x: &ContextVec<T>,
        y: &ResponseRef<T>,
        y_prime: &ResponseRef<T>,
    ) -> Result<T> {
        if y.action_id == y_prime.action_id {
            return input_err("preference between identical actions is undefined");
        }
        Ok(sigmoid(self.reward(x, y)? - self.reward(x, y_prime)?))
    }

    /// Labels a duel with an explicit per-pair seed.
    pub fn label_with_seed(
        &self,
        x: &ContextVec<T>,
        y: &ResponseRef<T>,
        y_prime: &ResponseRef<T>,
        seed: u64,
        round: u64,
    ) -> Result<PreferenceTriplet<T>> {
        if y.action_id == y_prime.action_id {
            return input_err("cannot label a duel between identical actions");
        }
        let (first, second) = if y.action_id < y_prime.action_id {
            (y, y_prime)
        } else {
            (y_prime, y)
        };
        let d = decide_label(
            self.reward(x, first)?.as_f64(),
            self.reward(x, second)?.as_f64(),
            self.label_mode,
            seed,
            0,
        );
        let (winner, loser) = if d.first_wins {
            (first, second)
        } else {
            (second, first)
        };
        PreferenceTriplet::new(
            x.clone(),
            winner.clone(),
            loser.clone(),
            LabelSource::OracleLabel,
            round,
        )
    }

    /// Draws a per-pair seed from `rng` and labels the duel.
    pub fn label_pair(
        &self,
        x: &ContextVec<T>,
        y: &ResponseRef<T>,
        y_prime: &ResponseRef<T>,
        rng: &mut RngStream,
        round: u64,
    ) -> Result<PreferenceTriplet<T>> {
        use rand::RngCore;
        let seed = rng.next_u64();
        self.label_with_seed(x, y, y_prime, seed, round)
    }

    /// Compares an agent response against a reference response.
    pub fn judge(
        &self,
        x: &ContextVec<T>,
        y_agent: &ResponseRef<T>,
        y_ref: &ResponseRef<T>,
    ) -> Result<Judgement> {
        let margin = (self.reward(x, y_agent)? - self.reward(x, y_ref)?).as_f64();
        Ok(if margin > TIE_EPSILON {
            Judgement::Win
        } else if margin < -TIE_EPSILON {
            Judgement::Loss
        } else {
            Judgement::Tie
        })
    }

    /// `r*` for every action of the universe, indexed by action id.
    pub fn rewards(&self, universe: &Universe<T>) -> Result<Vec<T>> {
        universe
            .responses
            .iter()
            .map(|r| self.reward_features(&r.features))
            .collect()
    }

    /// `y*(x)`: highest-reward action, lowest id on ties.
    pub fn best_response<'u>(&self, universe: &'u Universe<T>) -> Result<&'u ResponseRef<T>> {
        let rewards = self.rewards(universe)?;
        let idx = crate::math::argmax_first(rewards)
            .ok_or_else(|| crate::Error::Input("empty universe".into()))?;
        Ok(&universe.responses[idx])
    }
}

impl<T: Scalar> PreferenceLabeler<T> for OracleSpec<T> {
    fn label(
        &mut self,
        context: &ContextVec<T>,
        y: &ResponseRef<T>,
        y_prime: &ResponseRef<T>,
        rng: &mut RngStream,
        round: u64,
    ) -> Result<PreferenceTriplet<T>> {
        self.label_pair(context, y, y_prime, rng, round)
    }
}
