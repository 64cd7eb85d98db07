//! Sample-efficient alignment as a contextual dueling bandit.
//!
//! A synthetic testbed (finite response universe, fixed joint features,
//! Bradley–Terry oracle) on which a Thompson-sampling agent learns a
//! softmax policy with direct preference optimizers while an anchored
//! reward ensemble supplies posterior samples, exploration signals and
//! synthetic labels.
//!
//! All numeric types are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! experiment harness and the oracle wire protocol use.

pub mod agent;
pub mod checkpoint;
pub mod error;
pub mod experience;
pub mod experiment;
pub mod math;
pub mod metrics;
pub mod mlp;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod scalar;
pub mod space;

pub mod erm;

pub use error::{Error, Result};
pub use experience::LabelSource;
pub use math::sigmoid;
pub use oracle::{Judgement, LabelMode, RewardKind};
pub use policy::DapKind;
pub use rng::RngStream;
pub use scalar::Scalar;

/// Result of a training call that may legitimately do nothing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateStatus {
    Applied { steps: usize },
    /// No data was available; the model is unchanged.
    Skipped,
}

pub type ContextVec = space::ContextVec<f64>;
pub type ResponseRef = space::ResponseRef<f64>;
pub type FeatureMap = space::FeatureMap<f64>;
pub type Universe = space::Universe<f64>;
pub type PreferenceTriplet = experience::PreferenceTriplet<f64>;
pub type ExperienceBuffer = experience::ExperienceBuffer<f64>;
pub type OracleSpec = oracle::OracleSpec<f64>;
pub type RewardHead = erm::RewardHead<f64>;
pub type EpistemicRewardModel = erm::EpistemicRewardModel<f64>;
pub type SoftmaxPolicy = policy::SoftmaxPolicy<f64>;
pub type ReferencePolicy = policy::ReferencePolicy<f64>;
pub type DapLoss = policy::DapLoss<f64>;
