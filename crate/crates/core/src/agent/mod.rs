//! The sample-efficient alignment agent and its baselines.

pub mod labeling;
pub mod sea;
pub mod selection;

pub use labeling::{mixed_label, synthetic_label};
pub use sea::{AgentConfig, DuelOutcome, OnlineAgent};
pub use selection::{
    best_of_n, select_first_ts, select_pair_passive, select_pair_uncertainty, select_second_bai,
    select_second_ee, SecondChoice, SelectionStrategy,
};
