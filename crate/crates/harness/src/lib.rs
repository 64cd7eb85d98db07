//! Experiment harness for `duel-align`: configuration files, run logs,
//! the batched preference-oracle service and its client.

pub mod client;
pub mod commands;
pub mod config;
pub mod error;
pub mod logs;
pub mod service;
pub mod wire;

pub use client::RemoteLabeler;
pub use error::{HarnessError, Result};
pub use service::{OracleService, ServiceConfig};
