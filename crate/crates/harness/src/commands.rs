//! The `run`, `sweep` and `eval` operations behind the CLI.

use std::path::{Path, PathBuf};

use duel_align::checkpoint::Checkpoint;
use duel_align::experiment::{run_experiment, Environment, ExperimentConfig, OracleEndpoint, RunHeader, RunOutput};
use duel_align::metrics::{offline_win_rate, queries_to_threshold};
use duel_align::oracle::PreferenceLabeler;
use duel_align::{EpistemicRewardModel, SoftmaxPolicy};
use rayon::prelude::*;

use crate::client::RemoteLabeler;
use crate::error::{HarnessError, Result};
use crate::logs::{LogWriter, POLICY_FILE, REWARD_MODEL_FILE};

/// Runs one experiment, writing logs and final checkpoints into `out`.
pub fn run(config: &ExperimentConfig, out: &Path) -> Result<RunOutput<f64>> {
    let env = Environment::<f64>::new(config)?;
    let mut labeler: Box<dyn PreferenceLabeler<f64>> = match &config.oracle {
        OracleEndpoint::InProc => Box::new(env.oracle.clone()),
        OracleEndpoint::Tcp(addr) => Box::new(RemoteLabeler::new(addr.clone(), config.label_mode)),
    };
    let mut writer = LogWriter::create(out, &RunHeader::new(config))?;
    let output = run_experiment(config, labeler.as_mut(), &mut writer)?;
    writer.finish()?;
    let hash = env.feature_map.config_hash();
    Checkpoint::new("policy", hash.clone(), output.policy.clone()).save(&out.join(POLICY_FILE))?;
    if let Some(erm) = &output.reward_model {
        Checkpoint::new("reward_model", hash, erm.clone()).save(&out.join(REWARD_MODEL_FILE))?;
    }
    Ok(output)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub seed: u64,
    pub dir: PathBuf,
    pub final_offline_win_rate: f64,
    pub queries_to_threshold: Option<u64>,
}

/// Runs seeds `first_seed..first_seed + n` in parallel, each into
/// `out/seed-<s>`.
pub fn sweep(config: &ExperimentConfig, first_seed: u64, n: u64, threshold: f64, out: &Path) -> Result<Vec<SweepSummary>> {
    (first_seed..first_seed + n)
        .into_par_iter()
        .map(|seed| {
            let cfg = ExperimentConfig { seed, ..config.clone() };
            let dir = out.join(format!("seed-{seed}"));
            let output = run(&cfg, &dir)?;
            let curve = output.log.curve();
            Ok(SweepSummary {
                seed,
                dir,
                final_offline_win_rate: curve.last().map(|c| c.1).unwrap_or(f64::NAN),
                queries_to_threshold: queries_to_threshold(&curve, threshold),
            })
        })
        .collect()
}

/// Offline win rate of a saved policy on the environment described by
/// `config`.
pub fn eval(config: &ExperimentConfig, checkpoint: &Path) -> Result<f64> {
    let env = Environment::<f64>::new(config)?;
    let ckpt: Checkpoint<SoftmaxPolicy> = Checkpoint::load(checkpoint)?;
    if ckpt.kind != "policy" {
        return Err(HarnessError::Config(format!("{} holds a {}, not a policy", checkpoint.display(), ckpt.kind)));
    }
    ckpt.check_features(&env.feature_map.config_hash())?;
    let suite = env.eval_suite(config)?;
    Ok(offline_win_rate(&ckpt.model, &suite, &env.oracle)?)
}

pub fn load_reward_model(path: &Path) -> Result<EpistemicRewardModel> {
    Ok(Checkpoint::load(path)?.model)
}
