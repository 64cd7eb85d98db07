use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use duel_align::experiment::ExperimentConfig;
use duel_align::{LabelMode, OracleSpec, RewardKind};
use duel_align_harness::config::{self, KEYS};
use duel_align_harness::{commands, HarnessError, OracleService, ServiceConfig};

#[derive(Parser)]
#[command(name = "duel-align", version, about = "Online preference alignment experiments on a contextual dueling bandit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its logs.
    Run {
        #[command(flatten)]
        settings: Settings,
        /// Output directory.
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Run one configuration across several seeds.
    Sweep {
        #[command(flatten)]
        settings: Settings,
        /// Number of seeds, starting at --seed (default 0).
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Offline win rate reported as queries-to-threshold.
        #[arg(long, default_value_t = 0.75)]
        threshold: f64,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
    },
    /// Recompute the offline win rate of a policy checkpoint.
    Eval {
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Serve preference labels over TCP.
    ServeOracle {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long, default_value_t = 64)]
        max_batch: usize,
        #[arg(long, default_value_t = 2)]
        max_delay_ms: u64,
        #[arg(long, default_value = "linear")]
        reward: RewardKind,
        /// Default label mode; requests carry their own.
        #[arg(long, default_value = "deterministic")]
        mode: LabelMode,
        /// Environment seed of the ground-truth reward.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Feature dimension.
        #[arg(long, default_value_t = 32)]
        dim: usize,
    },
    /// Print the resolved configuration in config-file format.
    ShowConfig {
        #[command(flatten)]
        settings: Settings,
    },
}

/// Config file plus per-key overrides; every key of the file format has
/// a flag of the same name.
#[derive(Args)]
struct Settings {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    agent: Option<String>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    context_dim: Option<String>,
    #[arg(long)]
    feature_dim: Option<String>,
    #[arg(long)]
    n_actions: Option<String>,
    #[arg(long)]
    embed_dim: Option<String>,
    #[arg(long)]
    ensemble_size: Option<String>,
    #[arg(long)]
    erm_hidden: Option<String>,
    #[arg(long)]
    proposals: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    gamma_burn_in: Option<String>,
    #[arg(long)]
    m_batches: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    erm_batch_size: Option<String>,
    #[arg(long)]
    erm_lr: Option<String>,
    #[arg(long)]
    erm_optimizer: Option<String>,
    #[arg(long)]
    policy_lr: Option<String>,
    #[arg(long)]
    temperature: Option<String>,
    #[arg(long)]
    reference_scale: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    retry_cap: Option<String>,
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    eval_period: Option<String>,
    #[arg(long)]
    holdout_size: Option<String>,
    #[arg(long)]
    offline_epochs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    env_seed: Option<String>,
    #[arg(long)]
    reward: Option<String>,
    #[arg(long)]
    label_mode: Option<String>,
    /// `inproc` or `host:port`.
    #[arg(long)]
    oracle: Option<String>,
}

impl Settings {
    fn overrides(&self) -> Vec<(String, String)> {
        let values = [
            &self.agent,
            &self.optimizer,
            &self.context_dim,
            &self.feature_dim,
            &self.n_actions,
            &self.embed_dim,
            &self.ensemble_size,
            &self.erm_hidden,
            &self.proposals,
            &self.lambda,
            &self.gamma,
            &self.gamma_burn_in,
            &self.m_batches,
            &self.batch_size,
            &self.erm_batch_size,
            &self.erm_lr,
            &self.erm_optimizer,
            &self.policy_lr,
            &self.temperature,
            &self.reference_scale,
            &self.beta,
            &self.retry_cap,
            &self.budget,
            &self.eval_period,
            &self.holdout_size,
            &self.offline_epochs,
            &self.seed,
            &self.env_seed,
            &self.reward,
            &self.label_mode,
            &self.oracle,
        ];
        debug_assert_eq!(values.len(), KEYS.len());
        KEYS.iter()
            .zip(values)
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }

    fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        config::resolve(self.config.as_deref(), &self.overrides())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DUEL_ALIGN_LOG_LEVEL", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { settings, out } => {
            let cfg = settings.resolve()?;
            let output = commands::run(&cfg, &out)?;
            let last = output.log.final_eval().expect("every run has an evaluation");
            println!(
                "{} {} seed {}: {} rounds, {} oracle queries, offline win rate {:.4}, logs in {}",
                cfg.agent.as_str(),
                cfg.optimizer.as_str(),
                cfg.seed,
                output.log.records.len(),
                last.oracle_queries,
                last.offline_win_rate,
                out.display()
            );
        }
        Command::Sweep {
            settings,
            seeds,
            threshold,
            out,
        } => {
            let cfg = settings.resolve()?;
            let rows = commands::sweep(&cfg, cfg.seed, seeds, threshold, &out)?;
            println!("seed\tfinal_offline_win_rate\tqueries_to_{threshold}");
            for r in &rows {
                let q = r.queries_to_threshold.map(|q| q.to_string()).unwrap_or_else(|| "-".into());
                println!("{}\t{:.4}\t{}", r.seed, r.final_offline_win_rate, q);
            }
        }
        Command::Eval { settings, checkpoint } => {
            let cfg = settings.resolve()?;
            println!("{:.6}", commands::eval(&cfg, &checkpoint)?);
        }
        Command::ServeOracle {
            addr,
            max_batch,
            max_delay_ms,
            reward,
            mode,
            seed,
            dim,
        } => {
            if dim == 0 {
                return Err(HarnessError::Config("--dim must be positive".into()));
            }
            let listener = TcpListener::bind(&addr).map_err(|e| HarnessError::Config(format!("cannot bind {addr}: {e}")))?;
            let oracle = OracleSpec::random(reward, dim, seed, mode);
            let service = OracleService::start(
                listener,
                oracle,
                ServiceConfig {
                    max_batch,
                    max_delay: Duration::from_millis(max_delay_ms),
                },
            )?;
            println!("serving {reward:?} oracle on {}", service.addr());
            service.join();
        }
        Command::ShowConfig { settings } => {
            print!("{}", config::render(&settings.resolve()?));
        }
    }
    Ok(())
}
