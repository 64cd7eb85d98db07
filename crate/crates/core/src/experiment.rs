//! Experiment configuration and the in-memory run loop.
//!
//! The loop is transport-agnostic: labels come from any
//! [`PreferenceLabeler`], and rows are streamed to a [`RunObserver`] as they
//! are produced so that a file-backed observer can flush after every
//! evaluation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{AgentConfig, OnlineAgent, SelectionStrategy};
use crate::erm::{EpistemicRewardModel, ErmConfig, HeadOptimizer};
use crate::error::{input_err, Error, Result};
use crate::experience::{LabelSource, PreferenceTriplet};
use crate::metrics::{immediate_regret, offline_win_rate, EvalSuite, WinTally};
use crate::oracle::{Judgement, LabelMode, OracleSpec, PreferenceLabeler, RewardKind};
use crate::policy::{DapKind, DapLoss, ReferencePolicy, SoftmaxPolicy};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::space::{ContextVec, FeatureDims, FeatureMap, Universe};

/// Version of the CSV/JSONL/header layout.
pub const LOG_SCHEMA_VERSION: u32 = 1;

pub fn code_version() -> String {
    let id = concat!(env!("CARGO_PKG_NAME"), "@", env!("CARGO_PKG_VERSION"));
    let digest = Sha256::digest(id.as_bytes());
    let short: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
    format!("{id}+{short}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    SeaBai,
    SeaEe,
    SeaUncertainty,
    PassiveOnline,
    Offline,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] = [
        AgentKind::SeaBai,
        AgentKind::SeaEe,
        AgentKind::SeaUncertainty,
        AgentKind::PassiveOnline,
        AgentKind::Offline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::SeaBai => "sea-bai",
            AgentKind::SeaEe => "sea-ee",
            AgentKind::SeaUncertainty => "sea-uncertainty",
            AgentKind::PassiveOnline => "passive-online",
            AgentKind::Offline => "offline",
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown agent `{s}` (sea-bai|sea-ee|sea-uncertainty|passive-online|offline)"))
    }
}

/// Where oracle labels come from. Transport only: it does not change any
/// logged value, so it is not part of the serialized configuration.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum OracleEndpoint {
    #[default]
    InProc,
    Tcp(String),
}

impl std::str::FromStr for OracleEndpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "inproc" {
            return Ok(Self::InProc);
        }
        let addr = s.strip_prefix("tcp://").unwrap_or(s);
        if addr.contains(':') {
            Ok(Self::Tcp(addr.to_string()))
        } else {
            Err(format!("oracle endpoint `{s}` is neither `inproc` nor host:port"))
        }
    }
}

impl std::fmt::Display for OracleEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OracleEndpoint::InProc => f.write_str("inproc"),
            OracleEndpoint::Tcp(a) => write!(f, "tcp://{a}"),
        }
    }
}

/// Every knob of a run. All fields have defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub agent: AgentKind,
    pub optimizer: DapKind,
    pub context_dim: usize,
    pub feature_dim: usize,
    pub n_actions: usize,
    pub embed_dim: usize,
    pub ensemble_size: usize,
    pub erm_hidden: Vec<usize>,
    pub proposals: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub gamma_burn_in: u64,
    pub m_batches: usize,
    pub batch_size: usize,
    pub erm_batch_size: usize,
    pub erm_lr: f64,
    pub erm_optimizer: HeadOptimizer,
    /// `None` selects the optimizer's default.
    pub policy_lr: Option<f64>,
    pub temperature: f64,
    /// Expected norm of the reference policy parameters; 0 gives the
    /// uniform reference.
    pub reference_scale: f64,
    /// `None` selects the optimizer's default.
    pub beta: Option<f64>,
    /// `None` selects `2K`.
    pub retry_cap: Option<usize>,
    pub budget: u64,
    pub eval_period: u64,
    pub holdout_size: usize,
    pub offline_epochs: usize,
    pub seed: u64,
    /// Seeds the feature map, ground-truth reward and holdout suite.
    pub env_seed: u64,
    pub reward: RewardKind,
    pub label_mode: LabelMode,
    #[serde(skip)]
    pub oracle: OracleEndpoint,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let erm = ErmConfig::default();
        let agent = AgentConfig::default();
        Self {
            agent: AgentKind::SeaBai,
            optimizer: DapKind::Dpo,
            context_dim: 8,
            feature_dim: 32,
            n_actions: 32,
            embed_dim: 8,
            ensemble_size: erm.ensemble_size,
            erm_hidden: erm.hidden,
            proposals: agent.proposals,
            lambda: erm.lambda_reg,
            gamma: agent.gamma,
            gamma_burn_in: agent.gamma_burn_in,
            m_batches: agent.m_batches,
            batch_size: agent.policy_batch_size,
            erm_batch_size: agent.erm_batch_size,
            erm_lr: erm.learning_rate,
            erm_optimizer: erm.optimizer,
            policy_lr: None,
            temperature: agent.temperature,
            reference_scale: 30.0,
            beta: None,
            retry_cap: None,
            budget: 5000,
            eval_period: 32,
            holdout_size: 256,
            offline_epochs: 2,
            seed: 0,
            env_seed: 0,
            reward: RewardKind::Linear,
            label_mode: LabelMode::Deterministic,
            oracle: OracleEndpoint::InProc,
        }
    }
}

impl ExperimentConfig {
    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or_else(|| self.optimizer.default_beta())
    }

    pub fn policy_lr(&self) -> f64 {
        self.policy_lr.unwrap_or_else(|| self.optimizer.default_learning_rate())
    }

    pub fn retry_cap(&self) -> usize {
        self.retry_cap.unwrap_or(2 * self.ensemble_size)
    }

    pub fn dims(&self) -> FeatureDims {
        FeatureDims {
            context_dim: self.context_dim,
            feature_dim: self.feature_dim,
            n_actions: self.n_actions,
            embed_dim: self.embed_dim,
        }
    }

    pub fn strategy(&self) -> SelectionStrategy {
        match self.agent {
            AgentKind::SeaBai => SelectionStrategy::BaiTs,
            AgentKind::SeaEe => SelectionStrategy::EeTs { retry_cap: self.retry_cap() },
            AgentKind::SeaUncertainty => SelectionStrategy::UncertaintyPair,
            AgentKind::PassiveOnline | AgentKind::Offline => SelectionStrategy::PassivePair,
        }
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            strategy: self.strategy(),
            gamma: self.gamma,
            gamma_burn_in: self.gamma_burn_in,
            proposals: self.proposals,
            m_batches: self.m_batches,
            erm_batch_size: self.erm_batch_size,
            policy_batch_size: self.batch_size,
            dap: self.optimizer,
            beta: self.beta(),
            policy_lr: self.policy_lr(),
            temperature: self.temperature,
            erm: ErmConfig {
                ensemble_size: self.ensemble_size,
                hidden: self.erm_hidden.clone(),
                lambda_reg: self.lambda,
                learning_rate: self.erm_lr,
                optimizer: self.erm_optimizer,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_dim == 0 || self.feature_dim == 0 || self.embed_dim == 0 {
            return input_err("dimensions must be positive");
        }
        if self.n_actions < 2 {
            return input_err("the response universe needs at least two actions");
        }
        if self.eval_period == 0 {
            return input_err("eval period must be positive");
        }
        if self.holdout_size == 0 {
            return input_err("holdout size must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return input_err("temperature must be positive");
        }
        if !(self.beta() > 0.0 && self.beta().is_finite()) {
            return input_err("beta must be positive");
        }
        if !(self.reference_scale >= 0.0 && self.reference_scale.is_finite()) {
            return input_err("reference scale must be non-negative");
        }
        if !(self.policy_lr() >= 0.0 && self.policy_lr().is_finite()) {
            return input_err("policy learning rate must be non-negative");
        }
        if !(self.erm_lr > 0.0 && self.erm_lr.is_finite()) {
            return input_err("reward-model learning rate must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return input_err("lambda must be non-negative");
        }
        self.agent_config().validate()
    }
}

/// Feature map, ground truth and reference policy shared by all agents of
/// one environment seed.
#[derive(Clone, Debug)]
pub struct Environment<T> {
    pub feature_map: FeatureMap<T>,
    pub oracle: OracleSpec<T>,
    pub reference: ReferencePolicy<T>,
}

impl<T: Scalar> Environment<T> {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let feature_map = FeatureMap::new(config.dims(), config.env_seed)?;
        let oracle = OracleSpec::random(config.reward, config.feature_dim, config.env_seed, config.label_mode);
        let mut rng = RngStream::root(config.env_seed).child("reference-policy");
        let scale = config.reference_scale / (config.feature_dim as f64).sqrt();
        let theta = (0..config.feature_dim).map(|_| T::lit(scale * rng.normal())).collect();
        let reference = ReferencePolicy::new(SoftmaxPolicy::new(theta, T::lit(config.temperature))?);
        Ok(Self {
            feature_map,
            oracle,
            reference,
        })
    }

    pub fn eval_suite(&self, config: &ExperimentConfig) -> Result<EvalSuite<T>> {
        EvalSuite::generate(
            &self.feature_map,
            &self.reference,
            config.holdout_size,
            config.eval_period,
            &RngStream::root(config.env_seed).child("eval"),
        )
    }
}

/// One executed duel with its metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuelRecord {
    pub round: u64,
    /// Oracle queries spent after this round.
    pub oracle_queries: u64,
    pub context: Vec<f64>,
    pub first: usize,
    pub second: usize,
    pub winner: usize,
    pub loser: usize,
    pub label_source: LabelSource,
    pub gamma: f64,
    pub reference: usize,
    pub first_judgement: Judgement,
    pub second_judgement: Judgement,
    pub online_win_rate: f64,
    pub immediate_regret: f64,
    pub cumulative_regret: f64,
    pub proposal_set_size: usize,
    pub pair_variance: Option<f64>,
    pub fallback: bool,
}

/// One evaluation point; exactly the CSV columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub round: u64,
    pub oracle_queries: u64,
    pub online_win_rate: Option<f64>,
    pub offline_win_rate: f64,
    pub cumulative_regret: f64,
    pub immediate_regret: Option<f64>,
    pub proposal_set_size: Option<usize>,
    pub pair_variance: Option<f64>,
    pub label_source: Option<LabelSource>,
}

pub const CSV_COLUMNS: [&str; 9] = [
    "round",
    "oracle_queries",
    "online_win_rate",
    "offline_win_rate",
    "cumulative_regret",
    "immediate_regret",
    "proposal_set_size",
    "pair_variance",
    "label_source",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub schema_version: u32,
    pub code_version: String,
    pub config: ExperimentConfig,
}

impl RunHeader {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            schema_version: LOG_SCHEMA_VERSION,
            code_version: code_version(),
            config: config.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub records: Vec<DuelRecord>,
    pub evals: Vec<EvalRow>,
}

impl RunLog {
    /// `(oracle_queries, offline_win_rate)` per evaluation.
    pub fn curve(&self) -> Vec<(u64, f64)> {
        self.evals.iter().map(|e| (e.oracle_queries, e.offline_win_rate)).collect()
    }

    pub fn final_eval(&self) -> Option<&EvalRow> {
        self.evals.last()
    }
}

/// Receives rows as soon as they exist.
pub trait RunObserver {
    fn on_duel(&mut self, _record: &DuelRecord) -> Result<()> {
        Ok(())
    }

    fn on_eval(&mut self, _row: &EvalRow) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NoObserver;

impl RunObserver for NoObserver {}

/// A finished run: its log plus the final models.
#[derive(Clone, Debug)]
pub struct RunOutput<T> {
    pub log: RunLog,
    pub policy: SoftmaxPolicy<T>,
    pub reward_model: Option<EpistemicRewardModel<T>>,
}

struct Tracker {
    tally: WinTally,
    cumulative_regret: f64,
    last: Option<DuelRecord>,
}

impl Tracker {
    fn new() -> Self {
        Self {
            tally: WinTally::default(),
            cumulative_regret: 0.0,
            last: None,
        }
    }

    fn eval_row(&self, round: u64, oracle_queries: u64, offline: f64) -> EvalRow {
        let last = self.last.as_ref();
        EvalRow {
            round,
            oracle_queries,
            online_win_rate: self.tally.rate(),
            offline_win_rate: offline,
            cumulative_regret: self.cumulative_regret,
            immediate_regret: last.map(|r| r.immediate_regret),
            proposal_set_size: last.map(|r| r.proposal_set_size),
            pair_variance: last.and_then(|r| r.pair_variance),
            label_source: last.map(|r| r.label_source),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn record<T: Scalar>(
        &mut self,
        oracle: &OracleSpec<T>,
        universe: &Universe<T>,
        reference: usize,
        triplet: &PreferenceTriplet<T>,
        first: usize,
        second: usize,
        round: u64,
        oracle_queries: u64,
        gamma: f64,
        proposal_set_size: usize,
        pair_variance: Option<f64>,
        fallback: bool,
    ) -> Result<DuelRecord> {
        let (y, yp, r) = (universe.get(first)?, universe.get(second)?, universe.get(reference)?);
        let x = &universe.context;
        let regret = immediate_regret(oracle, universe, y, yp)?.as_f64();
        let j1 = oracle.judge(x, y, r)?;
        let j2 = oracle.judge(x, yp, r)?;
        self.tally.record(j1);
        self.tally.record(j2);
        self.cumulative_regret += regret;
        let rec = DuelRecord {
            round,
            oracle_queries,
            context: x.values().iter().map(|v| v.as_f64()).collect(),
            first,
            second,
            winner: triplet.winner.action_id,
            loser: triplet.loser.action_id,
            label_source: triplet.source,
            gamma,
            reference,
            first_judgement: j1,
            second_judgement: j2,
            online_win_rate: self.tally.rate().unwrap(),
            immediate_regret: regret,
            cumulative_regret: self.cumulative_regret,
            proposal_set_size,
            pair_variance,
            fallback,
        };
        self.last = Some(rec.clone());
        Ok(rec)
    }
}

/// Runs the configured agent until the query budget is spent.
pub fn run_experiment<T: Scalar>(
    config: &ExperimentConfig,
    labeler: &mut dyn PreferenceLabeler<T>,
    observer: &mut dyn RunObserver,
) -> Result<RunOutput<T>> {
    config.validate()?;
    match config.agent {
        AgentKind::Offline => run_offline(config, labeler, observer),
        _ => run_online(config, labeler, observer),
    }
}

/// [`run_experiment`] with the environment's own oracle answering in-process.
pub fn run_inproc<T: Scalar>(config: &ExperimentConfig, observer: &mut dyn RunObserver) -> Result<RunOutput<T>> {
    let mut oracle = Environment::<T>::new(config)?.oracle;
    run_experiment(config, &mut oracle, observer)
}

fn run_online<T: Scalar>(
    config: &ExperimentConfig,
    labeler: &mut dyn PreferenceLabeler<T>,
    observer: &mut dyn RunObserver,
) -> Result<RunOutput<T>> {
    let env = Environment::<T>::new(config)?;
    let suite = env.eval_suite(config)?;
    let root = RngStream::root(config.seed);
    let mut agent = OnlineAgent::new(config.agent_config(), env.reference.clone(), &root.child("agent"))?;
    let mut contexts = root.child("train-contexts");
    let mut references = root.child("train-references");
    let mut tracker = Tracker::new();
    let mut records = Vec::new();
    let mut evals = Vec::new();

    let evaluate = |tracker: &Tracker, agent: &OnlineAgent<T>, evals: &mut Vec<EvalRow>, observer: &mut dyn RunObserver| -> Result<()> {
        let offline = offline_win_rate(agent.policy(), &suite, &env.oracle)?;
        let row = tracker.eval_row(agent.rounds(), agent.oracle_queries(), offline);
        observer.on_eval(&row)?;
        evals.push(row);
        Ok(())
    };

    evaluate(&tracker, &agent, &mut evals, observer)?;
    while agent.oracle_queries() < config.budget {
        let x = ContextVec::sample(config.context_dim, &mut contexts);
        let universe = env.feature_map.universe(&x)?;
        let reference = env.reference.policy().sample(&universe, &mut references);
        let out = agent.step(&universe, labeler)?;
        let rec = tracker
            .record(
                &env.oracle,
                &universe,
                reference,
                &out.triplet,
                out.first.action_id,
                out.second.action_id,
                out.round,
                agent.oracle_queries(),
                out.gamma,
                out.proposal_set_size,
                out.pair_variance,
                out.fallback,
            )
            .map_err(|e| Error::Round { round: out.round, source: Box::new(e) })?;
        observer.on_duel(&rec)?;
        records.push(rec);
        if out.round % config.eval_period == 0 {
            evaluate(&tracker, &agent, &mut evals, observer)?;
        }
    }
    if evals.last().map(|e| e.round) != Some(agent.rounds()) {
        evaluate(&tracker, &agent, &mut evals, observer)?;
    }
    Ok(RunOutput {
        log: RunLog {
            header: RunHeader::new(config),
            records,
            evals,
        },
        policy: agent.policy().clone(),
        reward_model: agent.reward_model().cloned(),
    })
}

/// Offline baseline: spend the whole budget on `π_ref` duels first, then
/// train the policy for `offline_epochs` passes over that fixed dataset.
///
/// Evaluation rows are indexed by policy-update step (their `round`
/// column), and every one of them reports the full budget as spent.
pub fn offline_agent_run<T: Scalar>(
    config: &ExperimentConfig,
    labeler: &mut dyn PreferenceLabeler<T>,
    observer: &mut dyn RunObserver,
) -> Result<RunOutput<T>> {
    config.validate()?;
    run_offline(config, labeler, observer)
}

fn run_offline<T: Scalar>(
    config: &ExperimentConfig,
    labeler: &mut dyn PreferenceLabeler<T>,
    observer: &mut dyn RunObserver,
) -> Result<RunOutput<T>> {
    let env = Environment::<T>::new(config)?;
    let suite = env.eval_suite(config)?;
    let root = RngStream::root(config.seed);
    let agent_rng = root.child("agent");
    let mut proposals = agent_rng.child("proposals");
    let mut oracle_rng = agent_rng.child("oracle");
    let mut order_rng = agent_rng.child("offline-order");
    let mut contexts = root.child("train-contexts");
    let mut references = root.child("train-references");
    let mut tracker = Tracker::new();
    let mut records = Vec::new();
    let mut dataset = Vec::with_capacity(config.budget as usize);

    for round in 1..=config.budget {
        let x = ContextVec::sample(config.context_dim, &mut contexts);
        let universe = env.feature_map.universe(&x)?;
        let reference = env.reference.policy().sample(&universe, &mut references);
        let (y, yp, fallback) = crate::agent::select_pair_passive(env.reference.policy(), &universe, &mut proposals)?;
        let t = labeler
            .label(&x, &y, &yp, &mut oracle_rng, round)
            .map_err(|e| Error::Round { round, source: Box::new(e) })?;
        if t.source != LabelSource::OracleLabel {
            return Err(Error::Oracle("labeler returned a non-oracle label".into()));
        }
        let rec = tracker.record(
            &env.oracle, &universe, reference, &t, y.action_id, yp.action_id, round, round, 1.0, 2, None, fallback,
        )?;
        observer.on_duel(&rec)?;
        records.push(rec);
        dataset.push(t);
    }

    let mut policy = env.reference.policy().with_temperature(T::lit(config.temperature))?;
    let loss = DapLoss::new(config.optimizer, T::lit(config.beta()))?;
    let lr = T::lit(config.policy_lr());
    let mut evals = Vec::new();
    let mut step = 0u64;
    let evaluate = |policy: &SoftmaxPolicy<T>, step: u64, evals: &mut Vec<EvalRow>, observer: &mut dyn RunObserver| -> Result<()> {
        let row = tracker.eval_row(step, config.budget, offline_win_rate(policy, &suite, &env.oracle)?);
        observer.on_eval(&row)?;
        evals.push(row);
        Ok(())
    };
    evaluate(&policy, 0, &mut evals, observer)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..config.offline_epochs {
        // Fisher–Yates with the run's own stream
        for i in (1..order.len()).rev() {
            order.swap(i, order_rng.index(i + 1));
        }
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreferenceTriplet<T>> = chunk.iter().map(|&i| &dataset[i]).collect();
            policy.policy_update(&batch, &loss, &env.reference, lr)?;
            step += 1;
            if step % config.eval_period == 0 {
                evaluate(&policy, step, &mut evals, observer)?;
            }
        }
    }
    if evals.last().map(|e| e.round) != Some(step) {
        evaluate(&policy, step, &mut evals, observer)?;
    }
    Ok(RunOutput {
        log: RunLog {
            header: RunHeader::new(config),
            records,
            evals,
        },
        policy,
        reward_model: None,
    })
}
