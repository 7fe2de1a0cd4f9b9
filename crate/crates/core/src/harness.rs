// SPDX-License-Identifier: Apache-2.0

//! The iterate-simulate-learn loop, its run log, and log comparison.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{
    compute_reward, default_statements, expand_near_miss, parse_statements, CoverageError, CoverageLedger,
    CoverageStatement, RewardSpec, StatementDecl, DEFAULT_RARITY_THRESHOLD,
};
use crate::dqn::{ActionSpace, AgentConfig, DqnAgent, DqnError};
use crate::dut::{run_simulation, DutConfig, DutError, SimResult};
use crate::seed::{derive_seed, Domain};
use crate::stats::{bin_edges, histogram, mann_whitney_greater, max, mean, MannWhitney};
use crate::stimulus::{encode_unchecked, generate_stream, sample_knobs, KnobSchema, KnobVector, StimulusError, DEFAULT_BINS};
use crate::surrogate::{
    check_termination, fit_surrogate, propose_knobs, proposal_entropy, SearchIteration, SurrogateConfig,
    SurrogateDataset, SurrogateError, SurrogateRow, Termination,
};

pub const TOOL_NAME: &str = "covsteer";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("logs are not comparable: {0}")]
    ConfigMismatch(String),
    #[error("run log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("iteration {iteration} failed: {message}")]
    IterationFailed {
        iteration: u32,
        message: String,
        /// Log up to and including the partial, invalid record.
        partial: Box<RunLog>,
    },
    #[error(transparent)]
    Dut(#[from] DutError),
    #[error(transparent)]
    Stimulus(#[from] StimulusError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Dqn(#[from] DqnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Random,
    Surrogate,
    Dqn,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Surrogate => "surrogate",
            Strategy::Dqn => "dqn",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dut: DutConfig,
    /// Defaults to [`KnobSchema::for_config`] with four bins.
    pub schema: Option<KnobSchema>,
    pub reward: RewardSpec,
    /// Defaults to the built-in statement set for `dut`.
    pub statements: Option<Vec<StatementDecl>>,
    pub strategy: Strategy,
    pub batch_size: usize,
    pub iterations: usize,
    pub cycles: u64,
    pub master_seed: u64,
    /// Share of each surrogate batch drawn uniformly at random.
    pub exploration_fraction: f64,
    pub rarity_threshold: f64,
    /// Add component statements for rarely hit conjunctions after each batch.
    pub near_miss_expansion: bool,
    pub surrogate: SurrogateConfig,
    pub dqn: AgentConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dut: DutConfig::default(),
            schema: None,
            reward: RewardSpec::default(),
            statements: None,
            strategy: Strategy::Random,
            batch_size: 32,
            iterations: 10,
            cycles: 10_000,
            master_seed: 0,
            exploration_fraction: 0.25,
            rarity_threshold: DEFAULT_RARITY_THRESHOLD,
            near_miss_expansion: true,
            surrogate: SurrogateConfig::default(),
            dqn: AgentConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn resolved_schema(&self) -> KnobSchema {
        self.schema
            .clone()
            .unwrap_or_else(|| KnobSchema::for_config(&self.dut, DEFAULT_BINS))
    }

    pub fn resolved_statements(&self) -> Result<Vec<CoverageStatement>, CoverageError> {
        match &self.statements {
            Some(decls) => parse_statements(decls),
            None => Ok(default_statements(&self.dut)),
        }
    }

    /// Checks every part of the config, including the strategy-specific ones.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.into()));
        self.dut.validate()?;
        let schema = self.resolved_schema();
        schema.validate(&self.dut)?;
        let statements = self.resolved_statements()?;
        self.reward.validate(&statements)?;
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if self.cycles == 0 {
            return bad("cycles must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.exploration_fraction) {
            return bad("exploration_fraction must lie in [0, 1]");
        }
        if !(self.rarity_threshold >= 0.0) {
            return bad("rarity_threshold must be >= 0");
        }
        match self.strategy {
            Strategy::Random => {}
            Strategy::Surrogate => {
                self.surrogate.train.validate().map_err(SurrogateError::from)?;
                self.surrogate.search.validate()?;
                if self.surrogate.hidden.contains(&0) {
                    return bad("surrogate hidden layer sizes must be >= 1");
                }
                if self.batch_size < 2 * schema.dim() {
                    return Err(HarnessError::InvalidConfig(format!(
                        "batch_size {} gives the surrogate fewer than {} bootstrap rows",
                        self.batch_size,
                        2 * schema.dim()
                    )));
                }
            }
            Strategy::Dqn => {
                self.dqn.validate()?;
                ActionSpace::new(&schema)?;
                self.surrogate.search.validate()?;
            }
        }
        Ok(())
    }

    /// Slots of a surrogate batch left to uniform sampling.
    pub fn exploration_slots(&self) -> usize {
        ((self.exploration_fraction * self.batch_size as f64).ceil() as usize).min(self.batch_size)
    }
}

/// Who chose a run's knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Random,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub origin: Origin,
    pub knobs: KnobVector,
    /// Stream seed.
    pub seed: u64,
    pub result: SimResult,
    pub reward: f64,
    /// DQN action id, if the run came from one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<usize>,
    /// Surrogate prediction for model proposals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub runs: Vec<RunRecord>,
    pub mean_reward: f64,
    pub max_reward: f64,
    /// Summed per-knob entropy (nats) of the strategy's proposals.
    pub entropy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Training MSE of the surrogate that produced the proposals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate_loss: Option<f64>,
    /// Coverage ledger after this iteration's batch.
    pub ledger: CoverageLedger,
    /// Component statements added by near-miss expansion after this batch.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub statements_added: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<String>,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl IterationRecord {
    pub fn rewards(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.reward).collect()
    }

    pub fn pct_full(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.result.pct_full_cycles).collect()
    }

    /// Share of runs whose simulation failed.
    pub fn failure_rate(&self) -> f64 {
        if self.runs.is_empty() {
            return 0.0;
        }
        self.runs.iter().filter(|r| r.result.failed).count() as f64 / self.runs.len() as f64
    }

    /// Runs that hit `statement` at least once.
    pub fn runs_hitting(&self, statement: &str) -> usize {
        self.runs
            .iter()
            .filter(|r| r.result.coverage_hits.get(statement).is_some_and(|&h| h > 0))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
}

impl LogHeader {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            config,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Header(LogHeader),
    Iteration(IterationRecord),
}

/// Header plus one record per executed iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: LogHeader,
    pub iterations: Vec<IterationRecord>,
}

impl RunLog {
    pub fn config(&self) -> &ExperimentConfig {
        &self.header.config
    }

    pub fn final_iteration(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }

    /// One JSON object per line, header first.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), HarnessError> {
        serde_json::to_writer(&mut out, &LogLine::Header(self.header.clone()))?;
        out.write_all(b"\n")?;
        for it in &self.iterations {
            serde_json::to_writer(&mut out, &LogLine::Iteration(it.clone()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, HarnessError> {
        let mut header = None;
        let mut iterations = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine = serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            match (parsed, header.is_some()) {
                (LogLine::Header(h), false) => header = Some(h),
                (LogLine::Iteration(r), true) => iterations.push(r),
                (LogLine::Header(_), true) => {
                    return Err(HarnessError::Parse {
                        line: line_no,
                        message: "second header".into(),
                    })
                }
                (LogLine::Iteration(_), false) => {
                    return Err(HarnessError::Parse {
                        line: line_no,
                        message: "iteration before header".into(),
                    })
                }
            }
        }
        let header = header.ok_or(HarnessError::Parse {
            line: 0,
            message: "missing header".into(),
        })?;
        Ok(Self { header, iterations })
    }

    pub fn from_jsonl(bytes: &[u8]) -> Result<Self, HarnessError> {
        Self::read_jsonl(bytes)
    }
}

/// One batch member ready to simulate.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub origin: Origin,
    pub knobs: KnobVector,
    pub action: Option<usize>,
    pub predicted: Option<f64>,
}

impl Proposal {
    pub fn random(knobs: KnobVector) -> Self {
        Self {
            origin: Origin::Random,
            knobs,
            action: None,
            predicted: None,
        }
    }
}

/// Stream seed of run `index` in `iteration`.
pub fn stream_seed(master: u64, iteration: u32, index: usize) -> u64 {
    derive_seed(master, Domain::Stream, iteration, index as u32)
}

/// Uniform knob draw for slot `index` of `iteration`.
pub fn random_knobs(schema: &KnobSchema, master: u64, iteration: u32, index: usize) -> KnobVector {
    sample_knobs(schema, derive_seed(master, Domain::Knobs, iteration, index as u32))
}

/// Simulates each `(proposal, seed)` pair independently and assembles the
/// record. Results are collected in slot order whatever the scheduling.
/// If any run fails, the record holds the runs that completed before the
/// first failing slot and is flagged invalid.
pub fn run_iteration(
    config: &ExperimentConfig,
    statements: &[CoverageStatement],
    iteration: u32,
    proposals: &[Proposal],
    seeds: &[u64],
) -> IterationRecord {
    assert_eq!(proposals.len(), seeds.len(), "one seed per proposal");
    let outcomes: Vec<Result<(SimResult, f64), HarnessError>> = proposals
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(p, &seed)| {
            let streams = generate_stream(&p.knobs, seed, config.cycles)?;
            let result = run_simulation(&config.dut, &streams, config.cycles, statements)?;
            let reward = compute_reward(&result, &config.reward, statements)?;
            Ok((result, reward))
        })
        .collect();
    let mut runs = Vec::with_capacity(proposals.len());
    let mut error = None;
    for ((p, &seed), outcome) in proposals.iter().zip(seeds).zip(outcomes) {
        match outcome {
            Ok((result, reward)) => runs.push(RunRecord {
                origin: p.origin,
                knobs: p.knobs.clone(),
                seed,
                result,
                reward,
                action: p.action,
                predicted: p.predicted,
            }),
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    let rewards: Vec<f64> = runs.iter().map(|r| r.reward).collect();
    IterationRecord {
        iteration,
        mean_reward: mean(&rewards),
        max_reward: if rewards.is_empty() { 0.0 } else { max(&rewards) },
        runs,
        entropy: 0.0,
        epsilon: None,
        surrogate_loss: None,
        ledger: CoverageLedger::new(config.rarity_threshold),
        statements_added: Vec::new(),
        termination: None,
        valid: error.is_none(),
        error,
    }
}

enum Learner {
    None,
    Surrogate(SurrogateDataset),
    Dqn(Box<DqnAgent>),
}

/// Runs the configured loop. Iteration 0 is uniform random for every
/// strategy, so logs with the same master seed share their bootstrap batch.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunLog, HarnessError> {
    config.validate()?;
    let schema = config.resolved_schema();
    let mut statements = config.resolved_statements()?;
    let master = config.master_seed;
    let batch = config.batch_size;
    let mut ledger = CoverageLedger::new(config.rarity_threshold);
    let mut log = RunLog {
        header: LogHeader::new(config.clone()),
        iterations: Vec::new(),
    };
    let mut learner = match config.strategy {
        Strategy::Random => Learner::None,
        Strategy::Surrogate => Learner::Surrogate(SurrogateDataset::new(schema.dim())),
        Strategy::Dqn => {
            let agent_config = AgentConfig {
                seed: derive_seed(master, Domain::Agent, 0, 0),
                ..config.dqn.clone()
            };
            Learner::Dqn(Box::new(DqnAgent::new(&schema, agent_config)?))
        }
    };
    let mut history: Vec<SearchIteration> = Vec::new();

    for it in 0..config.iterations {
        let iteration = it as u32;
        let mut surrogate_loss = None;
        let mut epsilon = None;
        let proposals: Vec<Proposal> = match &mut learner {
            _ if it == 0 => (0..batch)
                .map(|j| Proposal::random(random_knobs(&schema, master, iteration, j)))
                .collect(),
            Learner::None => (0..batch)
                .map(|j| Proposal::random(random_knobs(&schema, master, iteration, j)))
                .collect(),
            Learner::Surrogate(dataset) => {
                let train = crate::mlp::TrainConfig {
                    seed: derive_seed(master, Domain::Train, iteration, 0),
                    ..config.surrogate.train.clone()
                };
                let fit = fit_surrogate(dataset, &config.surrogate.hidden, &train)?;
                surrogate_loss = Some(fit.final_loss);
                let search = crate::surrogate::SearchConfig {
                    seed: derive_seed(master, Domain::Search, iteration, 0),
                    ..config.surrogate.search.clone()
                };
                let ranked = propose_knobs(&fit.model, &schema, &search)?;
                let model_slots = batch - config.exploration_slots();
                (0..batch)
                    .map(|j| {
                        if j < model_slots {
                            let p = &ranked[j % ranked.len()];
                            Proposal {
                                origin: Origin::Model,
                                knobs: p.knobs.clone(),
                                action: None,
                                predicted: Some(p.predicted),
                            }
                        } else {
                            Proposal::random(random_knobs(&schema, master, iteration, j))
                        }
                    })
                    .collect()
            }
            Learner::Dqn(agent) => {
                let chosen = agent.propose(batch)?;
                epsilon = Some(agent.epsilon());
                chosen
                    .into_iter()
                    .map(|(a, knobs)| Proposal {
                        origin: Origin::Model,
                        knobs,
                        action: Some(a),
                        predicted: None,
                    })
                    .collect()
            }
        };
        let seeds: Vec<u64> = (0..batch).map(|j| stream_seed(master, iteration, j)).collect();
        let mut record = run_iteration(config, &statements, iteration, &proposals, &seeds);
        record.surrogate_loss = surrogate_loss;
        record.epsilon = epsilon;

        let proposed: Vec<Vec<f64>> = proposals
            .iter()
            .filter(|p| it == 0 || config.strategy == Strategy::Random || p.origin == Origin::Model)
            .map(|p| encode_unchecked(&p.knobs, &schema).0)
            .collect();
        record.entropy = proposal_entropy(&proposed, config.surrogate.search.entropy_bins.max(2));

        if !record.valid {
            let message = record.error.clone().unwrap_or_default();
            record.ledger = ledger.clone();
            log.iterations.push(record);
            return Err(HarnessError::IterationFailed {
                iteration,
                message,
                partial: Box::new(log),
            });
        }

        ledger.record_batch(record.runs.iter().map(|r| &r.result));
        if config.near_miss_expansion {
            let expanded = expand_near_miss(&ledger, &statements);
            record.statements_added = expanded[statements.len()..].iter().map(|s| s.id.clone()).collect();
            statements = expanded;
        }
        record.ledger = ledger.clone();

        match &mut learner {
            Learner::None => {}
            Learner::Surrogate(dataset) => {
                for r in &record.runs {
                    dataset.push(SurrogateRow {
                        features: encode_unchecked(&r.knobs, &schema).0,
                        reward: r.reward,
                        iteration,
                        seed: r.seed,
                    })?;
                }
            }
            Learner::Dqn(agent) => {
                for r in &record.runs {
                    let action = match r.action {
                        Some(a) => a,
                        None => agent.action_space().knobs_to_action(&r.knobs)?,
                    };
                    agent.observe(action, r.reward)?;
                }
            }
        }

        history.push(SearchIteration {
            best_reward: record.max_reward,
            proposals: proposed,
        });
        let stop = match config.strategy {
            Strategy::Random => None,
            _ => match check_termination(&history, &config.surrogate.search) {
                Termination::Continue => None,
                Termination::Stop(reason) => Some(reason),
            },
        };
        record.termination = stop.clone();
        log.iterations.push(record);
        if stop.is_some() {
            break;
        }
    }
    Ok(log)
}

/// Re-executes a log from its header.
pub fn replay(log: &RunLog) -> Result<RunLog, HarnessError> {
    run_experiment(&log.header.config)
}

/// True when replaying the header reproduces the log byte for byte.
pub fn verify_replay(log: &RunLog) -> Result<bool, HarnessError> {
    Ok(replay(log)?.to_jsonl() == log.to_jsonl())
}

/// Mean and max reward of one iteration of each log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub iteration: u32,
    pub mean_a: Option<f64>,
    pub max_a: Option<f64>,
    pub mean_b: Option<f64>,
    pub max_b: Option<f64>,
}

/// Per-iteration histograms over edges shared by both logs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramTable {
    pub edges: Vec<f64>,
    /// `(log label, iteration, counts)`.
    pub rows: Vec<(String, u32, Vec<u64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub series: Vec<SeriesRow>,
    pub reward_histogram: HistogramTable,
    pub pct_full_histogram: HistogramTable,
    pub final_mean_a: f64,
    pub final_mean_b: f64,
    /// `final_mean_a / final_mean_b`; 1 when both are zero.
    pub mean_ratio: f64,
    /// One-sided test that log A's final rewards exceed log B's.
    pub mann_whitney: Option<MannWhitney>,
}

pub const COMPARE_BINS: usize = 10;

fn shared_histogram(logs: [(&str, &RunLog); 2], bins: usize, value: impl Fn(&IterationRecord) -> Vec<f64>) -> HistogramTable {
    let all: Vec<f64> = logs
        .iter()
        .flat_map(|(_, l)| l.iterations.iter().flat_map(&value))
        .collect();
    let (lo, hi) = if all.is_empty() {
        (0.0, 1.0)
    } else {
        (all.iter().copied().fold(f64::INFINITY, f64::min), max(&all))
    };
    let edges = bin_edges(lo, hi, bins);
    let rows = logs
        .iter()
        .flat_map(|(label, l)| {
            let edges = &edges;
            let value = &value;
            l.iterations
                .iter()
                .map(move |it| (label.to_string(), it.iteration, histogram(&value(it), edges)))
        })
        .collect();
    HistogramTable { edges, rows }
}

/// Compares two logs of the same controller and reward. Log A is the
/// candidate and log B the baseline.
pub fn compare(a: &RunLog, b: &RunLog) -> Result<Comparison, HarnessError> {
    if a.config().dut != b.config().dut {
        return Err(HarnessError::ConfigMismatch("controller configs differ".into()));
    }
    if a.config().reward != b.config().reward {
        return Err(HarnessError::ConfigMismatch("reward specs differ".into()));
    }
    let n = a.iterations.len().max(b.iterations.len());
    let pick = |l: &RunLog, i: usize| l.iterations.get(i).map(|r| (r.mean_reward, r.max_reward));
    let series = (0..n)
        .map(|i| {
            let (ma, xa) = pick(a, i).unzip();
            let (mb, xb) = pick(b, i).unzip();
            SeriesRow {
                iteration: i as u32,
                mean_a: ma,
                max_a: xa,
                mean_b: mb,
                max_b: xb,
            }
        })
        .collect();
    let final_a = a.final_iteration().map(IterationRecord::rewards).unwrap_or_default();
    let final_b = b.final_iteration().map(IterationRecord::rewards).unwrap_or_default();
    let (final_mean_a, final_mean_b) = (mean(&final_a), mean(&final_b));
    let mean_ratio = if final_mean_b == 0.0 {
        if final_mean_a == 0.0 {
            1.0
        } else {
            f64::INFINITY.copysign(final_mean_a)
        }
    } else {
        final_mean_a / final_mean_b
    };
    let logs = [("a", a), ("b", b)];
    Ok(Comparison {
        series,
        reward_histogram: shared_histogram(logs, COMPARE_BINS, IterationRecord::rewards),
        pct_full_histogram: shared_histogram(logs, COMPARE_BINS, IterationRecord::pct_full),
        final_mean_a,
        final_mean_b,
        mean_ratio,
        mann_whitney: mann_whitney_greater(&final_a, &final_b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::{Objective, ALL_FULL};
    use crate::stimulus::{RangeKnob, RealKnob};

    fn small(strategy: Strategy) -> ExperimentConfig {
        ExperimentConfig {
            strategy,
            batch_size: 24,
            iterations: 3,
            cycles: 500,
            master_seed: 17,
            surrogate: SurrogateConfig {
                search: crate::surrogate::SearchConfig {
                    num_candidates: 500,
                    ..Default::default()
                },
                ..Default::default()
            },
            ..ExperimentConfig::default()
        }
    }

    fn fixed_schema() -> KnobSchema {
        let mut s = KnobSchema::for_config(&DutConfig::default(), 2);
        s.read_weight = RealKnob::fixed(0.5);
        s.write_weight = RealKnob::fixed(0.5);
        s.per_port_activity = vec![RealKnob::fixed(1.0), RealKnob::fixed(1.0), RealKnob::new(0.0, 1.0, 2), RealKnob::new(0.0, 1.0, 2)];
        s.tag = RangeKnob::fixed(0, 255);
        s.offset = RangeKnob::fixed(0, 63);
        s
    }

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
        assert_eq!(ExperimentConfig::default().exploration_slots(), 8);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let c = ExperimentConfig { batch_size: 0, ..Default::default() };
        assert!(matches!(c.validate(), Err(HarnessError::InvalidConfig(_))));
        let c = ExperimentConfig { iterations: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = ExperimentConfig { strategy: Strategy::Dqn, ..Default::default() };
        assert!(matches!(c.validate(), Err(HarnessError::Dqn(DqnError::ActionSpaceTooLarge { .. }))));
        let c = ExperimentConfig {
            reward: RewardSpec::single(Objective::StatementHits { statement: "NOPE".into() }),
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(HarnessError::Coverage(_))));
        let c = ExperimentConfig { strategy: Strategy::Surrogate, batch_size: 8, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn random_strategy_runs_every_iteration() {
        let log = run_experiment(&small(Strategy::Random)).unwrap();
        assert_eq!(log.iterations.len(), 3);
        for (i, it) in log.iterations.iter().enumerate() {
            assert_eq!(it.iteration as usize, i);
            assert_eq!(it.runs.len(), 24);
            assert!(it.valid);
            assert!(it.surrogate_loss.is_none() && it.epsilon.is_none());
            assert!(it.runs.iter().all(|r| r.origin == Origin::Random));
            let rewards = it.rewards();
            assert_eq!(it.mean_reward, mean(&rewards));
            assert_eq!(it.max_reward, max(&rewards));
        }
    }

    #[test]
    fn bootstrap_is_shared_and_seeds_distinct() {
        let r = run_experiment(&small(Strategy::Random)).unwrap();
        let s = run_experiment(&small(Strategy::Surrogate)).unwrap();
        assert_eq!(r.iterations[0].runs, s.iterations[0].runs);
        let mut seeds: Vec<u64> = r.iterations.iter().flat_map(|i| i.runs.iter().map(|r| r.seed)).collect();
        let n = seeds.len();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), n);
    }

    #[test]
    fn surrogate_batches_keep_exploration_floor() {
        let log = run_experiment(&small(Strategy::Surrogate)).unwrap();
        for it in &log.iterations[1..] {
            let random = it.runs.iter().filter(|r| r.origin == Origin::Random).count();
            assert_eq!(random, 6);
            assert!(it.surrogate_loss.is_some());
            assert!(it.runs[..18].iter().all(|r| r.origin == Origin::Model && r.predicted.is_some()));
        }
    }

    #[test]
    fn dqn_strategy_runs_and_records_epsilon() {
        let mut c = small(Strategy::Dqn);
        c.schema = Some(fixed_schema());
        let log = run_experiment(&c).unwrap();
        assert_eq!(log.iterations.len(), 3);
        let eps: Vec<f64> = log.iterations[1..].iter().map(|i| i.epsilon.unwrap()).collect();
        assert!(eps[0] > eps[1]);
        assert!(log.iterations[1].runs.iter().all(|r| r.action.is_some()));
    }

    #[test]
    fn identical_seed_gives_identical_log() {
        for strategy in [Strategy::Random, Strategy::Surrogate] {
            let c = small(strategy);
            let a = run_experiment(&c).unwrap();
            assert_eq!(a.to_jsonl(), run_experiment(&c).unwrap().to_jsonl());
            assert!(verify_replay(&a).unwrap());
        }
    }

    #[test]
    fn identical_knobs_and_seeds_give_identical_rewards() {
        let c = small(Strategy::Random);
        let st = c.resolved_statements().unwrap();
        let k = random_knobs(&c.resolved_schema(), 1, 0, 0);
        let record = run_iteration(&c, &st, 0, &vec![Proposal::random(k); 6], &[9; 6]);
        assert!(record.runs.windows(2).all(|w| w[0].result == w[1].result && w[0].reward == w[1].reward));
    }

    #[test]
    fn idle_knobs_give_zero_depth_reward() {
        let c = small(Strategy::Random);
        let st = c.resolved_statements().unwrap();
        let mut k = random_knobs(&c.resolved_schema(), 1, 0, 0);
        k.per_port_activity = vec![0.0; 4];
        let record = run_iteration(&c, &st, 0, &vec![Proposal::random(k); 4], &[1, 2, 3, 4]);
        assert!(record.rewards().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn failing_run_marks_record_invalid() {
        let c = small(Strategy::Random);
        let st = c.resolved_statements().unwrap();
        let good = random_knobs(&c.resolved_schema(), 1, 0, 0);
        let mut bad = good.clone();
        bad.index_hi = 1000;
        let ps = vec![Proposal::random(good.clone()), Proposal::random(bad), Proposal::random(good)];
        let record = run_iteration(&c, &st, 0, &ps, &[1, 2, 3]);
        assert!(!record.valid);
        assert_eq!(record.runs.len(), 1);
        assert!(record.error.is_some());
    }

    #[test]
    fn near_miss_expansion_adds_components_once() {
        let mut c = small(Strategy::Random);
        c.reward = RewardSpec::single(Objective::NearMissScore { statement: ALL_FULL.into() });
        let log = run_experiment(&c).unwrap();
        let added = &log.iterations[0].statements_added;
        assert_eq!(added.len(), 4);
        assert!(added.iter().all(|id| id.starts_with("ALL_FULL/fifo_full")));
        assert!(log.iterations[1].statements_added.is_empty());
        assert!(log.iterations[1].ledger.statement_hits.contains_key(&added[0]));
    }

    #[test]
    fn log_round_trips_through_jsonl() {
        let log = run_experiment(&small(Strategy::Surrogate)).unwrap();
        let bytes = log.to_jsonl();
        let back = RunLog::from_jsonl(&bytes).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_jsonl(), bytes);
        assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1 + log.iterations.len());
    }

    #[test]
    fn corrupt_logs_are_rejected() {
        let log = run_experiment(&ExperimentConfig { iterations: 1, ..small(Strategy::Random) }).unwrap();
        let text = String::from_utf8(log.to_jsonl()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let err = RunLog::from_jsonl(lines[1].as_bytes()).unwrap_err();
        assert!(matches!(err, HarnessError::Parse { line: 1, .. }));
        let err = RunLog::from_jsonl(format!("{}\n{{\"kind\":\"iteration\"}}\n", lines[0]).as_bytes()).unwrap_err();
        assert!(matches!(err, HarnessError::Parse { line: 2, .. }));
        assert!(matches!(RunLog::from_jsonl(b""), Err(HarnessError::Parse { line: 0, .. })));
    }

    #[test]
    fn self_comparison() {
        let log = run_experiment(&small(Strategy::Random)).unwrap();
        let cmp = compare(&log, &log).unwrap();
        assert_eq!(cmp.mean_ratio, 1.0);
        for row in &cmp.series {
            assert_eq!(row.mean_a, row.mean_b);
            assert_eq!(row.max_a, row.max_b);
        }
        assert!((cmp.mann_whitney.unwrap().p_greater - 0.5).abs() < 0.1);
        let (a, b): (Vec<_>, Vec<_>) = cmp.reward_histogram.rows.iter().partition(|r| r.0 == "a");
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.2, y.2);
            assert_eq!(x.2.iter().sum::<u64>(), 24);
        }
    }

    #[test]
    fn mismatched_configs_do_not_compare() {
        let a = run_experiment(&ExperimentConfig { iterations: 1, ..small(Strategy::Random) }).unwrap();
        let mut c = ExperimentConfig { iterations: 1, ..small(Strategy::Random) };
        c.dut.fifo_capacity = 4;
        let b = run_experiment(&c).unwrap();
        assert!(matches!(compare(&a, &b), Err(HarnessError::ConfigMismatch(_))));
        let mut c = ExperimentConfig { iterations: 1, ..small(Strategy::Random) };
        c.reward = RewardSpec::single(Objective::PctFullCycles);
        let b = run_experiment(&c).unwrap();
        assert!(matches!(compare(&a, &b), Err(HarnessError::ConfigMismatch(_))));
    }
}
