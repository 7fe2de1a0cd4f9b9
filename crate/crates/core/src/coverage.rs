// SPDX-License-Identifier: Apache-2.0

//! Functional coverage: signal predicates, AND'ed coverage statements,
//! the cross-run coverage ledger with near-miss expansion, and reward
//! extraction from simulation results.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dut::{CycleStats, DutConfig, SimResult, TxKind, BUG_STATEMENT};

/// Id of the flagship rare statement: every port FIFO full in one cycle.
pub const ALL_FULL: &str = "ALL_FULL";

/// Default rarity threshold, in hits per run.
pub const DEFAULT_RARITY_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum CoverageError {
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("malformed predicate `{text}`: {reason}")]
    MalformedPredicate { text: String, reason: String },
    #[error("statement `{0}` has no components")]
    EmptyStatement(String),
    #[error("duplicate statement id `{0}`")]
    DuplicateStatement(String),
    #[error("unknown coverage statement `{0}`")]
    UnknownStatement(String),
    #[error("invalid reward spec: {0}")]
    InvalidReward(String),
}

/// Per-cycle boolean signal over the controller state.
///
/// Textual form (the predicate catalog):
///
/// | text                        | true when                                   |
/// |-----------------------------|---------------------------------------------|
/// | `always`                    | every cycle                                 |
/// | `fifo_full(port=P)`         | FIFO `P` is at capacity                     |
/// | `fifo_depth_ge(port=P,k=K)` | FIFO `P` holds at least `K` entries         |
/// | `port_active(port=P)`       | port `P` issued a transaction               |
/// | `all_ports_active`          | every port issued a transaction             |
/// | `write_arrival(port=P)`     | port `P` issued a Write                     |
/// | `stall(port=P)`             | port `P` dropped an arrival on overflow     |
/// | `grant_count_ge(k=K)`       | at least `K` grants this cycle              |
/// | `grant_count_eq(k=K)`       | exactly `K` grants this cycle               |
/// | `cache_grants_ge(k=K)`      | some cache granted at least `K` requests    |
/// | `bug`                       | the seeded bug fired                        |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Predicate {
    Always,
    FifoFull { port: usize },
    FifoDepthAtLeast { port: usize, k: usize },
    PortActive { port: usize },
    AllPortsActive,
    WriteArrival { port: usize },
    Stall { port: usize },
    GrantCountAtLeast { k: usize },
    GrantCountEq { k: usize },
    CacheGrantsAtLeast { k: usize },
    Bug,
}

impl Predicate {
    pub fn eval(&self, stats: &CycleStats, fifo_capacity: usize) -> bool {
        let depth = |p: usize| stats.per_port_fifo_depth.get(p).copied().unwrap_or(0);
        match *self {
            Predicate::Always => true,
            Predicate::FifoFull { port } => depth(port) >= fifo_capacity,
            Predicate::FifoDepthAtLeast { port, k } => depth(port) >= k,
            Predicate::PortActive { port } => matches!(stats.arrivals.get(port), Some(Some(_))),
            Predicate::AllPortsActive => {
                !stats.arrivals.is_empty() && stats.arrivals.iter().all(Option::is_some)
            }
            Predicate::WriteArrival { port } => {
                matches!(stats.arrivals.get(port), Some(Some(TxKind::Write)))
            }
            Predicate::Stall { port } => stats.stalls.contains(&port),
            Predicate::GrantCountAtLeast { k } => stats.grants.len() >= k,
            Predicate::GrantCountEq { k } => stats.grants.len() == k,
            Predicate::CacheGrantsAtLeast { k } => {
                let mut per_cache = [0usize; crate::dut::MAX_PORTS];
                for &(_, c) in &stats.grants {
                    per_cache[c] += 1;
                }
                per_cache.iter().any(|&n| n >= k)
            }
            Predicate::Bug => stats.bug_triggered,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Always => write!(f, "always"),
            Predicate::FifoFull { port } => write!(f, "fifo_full(port={port})"),
            Predicate::FifoDepthAtLeast { port, k } => write!(f, "fifo_depth_ge(port={port},k={k})"),
            Predicate::PortActive { port } => write!(f, "port_active(port={port})"),
            Predicate::AllPortsActive => write!(f, "all_ports_active"),
            Predicate::WriteArrival { port } => write!(f, "write_arrival(port={port})"),
            Predicate::Stall { port } => write!(f, "stall(port={port})"),
            Predicate::GrantCountAtLeast { k } => write!(f, "grant_count_ge(k={k})"),
            Predicate::GrantCountEq { k } => write!(f, "grant_count_eq(k={k})"),
            Predicate::CacheGrantsAtLeast { k } => write!(f, "cache_grants_ge(k={k})"),
            Predicate::Bug => write!(f, "bug"),
        }
    }
}

impl FromStr for Predicate {
    type Err = CoverageError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let malformed = |reason: &str| CoverageError::MalformedPredicate {
            text: text.to_string(),
            reason: reason.to_string(),
        };
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let (name, mut args) = match compact.split_once('(') {
            Some((name, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| malformed("missing closing parenthesis"))?;
                let mut args = BTreeMap::new();
                for pair in inner.split(',').filter(|s| !s.is_empty()) {
                    let (k, v) = pair
                        .split_once('=')
                        .ok_or_else(|| malformed("arguments must be key=value"))?;
                    let v: usize = v
                        .parse()
                        .map_err(|_| malformed(&format!("argument `{k}` is not an unsigned integer")))?;
                    if args.insert(k.to_string(), v).is_some() {
                        return Err(malformed(&format!("argument `{k}` repeated")));
                    }
                }
                (name.to_string(), args)
            }
            None => (compact.clone(), BTreeMap::new()),
        };
        let mut take = |key: &str| {
            args.remove(key)
                .ok_or_else(|| malformed(&format!("missing argument `{key}`")))
        };
        let pred = match name.as_str() {
            "always" => Predicate::Always,
            "fifo_full" => Predicate::FifoFull { port: take("port")? },
            "fifo_depth_ge" => Predicate::FifoDepthAtLeast {
                port: take("port")?,
                k: take("k")?,
            },
            "port_active" => Predicate::PortActive { port: take("port")? },
            "all_ports_active" => Predicate::AllPortsActive,
            "write_arrival" => Predicate::WriteArrival { port: take("port")? },
            "stall" => Predicate::Stall { port: take("port")? },
            "grant_count_ge" => Predicate::GrantCountAtLeast { k: take("k")? },
            "grant_count_eq" => Predicate::GrantCountEq { k: take("k")? },
            "cache_grants_ge" => Predicate::CacheGrantsAtLeast { k: take("k")? },
            "bug" => Predicate::Bug,
            _ => return Err(CoverageError::UnknownPredicate(text.to_string())),
        };
        if let Some(extra) = args.keys().next() {
            return Err(malformed(&format!("unexpected argument `{extra}`")));
        }
        Ok(pred)
    }
}

/// A named predicate; the id is the predicate's canonical text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignalPredicate {
    pub id: String,
    pub predicate: Predicate,
}

impl From<Predicate> for SignalPredicate {
    fn from(predicate: Predicate) -> Self {
        Self {
            id: predicate.to_string(),
            predicate,
        }
    }
}

impl FromStr for SignalPredicate {
    type Err = CoverageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<Predicate>().map(Self::from)
    }
}

/// AND of component predicates evaluated on the same cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageStatement {
    pub id: String,
    pub components: Vec<SignalPredicate>,
    /// Parent statement when this one was produced by near-miss expansion.
    pub expanded_from: Option<String>,
}

impl CoverageStatement {
    pub fn new(
        id: impl Into<String>,
        components: impl IntoIterator<Item = Predicate>,
    ) -> Result<Self, CoverageError> {
        let id = id.into();
        let components: Vec<SignalPredicate> = components.into_iter().map(Into::into).collect();
        if components.is_empty() {
            return Err(CoverageError::EmptyStatement(id));
        }
        Ok(Self {
            id,
            components,
            expanded_from: None,
        })
    }

    pub fn is_hit(&self, stats: &CycleStats, fifo_capacity: usize) -> bool {
        self.components
            .iter()
            .all(|c| c.predicate.eval(stats, fifo_capacity))
    }
}

/// Serialized form of a statement in config files and run logs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatementDecl {
    pub id: String,
    pub components: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expanded_from: Option<String>,
}

impl StatementDecl {
    pub fn parse(&self) -> Result<CoverageStatement, CoverageError> {
        let preds = self
            .components
            .iter()
            .map(|c| c.parse::<Predicate>())
            .collect::<Result<Vec<_>, _>>()?;
        let mut st = CoverageStatement::new(self.id.clone(), preds)?;
        st.expanded_from = self.expanded_from.clone();
        Ok(st)
    }
}

impl From<&CoverageStatement> for StatementDecl {
    fn from(st: &CoverageStatement) -> Self {
        Self {
            id: st.id.clone(),
            components: st.components.iter().map(|c| c.id.clone()).collect(),
            expanded_from: st.expanded_from.clone(),
        }
    }
}

pub fn parse_statements(decls: &[StatementDecl]) -> Result<Vec<CoverageStatement>, CoverageError> {
    let mut seen = BTreeSet::new();
    decls
        .iter()
        .map(|d| {
            if !seen.insert(d.id.as_str()) {
                return Err(CoverageError::DuplicateStatement(d.id.clone()));
            }
            d.parse()
        })
        .collect()
}

/// The shipped statement set for a controller configuration.
pub fn default_statements(config: &DutConfig) -> Vec<CoverageStatement> {
    let ports = 0..config.num_ports;
    let mut out = Vec::new();
    for port in ports.clone() {
        out.push(CoverageStatement::new(format!("FULL_P{port}"), [Predicate::FifoFull { port }]).unwrap());
    }
    out.push(CoverageStatement::new(ALL_FULL, ports.clone().map(|port| Predicate::FifoFull { port })).unwrap());
    for k in [2usize, 4, 8] {
        for port in ports.clone() {
            out.push(
                CoverageStatement::new(
                    format!("DEPTH_GE{k}_P{port}"),
                    [Predicate::FifoDepthAtLeast { port, k }],
                )
                .unwrap(),
            );
        }
    }
    out.push(CoverageStatement::new("DUAL_GRANT", [Predicate::CacheGrantsAtLeast { k: 2 }]).unwrap());
    out.push(CoverageStatement::new(BUG_STATEMENT, [Predicate::Bug]).unwrap());
    out
}

/// Statement ids hit on this cycle.
pub fn evaluate_statements<'a>(
    stats: &CycleStats,
    fifo_capacity: usize,
    statements: &'a [CoverageStatement],
) -> BTreeSet<&'a str> {
    statements
        .iter()
        .filter(|s| s.is_hit(stats, fifo_capacity))
        .map(|s| s.id.as_str())
        .collect()
}

/// Hit counter used inside the simulation loop. Each distinct component
/// predicate is evaluated once per cycle.
#[derive(Debug, Clone)]
pub struct StatementTracker {
    signals: Vec<Predicate>,
    signal_hits: Vec<u64>,
    statements: Vec<(String, Vec<usize>)>,
    statement_hits: Vec<u64>,
    scratch: Vec<bool>,
}

impl StatementTracker {
    pub fn new(statements: &[CoverageStatement]) -> Self {
        let mut signals: Vec<Predicate> = Vec::new();
        let mut compiled = Vec::with_capacity(statements.len());
        for st in statements {
            let idx = st
                .components
                .iter()
                .map(|c| match signals.iter().position(|p| *p == c.predicate) {
                    Some(i) => i,
                    None => {
                        signals.push(c.predicate);
                        signals.len() - 1
                    }
                })
                .collect();
            compiled.push((st.id.clone(), idx));
        }
        Self {
            signal_hits: vec![0; signals.len()],
            scratch: vec![false; signals.len()],
            statement_hits: vec![0; compiled.len()],
            signals,
            statements: compiled,
        }
    }

    pub fn observe(&mut self, stats: &CycleStats, fifo_capacity: usize) {
        for (i, p) in self.signals.iter().enumerate() {
            let v = p.eval(stats, fifo_capacity);
            self.scratch[i] = v;
            self.signal_hits[i] += u64::from(v);
        }
        for (i, (_, comps)) in self.statements.iter().enumerate() {
            if comps.iter().all(|&c| self.scratch[c]) {
                self.statement_hits[i] += 1;
            }
        }
    }

    pub fn finish(self) -> (BTreeMap<String, u64>, BTreeMap<String, u64>) {
        let statements = self
            .statements
            .into_iter()
            .map(|(id, _)| id)
            .zip(self.statement_hits)
            .collect();
        let signals = self
            .signals
            .iter()
            .map(Predicate::to_string)
            .zip(self.signal_hits)
            .collect();
        (statements, signals)
    }
}

/// Cross-run hit accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageLedger {
    pub runs: u64,
    pub batches: u64,
    /// Total hits per tracked statement over all recorded runs.
    pub statement_hits: BTreeMap<String, u64>,
    /// Total hits per component signal over all recorded runs.
    pub signal_hits: BTreeMap<String, u64>,
    pub rarity_threshold: f64,
}

impl Default for CoverageLedger {
    fn default() -> Self {
        Self::new(DEFAULT_RARITY_THRESHOLD)
    }
}

impl CoverageLedger {
    pub fn new(rarity_threshold: f64) -> Self {
        Self {
            runs: 0,
            batches: 0,
            statement_hits: BTreeMap::new(),
            signal_hits: BTreeMap::new(),
            rarity_threshold,
        }
    }

    pub fn record(&mut self, result: &SimResult) {
        self.runs += 1;
        for (id, &h) in &result.coverage_hits {
            *self.statement_hits.entry(id.clone()).or_default() += h;
        }
        for (id, &h) in &result.signal_hits {
            *self.signal_hits.entry(id.clone()).or_default() += h;
        }
    }

    pub fn record_batch<'a>(&mut self, results: impl IntoIterator<Item = &'a SimResult>) {
        for r in results {
            self.record(r);
        }
        self.batches += 1;
    }

    pub fn hits_per_run(&self, id: &str) -> f64 {
        if self.runs == 0 {
            return 0.0;
        }
        self.statement_hits.get(id).copied().unwrap_or(0) as f64 / self.runs as f64
    }

    pub fn is_rare(&self, id: &str) -> bool {
        self.hits_per_run(id) < self.rarity_threshold
    }

    /// CSV with columns `statement_id,runs,hits,hits_per_run`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["statement_id", "runs", "hits", "hits_per_run"])?;
        for (id, hits) in &self.statement_hits {
            w.write_record([
                id.clone(),
                self.runs.to_string(),
                hits.to_string(),
                self.hits_per_run(id).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Id given to a component statement produced by near-miss expansion.
pub fn component_statement_id(parent: &str, component: &SignalPredicate) -> String {
    format!("{parent}/{}", component.id)
}

/// Adds every component of each rarely-hit multi-component statement as an
/// individually tracked statement. Re-expanding adds nothing.
pub fn expand_near_miss(
    ledger: &CoverageLedger,
    statements: &[CoverageStatement],
) -> Vec<CoverageStatement> {
    let mut out = statements.to_vec();
    let mut ids: BTreeSet<String> = statements.iter().map(|s| s.id.clone()).collect();
    for st in statements {
        if st.components.len() < 2 || !ledger.is_rare(&st.id) {
            continue;
        }
        for comp in &st.components {
            let id = component_statement_id(&st.id, comp);
            if ids.insert(id.clone()) {
                out.push(CoverageStatement {
                    id,
                    components: vec![comp.clone()],
                    expanded_from: Some(st.id.clone()),
                });
            }
        }
    }
    out
}

/// Statement ids with mean hits per run at or below `threshold`, rarest first.
pub fn filter_frequent(ledger: &CoverageLedger, threshold: f64) -> Vec<String> {
    let mut rows: Vec<(f64, &String)> = ledger
        .statement_hits
        .keys()
        .map(|id| (ledger.hits_per_run(id), id))
        .filter(|(rate, _)| *rate <= threshold)
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    rows.into_iter().map(|(_, id)| id.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "objective", rename_all = "snake_case", deny_unknown_fields)]
pub enum Objective {
    AvgFifoDepth,
    PctFullCycles,
    StatementHits { statement: String },
    NearMissScore { statement: String },
    BugFound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTerm {
    #[serde(flatten)]
    pub objective: Objective,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

/// Weighted sum of objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardSpec {
    pub terms: Vec<RewardTerm>,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self::single(Objective::AvgFifoDepth)
    }
}

impl RewardSpec {
    pub fn single(objective: Objective) -> Self {
        Self {
            terms: vec![RewardTerm { objective, weight: 1.0 }],
        }
    }

    pub fn validate(&self, statements: &[CoverageStatement]) -> Result<(), CoverageError> {
        if self.terms.is_empty() {
            return Err(CoverageError::InvalidReward("no reward terms".into()));
        }
        if self.terms.iter().any(|t| !(t.weight >= 0.0) || !t.weight.is_finite()) {
            return Err(CoverageError::InvalidReward("weights must be finite and >= 0".into()));
        }
        if !self.terms.iter().any(|t| t.weight > 0.0) {
            return Err(CoverageError::InvalidReward("at least one weight must be positive".into()));
        }
        for t in &self.terms {
            if let Objective::StatementHits { statement } | Objective::NearMissScore { statement } = &t.objective {
                if !statements.iter().any(|s| &s.id == statement) {
                    return Err(CoverageError::UnknownStatement(statement.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Mean per-cycle fraction of the statement's components that were true.
pub fn near_miss_score(result: &SimResult, statement: &CoverageStatement) -> f64 {
    if result.cycles_run == 0 {
        return 0.0;
    }
    let total: u64 = statement
        .components
        .iter()
        .map(|c| result.signal_hits.get(&c.id).copied().unwrap_or(0))
        .sum();
    total as f64 / (statement.components.len() as f64 * result.cycles_run as f64)
}

pub fn compute_reward(
    result: &SimResult,
    spec: &RewardSpec,
    statements: &[CoverageStatement],
) -> Result<f64, CoverageError> {
    let lookup = |id: &str| {
        statements
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| CoverageError::UnknownStatement(id.to_string()))
    };
    let mut total = 0.0;
    for term in &spec.terms {
        let value = match &term.objective {
            Objective::AvgFifoDepth => result.avg_fifo_depth,
            Objective::PctFullCycles => result.pct_full_cycles,
            Objective::StatementHits { statement } => {
                lookup(statement)?;
                result.coverage_hits.get(statement).copied().unwrap_or(0) as f64
            }
            Objective::NearMissScore { statement } => near_miss_score(result, lookup(statement)?),
            Objective::BugFound => f64::from(u8::from(result.failed)),
        };
        total += term.weight * value;
    }
    Ok(total)
}
