// SPDX-License-Identifier: Apache-2.0

//! Cycle-level model of a multi-port cache controller.
//!
//! Up to four CPU ports issue at most one transaction per cycle each. Every
//! cycle the controller arbitrates the per-port collision FIFO heads and the
//! new arrivals against the caches: a request is granted when its cache still
//! has grant budget left this cycle and it does not collide (same cache, same
//! index) with a request already granted this cycle. Losing arrivals are
//! parked in their port's FIFO and retried on later cycles; losing FIFO heads
//! stay put. Priority is rotating round-robin, with FIFO heads considered
//! before any new arrival.
//!
//! The model is fully deterministic. All randomness lives in the stimulus.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{CoverageStatement, StatementTracker};

/// Largest number of CPU ports or caches the controller supports.
pub const MAX_PORTS: usize = 4;

/// Coverage statement id recorded when the seeded bug fires.
pub const BUG_STATEMENT: &str = "BUG0";

#[derive(Debug, Error, PartialEq)]
pub enum DutError {
    #[error("invalid DUT configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid stimulus stream on port {port}: {reason}")]
    InvalidStream { port: usize, reason: String },
    #[error("expected {expected} per-port streams, got {got}")]
    PortCountMismatch { expected: usize, got: usize },
}

/// Bit widths of the address fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddressWidths {
    pub tag_bits: u32,
    pub index_bits: u32,
    pub offset_bits: u32,
}

impl Default for AddressWidths {
    fn default() -> Self {
        Self {
            tag_bits: 8,
            index_bits: 6,
            offset_bits: 6,
        }
    }
}

impl AddressWidths {
    pub fn tag_max(&self) -> u32 {
        field_max(self.tag_bits)
    }

    pub fn index_max(&self) -> u32 {
        field_max(self.index_bits)
    }

    pub fn offset_max(&self) -> u32 {
        field_max(self.offset_bits)
    }

    fn validate(&self) -> Result<(), DutError> {
        for (name, bits) in [
            ("tag_bits", self.tag_bits),
            ("index_bits", self.index_bits),
            ("offset_bits", self.offset_bits),
        ] {
            if bits == 0 || bits > 31 {
                return Err(DutError::InvalidConfig(format!(
                    "address.{name} must be in 1..=31, got {bits}"
                )));
            }
        }
        Ok(())
    }
}

fn field_max(bits: u32) -> u32 {
    ((1u64 << bits) - 1) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Address {
    pub tag: u32,
    pub index: u32,
    pub offset: u32,
}

impl Address {
    pub fn new(tag: u32, index: u32, offset: u32) -> Self {
        Self { tag, index, offset }
    }

    pub fn fits(&self, widths: &AddressWidths) -> bool {
        self.tag <= widths.tag_max()
            && self.index <= widths.index_max()
            && self.offset <= widths.offset_max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TxKind {
    Read,
    Write,
}

/// One CPU-port memory access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub port: usize,
    pub kind: TxKind,
    pub addr: Address,
    pub issue_cycle: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BugMode {
    #[default]
    Off,
    SeededBug,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DutConfig {
    pub num_ports: usize,
    pub num_caches: usize,
    pub fifo_capacity: usize,
    pub grants_per_cache_per_cycle: usize,
    pub bug_mode: BugMode,
    pub address: AddressWidths,
}

impl Default for DutConfig {
    fn default() -> Self {
        Self {
            num_ports: 4,
            num_caches: 4,
            fifo_capacity: 8,
            grants_per_cache_per_cycle: 1,
            bug_mode: BugMode::Off,
            address: AddressWidths::default(),
        }
    }
}

impl DutConfig {
    pub fn validate(&self) -> Result<(), DutError> {
        if !(1..=MAX_PORTS).contains(&self.num_ports) {
            return Err(DutError::InvalidConfig(format!(
                "num_ports must be in 1..={MAX_PORTS}, got {}",
                self.num_ports
            )));
        }
        if !(1..=MAX_PORTS).contains(&self.num_caches) {
            return Err(DutError::InvalidConfig(format!(
                "num_caches must be in 1..={MAX_PORTS}, got {}",
                self.num_caches
            )));
        }
        if self.fifo_capacity == 0 {
            return Err(DutError::InvalidConfig("fifo_capacity must be >= 1".into()));
        }
        if self.grants_per_cache_per_cycle == 0 {
            return Err(DutError::InvalidConfig(
                "grants_per_cache_per_cycle must be >= 1".into(),
            ));
        }
        self.address.validate()
    }

    /// Cache servicing `addr`: the set index modulo the cache count.
    pub fn route_to_cache(&self, addr: &Address) -> usize {
        addr.index as usize % self.num_caches
    }

    /// Two requests conflict when they hit the same set of the same cache.
    pub fn conflicts(&self, a: &Address, b: &Address) -> bool {
        self.route_to_cache(a) == self.route_to_cache(b) && a.index == b.index
    }
}

/// Collision FIFO holding one port's deferred transactions.
#[derive(Debug, Clone, PartialEq)]
pub struct PortFifo {
    entries: VecDeque<Transaction>,
    capacity: usize,
}

impl PortFifo {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn head(&self) -> Option<&Transaction> {
        self.entries.front()
    }

    /// Returns the transaction back when the FIFO is already full.
    pub fn push(&mut self, tx: Transaction) -> Result<(), Transaction> {
        if self.is_full() {
            return Err(tx);
        }
        self.entries.push_back(tx);
        Ok(())
    }

    pub fn pop(&mut self) -> Option<Transaction> {
        self.entries.pop_front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transaction> {
        self.entries.iter()
    }
}

/// Per-cycle instrumentation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CycleStats {
    pub cycle: u64,
    /// FIFO depths after arbitration.
    pub per_port_fifo_depth: Vec<usize>,
    /// `(port, cache)` for each granted request.
    pub grants: Vec<(usize, usize)>,
    /// Ports whose arrival was dropped on FIFO overflow.
    pub stalls: Vec<usize>,
    /// Kind of the new arrival on each port, if any.
    pub arrivals: Vec<Option<TxKind>>,
    pub bug_triggered: bool,
}

/// Where a granted request came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    FifoHead,
    Arrival,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub port: usize,
    pub cache: usize,
    pub source: Source,
}

/// Outcome of one arbitration round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Arbitration {
    pub grants: Vec<Grant>,
    /// Ports whose FIFO head lost and stays queued.
    pub held_heads: Vec<usize>,
    /// Ports whose new arrival lost and must be queued (or dropped).
    pub deferred_arrivals: Vec<usize>,
}

/// Per-cycle grant bookkeeping shared by the collision check and arbitration.
struct GrantBook<'a> {
    config: &'a DutConfig,
    per_cache: [usize; MAX_PORTS],
    granted: Vec<Address>,
}

impl<'a> GrantBook<'a> {
    fn new(config: &'a DutConfig) -> Self {
        Self {
            config,
            per_cache: [0; MAX_PORTS],
            granted: Vec::with_capacity(2 * MAX_PORTS),
        }
    }

    /// Grants `addr` if its cache has budget and it collides with nothing
    /// granted so far; returns the cache on success.
    fn try_grant(&mut self, addr: &Address) -> Option<usize> {
        let cache = self.config.route_to_cache(addr);
        if self.per_cache[cache] >= self.config.grants_per_cache_per_cycle {
            return None;
        }
        if self.granted.iter().any(|g| self.config.conflicts(g, addr)) {
            return None;
        }
        self.per_cache[cache] += 1;
        self.granted.push(*addr);
        Some(cache)
    }
}

/// Ports in round-robin priority order starting at `rr_pointer`.
pub fn priority_order(num_ports: usize, rr_pointer: usize) -> impl Iterator<Item = usize> {
    (0..num_ports).map(move |k| (rr_pointer + k) % num_ports)
}

/// Splits candidates (at most one per port) into granted and deferred sets,
/// visiting ports in round-robin order from `rr_pointer`.
pub fn check_collision(
    config: &DutConfig,
    rr_pointer: usize,
    candidates: &[Transaction],
) -> (Vec<Transaction>, Vec<Transaction>) {
    let mut by_port: [Option<&Transaction>; MAX_PORTS] = [None; MAX_PORTS];
    for tx in candidates {
        debug_assert!(by_port[tx.port].is_none(), "duplicate port {}", tx.port);
        by_port[tx.port] = Some(tx);
    }
    let mut book = GrantBook::new(config);
    let mut granted = Vec::new();
    let mut deferred = Vec::new();
    for port in priority_order(config.num_ports, rr_pointer) {
        if let Some(tx) = by_port[port] {
            if book.try_grant(&tx.addr).is_some() {
                granted.push(*tx);
            } else {
                deferred.push(*tx);
            }
        }
    }
    (granted, deferred)
}

/// One arbitration round over FIFO heads and new arrivals.
///
/// All FIFO heads are offered first in round-robin order, then all new
/// arrivals in the same order. A new arrival is independent of its port's
/// FIFO: it goes straight through when it collides with nothing, and is
/// only parked in the FIFO when it loses.
pub fn arbitrate(
    config: &DutConfig,
    rr_pointer: usize,
    fifo_heads: &[Option<Address>],
    new_arrivals: &[Option<Address>],
) -> Arbitration {
    let mut book = GrantBook::new(config);
    let mut out = Arbitration::default();
    for port in priority_order(config.num_ports, rr_pointer) {
        if let Some(addr) = fifo_heads.get(port).copied().flatten() {
            match book.try_grant(&addr) {
                Some(cache) => out.grants.push(Grant {
                    port,
                    cache,
                    source: Source::FifoHead,
                }),
                None => out.held_heads.push(port),
            }
        }
    }
    for port in priority_order(config.num_ports, rr_pointer) {
        if let Some(addr) = new_arrivals.get(port).copied().flatten() {
            match book.try_grant(&addr) {
                Some(cache) => out.grants.push(Grant {
                    port,
                    cache,
                    source: Source::Arrival,
                }),
                None => out.deferred_arrivals.push(port),
            }
        }
    }
    out
}

/// Seeded-bug predicate: a Write arrives on a port whose FIFO is full.
pub fn seeded_bug_check(
    config: &DutConfig,
    fifos: &[PortFifo],
    arrivals: &[Option<Transaction>],
) -> Option<usize> {
    if config.bug_mode != BugMode::SeededBug {
        return None;
    }
    fifos
        .iter()
        .zip(arrivals)
        .position(|(fifo, arrival)| {
            fifo.is_full() && matches!(arrival, Some(tx) if tx.kind == TxKind::Write)
        })
}

/// Running transaction counters used for the conservation check.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub injected: u64,
    pub granted: u64,
    pub dropped: u64,
}

/// Mutable controller state.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: DutConfig,
    fifos: Vec<PortFifo>,
    cycle: u64,
    counters: Counters,
    failed: bool,
}

impl Simulator {
    pub fn new(config: DutConfig) -> Result<Self, DutError> {
        config.validate()?;
        let fifos = (0..config.num_ports)
            .map(|_| PortFifo::new(config.fifo_capacity))
            .collect();
        Ok(Self {
            config,
            fifos,
            cycle: 0,
            counters: Counters::default(),
            failed: false,
        })
    }

    pub fn config(&self) -> &DutConfig {
        &self.config
    }

    pub fn fifos(&self) -> &[PortFifo] {
        &self.fifos
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    pub fn in_fifos(&self) -> u64 {
        self.fifos.iter().map(|f| f.len() as u64).sum()
    }

    pub fn rr_pointer(&self) -> usize {
        (self.cycle % self.config.num_ports as u64) as usize
    }

    /// Advances one cycle with the given per-port arrivals.
    pub fn step_cycle(&mut self, arrivals: &[Option<Transaction>]) -> CycleStats {
        let n = self.config.num_ports;
        debug_assert_eq!(arrivals.len(), n);

        let bug_port = seeded_bug_check(&self.config, &self.fifos, arrivals);
        if bug_port.is_some() {
            self.failed = true;
        }

        let heads: Vec<Option<Address>> =
            self.fifos.iter().map(|f| f.head().map(|tx| tx.addr)).collect();
        let arrival_addrs: Vec<Option<Address>> =
            arrivals.iter().map(|a| a.map(|tx| tx.addr)).collect();
        let round = arbitrate(&self.config, self.rr_pointer(), &heads, &arrival_addrs);

        let mut stats = CycleStats {
            cycle: self.cycle,
            arrivals: arrivals.iter().map(|a| a.map(|tx| tx.kind)).collect(),
            bug_triggered: bug_port.is_some(),
            ..CycleStats::default()
        };
        self.counters.injected += arrivals.iter().flatten().count() as u64;

        // Dequeue granted heads before parking losers so a port whose head
        // just left always has room for its own deferred arrival.
        for g in &round.grants {
            if g.source == Source::FifoHead {
                self.fifos[g.port].pop();
            }
            stats.grants.push((g.port, g.cache));
        }
        self.counters.granted += round.grants.len() as u64;

        for &port in &round.deferred_arrivals {
            let tx = arrivals[port].expect("deferred arrival exists");
            if self.fifos[port].push(tx).is_err() {
                self.counters.dropped += 1;
                stats.stalls.push(port);
            }
        }

        stats.per_port_fifo_depth = self.fifos.iter().map(PortFifo::len).collect();
        self.cycle += 1;
        stats
    }
}

/// Aggregate outcome of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Mean FIFO depth over cycles and ports, in entries.
    pub avg_fifo_depth: f64,
    /// Percent of cycles in which at least one FIFO was at capacity.
    pub pct_full_cycles: f64,
    pub per_port_avg_depth: Vec<f64>,
    pub per_port_pct_full: Vec<f64>,
    /// Hits per coverage statement id.
    pub coverage_hits: BTreeMap<String, u64>,
    /// Hits per component signal of the tracked statements.
    pub signal_hits: BTreeMap<String, u64>,
    pub failed: bool,
    pub failure_cycle: Option<u64>,
    pub cycles_run: u64,
    pub counters: Counters,
}

fn validate_streams(config: &DutConfig, streams: &[Vec<Transaction>]) -> Result<(), DutError> {
    if streams.len() != config.num_ports {
        return Err(DutError::PortCountMismatch {
            expected: config.num_ports,
            got: streams.len(),
        });
    }
    for (port, stream) in streams.iter().enumerate() {
        let mut last: Option<u64> = None;
        for tx in stream {
            if tx.port != port {
                return Err(DutError::InvalidStream {
                    port,
                    reason: format!("transaction tagged with port {}", tx.port),
                });
            }
            if !tx.addr.fits(&config.address) {
                return Err(DutError::InvalidStream {
                    port,
                    reason: format!("address {:?} exceeds configured widths", tx.addr),
                });
            }
            if let Some(prev) = last {
                if tx.issue_cycle <= prev {
                    return Err(DutError::InvalidStream {
                        port,
                        reason: format!(
                            "issue cycle {} follows {}; need at most one strictly increasing issue per cycle",
                            tx.issue_cycle, prev
                        ),
                    });
                }
            }
            last = Some(tx.issue_cycle);
        }
    }
    Ok(())
}

/// Plays `streams` against the controller for `num_cycles` cycles.
pub fn run_simulation(
    config: &DutConfig,
    streams: &[Vec<Transaction>],
    num_cycles: u64,
    statements: &[CoverageStatement],
) -> Result<SimResult, DutError> {
    run_simulation_traced(config, streams, num_cycles, statements, None)
}

/// Like [`run_simulation`], optionally writing one JSON line per cycle
/// (`cycle`, `depths`, `grants`) to `trace`.
pub fn run_simulation_traced(
    config: &DutConfig,
    streams: &[Vec<Transaction>],
    num_cycles: u64,
    statements: &[CoverageStatement],
    mut trace: Option<&mut dyn Write>,
) -> Result<SimResult, DutError> {
    validate_streams(config, streams)?;
    let mut sim = Simulator::new(config.clone())?;
    let n = config.num_ports;
    let mut tracker = StatementTracker::new(statements);
    let mut cursors = vec![0usize; n];
    let mut arrivals: Vec<Option<Transaction>> = vec![None; n];
    let mut depth_sum = vec![0u64; n];
    let mut full_cycles = vec![0u64; n];
    let mut any_full_cycles = 0u64;
    let mut failure_cycle = None;

    for cycle in 0..num_cycles {
        for (port, stream) in streams.iter().enumerate() {
            let cur = &mut cursors[port];
            arrivals[port] = match stream.get(*cur) {
                Some(tx) if tx.issue_cycle == cycle => {
                    *cur += 1;
                    Some(*tx)
                }
                _ => None,
            };
        }

        let stats = sim.step_cycle(&arrivals);
        let mut any_full = false;
        for (port, &depth) in stats.per_port_fifo_depth.iter().enumerate() {
            depth_sum[port] += depth as u64;
            if depth >= config.fifo_capacity {
                full_cycles[port] += 1;
                any_full = true;
            }
        }
        if any_full {
            any_full_cycles += 1;
        }
        tracker.observe(&stats, config.fifo_capacity);

        if let Some(out) = trace.as_deref_mut() {
            let line = serde_json::json!({
                "cycle": stats.cycle,
                "depths": stats.per_port_fifo_depth,
                "grants": stats.grants,
            });
            // Trace output is best-effort instrumentation.
            let _ = writeln!(out, "{line}");
        }

        if stats.bug_triggered {
            failure_cycle = Some(cycle);
            break;
        }
    }

    let cycles_run = sim.cycle();
    let denom = cycles_run.max(1) as f64;
    let per_port_avg_depth: Vec<f64> = depth_sum.iter().map(|&s| s as f64 / denom).collect();
    let avg_fifo_depth = depth_sum.iter().sum::<u64>() as f64 / (denom * n as f64);
    let per_port_pct_full = full_cycles.iter().map(|&c| 100.0 * c as f64 / denom).collect();
    let (coverage_hits, signal_hits) = tracker.finish();

    Ok(SimResult {
        avg_fifo_depth,
        pct_full_cycles: 100.0 * any_full_cycles as f64 / denom,
        per_port_avg_depth,
        per_port_pct_full,
        coverage_hits,
        signal_hits,
        failed: sim.failed(),
        failure_cycle,
        cycles_run,
        counters: sim.counters(),
    })
}
