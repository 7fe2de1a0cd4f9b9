// SPDX-License-Identifier: Apache-2.0

//! Oracles shared by the integration and acceptance tests. Each one is
//! written against the public types only and recomputes its answer from
//! first principles rather than calling the code under test.

#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

use covsteer_core::coverage::default_statements;
use covsteer_core::dqn::ActionSpace;
use covsteer_core::dut::{arbitrate, run_simulation, Address, DutConfig, Simulator, Source, Transaction, TxKind};
use covsteer_core::mlp::MlpModel;
use covsteer_core::stimulus::{generate_stream, IntKnob, KnobSchema, RangeKnob, RealKnob};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- gradients

/// Batch MSE written out directly: forward pass with explicit loops.
fn oracle_loss(model: &MlpModel, batch: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let sizes = model.sizes();
    let mut total = 0.0;
    for (x, t) in batch {
        let mut a = x.clone();
        for l in 0..model.num_layers() {
            let (w, b) = model.layer(l);
            let n_in = sizes[l];
            let mut z: Vec<f64> = (0..sizes[l + 1])
                .map(|o| b[o] + (0..n_in).map(|i| w[o * n_in + i] * a[i]).sum::<f64>())
                .collect();
            if l + 1 < model.num_layers() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        total += a.iter().zip(t).map(|(y, t)| (y - t) * (y - t)).sum::<f64>() / a.len() as f64;
    }
    total / batch.len() as f64
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale.max(1e-8)
    }
}

/// Random small network and batch from `seed`.
pub fn random_problem(seed: u64) -> (MlpModel, Vec<(Vec<f64>, Vec<f64>)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![rng.gen_range(1..=5)];
    for _ in 0..rng.gen_range(1..=2) {
        sizes.push(rng.gen_range(2..=6));
    }
    sizes.push(rng.gen_range(1..=3));
    let model = MlpModel::init(&sizes, rng.gen()).unwrap();
    let batch = (0..rng.gen_range(1..=6))
        .map(|_| {
            let x = (0..sizes[0]).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let t = (0..*sizes.last().unwrap()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            (x, t)
        })
        .collect();
    (model, batch)
}

/// Max relative error between backprop and central differences.
pub fn gradient_check(model: &MlpModel, batch: &[(Vec<f64>, Vec<f64>)], h: f64) -> f64 {
    let refs: Vec<(&[f64], &[f64])> = batch.iter().map(|(x, t)| (x.as_slice(), t.as_slice())).collect();
    let (loss, grads) = model.mse_loss_and_gradient(&refs).unwrap();
    assert!((loss - oracle_loss(model, batch)).abs() <= 1e-12 * loss.max(1.0));
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for p in 0..model.params().len() {
        let orig = model.params()[p];
        probe.params_mut()[p] = orig + h;
        let up = oracle_loss(&probe, batch);
        probe.params_mut()[p] = orig - h;
        let down = oracle_loss(&probe, batch);
        probe.params_mut()[p] = orig;
        worst = worst.max(relative_error(grads.0[p], (up - down) / (2.0 * h)));
    }
    worst
}

// ---------------------------------------------------------------------- DUT

/// Independent conflict rule: same routed cache and same index.
pub fn oracle_conflict(config: &DutConfig, a: &Address, b: &Address) -> bool {
    a.index as usize % config.num_caches == b.index as usize % config.num_caches && a.index == b.index
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzReport {
    pub cycles: u64,
    pub grants: u64,
    pub max_head_wait: u64,
}

/// Arrival generator biased toward collisions: addresses come from a small
/// pool so conflicts, budget pressure and overflow all occur.
pub struct Fuzzer {
    rng: ChaCha8Rng,
    pool: Vec<Address>,
    activity: Vec<f64>,
}

impl Fuzzer {
    pub fn new(config: &DutConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool_size = rng.gen_range(1..=6);
        let pool = (0..pool_size)
            .map(|_| {
                Address::new(
                    rng.gen_range(0..=config.address.tag_max()),
                    rng.gen_range(0..=config.address.index_max()),
                    rng.gen_range(0..=config.address.offset_max()),
                )
            })
            .collect();
        let activity = (0..config.num_ports).map(|_| rng.gen_range(0.0..=1.0)).collect();
        Self { rng, pool, activity }
    }

    pub fn arrivals(&mut self, cycle: u64) -> Vec<Option<Transaction>> {
        (0..self.activity.len())
            .map(|port| {
                self.rng.gen_bool(self.activity[port]).then(|| Transaction {
                    port,
                    kind: if self.rng.gen_bool(0.5) { TxKind::Read } else { TxKind::Write },
                    addr: self.pool[self.rng.gen_range(0..self.pool.len())],
                    issue_cycle: cycle,
                })
            })
            .collect()
    }
}

/// Steps the simulator with `fuzzer` for `cycles` cycles, checking FIFO
/// bounds, FIFO order, conservation, conflict-free grants, per-cache budget
/// and the head-wait bound every cycle.
pub fn fuzz_dut(config: &DutConfig, fuzzer: &mut Fuzzer, cycles: u64) -> Result<FuzzReport, String> {
    let mut sim = Simulator::new(config.clone()).map_err(|e| e.to_string())?;
    let n = config.num_ports;
    // Shadow FIFOs keyed by issue cycle, which is unique within a port.
    let mut shadow: Vec<VecDeque<u64>> = vec![VecDeque::new(); n];
    let mut head_since: Vec<Option<(u64, u64)>> = vec![None; n];
    let (mut injected, mut granted, mut dropped) = (0u64, 0u64, 0u64);
    let bound = (n * config.grants_per_cache_per_cycle) as u64;
    let mut report = FuzzReport::default();

    for cycle in 0..cycles {
        let arrivals = fuzzer.arrivals(cycle);
        let heads: Vec<Option<Address>> = sim.fifos().iter().map(|f| f.head().map(|t| t.addr)).collect();
        let arrival_addrs: Vec<Option<Address>> = arrivals.iter().map(|a| a.map(|t| t.addr)).collect();
        let expected = arbitrate(config, (cycle % n as u64) as usize, &heads, &arrival_addrs);
        let stats = sim.step_cycle(&arrivals);

        let got: Vec<(usize, usize)> = expected.grants.iter().map(|g| (g.port, g.cache)).collect();
        if stats.grants != got {
            return Err(format!("cycle {cycle}: grants {:?} differ from arbitration {:?}", stats.grants, got));
        }
        let mut per_cache: HashMap<usize, usize> = HashMap::new();
        let granted_addrs: Vec<Address> = expected
            .grants
            .iter()
            .map(|g| match g.source {
                Source::FifoHead => heads[g.port].unwrap(),
                Source::Arrival => arrival_addrs[g.port].unwrap(),
            })
            .collect();
        for (g, addr) in expected.grants.iter().zip(&granted_addrs) {
            if g.cache != addr.index as usize % config.num_caches {
                return Err(format!("cycle {cycle}: port {} routed to wrong cache", g.port));
            }
            *per_cache.entry(g.cache).or_default() += 1;
        }
        if per_cache.values().any(|&c| c > config.grants_per_cache_per_cycle) {
            return Err(format!("cycle {cycle}: cache budget exceeded {per_cache:?}"));
        }
        for i in 0..granted_addrs.len() {
            for j in i + 1..granted_addrs.len() {
                if oracle_conflict(config, &granted_addrs[i], &granted_addrs[j]) {
                    return Err(format!("cycle {cycle}: conflicting grants {:?}", expected.grants));
                }
            }
        }
        for port in 0..n {
            if stats.grants.iter().any(|g| g.0 == port) && stats.stalls.contains(&port) {
                return Err(format!("cycle {cycle}: port {port} both granted and stalled"));
            }
        }

        // Shadow bookkeeping.
        for g in &expected.grants {
            if g.source == Source::FifoHead {
                shadow[g.port].pop_front();
            }
        }
        injected += arrivals.iter().flatten().count() as u64;
        granted += expected.grants.len() as u64;
        for &port in &expected.deferred_arrivals {
            if shadow[port].len() < config.fifo_capacity {
                shadow[port].push_back(cycle);
            } else {
                dropped += 1;
            }
        }

        let in_fifos: u64 = sim.fifos().iter().map(|f| f.len() as u64).sum();
        if injected != granted + in_fifos + dropped {
            return Err(format!("cycle {cycle}: conservation {injected} != {granted} + {in_fifos} + {dropped}"));
        }
        let c = sim.counters();
        if (c.injected, c.granted, c.dropped) != (injected, granted, dropped) {
            return Err(format!("cycle {cycle}: counters {c:?} disagree with oracle"));
        }
        for (port, fifo) in sim.fifos().iter().enumerate() {
            if fifo.len() > config.fifo_capacity || stats.per_port_fifo_depth[port] != fifo.len() {
                return Err(format!("cycle {cycle}: port {port} depth {} out of bounds", fifo.len()));
            }
            let order: Vec<u64> = fifo.iter().map(|t| t.issue_cycle).collect();
            if order != shadow[port].iter().copied().collect::<Vec<_>>() {
                return Err(format!("cycle {cycle}: port {port} FIFO order {order:?} vs {:?}", shadow[port]));
            }
        }

        // Head waits: a head present at the start of cycle c must leave by
        // the end of cycle c + bound - 1.
        for port in 0..n {
            let head = sim.fifos()[port].head().map(|t| t.issue_cycle);
            head_since[port] = match (head, head_since[port]) {
                (None, _) => None,
                (Some(id), Some((prev, since))) if id == prev => Some((prev, since)),
                (Some(id), _) => Some((id, cycle + 1)),
            };
            if let Some((_, since)) = head_since[port] {
                let waited = cycle + 1 - since;
                report.max_head_wait = report.max_head_wait.max(waited);
                if waited >= bound {
                    return Err(format!("cycle {cycle}: port {port} head waited {waited} cycles (bound {bound})"));
                }
            }
        }
        report.grants += stats.grants.len() as u64;
    }
    report.cycles = cycles;
    Ok(report)
}

/// Random valid controller configuration.
pub fn random_config(seed: u64) -> DutConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    DutConfig {
        num_ports: rng.gen_range(1..=4),
        num_caches: rng.gen_range(1..=4),
        fifo_capacity: rng.gen_range(1..=8),
        grants_per_cache_per_cycle: rng.gen_range(1..=2),
        ..DutConfig::default()
    }
}

// -------------------------------------------------------------------- bandit

/// Two active knobs with four bins each: port-0 activity and the upper end
/// of the index range. Everything else is pinned.
pub fn bandit_schema() -> KnobSchema {
    let cfg = DutConfig::default();
    let mut s = KnobSchema::for_config(&cfg, 4);
    s.read_weight = RealKnob::fixed(0.5);
    s.write_weight = RealKnob::fixed(0.5);
    s.per_port_activity = vec![
        RealKnob::new(0.0, 1.0, 4),
        RealKnob::fixed(0.8),
        RealKnob::fixed(0.8),
        RealKnob::fixed(0.8),
    ];
    s.tag = RangeKnob::fixed(0, cfg.address.tag_max());
    s.offset = RangeKnob::fixed(0, cfg.address.offset_max());
    s.index = RangeKnob {
        lo: IntKnob::fixed(0),
        hi: IntKnob::new(0, cfg.address.index_max(), 4),
    };
    s
}

/// Brute-force reward table: every action simulated on one fixed stream seed.
pub fn bandit_table(space: &ActionSpace, cycles: u64) -> Vec<f64> {
    let cfg = DutConfig::default();
    let stmts = default_statements(&cfg);
    (0..space.len())
        .map(|a| {
            let k = space.action_to_knobs(a).unwrap();
            let streams = generate_stream(&k, 12345, cycles).unwrap();
            run_simulation(&cfg, &streams, cycles, &stmts).unwrap().avg_fifo_depth
        })
        .collect()
}

/// Index of the largest entry, first on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
