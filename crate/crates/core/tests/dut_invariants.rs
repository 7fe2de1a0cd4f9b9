// SPDX-License-Identifier: Apache-2.0

mod common;

use common::{fuzz_dut, random_config, Fuzzer};
use covsteer_core::coverage::{default_statements, ALL_FULL};
use covsteer_core::dut::{
    run_simulation, Address, BugMode, DutConfig, Simulator, Transaction, TxKind, BUG_STATEMENT,
};
use covsteer_core::stimulus::{generate_stream, sample_knobs, KnobSchema};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fuzzed_cycles_hold_every_invariant(config_seed in any::<u64>(), stream_seed in any::<u64>()) {
        let config = random_config(config_seed);
        let mut fuzzer = Fuzzer::new(&config, stream_seed);
        if let Err(e) = fuzz_dut(&config, &mut fuzzer, 600) {
            prop_assert!(false, "{:?}: {}", config, e);
        }
    }

    #[test]
    fn run_metrics_are_bounded(knob_seed in any::<u64>(), stream_seed in any::<u64>()) {
        let config = DutConfig::default();
        let knobs = sample_knobs(&KnobSchema::for_config(&config, 4), knob_seed);
        let cycles = 500;
        let streams = generate_stream(&knobs, stream_seed, cycles).unwrap();
        let r = run_simulation(&config, &streams, cycles, &default_statements(&config)).unwrap();
        let cap = config.fifo_capacity as f64;
        prop_assert!((0.0..=cap).contains(&r.avg_fifo_depth));
        prop_assert!((0.0..=100.0).contains(&r.pct_full_cycles));
        prop_assert!(r.per_port_avg_depth.iter().all(|d| (0.0..=cap).contains(d)));
        prop_assert!(r.per_port_pct_full.iter().all(|p| (0.0..=100.0).contains(p)));
        let injected: u64 = streams.iter().map(|s| s.len() as u64).sum();
        prop_assert_eq!(r.counters.injected, injected);
        let queued = r.counters.injected - r.counters.granted - r.counters.dropped;
        prop_assert!(queued <= (config.num_ports * config.fifo_capacity) as u64);
        // AND dominance: a conjunction is never hit more often than its parts.
        let all = r.coverage_hits[ALL_FULL];
        for port in 0..config.num_ports {
            let part = r.coverage_hits[&format!("FULL_P{port}")];
            prop_assert!(all <= part, "ALL_FULL {} > FULL_P{} {}", all, port, part);
        }
    }
}

#[test]
fn adversarial_same_address_meets_starvation_bound() {
    // Every port issues the same address every cycle: one grant per cycle,
    // every head contends, and the round-robin pointer alone decides.
    for ports in 1..=4 {
        let config = DutConfig {
            num_ports: ports,
            ..DutConfig::default()
        };
        let mut sim = Simulator::new(config.clone()).unwrap();
        let addr = Address::new(1, 5, 0);
        let mut waits = vec![0u64; ports];
        let mut max_wait = 0;
        for cycle in 0..2000u64 {
            let arrivals: Vec<Option<Transaction>> = (0..ports)
                .map(|port| {
                    Some(Transaction {
                        port,
                        kind: TxKind::Read,
                        addr,
                        issue_cycle: cycle,
                    })
                })
                .collect();
            let had_head: Vec<bool> = sim.fifos().iter().map(|f| !f.is_empty()).collect();
            let stats = sim.step_cycle(&arrivals);
            assert_eq!(stats.grants.len(), 1);
            for port in 0..ports {
                if had_head[port] {
                    if stats.grants.iter().any(|g| g.0 == port) {
                        waits[port] = 0;
                    } else {
                        waits[port] += 1;
                        max_wait = max_wait.max(waits[port]);
                    }
                }
            }
        }
        let bound = (ports * config.grants_per_cache_per_cycle) as u64;
        assert!(max_wait < bound, "ports {ports}: a head lost {max_wait} times in a row");
        if ports > 1 {
            assert_eq!(max_wait, bound - 1, "bound is tight under full contention");
        }
    }
}

#[test]
fn long_fuzz_campaign_is_clean() {
    let mut cycles = 0;
    for seed in 0..20 {
        let config = random_config(seed);
        let mut fuzzer = Fuzzer::new(&config, seed.wrapping_mul(31));
        cycles += fuzz_dut(&config, &mut fuzzer, 2_000).unwrap_or_else(|e| panic!("{config:?}: {e}")).cycles;
    }
    assert_eq!(cycles, 40_000);
}

#[test]
fn seeded_bug_stops_the_run() {
    let config = DutConfig {
        bug_mode: BugMode::SeededBug,
        ..DutConfig::default()
    };
    // Two ports collide on one address every cycle; port 1 loses on odd
    // cycles and eventually fills, then keeps writing.
    let addr = Address::new(0, 3, 0);
    let cycles = 200;
    let streams: Vec<Vec<Transaction>> = (0..config.num_ports)
        .map(|port| {
            if port > 1 {
                return Vec::new();
            }
            (0..cycles)
                .map(|c| Transaction {
                    port,
                    kind: TxKind::Write,
                    addr,
                    issue_cycle: c,
                })
                .collect()
        })
        .collect();
    let stmts = default_statements(&config);
    let r = run_simulation(&config, &streams, cycles, &stmts).unwrap();
    assert!(r.failed);
    let at = r.failure_cycle.unwrap();
    assert!(at < cycles && r.cycles_run == at + 1, "{r:?}");
    assert!(r.coverage_hits[BUG_STATEMENT] >= 1);

    let off = run_simulation(&DutConfig::default(), &streams, cycles, &default_statements(&DutConfig::default())).unwrap();
    assert!(!off.failed);
    assert_eq!(off.cycles_run, cycles);
    assert!(off.counters.dropped > 0, "same traffic overflows without the bug");
}
