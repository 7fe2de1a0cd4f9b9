// SPDX-License-Identifier: Apache-2.0

//! Coverage-directed stimulus generation for a multi-port cache controller.
//!
//! The crate closes the loop between a constrained-random stimulus generator
//! and a cycle-level controller model: runs are simulated under knob
//! settings, coverage and FIFO-occupancy metrics become rewards, and either a
//! neural surrogate searched at random or a single-step DQN proposes the next
//! batch of knob settings.

pub mod coverage;
pub mod dqn;
pub mod dut;
pub mod harness;
pub mod mlp;
pub mod report;
pub mod seed;
pub mod stats;
pub mod stimulus;
pub mod surrogate;
