// SPDX-License-Identifier: Apache-2.0

//! Counter-based seed derivation.
//!
//! Every random stream in an experiment is keyed by
//! `(master, domain, iteration, index)`. The key is packed injectively into
//! one 64-bit word as `(domain << 56) ^ (iteration << 32) ^ index`
//! (domain < 256, iteration < 2^24, index < 2^32), XORed with
//! `splitmix64(master)` and passed through the SplitMix64 finalizer again.
//! The finalizer is a bijection on `u64`, so distinct keys under one master
//! seed always yield distinct seeds, and hashing the master first keeps
//! nearby master seeds from reusing each other's keys.

/// Seed domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Domain {
    /// Uniform knob draws (bootstrap, random baseline, exploration floor).
    Knobs = 1,
    /// Stimulus stream of one simulation run.
    Stream = 2,
    /// Surrogate training shuffles and initialization.
    Train = 3,
    /// Candidate sampling for the surrogate random search.
    Search = 4,
    /// DQN agent generator.
    Agent = 5,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, domain: Domain, iteration: u32, index: u32) -> u64 {
    debug_assert!(iteration < (1 << 24));
    let key = (u64::from(domain as u8) << 56) ^ (u64::from(iteration) << 32) ^ u64::from(index);
    splitmix64(splitmix64(master) ^ key)
}
