// SPDX-License-Identifier: Apache-2.0

//! Constrained-random stimulus controlled by a knob vector.
//!
//! A [`KnobVector`] sets the Read/Write mix, each port's per-cycle issue
//! probability and the inclusive tag/index/offset ranges addresses are drawn
//! from. A [`KnobSchema`] bounds every knob and fixes its discretization for
//! the DQN action space. Knobs have a fixed flat order used by encoding and
//! binning:
//!
//! `read_weight, write_weight, activity[0..P], tag_lo, tag_hi, index_lo,
//! index_hi, offset_lo, offset_hi`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dut::{Address, AddressWidths, DutConfig, Transaction, TxKind};

pub const DEFAULT_BINS: u32 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum StimulusError {
    #[error("invalid knob schema: {0}")]
    InvalidSchema(String),
    #[error("invalid knob vector: {0}")]
    InvalidKnobs(String),
    #[error("knob `{knob}` = {value} outside schema bounds [{min}, {max}]")]
    OutOfSchema { knob: String, value: f64, min: f64, max: f64 },
    #[error("feature vector has dimension {got}, schema expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// The stimulus control point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnobVector {
    pub read_weight: f64,
    pub write_weight: f64,
    /// Probability that each port issues a transaction on a given cycle.
    pub per_port_activity: Vec<f64>,
    pub tag_lo: u32,
    pub tag_hi: u32,
    pub index_lo: u32,
    pub index_hi: u32,
    pub offset_lo: u32,
    pub offset_hi: u32,
}

impl KnobVector {
    pub fn num_ports(&self) -> usize {
        self.per_port_activity.len()
    }

    pub fn validate(&self) -> Result<(), StimulusError> {
        let bad = |m: String| Err(StimulusError::InvalidKnobs(m));
        if !(self.read_weight >= 0.0 && self.write_weight >= 0.0) {
            return bad("weights must be >= 0".into());
        }
        if !(self.read_weight + self.write_weight > 0.0) || !(self.read_weight + self.write_weight).is_finite() {
            return bad("read_weight + write_weight must be positive and finite".into());
        }
        if self.per_port_activity.is_empty() {
            return bad("per_port_activity is empty".into());
        }
        if let Some(a) = self.per_port_activity.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return bad(format!("port activity {a} outside [0, 1]"));
        }
        for (name, lo, hi) in [
            ("tag", self.tag_lo, self.tag_hi),
            ("index", self.index_lo, self.index_hi),
            ("offset", self.offset_lo, self.offset_hi),
        ] {
            if lo > hi {
                return bad(format!("{name}_lo {lo} > {name}_hi {hi}"));
            }
        }
        Ok(())
    }

    /// Knob values in flat order.
    pub fn to_values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(8 + self.per_port_activity.len());
        v.push(self.read_weight);
        v.push(self.write_weight);
        v.extend_from_slice(&self.per_port_activity);
        for x in [self.tag_lo, self.tag_hi, self.index_lo, self.index_hi, self.offset_lo, self.offset_hi] {
            v.push(f64::from(x));
        }
        v
    }

    /// Inverse of [`to_values`](Self::to_values); integer knobs are rounded.
    pub fn from_values(values: &[f64], num_ports: usize) -> Self {
        assert_eq!(values.len(), 8 + num_ports, "flat knob vector length");
        let int = |x: f64| x.round().max(0.0) as u32;
        let r = &values[2 + num_ports..];
        Self {
            read_weight: values[0],
            write_weight: values[1],
            per_port_activity: values[2..2 + num_ports].to_vec(),
            tag_lo: int(r[0]),
            tag_hi: int(r[1]),
            index_lo: int(r[2]),
            index_hi: int(r[3]),
            offset_lo: int(r[4]),
            offset_hi: int(r[5]),
        }
    }
}

/// Bounds and bin count of a real-valued knob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealKnob {
    pub min: f64,
    pub max: f64,
    #[serde(default = "default_bins")]
    pub bins: u32,
}

/// Bounds and bin count of an integer knob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntKnob {
    pub min: u32,
    pub max: u32,
    #[serde(default = "default_bins")]
    pub bins: u32,
}

fn default_bins() -> u32 {
    DEFAULT_BINS
}

impl RealKnob {
    pub fn new(min: f64, max: f64, bins: u32) -> Self {
        Self { min, max, bins }
    }

    pub fn fixed(value: f64) -> Self {
        Self::new(value, value, 1)
    }
}

impl IntKnob {
    pub fn new(min: u32, max: u32, bins: u32) -> Self {
        Self { min, max, bins }
    }

    pub fn fixed(value: u32) -> Self {
        Self::new(value, value, 1)
    }
}

/// An inclusive address-field range `[lo, hi]`.
///
/// Either both endpoints share identical bounds (sampled as an unordered pair
/// and sorted), or the bounds are disjoint with `lo.max <= hi.min` so every
/// combination is a valid range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeKnob {
    pub lo: IntKnob,
    pub hi: IntKnob,
}

impl RangeKnob {
    pub fn full(max: u32, bins: u32) -> Self {
        let k = IntKnob::new(0, max, bins);
        Self { lo: k, hi: k }
    }

    pub fn fixed(lo: u32, hi: u32) -> Self {
        Self {
            lo: IntKnob::fixed(lo),
            hi: IntKnob::fixed(hi),
        }
    }

    /// Lower endpoint in the bottom half of `[0, max]`, upper endpoint in the
    /// top half.
    pub fn split(max: u32, bins: u32) -> Self {
        let mid = max / 2;
        Self {
            lo: IntKnob::new(0, mid, bins),
            hi: IntKnob::new(mid + 1, max, bins),
        }
    }

    /// Endpoints share bounds and are free, so only sorted pairs are valid.
    pub fn is_shared(&self) -> bool {
        self.lo == self.hi && self.lo.min < self.lo.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnobSchema {
    pub read_weight: RealKnob,
    pub write_weight: RealKnob,
    pub per_port_activity: Vec<RealKnob>,
    pub tag: RangeKnob,
    pub index: RangeKnob,
    pub offset: RangeKnob,
}

/// One knob in flat order, with its bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct KnobDim {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub integer: bool,
    pub bins: u32,
}

impl KnobDim {
    pub fn is_fixed(&self) -> bool {
        self.min == self.max
    }

    /// Number of non-empty bins.
    pub fn effective_bins(&self) -> u32 {
        if self.is_fixed() {
            return 1;
        }
        if self.integer {
            let values = (self.max - self.min) as u64 + 1;
            (self.bins as u64).min(values) as u32
        } else {
            self.bins
        }
    }

    fn int_bin_start(&self, i: u64) -> u64 {
        let n = (self.max - self.min) as u64 + 1;
        let b = u64::from(self.effective_bins());
        i * n / b
    }

    pub fn bin_of(&self, value: f64) -> u32 {
        let b = self.effective_bins();
        if b == 1 {
            return 0;
        }
        if self.integer {
            let n = (self.max - self.min) as u64 + 1;
            let k = (value.round() - self.min).clamp(0.0, (n - 1) as f64) as u64;
            // Largest i with floor(i*n/b) <= k.
            (((k + 1) * u64::from(b)).div_ceil(n) - 1) as u32
        } else {
            let w = (self.max - self.min) / f64::from(b);
            (((value - self.min) / w).floor().max(0.0) as u32).min(b - 1)
        }
    }

    pub fn bin_center(&self, bin: u32) -> f64 {
        if self.is_fixed() {
            return self.min;
        }
        if self.integer {
            let start = self.int_bin_start(u64::from(bin));
            let end = self.int_bin_start(u64::from(bin) + 1) - 1;
            self.min + ((start + end) / 2) as f64
        } else {
            let w = (self.max - self.min) / f64::from(self.effective_bins());
            self.min + (f64::from(bin) + 0.5) * w
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }
}

impl KnobSchema {
    /// Default schema for a controller configuration, `bins` per knob:
    /// weights and activities over [0, 1], address ranges split at the
    /// midpoint (see [`RangeKnob::split`]).
    pub fn for_config(config: &DutConfig, bins: u32) -> Self {
        let unit = RealKnob::new(0.0, 1.0, bins);
        Self {
            read_weight: unit,
            write_weight: unit,
            per_port_activity: vec![unit; config.num_ports],
            tag: RangeKnob::split(config.address.tag_max(), bins),
            index: RangeKnob::split(config.address.index_max(), bins),
            offset: RangeKnob::split(config.address.offset_max(), bins),
        }
    }

    pub fn num_ports(&self) -> usize {
        self.per_port_activity.len()
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        8 + self.num_ports()
    }

    pub fn ranges(&self) -> [(&'static str, &RangeKnob); 3] {
        [("tag", &self.tag), ("index", &self.index), ("offset", &self.offset)]
    }

    pub fn dims(&self) -> Vec<KnobDim> {
        let real = |name: String, k: &RealKnob| KnobDim {
            name,
            min: k.min,
            max: k.max,
            integer: false,
            bins: k.bins,
        };
        let int = |name: String, k: &IntKnob| KnobDim {
            name,
            min: f64::from(k.min),
            max: f64::from(k.max),
            integer: true,
            bins: k.bins,
        };
        let mut out = vec![
            real("read_weight".into(), &self.read_weight),
            real("write_weight".into(), &self.write_weight),
        ];
        for (p, k) in self.per_port_activity.iter().enumerate() {
            out.push(real(format!("per_port_activity[{p}]"), k));
        }
        for (name, r) in self.ranges() {
            out.push(int(format!("{name}_lo"), &r.lo));
            out.push(int(format!("{name}_hi"), &r.hi));
        }
        out
    }

    pub fn validate(&self, config: &DutConfig) -> Result<(), StimulusError> {
        let bad = |m: String| Err(StimulusError::InvalidSchema(m));
        if self.num_ports() != config.num_ports {
            return bad(format!(
                "per_port_activity has {} entries, DUT has {} ports",
                self.num_ports(),
                config.num_ports
            ));
        }
        for d in self.dims() {
            if !(d.min.is_finite() && d.max.is_finite()) || d.min > d.max {
                return bad(format!("{}: need finite min <= max", d.name));
            }
            if !d.is_fixed() && d.bins < 2 {
                return bad(format!("{}: free knobs need at least 2 bins", d.name));
            }
        }
        for k in [&self.read_weight, &self.write_weight] {
            if k.min < 0.0 {
                return bad("transaction weights must be >= 0".into());
            }
        }
        if self.read_weight.max + self.write_weight.max <= 0.0 {
            return bad("read_weight and write_weight cannot both be fixed at 0".into());
        }
        for (p, k) in self.per_port_activity.iter().enumerate() {
            if k.min < 0.0 || k.max > 1.0 {
                return bad(format!("per_port_activity[{p}] bounds must lie in [0, 1]"));
            }
        }
        let widths = &config.address;
        for ((name, r), max) in self
            .ranges()
            .into_iter()
            .zip([widths.tag_max(), widths.index_max(), widths.offset_max()])
        {
            if r.lo.max > max || r.hi.max > max {
                return bad(format!("{name} range exceeds the {name} field maximum {max}"));
            }
            if r.lo != r.hi && r.lo.max > r.hi.min {
                return bad(format!(
                    "{name}: lo and hi bounds must be identical or satisfy lo.max <= hi.min"
                ));
            }
        }
        Ok(())
    }

    /// Checks that `knobs` lies within the schema bounds.
    pub fn check(&self, knobs: &KnobVector) -> Result<(), StimulusError> {
        if knobs.num_ports() != self.num_ports() {
            return Err(StimulusError::DimensionMismatch {
                expected: self.dim(),
                got: 8 + knobs.num_ports(),
            });
        }
        knobs.validate()?;
        for (d, v) in self.dims().iter().zip(knobs.to_values()) {
            if !d.contains(v) {
                return Err(StimulusError::OutOfSchema {
                    knob: d.name.clone(),
                    value: v,
                    min: d.min,
                    max: d.max,
                });
            }
        }
        Ok(())
    }
}

/// Knobs min-max normalized into `[0, 1]` by their schema bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EncodedKnobs(pub Vec<f64>);

impl EncodedKnobs {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn encode(knobs: &KnobVector, schema: &KnobSchema) -> Result<EncodedKnobs, StimulusError> {
    schema.check(knobs)?;
    Ok(encode_unchecked(knobs, schema))
}

pub(crate) fn encode_unchecked(knobs: &KnobVector, schema: &KnobSchema) -> EncodedKnobs {
    let features = schema
        .dims()
        .iter()
        .zip(knobs.to_values())
        .map(|(d, v)| if d.is_fixed() { 0.0 } else { (v - d.min) / (d.max - d.min) })
        .collect();
    EncodedKnobs(features)
}

/// Maps features back to knobs, clamping to bounds. A shared range whose
/// decoded endpoints cross is returned sorted.
pub fn decode(features: &[f64], schema: &KnobSchema) -> Result<KnobVector, StimulusError> {
    let dims = schema.dims();
    if features.len() != dims.len() {
        return Err(StimulusError::DimensionMismatch {
            expected: dims.len(),
            got: features.len(),
        });
    }
    let values: Vec<f64> = dims
        .iter()
        .zip(features)
        .map(|(d, &f)| {
            let f = if f.is_nan() { 0.0 } else { f.clamp(0.0, 1.0) };
            let v = d.min + f * (d.max - d.min);
            if d.integer {
                v.round().clamp(d.min, d.max)
            } else {
                v
            }
        })
        .collect();
    let mut knobs = KnobVector::from_values(&values, schema.num_ports());
    sort_ranges(&mut knobs);
    Ok(knobs)
}

pub(crate) fn sort_ranges(k: &mut KnobVector) {
    for (lo, hi) in [
        (&mut k.tag_lo, &mut k.tag_hi),
        (&mut k.index_lo, &mut k.index_hi),
        (&mut k.offset_lo, &mut k.offset_hi),
    ] {
        if *lo > *hi {
            std::mem::swap(lo, hi);
        }
    }
}

fn sample_real<R: Rng>(k: &RealKnob, rng: &mut R) -> f64 {
    if k.min == k.max {
        k.min
    } else {
        rng.gen_range(k.min..=k.max)
    }
}

fn sample_int<R: Rng>(k: &IntKnob, rng: &mut R) -> u32 {
    rng.gen_range(k.min..=k.max)
}

/// Uniform draw within the schema bounds from an existing generator.
pub fn sample_knobs_with<R: Rng>(schema: &KnobSchema, rng: &mut R) -> KnobVector {
    let read_weight = sample_real(&schema.read_weight, rng);
    let write_weight = sample_real(&schema.write_weight, rng);
    let per_port_activity = schema
        .per_port_activity
        .iter()
        .map(|k| sample_real(k, rng))
        .collect();
    let mut range = |r: &RangeKnob| {
        let a = sample_int(&r.lo, rng);
        let b = sample_int(&r.hi, rng);
        if r.is_shared() {
            (a.min(b), a.max(b))
        } else {
            (a, b)
        }
    };
    let (tag_lo, tag_hi) = range(&schema.tag);
    let (index_lo, index_hi) = range(&schema.index);
    let (offset_lo, offset_hi) = range(&schema.offset);
    KnobVector {
        read_weight,
        write_weight,
        per_port_activity,
        tag_lo,
        tag_hi,
        index_lo,
        index_hi,
        offset_lo,
        offset_hi,
    }
}

/// Uniform draw within the schema bounds; deterministic in `seed`.
pub fn sample_knobs(schema: &KnobSchema, seed: u64) -> KnobVector {
    sample_knobs_with(schema, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Per-port transaction sequences for `num_cycles` cycles.
///
/// Each cycle, port `p` issues with probability `per_port_activity[p]`; the
/// kind is Read with probability `read_weight / (read_weight + write_weight)`
/// and each address field is uniform over its inclusive range.
pub fn generate_stream(
    knobs: &KnobVector,
    seed: u64,
    num_cycles: u64,
) -> Result<Vec<Vec<Transaction>>, StimulusError> {
    knobs.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ports = knobs.num_ports();
    let total_weight = knobs.read_weight + knobs.write_weight;
    let mut streams: Vec<Vec<Transaction>> = knobs
        .per_port_activity
        .iter()
        .map(|&a| Vec::with_capacity((a * num_cycles as f64) as usize + 1))
        .collect();
    for cycle in 0..num_cycles {
        for port in 0..ports {
            if rng.gen::<f64>() >= knobs.per_port_activity[port] {
                continue;
            }
            let kind = if rng.gen::<f64>() * total_weight < knobs.read_weight {
                TxKind::Read
            } else {
                TxKind::Write
            };
            let addr = Address {
                tag: rng.gen_range(knobs.tag_lo..=knobs.tag_hi),
                index: rng.gen_range(knobs.index_lo..=knobs.index_hi),
                offset: rng.gen_range(knobs.offset_lo..=knobs.offset_hi),
            };
            streams[port].push(Transaction {
                port,
                kind,
                addr,
                issue_cycle: cycle,
            });
        }
    }
    Ok(streams)
}

/// Field widths implied by a schema's upper bounds; used in diagnostics.
pub fn required_widths(schema: &KnobSchema) -> AddressWidths {
    let bits = |m: u32| (32 - m.leading_zeros()).max(1);
    AddressWidths {
        tag_bits: bits(schema.tag.lo.max.max(schema.tag.hi.max)),
        index_bits: bits(schema.index.lo.max.max(schema.index.hi.max)),
        offset_bits: bits(schema.offset.lo.max.max(schema.offset.hi.max)),
    }
}
