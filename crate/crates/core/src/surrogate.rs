// SPDX-License-Identifier: Apache-2.0

//! Supervised surrogate of the knob-to-reward map, random search over it, and
//! the entropy-based stopping rule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mlp::{train, MlpError, MlpModel, TrainConfig};
use crate::stimulus::{encode_unchecked, sample_knobs_with, KnobSchema, KnobVector, StimulusError};

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("surrogate needs at least {required} rows, dataset has {rows}")]
    InsufficientData { rows: usize, required: usize },
    #[error("feature dimension {got} does not match dataset dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("reward {0} is not finite")]
    NonFiniteReward(f64),
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Stimulus(#[from] StimulusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateRow {
    pub features: Vec<f64>,
    pub reward: f64,
    /// Iteration that produced the row.
    pub iteration: u32,
    /// Stream seed of the simulation behind the reward.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateDataset {
    dim: usize,
    rows: Vec<SurrogateRow>,
}

impl SurrogateDataset {
    pub fn new(dim: usize) -> Self {
        Self { dim, rows: Vec::new() }
    }

    pub fn push(&mut self, row: SurrogateRow) -> Result<(), SurrogateError> {
        if row.features.len() != self.dim {
            return Err(SurrogateError::DimensionMismatch {
                expected: self.dim,
                got: row.features.len(),
            });
        }
        if !row.reward.is_finite() {
            return Err(SurrogateError::NonFiniteReward(row.reward));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[SurrogateRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Smallest dataset `fit_surrogate` accepts.
    pub fn min_rows(&self) -> usize {
        2 * self.dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub num_candidates: usize,
    pub top_k: usize,
    pub seed: u64,
    pub entropy_bins: usize,
    /// Summed per-knob entropy (nats) below which proposals count as converged.
    pub entropy_threshold: f64,
    /// Relative best-reward improvement below which the loop has stalled.
    pub improvement_threshold: f64,
    /// Number of trailing iterations both conditions must hold for.
    pub window: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            num_candidates: 10_000,
            top_k: 16,
            seed: 0,
            entropy_bins: 8,
            entropy_threshold: 0.5,
            improvement_threshold: 0.01,
            window: 3,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        let bad = |m: &str| Err(SurrogateError::InvalidConfig(m.into()));
        if self.top_k == 0 || self.num_candidates < self.top_k {
            return bad("need num_candidates >= top_k >= 1");
        }
        if self.entropy_bins < 2 {
            return bad("entropy_bins must be at least 2");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if !(self.entropy_threshold >= 0.0 && self.improvement_threshold >= 0.0) {
            return bad("thresholds must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub search: SearchConfig,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            train: TrainConfig::default(),
            search: SearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: MlpModel,
    /// MSE of the returned model on the dataset, in reward units.
    pub final_loss: f64,
}

/// Trains an MLP to regress reward from encoded knobs.
///
/// Targets are standardized for training and the affine map back to reward
/// units is folded into the output layer, so the returned model predicts raw
/// rewards. A dataset with a single reward value gives the constant model.
pub fn fit_surrogate(
    dataset: &SurrogateDataset,
    hidden: &[usize],
    config: &TrainConfig,
) -> Result<FitResult, SurrogateError> {
    if dataset.len() < dataset.min_rows() || dataset.is_empty() {
        return Err(SurrogateError::InsufficientData {
            rows: dataset.len(),
            required: dataset.min_rows().max(1),
        });
    }
    let mut sizes = vec![dataset.dim()];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    let mut model = MlpModel::init(&sizes, config.seed)?;

    let n = dataset.len() as f64;
    let mu = dataset.rows.iter().map(|r| r.reward).sum::<f64>() / n;
    let var = dataset.rows.iter().map(|r| (r.reward - mu).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    let last = model.num_layers() - 1;

    if sigma <= 1e-12 * mu.abs().max(1.0) {
        let (w, b) = model.layer_mut(last);
        w.iter_mut().for_each(|x| *x = 0.0);
        b[0] = mu;
    } else {
        let data: Vec<(Vec<f64>, Vec<f64>)> = dataset
            .rows
            .iter()
            .map(|r| (r.features.clone(), vec![(r.reward - mu) / sigma]))
            .collect();
        train(&mut model, &data, config)?;
        let (w, b) = model.layer_mut(last);
        w.iter_mut().for_each(|x| *x *= sigma);
        b[0] = b[0] * sigma + mu;
    }

    let raw: Vec<(Vec<f64>, Vec<f64>)> = dataset
        .rows
        .iter()
        .map(|r| (r.features.clone(), vec![r.reward]))
        .collect();
    let final_loss = model.mse(&raw)?;
    Ok(FitResult { model, final_loss })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub knobs: KnobVector,
    pub predicted: f64,
}

/// Random search: scores `num_candidates` uniform samples with the surrogate
/// and returns the best `top_k`, highest prediction first. Equal predictions
/// keep sampling order.
pub fn propose_knobs(
    model: &MlpModel,
    schema: &KnobSchema,
    config: &SearchConfig,
) -> Result<Vec<Proposal>, SurrogateError> {
    config.validate()?;
    if model.input_dim() != schema.dim() {
        return Err(SurrogateError::DimensionMismatch {
            expected: schema.dim(),
            got: model.input_dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let candidates: Vec<KnobVector> = (0..config.num_candidates)
        .map(|_| sample_knobs_with(schema, &mut rng))
        .collect();
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|k| model.forward(&encode_unchecked(k, schema).0).map(|y| y[0]))
        .collect::<Result<_, _>>()?;

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(config.top_k)
        .map(|i| Proposal {
            knobs: candidates[i].clone(),
            predicted: scores[i],
        })
        .collect())
}

/// Sum over feature dimensions of the Shannon entropy (nats) of the
/// proposals' histogram over `bins` equal-width bins of `[0, 1]`.
pub fn proposal_entropy(features: &[Vec<f64>], bins: usize) -> f64 {
    let Some(dim) = features.first().map(Vec::len) else {
        return 0.0;
    };
    let n = features.len() as f64;
    let mut total = 0.0;
    let mut counts = vec![0usize; bins];
    for d in 0..dim {
        counts.iter_mut().for_each(|c| *c = 0);
        for f in features {
            let b = ((f[d].clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1);
            counts[b] += 1;
        }
        total -= counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum::<f64>();
    }
    total
}

/// What one iteration contributes to the stopping rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchIteration {
    /// Best true reward observed in the iteration.
    pub best_reward: f64,
    /// Encoded knob vectors the strategy proposed for the iteration.
    pub proposals: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "snake_case")]
pub enum Termination {
    Continue,
    Stop(String),
}

/// Stops once, for each of the last `window` iterations, the proposal entropy
/// is below the threshold and the running best reward grew by less than the
/// relative threshold across the window.
pub fn check_termination(history: &[SearchIteration], config: &SearchConfig) -> Termination {
    let m = config.window.max(1);
    if history.len() < m {
        return Termination::Continue;
    }
    let start = history.len() - m;
    let tail = &history[start..];
    let entropies: Vec<f64> = tail
        .iter()
        .map(|h| proposal_entropy(&h.proposals, config.entropy_bins.max(2)))
        .collect();
    if entropies.iter().any(|&e| e >= config.entropy_threshold) {
        return Termination::Continue;
    }
    let running = |upto: usize| {
        history[..=upto]
            .iter()
            .map(|h| h.best_reward)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let reference = running(start);
    let current = running(history.len() - 1);
    let gain = current - reference;
    let relative = if gain <= 0.0 {
        0.0
    } else {
        gain / reference.abs().max(f64::MIN_POSITIVE)
    };
    if relative >= config.improvement_threshold {
        return Termination::Continue;
    }
    let max_entropy = entropies.iter().copied().fold(0.0, f64::max);
    Termination::Stop(format!(
        "proposal entropy <= {max_entropy:.4} nats and best-reward gain {:.4}% over {m} iterations",
        relative * 100.0
    ))
}
