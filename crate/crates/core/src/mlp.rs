// SPDX-License-Identifier: Apache-2.0

//! Small dense feed-forward network with hand-written backprop.
//!
//! Hidden layers use ReLU, the output layer is linear. Parameters live in one
//! flat vector: for each layer, the row-major `out x in` weight matrix
//! followed by the `out` biases.
//!
//! Checkpoint layout (all integers and reals little-endian):
//!
//! | bytes | content                         |
//! |-------|---------------------------------|
//! | 8     | magic `b"CSMLP\0\0\0"`          |
//! | 4     | format version (`u32`, = 1)     |
//! | 4     | number of layer sizes `L` (`u32`) |
//! | 8·L   | layer sizes (`u64`)             |
//! | 8     | parameter count `N` (`u64`)     |
//! | 8·N   | parameters (`f64`)              |

use std::path::Path;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CSMLP\0\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("invalid layer sizes {0:?}: need at least two layers, each of size >= 1")]
    InvalidSizes(Vec<usize>),
    #[error("input has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training loss became non-finite at epoch {epoch}; lower the learning rate")]
    NonFiniteLoss { epoch: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Gradient of a loss with respect to the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_sizes(sizes: &[usize]) -> Result<(), MlpError> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(MlpError::InvalidSizes(sizes.to_vec()));
    }
    Ok(())
}

impl MlpModel {
    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self, MlpError> {
        check_sizes(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let scale = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(rng.gen_range(-scale..=scale));
            }
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self, MlpError> {
        check_sizes(sizes)?;
        if params.len() != param_count(sizes) {
            return Err(MlpError::DimensionMismatch {
                expected: param_count(sizes),
                got: params.len(),
            });
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..=layer])
    }

    /// `(weights, biases)` of layer `layer` (0-based, excluding the input).
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer);
        let w = &self.params[off..off + n_in * n_out];
        let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
        (w, b)
    }

    pub fn layer_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer);
        let (w, rest) = self.params[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
        (w, rest)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn check_input(&self, input: &[f64]) -> Result<(), MlpError> {
        if input.len() != self.input_dim() {
            return Err(MlpError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, MlpError> {
        self.check_input(input)?;
        Ok(self.activations(input).pop().unwrap())
    }

    /// Post-activation values of every layer, input first.
    fn activations(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input.to_vec());
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let x = acts.last().unwrap();
            let n_in = x.len();
            let mut z: Vec<f64> = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *zo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
            if l != last {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Adds `d loss / d params` into `grads` given `d loss / d output` at
    /// `input`; returns the network output.
    pub fn accumulate_gradient<F>(&self, input: &[f64], grads: &mut Gradients, d_output: F) -> Vec<f64>
    where
        F: FnOnce(&[f64]) -> Vec<f64>,
    {
        let acts = self.activations(input);
        let output = acts.last().unwrap().clone();
        let mut delta = d_output(&output);
        for l in (0..self.num_layers()).rev() {
            let n_in = self.sizes[l];
            let off = self.layer_offset(l);
            let x = &acts[l];
            let (w, _) = self.layer(l);
            let g = &mut grads.0[off..off + n_in * delta.len() + delta.len()];
            let (gw, gb) = g.split_at_mut(n_in * delta.len());
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
                for (i, &xi) in x.iter().enumerate() {
                    gw[o * n_in + i] += d * xi;
                }
            }
            if l == 0 {
                break;
            }
            // x is the ReLU output of the previous layer; its derivative is
            // 1 where the activation is positive.
            let mut prev = vec![0.0; n_in];
            for (i, p) in prev.iter_mut().enumerate() {
                if x[i] > 0.0 {
                    *p = delta.iter().enumerate().map(|(o, &d)| d * w[o * n_in + i]).sum();
                }
            }
            delta = prev;
        }
        output
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients(vec![0.0; self.params.len()])
    }

    /// Mean squared error over `batch` and its gradient.
    ///
    /// Loss is `1/B Σ_i 1/m Σ_j (y_ij − t_ij)²`.
    pub fn mse_loss_and_gradient(&self, batch: &[(&[f64], &[f64])]) -> Result<(f64, Gradients), MlpError> {
        if batch.is_empty() {
            return Err(MlpError::EmptyDataset);
        }
        let mut grads = self.zero_gradients();
        let m = self.output_dim() as f64;
        let scale = 1.0 / (batch.len() as f64 * m);
        let mut loss = 0.0;
        for (x, t) in batch {
            self.check_input(x)?;
            if t.len() != self.output_dim() {
                return Err(MlpError::DimensionMismatch {
                    expected: self.output_dim(),
                    got: t.len(),
                });
            }
            self.accumulate_gradient(x, &mut grads, |y| {
                y.iter()
                    .zip(t.iter())
                    .map(|(y, t)| {
                        loss += (y - t) * (y - t);
                        2.0 * (y - t) * scale
                    })
                    .collect()
            });
        }
        Ok((loss * scale, grads))
    }

    /// Mean squared error over a dataset without gradients.
    pub fn mse(&self, data: &[(Vec<f64>, Vec<f64>)]) -> Result<f64, MlpError> {
        if data.is_empty() {
            return Err(MlpError::EmptyDataset);
        }
        let mut total = 0.0;
        for (x, t) in data {
            let y = self.forward(x)?;
            total += y.iter().zip(t).map(|(y, t)| (y - t) * (y - t)).sum::<f64>() / y.len() as f64;
        }
        Ok(total / data.len() as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * (self.sizes.len() + self.params.len()));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for &s in &self.sizes {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// Parses a checkpoint; returns the model and the number of bytes read.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), MlpError> {
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(MlpError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(MlpError::Checkpoint(format!("unsupported version {version}")));
        }
        let n = r.u32()? as usize;
        let sizes = (0..n).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        check_sizes(&sizes).map_err(|e| MlpError::Checkpoint(e.to_string()))?;
        let count = r.u64()? as usize;
        if count != param_count(&sizes) {
            return Err(MlpError::Checkpoint(format!(
                "parameter count {count} does not match sizes {sizes:?}"
            )));
        }
        let params = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        Ok((Self { sizes, params }, r.pos))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MlpError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MlpError> {
        let bytes = std::fs::read(path)?;
        let (model, used) = Self::from_bytes(&bytes)?;
        if used != bytes.len() {
            return Err(MlpError::Checkpoint("trailing bytes".into()));
        }
        Ok(model)
    }
}

/// Little-endian cursor used by checkpoint readers.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], MlpError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| MlpError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32, MlpError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, MlpError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn u128(&mut self) -> Result<u128, MlpError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, MlpError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    SgdMomentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 200,
            optimizer: OptimizerKind::SgdMomentum,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MlpError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(MlpError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(MlpError::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Plain or heavy-ball SGD state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    momentum: f64,
    velocity: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, momentum: f64, num_params: usize) -> Self {
        Self {
            kind,
            learning_rate,
            momentum,
            velocity: vec![0.0; num_params],
        }
    }

    pub fn for_config(config: &TrainConfig, model: &MlpModel) -> Self {
        Self::new(config.optimizer, config.learning_rate, config.momentum, model.params().len())
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in model.params.iter_mut().zip(&grads.0) {
                    *p -= self.learning_rate * g;
                }
            }
            OptimizerKind::SgdMomentum => {
                for ((p, g), v) in model.params.iter_mut().zip(&grads.0).zip(&mut self.velocity) {
                    *v = self.momentum * *v - self.learning_rate * g;
                    *p += *v;
                }
            }
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, v: Vec<f64>) {
        self.velocity = v;
    }
}

/// Minibatch training on `(input, target)` pairs. Returns the full-dataset
/// MSE after each epoch.
pub fn train(
    model: &mut MlpModel,
    dataset: &[(Vec<f64>, Vec<f64>)],
    config: &TrainConfig,
) -> Result<Vec<f64>, MlpError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(MlpError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::for_config(config, model);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], &[f64])> = chunk
                .iter()
                .map(|&i| (dataset[i].0.as_slice(), dataset[i].1.as_slice()))
                .collect();
            let (loss, grads) = model.mse_loss_and_gradient(&batch)?;
            if !loss.is_finite() {
                return Err(MlpError::NonFiniteLoss { epoch });
            }
            opt.step(model, &grads);
        }
        let loss = model.mse(dataset)?;
        if !loss.is_finite() {
            return Err(MlpError::NonFiniteLoss { epoch });
        }
        trace.push(loss);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent matrix-arithmetic forward pass over `(W, b)` pairs.
    fn oracle_forward(layers: &[(Vec<Vec<f64>>, Vec<f64>)], x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z = vec![0.0; b.len()];
            for r in 0..b.len() {
                let mut s = b[r];
                for c in 0..a.len() {
                    s += w[r][c] * a[c];
                }
                z[r] = if l + 1 < layers.len() { s.max(0.0) } else { s };
            }
            a = z;
        }
        a
    }

    fn unpack(model: &MlpModel) -> Vec<(Vec<Vec<f64>>, Vec<f64>)> {
        (0..model.num_layers())
            .map(|l| {
                let (w, b) = model.layer(l);
                let n_in = model.sizes()[l];
                (w.chunks(n_in).map(<[f64]>::to_vec).collect(), b.to_vec())
            })
            .collect()
    }

    #[test]
    fn init_is_seeded() {
        let a = MlpModel::init(&[2, 1], 5).unwrap();
        assert_eq!(a, MlpModel::init(&[2, 1], 5).unwrap());
        assert_ne!(a, MlpModel::init(&[2, 1], 6).unwrap());
        let bound = 1.0 / 2f64.sqrt();
        assert!(a.params().iter().all(|p| p.abs() <= bound));
    }

    #[test]
    fn parameter_count() {
        let (d, h) = (12, 32);
        let m = MlpModel::init(&[d, h, 1], 0).unwrap();
        assert_eq!(m.params().len(), d * h + h + h + 1);
        assert!(MlpModel::init(&[3], 0).is_err());
        assert!(MlpModel::init(&[3, 0, 1], 0).is_err());
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = MlpModel::from_params(&[3, 4, 2], vec![0.0; param_count(&[3, 4, 2])]).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn linear_layer_is_affine() {
        // W = [[1,2],[3,4]], b = [0.5,-1]
        let m = MlpModel::from_params(&[2, 2], vec![1.0, 2.0, 3.0, 4.0, 0.5, -1.0]).unwrap();
        assert_eq!(m.forward(&[1.0, -1.0]).unwrap(), vec![-0.5, -2.0]);
    }

    #[test]
    fn forward_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..20 {
            let m = MlpModel::init(&[5, 7, 6, 3], seed).unwrap();
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let got = m.forward(&x).unwrap();
            let want = oracle_forward(&unpack(&m), &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-10 * w.abs().max(1e-12), "{g} vs {w}");
            }
        }
    }

    #[test]
    fn forward_rejects_bad_dimension() {
        let m = MlpModel::init(&[3, 1], 0).unwrap();
        assert!(matches!(m.forward(&[1.0]), Err(MlpError::DimensionMismatch { expected: 3, got: 1 })));
    }

    #[test]
    fn memorizes_single_pair() {
        let mut m = MlpModel::init(&[3, 8, 1], 3).unwrap();
        let data = vec![(vec![0.2, 0.4, 0.6], vec![1.5])];
        let cfg = TrainConfig { learning_rate: 0.05, epochs: 500, batch_size: 1, ..TrainConfig::default() };
        let trace = train(&mut m, &data, &cfg).unwrap();
        assert!(*trace.last().unwrap() < 1e-6, "{:?}", trace.last());
    }

    /// Least-squares oracle: solve the 3x3 normal equations for [w1, w2, b].
    fn least_squares(data: &[(Vec<f64>, Vec<f64>)]) -> [f64; 3] {
        let mut a = [[0.0; 3]; 3];
        let mut rhs = [0.0; 3];
        for (x, y) in data {
            let f = [x[0], x[1], 1.0];
            for i in 0..3 {
                rhs[i] += f[i] * y[0];
                for j in 0..3 {
                    a[i][j] += f[i] * f[j];
                }
            }
        }
        // Gaussian elimination without pivoting (matrix is SPD).
        for k in 0..3 {
            for i in k + 1..3 {
                let r = a[i][k] / a[k][k];
                for j in k..3 {
                    a[i][j] -= r * a[k][j];
                }
                rhs[i] -= r * rhs[k];
            }
        }
        let mut sol = [0.0; 3];
        for i in (0..3).rev() {
            let s: f64 = (i + 1..3).map(|j| a[i][j] * sol[j]).sum();
            sol[i] = (rhs[i] - s) / a[i][i];
        }
        sol
    }

    #[test]
    fn recovers_linear_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<(Vec<f64>, Vec<f64>)> = (0..64)
            .map(|_| {
                let x = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let y = 2.0 * x[0] - x[1];
                (x, vec![y])
            })
            .collect();
        let oracle = least_squares(&data);
        assert!((oracle[0] - 2.0).abs() < 1e-9 && (oracle[1] + 1.0).abs() < 1e-9);
        let mut m = MlpModel::init(&[2, 1], 4).unwrap();
        let cfg = TrainConfig { learning_rate: 0.05, epochs: 400, batch_size: 8, ..TrainConfig::default() };
        train(&mut m, &data, &cfg).unwrap();
        let p = m.params();
        for i in 0..3 {
            assert!((p[i] - oracle[i]).abs() < 1e-3, "param {i}: {} vs {}", p[i], oracle[i]);
        }
    }

    #[test]
    fn training_is_deterministic_and_decreasing() {
        let data: Vec<(Vec<f64>, Vec<f64>)> = (0..40)
            .map(|i| {
                let x = i as f64 / 40.0;
                (vec![x, 1.0 - x], vec![(3.0 * x).sin()])
            })
            .collect();
        let cfg = TrainConfig { learning_rate: 0.01, epochs: 100, batch_size: 4, seed: 17, ..TrainConfig::default() };
        let mut a = MlpModel::init(&[2, 16, 16, 1], 1).unwrap();
        let mut b = a.clone();
        let ta = train(&mut a, &data, &cfg).unwrap();
        let tb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(ta.last().unwrap() < &ta[0]);
    }

    #[test]
    fn divergence_is_reported() {
        let data = vec![(vec![1e3, 1e3], vec![1e6])];
        let mut m = MlpModel::init(&[2, 4, 1], 0).unwrap();
        let cfg = TrainConfig { learning_rate: 100.0, epochs: 500, ..TrainConfig::default() };
        assert!(matches!(train(&mut m, &data, &cfg), Err(MlpError::NonFiniteLoss { .. })));
    }

    #[test]
    fn bad_config_rejected() {
        let mut m = MlpModel::init(&[1, 1], 0).unwrap();
        let data = vec![(vec![1.0], vec![1.0])];
        let cfg = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(train(&mut m, &data, &cfg).is_err());
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(train(&mut m, &data, &cfg).is_err());
        assert!(matches!(train(&mut m, &[], &TrainConfig::default()), Err(MlpError::EmptyDataset)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = MlpModel::init(&[4, 3, 2], 8).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(bytes.len(), 8 + 4 + 4 + 3 * 8 + 8 + 8 * param_count(&[4, 3, 2]));
        let (back, used) = MlpModel::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, m);
        assert!(MlpModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(MlpModel::from_bytes(&bad).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path).unwrap();
        assert_eq!(MlpModel::load(&path).unwrap(), m);
    }
}
