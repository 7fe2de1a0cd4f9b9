// SPDX-License-Identifier: Apache-2.0

//! Deep Q-learning over the discretized knob space, treated as a
//! single-step episode with a constant state.

use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mlp::{ByteReader, MlpError, MlpModel, Optimizer, OptimizerKind};
use crate::stimulus::{KnobDim, KnobSchema, KnobVector, StimulusError};

pub const MAX_ACTIONS: u64 = 1_000_000;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CSDQN\0\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("action space has {actions} actions, limit is {limit}")]
    ActionSpaceTooLarge { actions: u128, limit: u64 },
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("replay buffer holds {available} experiences, batch needs {required}")]
    InsufficientData { available: usize, required: usize },
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Stimulus(#[from] StimulusError),
}

/// One mixed-radix digit of an action id.
#[derive(Debug, Clone, PartialEq)]
enum Factor {
    /// A knob binned on its own.
    Single { dim: usize, bins: u32 },
    /// Endpoints of a range whose bounds coincide: unordered bin pairs
    /// `(i, j)` with `i <= j`, enumerated by `i` then `j`.
    Pair { lo: usize, hi: usize, bins: u32 },
}

impl Factor {
    fn radix(&self) -> u64 {
        match *self {
            Factor::Single { bins, .. } => u64::from(bins),
            Factor::Pair { bins, .. } => u64::from(bins) * (u64::from(bins) + 1) / 2,
        }
    }
}

/// Row `i` of the upper triangle starts at Σ_{a<i} (b − a).
fn pair_index(i: u32, j: u32, b: u32) -> u64 {
    let (i, j, b) = (u64::from(i), u64::from(j), u64::from(b));
    i * b - i * i.saturating_sub(1) / 2 + (j - i)
}

fn pair_from_index(mut k: u64, b: u32) -> (u32, u32) {
    let b = u64::from(b);
    let mut i = 0;
    while k >= b - i {
        k -= b - i;
        i += 1;
    }
    (i as u32, (i + k) as u32)
}

/// Bijection between action ids and binned knob vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    dims: Vec<KnobDim>,
    factors: Vec<Factor>,
    num_ports: usize,
    size: u64,
}

impl ActionSpace {
    pub fn new(schema: &KnobSchema) -> Result<Self, DqnError> {
        let dims = schema.dims();
        let n = dims.len();
        let mut paired = vec![false; n];
        let mut factors = Vec::new();
        // Range knobs occupy the last six flat slots as (lo, hi) pairs.
        for (r, (_, range)) in schema.ranges().iter().enumerate() {
            if range.is_shared() {
                let lo = n - 6 + 2 * r;
                paired[lo] = true;
                paired[lo + 1] = true;
            }
        }
        let mut d = 0;
        while d < n {
            if paired[d] {
                factors.push(Factor::Pair {
                    lo: d,
                    hi: d + 1,
                    bins: dims[d].effective_bins(),
                });
                d += 2;
            } else {
                factors.push(Factor::Single {
                    dim: d,
                    bins: dims[d].effective_bins(),
                });
                d += 1;
            }
        }
        let size = factors.iter().map(|f| u128::from(f.radix())).product::<u128>();
        if size > u128::from(MAX_ACTIONS) {
            return Err(DqnError::ActionSpaceTooLarge {
                actions: size,
                limit: MAX_ACTIONS,
            });
        }
        Ok(Self {
            dims,
            factors,
            num_ports: schema.num_ports(),
            size: size as u64,
        })
    }

    pub fn len(&self) -> usize {
        self.size as usize
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Per-dimension bin indices of an action.
    pub fn bins_of(&self, action: usize) -> Result<Vec<u32>, DqnError> {
        if action as u64 >= self.size {
            return Err(DqnError::OutOfRange(format!("action {action} >= {}", self.size)));
        }
        let mut rest = action as u64;
        let mut bins = vec![0u32; self.dims.len()];
        for f in &self.factors {
            let digit = rest % f.radix();
            rest /= f.radix();
            match *f {
                Factor::Single { dim, .. } => bins[dim] = digit as u32,
                Factor::Pair { lo, hi, bins: b } => {
                    let (i, j) = pair_from_index(digit, b);
                    bins[lo] = i;
                    bins[hi] = j;
                }
            }
        }
        Ok(bins)
    }

    /// Bin-center knob vector of an action.
    pub fn action_to_knobs(&self, action: usize) -> Result<KnobVector, DqnError> {
        let bins = self.bins_of(action)?;
        let values: Vec<f64> = self.dims.iter().zip(&bins).map(|(d, &b)| d.bin_center(b)).collect();
        Ok(KnobVector::from_values(&values, self.num_ports))
    }

    /// Id of the action whose bins contain `knobs`.
    pub fn knobs_to_action(&self, knobs: &KnobVector) -> Result<usize, DqnError> {
        if knobs.num_ports() != self.num_ports {
            return Err(DqnError::OutOfRange(format!(
                "knobs have {} ports, action space {}",
                knobs.num_ports(),
                self.num_ports
            )));
        }
        let values = knobs.to_values();
        for (d, &v) in self.dims.iter().zip(&values) {
            if !d.contains(v) {
                return Err(DqnError::OutOfRange(format!(
                    "{} = {v} outside [{}, {}]",
                    d.name, d.min, d.max
                )));
            }
        }
        let bin = |d: usize| self.dims[d].bin_of(values[d]);
        let mut action = 0u64;
        let mut scale = 1u64;
        for f in &self.factors {
            let digit = match *f {
                Factor::Single { dim, .. } => u64::from(bin(dim)),
                Factor::Pair { lo, hi, bins } => {
                    let (i, j) = (bin(lo), bin(hi));
                    if i > j {
                        return Err(DqnError::OutOfRange(format!("{} above {}", self.dims[lo].name, self.dims[hi].name)));
                    }
                    pair_index(i, j, bins)
                }
            };
            action += digit * scale;
            scale *= f.radix();
        }
        Ok(action as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Bounded FIFO of experiences; the oldest is evicted when full.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Experience>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::with_capacity(capacity.clamp(1, 4096)),
            inserted: 0,
        }
    }

    pub fn store(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total experiences ever stored.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// Slot indices of a uniform draw with replacement.
    pub fn sample_indices<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<&Experience> {
        self.sample_indices(rng, n).into_iter().map(|i| &self.items[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Decisions over which epsilon falls linearly from start to end.
    pub epsilon_decay_decisions: u64,
    pub gamma: f64,
    /// Train steps between target-network copies.
    pub target_sync_interval: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    /// Gradient steps run after each observed reward.
    pub train_steps_per_decision: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_decisions: 500,
            gamma: 0.0,
            target_sync_interval: 100,
            batch_size: 32,
            buffer_capacity: 4096,
            hidden: vec![32, 32],
            learning_rate: 1e-2,
            optimizer: OptimizerKind::SgdMomentum,
            momentum: 0.9,
            train_steps_per_decision: 1,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        let bad = |m: &str| Err(DqnError::InvalidConfig(m.into()));
        let unit = 0.0..=1.0;
        if !unit.contains(&self.epsilon_start) || !unit.contains(&self.epsilon_end) {
            return bad("epsilon_start and epsilon_end must lie in [0, 1]");
        }
        if self.epsilon_end > self.epsilon_start {
            return bad("epsilon_end must not exceed epsilon_start");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.target_sync_interval == 0 {
            return bad("batch_size, buffer_capacity and target_sync_interval must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be >= 1");
        }
        Ok(())
    }

    /// Exploration rate after `decisions` decisions.
    pub fn epsilon(&self, decisions: u64) -> f64 {
        if decisions >= self.epsilon_decay_decisions {
            return self.epsilon_end;
        }
        let t = decisions as f64 / self.epsilon_decay_decisions as f64;
        let e = self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t;
        e.clamp(self.epsilon_end, self.epsilon_start)
    }
}

/// Lowest action id among the maximal Q-values.
pub fn greedy(q: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = a;
        }
    }
    best
}

/// Epsilon-greedy choice over the network's outputs at `state`.
pub fn select_action<R: Rng>(qnet: &MlpModel, state: &[f64], epsilon: f64, rng: &mut R) -> Result<usize, DqnError> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(DqnError::OutOfRange(format!("epsilon {epsilon}")));
    }
    let n = qnet.output_dim();
    // Always draw the coin so the stream position does not depend on Q.
    let explore = rng.gen::<f64>() < epsilon;
    if explore {
        Ok(rng.gen_range(0..n))
    } else {
        Ok(greedy(&qnet.forward(state)?))
    }
}

/// Regression targets: `r` for terminal experiences, otherwise
/// `r + gamma * max_a' Q_target(s', a')`.
pub fn compute_targets(batch: &[&Experience], target_net: &MlpModel, gamma: f64) -> Result<Vec<f64>, DqnError> {
    batch
        .iter()
        .map(|e| {
            if e.terminal {
                Ok(e.reward)
            } else {
                let q = target_net.forward(&e.next_state)?;
                Ok(e.reward + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            }
        })
        .collect()
}

/// One gradient step on `1/B Σ (Q(s, a) − target)²` over a uniform
/// mini-batch. Returns the batch loss before the step.
pub fn train_step<R: Rng>(
    qnet: &mut MlpModel,
    target_net: &MlpModel,
    optimizer: &mut Optimizer,
    buffer: &ReplayBuffer,
    config: &AgentConfig,
    rng: &mut R,
) -> Result<f64, DqnError> {
    if buffer.len() < config.batch_size {
        return Err(DqnError::InsufficientData {
            available: buffer.len(),
            required: config.batch_size,
        });
    }
    let batch = buffer.sample(rng, config.batch_size);
    let targets = compute_targets(&batch, target_net, config.gamma)?;
    let scale = 2.0 / batch.len() as f64;
    let mut grads = qnet.zero_gradients();
    let mut loss = 0.0;
    for (e, &t) in batch.iter().zip(&targets) {
        if e.action >= qnet.output_dim() {
            return Err(DqnError::OutOfRange(format!("action {} in replay buffer", e.action)));
        }
        qnet.accumulate_gradient(&e.state, &mut grads, |q| {
            let err = q[e.action] - t;
            loss += err * err;
            let mut d = vec![0.0; q.len()];
            d[e.action] = scale * err;
            d
        });
    }
    let loss = loss / batch.len() as f64;
    if !loss.is_finite() {
        return Err(DqnError::Mlp(MlpError::NonFiniteLoss { epoch: 0 }));
    }
    optimizer.step(qnet, &grads);
    Ok(loss)
}

/// Q-network, target network, replay buffer and exploration schedule.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    config: AgentConfig,
    schema: KnobSchema,
    space: ActionSpace,
    qnet: MlpModel,
    target: MlpModel,
    optimizer: Optimizer,
    buffer: ReplayBuffer,
    decisions: u64,
    train_steps: u64,
    rng: ChaCha8Rng,
}

impl DqnAgent {
    pub fn new(schema: &KnobSchema, config: AgentConfig) -> Result<Self, DqnError> {
        config.validate()?;
        let space = ActionSpace::new(schema)?;
        let mut sizes = vec![schema.dim()];
        sizes.extend_from_slice(&config.hidden);
        sizes.push(space.len());
        let qnet = MlpModel::init(&sizes, config.seed)?;
        let optimizer = Optimizer::new(config.optimizer, config.learning_rate, config.momentum, qnet.params().len());
        Ok(Self {
            target: qnet.clone(),
            qnet,
            optimizer,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            decisions: 0,
            train_steps: 0,
            rng: ChaCha8Rng::seed_from_u64(crate::seed::splitmix64(config.seed)),
            space,
            schema: schema.clone(),
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn qnet(&self) -> &MlpModel {
        &self.qnet
    }

    pub fn qnet_mut(&mut self) -> &mut MlpModel {
        &mut self.qnet
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn decisions(&self) -> u64 {
        self.decisions
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    /// The constant state of the single-step episode.
    pub fn state(&self) -> Vec<f64> {
        vec![0.0; self.schema.dim()]
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon(self.decisions)
    }

    pub fn q_values(&self) -> Result<Vec<f64>, DqnError> {
        Ok(self.qnet.forward(&self.state())?)
    }

    pub fn greedy_action(&self) -> Result<usize, DqnError> {
        Ok(greedy(&self.q_values()?))
    }

    /// Chooses `k` actions, advancing the schedule by one decision each.
    pub fn propose(&mut self, k: usize) -> Result<Vec<(usize, KnobVector)>, DqnError> {
        let state = self.state();
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let eps = self.epsilon();
            let a = select_action(&self.qnet, &state, eps, &mut self.rng)?;
            self.decisions += 1;
            out.push((a, self.space.action_to_knobs(a)?));
        }
        Ok(out)
    }

    /// Stores the terminal experience for `action` and, once the buffer holds
    /// a batch, runs the configured number of train steps. Returns the mean
    /// loss of those steps, if any ran.
    pub fn observe(&mut self, action: usize, reward: f64) -> Result<Option<f64>, DqnError> {
        if action >= self.space.len() {
            return Err(DqnError::OutOfRange(format!("action {action} >= {}", self.space.len())));
        }
        if !reward.is_finite() {
            return Err(DqnError::OutOfRange(format!("reward {reward}")));
        }
        let state = self.state();
        self.buffer.store(Experience {
            next_state: state.clone(),
            state,
            action,
            reward,
            terminal: true,
        });
        if self.buffer.len() < self.config.batch_size {
            return Ok(None);
        }
        let mut total = 0.0;
        for _ in 0..self.config.train_steps_per_decision {
            total += train_step(
                &mut self.qnet,
                &self.target,
                &mut self.optimizer,
                &self.buffer,
                &self.config,
                &mut self.rng,
            )?;
            self.train_steps += 1;
            if self.train_steps.is_multiple_of(self.config.target_sync_interval) {
                self.target = self.qnet.clone();
            }
        }
        let steps = self.config.train_steps_per_decision.max(1) as f64;
        Ok((self.config.train_steps_per_decision > 0).then_some(total / steps))
    }

    /// Versioned checkpoint: header, config and schema (JSON), both networks,
    /// optimizer velocity, replay buffer, counters and generator position.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let put_bytes = |out: &mut Vec<u8>, b: &[u8]| {
            out.extend_from_slice(&(b.len() as u64).to_le_bytes());
            out.extend_from_slice(b);
        };
        let put_f64s = |out: &mut Vec<u8>, v: &[f64]| {
            out.extend_from_slice(&(v.len() as u64).to_le_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        put_bytes(&mut out, &serde_json::to_vec(&self.config).expect("config serializes"));
        put_bytes(&mut out, &serde_json::to_vec(&self.schema).expect("schema serializes"));
        out.extend_from_slice(&self.qnet.to_bytes());
        out.extend_from_slice(&self.target.to_bytes());
        put_f64s(&mut out, self.optimizer.velocity());
        out.extend_from_slice(&(self.buffer.capacity as u64).to_le_bytes());
        out.extend_from_slice(&self.buffer.inserted.to_le_bytes());
        out.extend_from_slice(&(self.buffer.len() as u64).to_le_bytes());
        for e in self.buffer.iter() {
            put_f64s(&mut out, &e.state);
            out.extend_from_slice(&(e.action as u64).to_le_bytes());
            out.extend_from_slice(&e.reward.to_le_bytes());
            put_f64s(&mut out, &e.next_state);
            out.push(u8::from(e.terminal));
        }
        out.extend_from_slice(&self.decisions.to_le_bytes());
        out.extend_from_slice(&self.train_steps.to_le_bytes());
        out.extend_from_slice(&self.rng.get_seed());
        out.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DqnError> {
        let bad = |m: String| DqnError::Checkpoint(m);
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let len = |r: &mut ByteReader| -> Result<usize, DqnError> {
            let n = r.u64()?;
            usize::try_from(n).map_err(|_| DqnError::Checkpoint("length overflow".into()))
        };
        let f64s = |r: &mut ByteReader| -> Result<Vec<f64>, DqnError> {
            let n = len(r)?;
            if n > r.rest().len() / 8 {
                return Err(DqnError::Checkpoint("truncated".into()));
            }
            Ok((0..n).map(|_| r.f64()).collect::<Result<_, _>>()?)
        };
        let n = len(&mut r)?;
        let config: AgentConfig = serde_json::from_slice(r.take(n)?).map_err(|e| bad(e.to_string()))?;
        let n = len(&mut r)?;
        let schema: KnobSchema = serde_json::from_slice(r.take(n)?).map_err(|e| bad(e.to_string()))?;
        let mut agent = Self::new(&schema, config)?;

        let (qnet, used) = MlpModel::from_bytes(r.rest())?;
        r.take(used)?;
        let (target, used) = MlpModel::from_bytes(r.rest())?;
        r.take(used)?;
        if qnet.sizes() != agent.qnet.sizes() || target.sizes() != agent.qnet.sizes() {
            return Err(bad("network shape does not match schema and config".into()));
        }
        let velocity = f64s(&mut r)?;
        if velocity.len() != qnet.params().len() {
            return Err(bad("optimizer state length mismatch".into()));
        }
        agent.qnet = qnet;
        agent.target = target;
        agent.optimizer.set_velocity(velocity);

        let capacity = len(&mut r)?;
        let inserted = r.u64()?;
        let count = len(&mut r)?;
        if capacity == 0 || count > capacity {
            return Err(bad("replay buffer header inconsistent".into()));
        }
        let mut buffer = ReplayBuffer::new(capacity);
        for _ in 0..count {
            let state = f64s(&mut r)?;
            let action = len(&mut r)?;
            let reward = r.f64()?;
            let next_state = f64s(&mut r)?;
            let terminal = match r.take(1)?[0] {
                0 => false,
                1 => true,
                b => return Err(bad(format!("bad terminal flag {b}"))),
            };
            if action >= agent.space.len() {
                return Err(bad(format!("stored action {action} out of range")));
            }
            buffer.store(Experience { state, action, reward, next_state, terminal });
        }
        buffer.inserted = inserted;
        agent.buffer = buffer;
        agent.decisions = r.u64()?;
        agent.train_steps = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = r.u128()?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        agent.rng = rng;
        if !r.rest().is_empty() {
            return Err(bad("trailing bytes".into()));
        }
        Ok(agent)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DqnError> {
        std::fs::write(path, self.to_bytes()).map_err(MlpError::from)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DqnError> {
        let bytes = std::fs::read(path).map_err(MlpError::from)?;
        Self::from_bytes(&bytes)
    }
}

impl PartialEq for DqnAgent {
    fn eq(&self, other: &Self) -> bool {
        self.to_bytes() == other.to_bytes()
    }
}
