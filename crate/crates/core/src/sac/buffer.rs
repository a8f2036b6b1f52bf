use rand::Rng;

use crate::error::{Error, Result};

/// One environment transition as stored for off-policy learning.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub features: Vec<f64>,
    /// Replay action (raw agent output, or the scaled residual torque).
    pub action: f64,
    /// `d action / d pi` at `features`.
    pub gain: f64,
    pub reward: f64,
    pub next_features: Vec<f64>,
    /// `d action / d pi` at `next_features`.
    pub next_gain: f64,
    pub done: bool,
}

/// Flat column storage for a sampled minibatch.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub len: usize,
    pub dim: usize,
    pub features: Vec<f64>,
    pub actions: Vec<f64>,
    pub gains: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_features: Vec<f64>,
    pub next_gains: Vec<f64>,
    pub dones: Vec<f64>,
}

impl Batch {
    fn clear(&mut self, dim: usize) {
        self.len = 0;
        self.dim = dim;
        self.features.clear();
        self.actions.clear();
        self.gains.clear();
        self.rewards.clear();
        self.next_features.clear();
        self.next_gains.clear();
        self.dones.clear();
    }

    pub fn push(&mut self, t: &Transition) {
        self.dim = t.features.len();
        self.len += 1;
        self.features.extend_from_slice(&t.features);
        self.actions.push(t.action);
        self.gains.push(t.gain);
        self.rewards.push(t.reward);
        self.next_features.extend_from_slice(&t.next_features);
        self.next_gains.push(t.next_gain);
        self.dones.push(if t.done { 1.0 } else { 0.0 });
    }
}

/// Fixed-capacity ring buffer; the oldest transition is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    dim: usize,
    /// Next slot to write once full.
    head: usize,
    len: usize,
    features: Vec<f64>,
    next_features: Vec<f64>,
    actions: Vec<f64>,
    gains: Vec<f64>,
    next_gains: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            dim,
            head: 0,
            len: 0,
            features: Vec::new(),
            next_features: Vec::new(),
            actions: Vec::new(),
            gains: Vec::new(),
            next_gains: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.features.len() != self.dim || t.next_features.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                got: t.features.len(),
            });
        }
        if !t.reward.is_finite() {
            return Err(Error::NonFinite("reward"));
        }
        if self.len < self.capacity {
            self.features.extend_from_slice(&t.features);
            self.next_features.extend_from_slice(&t.next_features);
            self.actions.push(t.action);
            self.gains.push(t.gain);
            self.next_gains.push(t.next_gain);
            self.rewards.push(t.reward);
            self.dones.push(t.done);
            self.len += 1;
        } else {
            let i = self.head;
            let d = self.dim;
            self.features[i * d..(i + 1) * d].copy_from_slice(&t.features);
            self.next_features[i * d..(i + 1) * d].copy_from_slice(&t.next_features);
            self.actions[i] = t.action;
            self.gains[i] = t.gain;
            self.next_gains[i] = t.next_gain;
            self.rewards[i] = t.reward;
            self.dones[i] = t.done;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Transition at storage slot `i` (not insertion order once wrapped).
    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.len {
            return None;
        }
        let d = self.dim;
        Some(Transition {
            features: self.features[i * d..(i + 1) * d].to_vec(),
            action: self.actions[i],
            gain: self.gains[i],
            reward: self.rewards[i],
            next_features: self.next_features[i * d..(i + 1) * d].to_vec(),
            next_gain: self.next_gains[i],
            done: self.dones[i],
        })
    }

    /// Uniform sampling with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.len == 0 {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..n).map(|_| rng.random_range(0..self.len)).collect())
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, out: &mut Batch) -> Result<()> {
        let idx = self.sample_indices(n, rng)?;
        let d = self.dim;
        out.clear(d);
        for i in idx {
            out.len += 1;
            out.features.extend_from_slice(&self.features[i * d..(i + 1) * d]);
            out.next_features
                .extend_from_slice(&self.next_features[i * d..(i + 1) * d]);
            out.actions.push(self.actions[i]);
            out.gains.push(self.gains[i]);
            out.next_gains.push(self.next_gains[i]);
            out.rewards.push(self.rewards[i]);
            out.dones.push(if self.dones[i] { 1.0 } else { 0.0 });
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        let mut b = Batch::default();
        self.sample_into(n, rng, &mut b)?;
        Ok(b)
    }
}
