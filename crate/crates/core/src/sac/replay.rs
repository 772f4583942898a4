use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fixed-capacity FIFO of transitions, stored column-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<f64>,
    act: Vec<f64>,
    rew: Vec<f64>,
    next_obs: Vec<f64>,
    terminated: Vec<bool>,
    truncated: Vec<bool>,
    // slot the next push writes to
    cursor: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminated: bool,
    pub truncated: bool,
}

/// A sampled minibatch, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub obs: Vec<f64>,
    pub act: Vec<f64>,
    pub rew: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub terminated: Vec<bool>,
}

impl ReplayBuffer {
    /// Storage grows with use up to `capacity`.
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            capacity,
            obs_dim,
            act_dim,
            obs: Vec::new(),
            act: Vec::new(),
            rew: Vec::new(),
            next_obs: Vec::new(),
            terminated: Vec::new(),
            truncated: Vec::new(),
            cursor: 0,
            len: 0,
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

    pub fn push(&mut self, t: Transition) {
        assert_eq!(t.obs.len(), self.obs_dim, "observation width");
        assert_eq!(t.next_obs.len(), self.obs_dim, "observation width");
        assert_eq!(t.action.len(), self.act_dim, "action width");
        if self.len < self.capacity {
            self.obs.extend_from_slice(&t.obs);
            self.act.extend_from_slice(&t.action);
            self.rew.push(t.reward);
            self.next_obs.extend_from_slice(&t.next_obs);
            self.terminated.push(t.terminated);
            self.truncated.push(t.truncated);
            self.len += 1;
        } else {
            let c = self.cursor;
            let (o, a) = (self.obs_dim, self.act_dim);
            self.obs[c * o..(c + 1) * o].copy_from_slice(&t.obs);
            self.act[c * a..(c + 1) * a].copy_from_slice(&t.action);
            self.rew[c] = t.reward;
            self.next_obs[c * o..(c + 1) * o].copy_from_slice(&t.next_obs);
            self.terminated[c] = t.terminated;
            self.truncated[c] = t.truncated;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// `i`-th stored transition counting from the oldest.
    pub fn get(&self, i: usize) -> Transition {
        assert!(i < self.len, "index {i} out of {}", self.len);
        let slot = if self.len < self.capacity { i } else { (self.cursor + i) % self.capacity };
        let (o, a) = (self.obs_dim, self.act_dim);
        Transition {
            obs: self.obs[slot * o..(slot + 1) * o].to_vec(),
            action: self.act[slot * a..(slot + 1) * a].to_vec(),
            reward: self.rew[slot],
            next_obs: self.next_obs[slot * o..(slot + 1) * o].to_vec(),
            terminated: self.terminated[slot],
            truncated: self.truncated[slot],
        }
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Batch {
        assert!(self.len > 0, "sampling an empty buffer");
        let (o, a) = (self.obs_dim, self.act_dim);
        let mut b = Batch {
            size,
            obs: Vec::with_capacity(size * o),
            act: Vec::with_capacity(size * a),
            rew: Vec::with_capacity(size),
            next_obs: Vec::with_capacity(size * o),
            terminated: Vec::with_capacity(size),
        };
        for _ in 0..size {
            let s = rng.gen_range(0..self.len);
            b.obs.extend_from_slice(&self.obs[s * o..(s + 1) * o]);
            b.act.extend_from_slice(&self.act[s * a..(s + 1) * a]);
            b.rew.push(self.rew[s]);
            b.next_obs.extend_from_slice(&self.next_obs[s * o..(s + 1) * o]);
            b.terminated.push(self.terminated[s]);
        }
        b
    }
}
