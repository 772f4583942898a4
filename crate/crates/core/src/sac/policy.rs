//! Tanh-squashed diagonal Gaussian policy.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::{ForwardCache, MLPParams};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    /// Maps observations to `[mean | log_std]`.
    pub net: MLPParams,
    pub act_dim: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

/// Reparameterised sample of a batch together with everything the
/// backward pass needs.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub actions: Vec<f64>,
    pub log_prob: Vec<f64>,
    pub(crate) u: Vec<f64>,
    pub(crate) eps: Vec<f64>,
    pub(crate) std: Vec<f64>,
    // whether log_std sat inside the clamp range
    pub(crate) unclamped: Vec<bool>,
    pub(crate) cache: ForwardCache,
}

/// `log(1 - tanh(u)^2)` in a form that stays finite for large `|u|`.
pub fn log_squash_jacobian(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut widths = vec![obs_dim];
        widths.extend_from_slice(hidden);
        widths.push(2 * act_dim);
        Self { net: MLPParams::new(&widths, false, rng), act_dim, log_std_min: -20.0, log_std_max: 2.0 }
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// `tanh(mean)` for each row.
    pub fn deterministic(&self, obs: &[f64], batch: usize) -> Vec<f64> {
        let out = self.net.predict(obs, batch);
        let a = self.act_dim;
        out.chunks_exact(2 * a).flat_map(|row| row[..a].iter().map(|m| m.tanh())).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], batch: usize, rng: &mut R) -> PolicySample {
        let eps: Vec<f64> = (0..batch * self.act_dim).map(|_| StandardNormal.sample(rng)).collect();
        self.sample_with_noise(obs, batch, eps)
    }

    /// Sample driven by the given standard normal draws.
    pub fn sample_with_noise(&self, obs: &[f64], batch: usize, eps: Vec<f64>) -> PolicySample {
        let a = self.act_dim;
        assert_eq!(eps.len(), batch * a, "noise shape");
        let (out, cache) = self.net.forward(obs, batch);
        let mut s = PolicySample {
            actions: vec![0.0; batch * a],
            log_prob: vec![0.0; batch],
            u: vec![0.0; batch * a],
            eps,
            std: vec![0.0; batch * a],
            unclamped: vec![true; batch * a],
            cache,
        };
        for b in 0..batch {
            let row = &out[b * 2 * a..(b + 1) * 2 * a];
            let mut lp = 0.0;
            for i in 0..a {
                let k = b * a + i;
                let raw = row[a + i];
                let log_std = raw.clamp(self.log_std_min, self.log_std_max);
                s.unclamped[k] = raw > self.log_std_min && raw < self.log_std_max;
                let std = log_std.exp();
                let u = row[i] + std * s.eps[k];
                s.std[k] = std;
                s.u[k] = u;
                s.actions[k] = u.tanh();
                lp += -0.5 * s.eps[k] * s.eps[k] - log_std - HALF_LN_2PI - log_squash_jacobian(u);
            }
            s.log_prob[b] = lp;
        }
        s
    }

    /// Parameter gradient given upstream gradients on the actions and on
    /// the log-probabilities of a sample.
    pub fn backward(&self, s: &PolicySample, d_action: &[f64], d_log_prob: &[f64]) -> Vec<f64> {
        let a = self.act_dim;
        let batch = s.log_prob.len();
        let mut d_out = vec![0.0; batch * 2 * a];
        for b in 0..batch {
            for i in 0..a {
                let k = b * a + i;
                let t = s.actions[k];
                // d log_prob / d u = 2 tanh(u) through the squash correction
                let du = d_action[k] * (1.0 - t * t) + d_log_prob[b] * 2.0 * t;
                d_out[b * 2 * a + i] = du;
                if s.unclamped[k] {
                    d_out[b * 2 * a + a + i] = du * s.std[k] * s.eps[k] - d_log_prob[b];
                }
            }
        }
        self.net.backward(&s.cache, &d_out, true, false).0.unwrap()
    }
}
