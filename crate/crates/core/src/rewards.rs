//! Per-node rewards computed from oscillator energies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("energy must be positive, got {0}")]
    InvalidEnergy(f64),
    #[error("reward spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    /// `scale / n`, unbounded as `n -> 0`.
    Inverse,
    /// Gaussian in `log10 n` around the target exponent.
    Gaussian,
    /// Step-to-step change of the Gaussian reward.
    Difference,
}

/// Reward configuration; `mu[j]` is the target exponent of node `j`
/// (target occupancy `10^mu`) and `sigma[j]` its width in decades.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl RewardSpec {
    /// Same target for all `n` nodes.
    pub fn uniform(kind: RewardKind, n: usize, mu: f64, sigma: f64) -> Self {
        Self { kind, mu: vec![mu; n], sigma: vec![sigma; n], scale: 1.0 }
    }

    pub fn validate(&self, n_nodes: usize) -> Result<(), RewardError> {
        if self.mu.len() != n_nodes || self.sigma.len() != n_nodes {
            return Err(RewardError::InvalidSpec(format!(
                "mu/sigma need {n_nodes} entries, got {}/{}",
                self.mu.len(),
                self.sigma.len()
            )));
        }
        if self.sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(RewardError::InvalidSpec("sigma must be positive".into()));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(RewardError::InvalidSpec("scale must be positive".into()));
        }
        Ok(())
    }

    /// Aggregated reward for one step. `prev` is only read by the
    /// difference kind.
    pub fn evaluate(&self, now: &[f64], prev: &[f64]) -> Result<f64, RewardError> {
        let per_node = now
            .iter()
            .enumerate()
            .map(|(j, &n)| match self.kind {
                RewardKind::Inverse => inverse_reward(n, 1.0),
                RewardKind::Gaussian => gaussian_reward(n, self.mu[j], self.sigma[j]),
                RewardKind::Difference => difference_reward(n, prev[j], self.mu[j], self.sigma[j]),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(aggregate(&per_node, self))
    }
}

fn check(n: f64) -> Result<(), RewardError> {
    if n > 0.0 && n.is_finite() {
        Ok(())
    } else {
        Err(RewardError::InvalidEnergy(n))
    }
}

/// `exp(-(log10 n - mu)^2 / (2 sigma^2))`.
pub fn gaussian_reward(n: f64, mu: f64, sigma: f64) -> Result<f64, RewardError> {
    check(n)?;
    let d = n.log10() - mu;
    Ok((-d * d / (2.0 * sigma * sigma)).exp())
}

pub fn difference_reward(n_now: f64, n_prev: f64, mu: f64, sigma: f64) -> Result<f64, RewardError> {
    Ok(gaussian_reward(n_now, mu, sigma)? - gaussian_reward(n_prev, mu, sigma)?)
}

pub fn inverse_reward(n: f64, scale: f64) -> Result<f64, RewardError> {
    check(n)?;
    Ok(scale / n)
}

/// `scale` times the mean of the per-node rewards.
pub fn aggregate(per_node: &[f64], spec: &RewardSpec) -> f64 {
    assert!(!per_node.is_empty(), "no per-node rewards to aggregate");
    spec.scale * per_node.iter().sum::<f64>() / per_node.len() as f64
}
