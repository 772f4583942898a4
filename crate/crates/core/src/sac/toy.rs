//! One-step bandit used to check that the learner finds a known optimum.

use thiserror::Error;

use crate::env::Environment;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("bandit expects one action, got {0}")]
pub struct BanditError(usize);

/// Constant observation `[1]`, reward `-scale * a^2`, episodes of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditEnv {
    pub reward_scale: f64,
}

impl Default for BanditEnv {
    fn default() -> Self {
        Self { reward_scale: 1.0 }
    }
}

impl Environment for BanditEnv {
    type Error = BanditError;

    fn obs_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, _seed: u64) -> Result<Vec<f64>, BanditError> {
        Ok(vec![1.0])
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64, bool, bool), BanditError> {
        if action.len() != 1 {
            return Err(BanditError(action.len()));
        }
        Ok((vec![1.0], -self.reward_scale * action[0] * action[0], true, false))
    }
}
