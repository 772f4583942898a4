//! Off-policy training loop, deterministic evaluation and checkpoints.

use std::path::Path;

use log::{debug, info};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::agent::{Diverged, SACAgent, SACHyper};
use super::policy::GaussianPolicy;
use super::replay::{ReplayBuffer, Transition};
use crate::env::Environment;
use crate::metrics::LearningCurve;
use crate::rng::{derive_seed, stream, StreamTag};

pub const CHECKPOINT_FORMAT: &str = "domino-sac";
pub const CHECKPOINT_VERSION: u32 = 1;
const EVAL_SALT: u64 = 0x5EED_E7A1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("environment: {0}")]
    Env(Box<dyn std::error::Error + Send + Sync>),
    #[error("training diverged in episode {episode} after {env_steps} env steps: {source}")]
    Diverged { episode: u64, env_steps: u64, source: Diverged, checkpoint: Box<Checkpoint> },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unsupported checkpoint {format} v{version}")]
    Version { format: String, version: u32 },
}

/// Exact position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string; JSON numbers cannot carry 128 bits portably.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, CheckpointError> {
        use rand::SeedableRng;
        let pos: u128 = self.word_pos.parse().map_err(|_| CheckpointError::Version {
            format: format!("bad rng position {:?}", self.word_pos),
            version: CHECKPOINT_VERSION,
        })?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPolicy {
    pub actor: GaussianPolicy,
    pub eval_return: f64,
    pub episode: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub agent: SACAgent,
    pub best: Option<BestPolicy>,
    pub curve: LearningCurve,
    pub env_steps: u64,
    pub episodes: u64,
    pub act_rng: RngState,
    pub learn_rng: RngState,
    pub buffer: Option<ReplayBuffer>,
    /// Free-form description of the environment the agent was trained on.
    #[serde(default)]
    pub env: serde_json::Value,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, CheckpointError> {
        let cp: Self = serde_json::from_str(s)?;
        if cp.format != CHECKPOINT_FORMAT || cp.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { format: cp.format, version: cp.version });
        }
        Ok(cp)
    }

    /// Writes through a temporary file so a crash never leaves half a file.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The evaluated best actor if there is one, else the latest.
    pub fn best_policy(&self) -> TrainedPolicy {
        TrainedPolicy { actor: self.best.as_ref().map_or(&self.agent.actor, |b| &b.actor).clone() }
    }

    pub fn final_policy(&self) -> TrainedPolicy {
        TrainedPolicy { actor: self.agent.actor.clone() }
    }
}

/// Immutable deterministic policy for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub actor: GaussianPolicy,
}

impl TrainedPolicy {
    pub fn act(&self, obs: &[f64]) -> Vec<f64> {
        self.actor.deterministic(obs, 1)
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.act_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSchedule {
    /// Evaluate after every `every` training episodes; 0 disables.
    pub every: u64,
    pub episodes: usize,
}

impl Default for EvalSchedule {
    fn default() -> Self {
        Self { every: 0, episodes: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeReport {
    pub episode: u64,
    pub ret: f64,
    /// Mean losses over the episode's gradient steps; NaN before learning.
    pub q_loss: f64,
    pub pi_loss: f64,
    pub env_steps: u64,
    pub eval_return: Option<f64>,
}

fn env_err<E: std::error::Error + Send + Sync + 'static>(e: E) -> TrainError {
    TrainError::Env(Box::new(e))
}

/// Mean undiscounted return of the deterministic policy over the given
/// episode seeds.
pub fn evaluate<E: Environment>(actor: &GaussianPolicy, env: &mut E, seeds: &[u64]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for &seed in seeds {
        let mut obs = env.reset(seed).map_err(env_err)?;
        loop {
            let a = actor.deterministic(&obs, 1);
            let (next, r, term, trunc) = env.step(&a).map_err(env_err)?;
            total += r;
            obs = next;
            if term || trunc {
                break;
            }
        }
    }
    Ok(total / seeds.len().max(1) as f64)
}

pub struct Trainer {
    agent: SACAgent,
    buffer: ReplayBuffer,
    curve: LearningCurve,
    act_rng: ChaCha8Rng,
    learn_rng: ChaCha8Rng,
    env_steps: u64,
    episodes: u64,
    seed: u64,
    best: Option<BestPolicy>,
}

impl Trainer {
    pub fn new(obs_dim: usize, act_dim: usize, hyper: SACHyper, seed: u64) -> Result<Self, TrainError> {
        hyper.validate().map_err(TrainError::Config)?;
        let mut init = stream(seed, 0, StreamTag::Init);
        let buffer = ReplayBuffer::new(hyper.buffer_size, obs_dim, act_dim);
        Ok(Self {
            agent: SACAgent::new(obs_dim, act_dim, hyper, &mut init),
            buffer,
            curve: LearningCurve::default(),
            act_rng: stream(seed, 0, StreamTag::Policy),
            learn_rng: stream(seed, 0, StreamTag::Learner),
            env_steps: 0,
            episodes: 0,
            seed,
            best: None,
        })
    }

    /// Resumes from a checkpoint; without a stored buffer learning restarts
    /// from an empty one.
    pub fn from_checkpoint(cp: Checkpoint) -> Result<Self, CheckpointError> {
        let buffer = cp
            .buffer
            .unwrap_or_else(|| ReplayBuffer::new(cp.agent.hyper.buffer_size, cp.agent.obs_dim, cp.agent.act_dim));
        Ok(Self {
            act_rng: cp.act_rng.restore()?,
            learn_rng: cp.learn_rng.restore()?,
            agent: cp.agent,
            buffer,
            curve: cp.curve,
            env_steps: cp.env_steps,
            episodes: cp.episodes,
            seed: cp.seed,
            best: cp.best,
        })
    }

    pub fn checkpoint(&self, include_buffer: bool) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed: self.seed,
            agent: self.agent.clone(),
            best: self.best.clone(),
            curve: self.curve.clone(),
            env_steps: self.env_steps,
            episodes: self.episodes,
            act_rng: RngState::capture(&self.act_rng),
            learn_rng: RngState::capture(&self.learn_rng),
            buffer: include_buffer.then(|| self.buffer.clone()),
            env: serde_json::Value::Null,
        }
    }

    pub fn agent(&self) -> &SACAgent {
        &self.agent
    }

    pub fn curve(&self) -> &LearningCurve {
        &self.curve
    }

    pub fn best(&self) -> Option<&BestPolicy> {
        self.best.as_ref()
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn policy(&self) -> TrainedPolicy {
        TrainedPolicy { actor: self.agent.actor.clone() }
    }

    /// Seeds of the fixed evaluation episodes.
    pub fn eval_seeds(&self, n: usize) -> Vec<u64> {
        (0..n as u64).map(|k| derive_seed(self.seed ^ EVAL_SALT, k)).collect()
    }

    fn diverged(&self, source: Diverged) -> TrainError {
        TrainError::Diverged {
            episode: self.episodes,
            env_steps: self.env_steps,
            source,
            checkpoint: Box::new(self.checkpoint(false)),
        }
    }

    /// Runs one training episode unless fewer than a full horizon of steps
    /// remain in `budget`; a cut episode is not recorded.
    fn run_episode<E: Environment>(&mut self, env: &mut E, budget: u64) -> Result<Option<EpisodeReport>, TrainError> {
        let hyper = self.agent.hyper.clone();
        let mut obs = env.reset(derive_seed(self.seed, self.episodes)).map_err(env_err)?;
        let mut ret = 0.0;
        let (mut q_sum, mut q_n, mut pi_sum, mut pi_n) = (0.0, 0usize, 0.0, 0usize);
        let mut used = 0;
        loop {
            if used == budget {
                return Ok(None);
            }
            let action: Vec<f64> = if (self.env_steps as usize) < hyper.learning_starts {
                (0..self.agent.act_dim).map(|_| self.act_rng.gen_range(-1.0..=1.0)).collect()
            } else {
                self.agent.act(&obs, &mut self.act_rng)
            };
            let (next, reward, terminated, truncated) = env.step(&action).map_err(env_err)?;
            self.env_steps += 1;
            used += 1;
            ret += reward;
            self.buffer.push(Transition {
                obs: std::mem::take(&mut obs),
                action,
                reward,
                next_obs: next.clone(),
                terminated,
                truncated,
            });
            obs = next;
            if self.env_steps as usize >= hyper.learning_starts {
                for _ in 0..hyper.gradient_steps {
                    let batch = self.buffer.sample(hyper.batch_size, &mut self.learn_rng);
                    let stats = match self.agent.gradient_step(&batch, &mut self.learn_rng) {
                        Ok(s) => s,
                        Err(e) => return Err(self.diverged(e)),
                    };
                    q_sum += stats.q_loss;
                    q_n += 1;
                    if let Some(p) = stats.pi_loss {
                        pi_sum += p;
                        pi_n += 1;
                    }
                }
            }
            if terminated || truncated {
                break;
            }
        }
        let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
        let report = EpisodeReport {
            episode: self.episodes,
            ret,
            q_loss: mean(q_sum, q_n),
            pi_loss: mean(pi_sum, pi_n),
            env_steps: self.env_steps,
            eval_return: None,
        };
        self.curve.push(report.ret, report.q_loss, report.pi_loss);
        self.episodes += 1;
        Ok(Some(report))
    }

    /// Trains until `total_steps` environment steps have been taken in
    /// total (counting steps from before a resume).
    pub fn train<E, F>(&mut self, env: &mut E, total_steps: u64, eval: EvalSchedule, mut on_episode: F) -> Result<(), TrainError>
    where
        E: Environment,
        F: FnMut(&EpisodeReport, &Trainer),
    {
        if env.obs_dim() != self.agent.obs_dim || env.action_dim() != self.agent.act_dim {
            return Err(TrainError::Config(format!(
                "environment has obs/action widths {}/{}, agent expects {}/{}",
                env.obs_dim(),
                env.action_dim(),
                self.agent.obs_dim,
                self.agent.act_dim
            )));
        }
        while self.env_steps < total_steps {
            let Some(mut report) = self.run_episode(env, total_steps - self.env_steps)? else {
                break;
            };
            if eval.every > 0 && self.episodes.is_multiple_of(eval.every) {
                let seeds = self.eval_seeds(eval.episodes);
                let r = evaluate(&self.agent.actor, env, &seeds)?;
                report.eval_return = Some(r);
                if self.best.as_ref().is_none_or(|b| r > b.eval_return) {
                    self.best = Some(BestPolicy { actor: self.agent.actor.clone(), eval_return: r, episode: report.episode });
                }
                info!("episode {} eval return {:.6}", report.episode, r);
            }
            if report.episode % 10 == 0 {
                info!(
                    "episode {} return {:.6} q_loss {:.3e} pi_loss {:.3e}",
                    report.episode, report.ret, report.q_loss, report.pi_loss
                );
            } else {
                debug!("episode {} return {:.6}", report.episode, report.ret);
            }
            on_episode(&report, self);
        }
        Ok(())
    }
}

/// Trains a fresh agent for `total_steps` environment steps.
pub fn train<E: Environment>(
    env: &mut E,
    hyper: SACHyper,
    total_steps: u64,
    seed: u64,
) -> Result<(TrainedPolicy, LearningCurve), TrainError> {
    let mut t = Trainer::new(env.obs_dim(), env.action_dim(), hyper, seed)?;
    t.train(env, total_steps, EvalSchedule::default(), |_, _| {})?;
    Ok((t.policy(), t.curve.clone()))
}
