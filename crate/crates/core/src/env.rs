//! Episodic cooling environment.
//!
//! `reset` draws a thermal network state; every `step` installs one phase
//! per leaf, integrates one kick interval and returns the noisy, normalised
//! quadratures together with a reward computed from the noisy energies.
//! The noiseless energies are reported separately in [`StepInfo`].

use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    energies, energies_of, integrate_with, measure, BathParams, DynamicsError, FeedbackDrive,
    QuadratureState, Stepper, TAU,
};
use crate::rewards::{RewardError, RewardKind, RewardSpec};
use crate::rng::{stream, StreamTag};
use crate::topology::{decode_pruefer, sample_frequencies, OscillatorNetwork, TopologyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("episode finished; call reset")]
    EpisodeFinished,
    #[error("no active episode; call reset")]
    NoEpisode,
    #[error("action has {got} entries, expected {expected}")]
    BadAction { expected: usize, got: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Where the network topology comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NetworkSource {
    /// `n` uncoupled oscillators.
    Independent { n: usize },
    /// Explicit one-based edge list.
    Preset { n_nodes: usize, edges: Vec<[usize; 2]> },
    /// Pruefer sequence of a tree on `sequence.len() + 2` nodes.
    Pruefer { sequence: Vec<usize> },
}

impl NetworkSource {
    pub fn n_nodes(&self) -> usize {
        match self {
            Self::Independent { n } => *n,
            Self::Preset { n_nodes, .. } => *n_nodes,
            Self::Pruefer { sequence } => sequence.len() + 2,
        }
    }

    pub(crate) fn edges(&self) -> Result<Vec<(usize, usize)>, TopologyError> {
        match self {
            Self::Independent { .. } => Ok(Vec::new()),
            Self::Preset { edges, .. } => Ok(edges.iter().map(|&[a, b]| (a, b)).collect()),
            Self::Pruefer { sequence } => decode_pruefer(sequence, sequence.len() + 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FrequencyMode {
    /// The same frequencies every episode.
    Fixed { values: Vec<f64> },
    /// Fresh `Normal(base, spread^2)` frequencies every episode.
    Sampled { base: f64, spread: f64 },
}

/// Everything that defines an episode. Times (`kick_interval`, `dt`) are in
/// units of the base period `tau = 2 pi / Omega`; frequencies, `eta` and
/// `coupling` in units of `Omega`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub network: NetworkSource,
    pub frequencies: FrequencyMode,
    pub eta: f64,
    pub coupling: f64,
    pub bath: BathParams,
    pub kick_interval: f64,
    pub horizon: usize,
    pub dt: f64,
    pub reward: RewardSpec,
    /// Divisor applied to measured quadratures. `None` selects
    /// `sqrt(2 (n_th + 1/2))`.
    pub obs_normalization: Option<f64>,
}

impl Default for EpisodeConfig {
    /// Single oscillator with the base parameters of the uncoupled study.
    fn default() -> Self {
        Self {
            network: NetworkSource::Independent { n: 1 },
            frequencies: FrequencyMode::Sampled { base: 1.0, spread: 0.1 },
            eta: 0.5,
            coupling: 0.0,
            bath: BathParams { gamma: 1e-6, n_th: 1e4, sigma_m: 0.1 },
            kick_interval: 0.1,
            horizon: 50,
            dt: 1e-3,
            reward: RewardSpec::uniform(RewardKind::Difference, 1, -2.0, 1.0),
            obs_normalization: None,
        }
    }
}

impl EpisodeConfig {
    pub fn n_nodes(&self) -> usize {
        self.network.n_nodes()
    }

    pub fn normalization(&self) -> f64 {
        self.obs_normalization
            .unwrap_or_else(|| (2.0 * (self.bath.n_th + 0.5)).sqrt())
    }

    /// Kick interval in units of `1/Omega`.
    pub fn kick_time(&self) -> f64 {
        self.kick_interval * TAU
    }

    /// Sets the network size and resizes per-node reward targets by
    /// repeating the first entry.
    pub fn with_network(mut self, network: NetworkSource) -> Self {
        let n = network.n_nodes();
        self.network = network;
        let (mu, sigma) = (self.reward.mu[0], self.reward.sigma[0]);
        self.reward.mu = vec![mu; n];
        self.reward.sigma = vec![sigma; n];
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let err = |m: String| Err(EnvError::Config(m));
        let n = self.n_nodes();
        if n == 0 {
            return err("network has no nodes".into());
        }
        if self.horizon == 0 {
            return err("horizon must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return err(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.kick_interval >= self.dt && self.kick_interval.is_finite()) {
            return err(format!("kick_interval {} must be >= dt {}", self.kick_interval, self.dt));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return err(format!("eta must be non-negative, got {}", self.eta));
        }
        if !self.bath.is_valid() {
            return err("bath parameters must be finite and non-negative".into());
        }
        if let Some(s) = self.obs_normalization {
            if !(s.is_finite() && s > 0.0) {
                return err(format!("obs_normalization must be positive, got {s}"));
            }
        }
        match &self.frequencies {
            FrequencyMode::Fixed { values } if values.len() != n => {
                return err(format!("{} fixed frequencies for {n} nodes", values.len()))
            }
            FrequencyMode::Sampled { base, spread } if !(*base > 0.0 && *spread >= 0.0) => {
                return err("sampled frequencies need base > 0 and spread >= 0".into())
            }
            _ => {}
        }
        self.reward.validate(n)?;
        // topology check with placeholder frequencies
        OscillatorNetwork::new(n, self.network.edges()?, vec![1.0; n], self.coupling)?;
        Ok(())
    }

    fn build_network(&self, rng: &mut ChaCha8Rng) -> Result<OscillatorNetwork, EnvError> {
        let n = self.n_nodes();
        let freqs = match &self.frequencies {
            FrequencyMode::Fixed { values } => values.clone(),
            FrequencyMode::Sampled { base, spread } => sample_frequencies(rng, *base, *spread, n),
        };
        Ok(OscillatorNetwork::new(n, self.network.edges()?, freqs, self.coupling)?)
    }
}

/// Noiseless diagnostics that accompany every observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub energies: Vec<f64>,
    pub quadratures: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

/// Maps a raw action in `[-1, 1]` (clipped) to a phase in `[-pi, pi]`.
pub fn action_to_phase(raw: f64) -> f64 {
    PI * raw.clamp(-1.0, 1.0)
}

pub fn phase_to_action(phi: f64) -> f64 {
    (phi / PI).clamp(-1.0, 1.0)
}

/// Minimal interface the learner needs from an environment.
pub trait Environment {
    type Error: std::error::Error + Send + Sync + 'static;

    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, Self::Error>;
    /// Returns `(next_obs, reward, terminated, truncated)`.
    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64, bool, bool), Self::Error>;
}

struct Episode {
    net: OscillatorNetwork,
    state: QuadratureState,
    drive: FeedbackDrive,
    stepper: Stepper,
    dyn_rng: ChaCha8Rng,
    meas_rng: ChaCha8Rng,
    prev_energies: Vec<f64>,
    steps: usize,
}

pub struct CoolingEnv {
    config: EpisodeConfig,
    n_leaves: usize,
    norm: f64,
    episode: Option<Episode>,
}

impl CoolingEnv {
    pub fn new(config: EpisodeConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let n = config.n_nodes();
        let n_leaves = OscillatorNetwork::new(n, config.network.edges()?, vec![1.0; n], config.coupling)?
            .leaves()
            .len();
        let norm = config.normalization();
        Ok(Self { config, n_leaves, norm, episode: None })
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn n_nodes(&self) -> usize {
        self.config.n_nodes()
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn normalization(&self) -> f64 {
        self.norm
    }

    /// Network of the current episode.
    pub fn network(&self) -> Option<&OscillatorNetwork> {
        self.episode.as_ref().map(|e| &e.net)
    }

    pub fn state(&self) -> Option<&QuadratureState> {
        self.episode.as_ref().map(|e| &e.state)
    }

    pub fn steps_taken(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.steps)
    }

    pub fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        let mut init = stream(seed, 0, StreamTag::Init);
        let net = self.config.build_network(&mut init)?;
        let state = QuadratureState::thermal(&mut init, net.n_nodes(), self.config.bath.n_th);
        let mut meas_rng = stream(seed, 0, StreamTag::Measurement);
        let measured = measure(&state, &self.config.bath, &mut meas_rng);
        let stepper = Stepper::new(&net, &self.config.bath, self.config.dt * TAU)?;
        let obs = measured.iter().map(|x| x / self.norm).collect();
        self.episode = Some(Episode {
            drive: FeedbackDrive::new(self.config.eta, net.leaves().len()),
            prev_energies: energies_of(&measured),
            net,
            state,
            stepper,
            dyn_rng: stream(seed, 0, StreamTag::Dynamics),
            meas_rng,
            steps: 0,
        });
        Ok(obs)
    }

    /// Applies raw actions in `[-1, 1]`, one per leaf.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if action.len() != self.n_leaves {
            return Err(EnvError::BadAction { expected: self.n_leaves, got: action.len() });
        }
        let phases: Vec<f64> = action.iter().map(|&a| action_to_phase(a)).collect();
        self.step_phases(&phases)
    }

    /// Applies phases directly (radians, one per leaf).
    pub fn step_phases(&mut self, phases: &[f64]) -> Result<StepResult, EnvError> {
        let config = &self.config;
        let ep = self.episode.as_mut().ok_or(EnvError::NoEpisode)?;
        if ep.steps >= config.horizon {
            return Err(EnvError::EpisodeFinished);
        }
        if phases.len() != ep.drive.phases.len() {
            return Err(EnvError::BadAction { expected: ep.drive.phases.len(), got: phases.len() });
        }
        ep.drive.kick(phases, ep.state.t);
        let t_end = (ep.steps + 1) as f64 * config.kick_interval * TAU;
        integrate_with(
            &mut ep.stepper,
            &mut ep.state,
            &ep.net,
            &config.bath,
            &ep.drive,
            t_end,
            &mut ep.dyn_rng,
        )?;
        ep.steps += 1;

        let measured = measure(&ep.state, &config.bath, &mut ep.meas_rng);
        let measured_energies = energies_of(&measured);
        let reward = config.reward.evaluate(&measured_energies, &ep.prev_energies)?;
        ep.prev_energies = measured_energies;
        Ok(StepResult {
            obs: measured.iter().map(|x| x / self.norm).collect(),
            reward,
            terminated: false,
            truncated: ep.steps == config.horizon,
            info: StepInfo {
                energies: energies(&ep.state),
                quadratures: ep.state.v.clone(),
                t: ep.state.t,
            },
        })
    }
}

impl Environment for CoolingEnv {
    type Error = EnvError;

    fn obs_dim(&self) -> usize {
        2 * self.n_nodes()
    }

    fn action_dim(&self) -> usize {
        self.n_leaves
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        CoolingEnv::reset(self, seed)
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64, bool, bool), EnvError> {
        let r = CoolingEnv::step(self, action)?;
        Ok((r.obs, r.reward, r.terminated, r.truncated))
    }
}

/// `M` independent environments stepped together. Errors are reported per
/// index and never abort the other episodes.
pub struct BatchEnv {
    envs: Vec<CoolingEnv>,
}

impl BatchEnv {
    pub fn new(configs: Vec<EpisodeConfig>) -> Result<Self, EnvError> {
        if configs.is_empty() {
            return Err(EnvError::Config("batch needs at least one episode".into()));
        }
        Ok(Self { envs: configs.into_iter().map(CoolingEnv::new).collect::<Result<_, _>>()? })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[CoolingEnv] {
        &self.envs
    }

    pub fn reset(&mut self, seeds: &[u64]) -> Vec<Result<Vec<f64>, EnvError>> {
        assert_eq!(seeds.len(), self.envs.len(), "one seed per episode");
        self.envs
            .par_iter_mut()
            .zip(seeds.par_iter())
            .map(|(env, &seed)| env.reset(seed))
            .collect()
    }

    pub fn step(&mut self, actions: &[Vec<f64>]) -> Vec<Result<StepResult, EnvError>> {
        assert_eq!(actions.len(), self.envs.len(), "one action per episode");
        self.envs
            .par_iter_mut()
            .zip(actions.par_iter())
            .map(|(env, a)| env.step(a))
            .collect()
    }
}
