use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use domino::env::{EpisodeConfig, FrequencyMode, NetworkSource};
use domino::qtraj::QuantumConfig;
use domino::rewards::RewardKind;
use domino::sac::SACHyper;
use domino::topology::NetworkFile;

use crate::error::CliError;

/// Contents of a `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentFile {
    pub episode: EpisodeConfig,
    pub quantum: QuantumConfig,
    pub sac: Option<SACHyper>,
}

impl ExperimentFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerKind {
    Analytic,
    Random,
    FixedPhase,
    Trained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RewardArg {
    Gaussian,
    Difference,
    Inverse,
}

impl From<RewardArg> for RewardKind {
    fn from(r: RewardArg) -> Self {
        match r {
            RewardArg::Gaussian => RewardKind::Gaussian,
            RewardArg::Difference => RewardKind::Difference,
            RewardArg::Inverse => RewardKind::Inverse,
        }
    }
}

/// Options shared by every command.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON experiment file with optional `episode`, `quantum` and `sac` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Also write SVG line plots next to the CSVs.
    #[arg(long)]
    pub plot: bool,
}

/// Which controller drives the phase kicks.
#[derive(Debug, Clone, Args)]
pub struct ControllerArgs {
    #[arg(long, value_enum, default_value = "analytic")]
    pub controller: ControllerKind,
    /// Checkpoint for `--controller trained`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Use the final rather than the best evaluated policy of the checkpoint.
    #[arg(long)]
    pub final_policy: bool,
    /// Phase in radians for `--controller fixed-phase`.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub phase: f64,
    /// Number of trajectories.
    #[arg(long, default_value_t = 100)]
    pub trajectories: usize,
}

/// Overrides of the classical episode configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct EnvArgs {
    /// Number of independent oscillators.
    #[arg(long)]
    pub n: Option<usize>,
    /// Pruefer sequence of a tree network, e.g. `1,1`.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["n", "network"])]
    pub pruefer: Option<Vec<usize>>,
    /// JSON network description (`n_nodes`, `edges`, optional `frequencies`, `coupling`).
    #[arg(long, conflicts_with = "n")]
    pub network: Option<PathBuf>,
    /// Nearest-neighbour coupling in units of Omega.
    #[arg(long)]
    pub coupling: Option<f64>,
    /// Drive strength in units of Omega.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Bath damping rate in units of Omega.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Thermal bath occupancy.
    #[arg(long = "n-th")]
    pub n_th: Option<f64>,
    /// Measurement noise standard deviation.
    #[arg(long = "sigma-m")]
    pub sigma_m: Option<f64>,
    /// Frequency standard deviation of sampled networks.
    #[arg(long)]
    pub freq_spread: Option<f64>,
    /// Kicks per episode.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// In units of the base period.
    #[arg(long = "kick-interval")]
    pub kick_interval: Option<f64>,
    /// Integration step in units of the base period.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Reward variant.
    #[arg(long, value_enum)]
    pub reward: Option<RewardArg>,
    /// Target exponent (target occupancy 10^mu), all nodes.
    #[arg(long, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    /// Reward width in decades.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Multiplier applied to every reward.
    #[arg(long = "reward-scale")]
    pub reward_scale: Option<f64>,
}

impl EnvArgs {
    pub fn apply(&self, mut c: EpisodeConfig) -> Result<EpisodeConfig, CliError> {
        if let Some(n) = self.n {
            c = c.with_network(NetworkSource::Independent { n });
        }
        if let Some(seq) = &self.pruefer {
            c = c.with_network(NetworkSource::Pruefer { sequence: seq.clone() });
        }
        if let Some(path) = &self.network {
            let file = NetworkFile::load(path).map_err(|e| CliError::Config(e.to_string()))?;
            c = c.with_network(NetworkSource::Preset { n_nodes: file.n_nodes, edges: file.edges.clone() });
            c.coupling = file.coupling;
            if let Some(f) = file.frequencies {
                c.frequencies = FrequencyMode::Fixed { values: f };
            }
        }
        let n = c.n_nodes();
        if let Some(s) = self.freq_spread {
            let base = match &c.frequencies {
                FrequencyMode::Sampled { base, .. } => *base,
                FrequencyMode::Fixed { .. } => 1.0,
            };
            c.frequencies = FrequencyMode::Sampled { base, spread: s };
        }
        set(&mut c.coupling, self.coupling);
        set(&mut c.eta, self.eta);
        set(&mut c.bath.gamma, self.gamma);
        set(&mut c.bath.n_th, self.n_th);
        set(&mut c.bath.sigma_m, self.sigma_m);
        set(&mut c.horizon, self.horizon);
        set(&mut c.kick_interval, self.kick_interval);
        set(&mut c.dt, self.dt);
        if let Some(k) = self.reward {
            c.reward.kind = k.into();
        }
        if let Some(mu) = self.mu {
            c.reward.mu = vec![mu; n];
        }
        if let Some(s) = self.sigma {
            c.reward.sigma = vec![s; n];
        }
        set(&mut c.reward.scale, self.reward_scale);
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }
}

/// Overrides of the quantum trajectory configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct QuantumArgs {
    /// Fock-space dimension.
    #[arg(long)]
    pub cutoff: Option<usize>,
    /// Initial Fock level.
    #[arg(long)]
    pub n0: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Thermal bath occupancy.
    #[arg(long = "n-th")]
    pub n_th: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// In units of the base period.
    #[arg(long = "kick-interval")]
    pub kick_interval: Option<f64>,
    /// Integration step in units of the base period.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Reward variant.
    #[arg(long, value_enum)]
    pub reward: Option<RewardArg>,
    #[arg(long, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    /// Reward width in decades.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Multiplier applied to every reward.
    #[arg(long = "reward-scale")]
    pub reward_scale: Option<f64>,
}

impl QuantumArgs {
    pub fn apply(&self, mut c: QuantumConfig) -> Result<QuantumConfig, CliError> {
        set(&mut c.cutoff, self.cutoff);
        set(&mut c.n0, self.n0);
        set(&mut c.eta, self.eta);
        set(&mut c.gamma, self.gamma);
        set(&mut c.n_th, self.n_th);
        set(&mut c.horizon, self.horizon);
        set(&mut c.kick_interval, self.kick_interval);
        set(&mut c.dt, self.dt);
        if let Some(k) = self.reward {
            c.reward.kind = k.into();
        }
        if let Some(mu) = self.mu {
            c.reward.mu = vec![mu];
        }
        if let Some(s) = self.sigma {
            c.reward.sigma = vec![s];
        }
        set(&mut c.reward.scale, self.reward_scale);
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }
}

/// Overrides of the learner settings.
#[derive(Debug, Clone, Default, Args)]
pub struct SacArgs {
    #[arg(long)]
    pub actor_width: Option<usize>,
    #[arg(long)]
    pub critic_width: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub buffer_size: Option<usize>,
    /// Discount factor.
    #[arg(long)]
    pub discount: Option<f64>,
    /// Entropy temperature.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub policy_lr: Option<f64>,
    #[arg(long)]
    pub q_lr: Option<f64>,
    #[arg(long)]
    pub learning_starts: Option<usize>,
}

impl SacArgs {
    pub fn apply(&self, mut h: SACHyper) -> Result<SACHyper, CliError> {
        set(&mut h.actor_width, self.actor_width);
        set(&mut h.critic_width, self.critic_width);
        set(&mut h.hidden_layers, self.hidden_layers);
        set(&mut h.batch_size, self.batch_size);
        set(&mut h.buffer_size, self.buffer_size);
        set(&mut h.gamma, self.discount);
        set(&mut h.alpha, self.alpha);
        set(&mut h.policy_lr, self.policy_lr);
        set(&mut h.q_lr, self.q_lr);
        set(&mut h.learning_starts, self.learning_starts);
        h.validate().map_err(CliError::Config)?;
        Ok(h)
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Creates the output directory (and any parents).
pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}
