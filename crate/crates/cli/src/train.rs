use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use log::{info, warn};
use serde_json::json;

use domino::csvio::write_learning_curve;
use domino::env::{CoolingEnv, Environment};
use domino::qtraj::QuantumEnv;
use domino::sac::toy::BanditEnv;
use domino::sac::{Checkpoint, EvalSchedule, SACHyper, TrainError, Trainer};

use crate::args::{ensure_dir, CommonArgs, EnvArgs, ExperimentFile, QuantumArgs, SacArgs};
use crate::error::{checkpoint_error, csv_error, CliError};
use crate::plot::{Plot, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnvKind {
    /// Classical oscillator network.
    Cooling,
    /// Single oscillator simulated with quantum jump trajectories.
    Quantum,
    /// One-step bandit with optimum at action 0 (smoke test).
    Bandit,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub env: EnvArgs,
    #[command(flatten)]
    pub sac: SacArgs,
    #[arg(long, value_enum, default_value = "cooling")]
    pub env_kind: EnvKind,
    /// Total environment steps (episodes x horizon).
    #[arg(long, default_value_t = 15_000)]
    pub steps: u64,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Evaluate the deterministic policy every this many episodes (0: never).
    #[arg(long, default_value_t = 10)]
    pub eval_every: u64,
    #[arg(long, default_value_t = 5)]
    pub eval_episodes: usize,
    /// Save a checkpoint every this many episodes (0: only at the end).
    #[arg(long, default_value_t = 50)]
    pub checkpoint_every: u64,
    /// Fock cutoff for `--env-kind quantum`.
    #[arg(long)]
    pub cutoff: Option<usize>,
    /// Initial Fock level for `--env-kind quantum`.
    #[arg(long)]
    pub n0: Option<usize>,
}

impl TrainArgs {
    fn quantum_overrides(&self) -> QuantumArgs {
        let e = &self.env;
        QuantumArgs {
            cutoff: self.cutoff,
            n0: self.n0,
            eta: e.eta,
            gamma: e.gamma,
            n_th: e.n_th,
            horizon: e.horizon,
            kick_interval: e.kick_interval,
            dt: e.dt,
            reward: e.reward,
            mu: e.mu,
            sigma: e.sigma,
            reward_scale: e.reward_scale,
        }
    }
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let file = ExperimentFile::load(args.common.config.as_deref())?;
    ensure_dir(&args.common.out)?;
    match args.env_kind {
        EnvKind::Cooling => {
            let cfg = args.env.apply(file.episode)?;
            let n = cfg.n_nodes();
            let desc = json!({ "kind": "cooling", "config": cfg });
            let mut env = CoolingEnv::new(cfg)?;
            train_on(&args, &mut env, file.sac.unwrap_or_else(|| SACHyper::for_nodes(n)), desc)
        }
        EnvKind::Quantum => {
            let cfg = args.quantum_overrides().apply(file.quantum)?;
            let desc = json!({ "kind": "quantum", "config": cfg });
            let mut env = QuantumEnv::new(cfg)?;
            train_on(&args, &mut env, file.sac.unwrap_or_default(), desc)
        }
        EnvKind::Bandit => {
            let scale = args.env.reward_scale.unwrap_or(1.0);
            let mut env = BanditEnv { reward_scale: scale };
            train_on(&args, &mut env, file.sac.unwrap_or_default(), json!({ "kind": "bandit", "reward_scale": scale }))
        }
    }
}

fn save(cp: &mut Checkpoint, desc: &serde_json::Value, path: &Path) -> Result<(), CliError> {
    cp.env = desc.clone();
    cp.save(path).map_err(|e| checkpoint_error(path, e))
}

fn train_on<E: Environment>(
    args: &TrainArgs,
    env: &mut E,
    base: SACHyper,
    desc: serde_json::Value,
) -> Result<(), CliError> {
    let out = &args.common.out;
    let mut trainer = match &args.resume {
        Some(path) => {
            let cp = Checkpoint::load(path).map_err(|e| checkpoint_error(path, e))?;
            info!("resuming from {} at episode {} ({} env steps)", path.display(), cp.episodes, cp.env_steps);
            Trainer::from_checkpoint(cp).map_err(|e| checkpoint_error(path, e))?
        }
        None => {
            let hyper = args.sac.apply(base)?;
            Trainer::new(env.obs_dim(), env.action_dim(), hyper, args.common.seed)?
        }
    };
    let eval = EvalSchedule { every: args.eval_every, episodes: args.eval_episodes };
    let ckpt_path = out.join("checkpoint.json");
    let mut save_error = None;
    let result = trainer.train(env, args.steps, eval, |report, t| {
        let every = args.checkpoint_every;
        if every > 0 && (report.episode + 1) % every == 0 && save_error.is_none() {
            if let Err(e) = save(&mut t.checkpoint(true), &desc, &ckpt_path) {
                save_error = Some(e);
            }
        }
    });
    if let Some(e) = save_error {
        return Err(e);
    }
    if let Err(TrainError::Diverged { checkpoint, .. }) = &result {
        let path = out.join("checkpoint_diverged.json");
        let mut cp = (**checkpoint).clone();
        save(&mut cp, &desc, &path)?;
        warn!("wrote last finite state to {}", path.display());
    }
    result?;

    save(&mut trainer.checkpoint(true), &desc, &ckpt_path)?;
    let curve = trainer.curve();
    let path = out.join("learning_curve.csv");
    let f = File::create(&path).map(BufWriter::new).map_err(|e| CliError::io(&path, e))?;
    write_learning_curve(f, curve).map_err(|e| csv_error(&path, e))?;
    let r = curve.r_tilde();
    info!("finished {} episodes; mean return per 100 episodes: {r:?}", curve.episodes());
    if let Some(b) = trainer.best() {
        info!("best evaluated policy: episode {} return {:.6}", b.episode, b.eval_return);
    }

    if args.common.plot {
        let plot = Plot {
            title: "training returns".into(),
            x_label: "episode".into(),
            y_label: "return".into(),
            log_y: false,
            series: vec![
                Series { name: "episode".into(), points: curve.returns.iter().enumerate().map(|(i, &y)| (i as f64 + 1.0, y)).collect() },
                Series {
                    name: "100-episode mean".into(),
                    points: r.iter().enumerate().map(|(i, &y)| (100.0 * (i as f64 + 1.0), y)).collect(),
                },
            ],
        };
        let path = out.join("learning_curve.svg");
        std::fs::write(&path, plot.to_svg()).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}
