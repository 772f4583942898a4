use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;

use domino::csvio::{write_bands, write_summary, write_trajectory};
use domino::dynamics::TAU;
use domino::env::{CoolingEnv, EpisodeConfig};
use domino::sac::{Checkpoint, TrainedPolicy};
use domino::simulate::{
    energy_bands, run_ensemble, summarize, AnalyticController, FixedPhaseController, RandomController,
    TrainedController, TrajectoryOutcome,
};

use crate::args::{ensure_dir, CommonArgs, ControllerArgs, ControllerKind, EnvArgs, ExperimentFile};
use crate::error::{checkpoint_error, csv_error, CliError};
use crate::plot::{Plot, Series};
use crate::{thread_pool, write_json};

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub controller: ControllerArgs,
    #[command(flatten)]
    pub env: EnvArgs,
    /// Probe times (in base periods) for the energy IQRs.
    #[arg(long, value_delimiter = ',', default_value = "5")]
    pub probes: Vec<f64>,
    /// Occupancy that counts as cooled for the crossing-time summary.
    #[arg(long, default_value_t = 10.0)]
    pub threshold: f64,
    /// Skip the per-trajectory CSVs.
    #[arg(long)]
    pub no_trajectories: bool,
}

pub fn load_policy(path: Option<&PathBuf>, final_policy: bool) -> Result<TrainedPolicy, CliError> {
    let path = path.ok_or_else(|| CliError::Config("--controller trained needs --checkpoint".into()))?;
    let cp = Checkpoint::load(path).map_err(|e| checkpoint_error(path, e))?;
    Ok(if final_policy { cp.final_policy() } else { cp.best_policy() })
}

fn ensemble(args: &SimulateArgs, cfg: &EpisodeConfig) -> Result<Vec<TrajectoryOutcome>, CliError> {
    let c = &args.controller;
    let (seed, m) = (args.common.seed, c.trajectories);
    Ok(match c.controller {
        ControllerKind::Analytic => run_ensemble(cfg, AnalyticController::default, seed, m)?,
        ControllerKind::Random => run_ensemble(cfg, RandomController::default, seed, m)?,
        ControllerKind::FixedPhase => run_ensemble(cfg, || FixedPhaseController(c.phase), seed, m)?,
        ControllerKind::Trained => {
            let policy = load_policy(c.checkpoint.as_ref(), c.final_policy)?;
            let env = CoolingEnv::new(cfg.clone())?;
            if policy.obs_dim() != 2 * env.n_nodes() || policy.action_dim() != env.n_leaves() {
                return Err(CliError::Config(format!(
                    "checkpoint policy maps {} observations to {} actions; this network needs {} to {}",
                    policy.obs_dim(),
                    policy.action_dim(),
                    2 * env.n_nodes(),
                    env.n_leaves()
                )));
            }
            run_ensemble(cfg, || TrainedController(policy.clone()), seed, m)?
        }
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

pub fn run(args: SimulateArgs) -> Result<(), CliError> {
    if args.controller.trajectories == 0 {
        return Err(CliError::Config("--trajectories must be at least 1".into()));
    }
    let file = ExperimentFile::load(args.common.config.as_deref())?;
    let cfg = args.env.apply(file.episode)?;
    let out = &args.common.out;
    ensure_dir(out)?;
    write_json(&out.join("config.json"), &cfg)?;

    info!("simulating {} trajectories, controller {:?}", args.controller.trajectories, args.controller.controller);
    let outcomes = thread_pool(args.common.workers)?.install(|| ensemble(&args, &cfg))?;

    if !args.no_trajectories {
        let dir = out.join("trajectories");
        ensure_dir(&dir)?;
        for (k, o) in outcomes.iter().enumerate() {
            let path = dir.join(format!("traj_{k:05}.csv"));
            write_trajectory(create(&path)?, cfg.n_nodes(), &o.rows).map_err(|e| csv_error(&path, e))?;
        }
    }
    let bands = energy_bands(&outcomes);
    let path = out.join("ensemble.csv");
    write_bands(create(&path)?, cfg.n_nodes(), &bands).map_err(|e| csv_error(&path, e))?;
    let summary = summarize(&outcomes, &args.probes, args.threshold);
    let path = out.join("summary.csv");
    write_summary(create(&path)?, &summary).map_err(|e| csv_error(&path, e))?;
    for row in summary.iter().filter(|r| r.metric.starts_with("n_at")) {
        info!("{} node {}: median {:.4e} (IQR {:.4e} .. {:.4e})", row.metric, row.node, row.median, row.q25, row.q75);
    }

    if args.common.plot {
        let series = (0..cfg.n_nodes())
            .map(|j| Series {
                name: format!("node {} median", j + 1),
                points: bands.iter().map(|b| (b.t / TAU, b.bands[j].median)).collect(),
            })
            .collect();
        let plot = Plot {
            title: format!("{:?} controller, {} trajectories", args.controller.controller, outcomes.len()),
            x_label: "t / tau".into(),
            y_label: "n".into(),
            log_y: true,
            series,
        };
        let path = out.join("ensemble.svg");
        std::fs::write(&path, plot.to_svg()).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}
