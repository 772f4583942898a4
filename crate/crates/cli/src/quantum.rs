use std::fs::File;
use std::io::BufWriter;

use clap::Args;
use log::info;
use rayon::prelude::*;

use domino::csvio::{write_bands, write_quantum, write_summary, BandRow, SummaryRow};
use domino::metrics::iqr;
use domino::qtraj::{
    quantum_episode, AnalyticQuantum, FixedQuantum, PolicyQuantum, QuantumConfig, QuantumController, QuantumSeries,
    RandomQuantum,
};
use domino::rng::{derive_seed, stream, StreamTag};
use domino::sac::TrainedPolicy;

use crate::args::{ensure_dir, CommonArgs, ControllerArgs, ControllerKind, ExperimentFile, QuantumArgs};
use crate::error::{csv_error, CliError};
use crate::plot::{Plot, Series};
use crate::simulate::load_policy;
use crate::{thread_pool, write_json};

#[derive(Debug, Clone, Args)]
pub struct QuantumCmdArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub controller: ControllerArgs,
    #[command(flatten)]
    pub quantum: QuantumArgs,
    /// Probe times (in base periods) for the occupancy IQRs.
    #[arg(long, value_delimiter = ',', default_value = "5")]
    pub probes: Vec<f64>,
    /// Skip the per-trajectory CSVs.
    #[arg(long)]
    pub no_trajectories: bool,
}

fn one(cfg: &QuantumConfig, kind: ControllerKind, phase: f64, policy: Option<&TrainedPolicy>, seed: u64) -> Result<QuantumSeries, CliError> {
    let mut ctrl: Box<dyn QuantumController> = match kind {
        ControllerKind::Analytic => Box::new(AnalyticQuantum::new()),
        ControllerKind::Random => Box::new(RandomQuantum(stream(seed, 0, StreamTag::Policy))),
        ControllerKind::FixedPhase => Box::new(FixedQuantum(phase)),
        ControllerKind::Trained => {
            let p = policy.expect("policy loaded for trained controller").clone();
            Box::new(PolicyQuantum(move |obs: &[f64]| p.act(obs)))
        }
    };
    Ok(quantum_episode(cfg, ctrl.as_mut(), seed)?)
}

pub fn run(args: QuantumCmdArgs) -> Result<(), CliError> {
    let c = &args.controller;
    if c.trajectories == 0 {
        return Err(CliError::Config("--trajectories must be at least 1".into()));
    }
    let file = ExperimentFile::load(args.common.config.as_deref())?;
    let cfg = args.quantum.apply(file.quantum)?;
    let policy = match c.controller {
        ControllerKind::Trained => {
            let p = load_policy(c.checkpoint.as_ref(), c.final_policy)?;
            if p.obs_dim() != 3 || p.action_dim() != 1 {
                return Err(CliError::Config(format!(
                    "checkpoint policy maps {} observations to {} actions; quantum runs need 3 to 1",
                    p.obs_dim(),
                    p.action_dim()
                )));
            }
            Some(p)
        }
        _ => None,
    };
    let out = &args.common.out;
    ensure_dir(out)?;
    write_json(&out.join("quantum_config.json"), &cfg)?;

    info!("running {} quantum trajectories (cutoff {}, n0 {})", c.trajectories, cfg.cutoff, cfg.n0);
    let seed = args.common.seed;
    let runs: Vec<QuantumSeries> = thread_pool(args.common.workers)?.install(|| {
        (0..c.trajectories as u64)
            .into_par_iter()
            .map(|k| one(&cfg, c.controller, c.phase, policy.as_ref(), derive_seed(seed, k)))
            .collect::<Result<_, _>>()
    })?;

    if !args.no_trajectories {
        let dir = out.join("quantum");
        ensure_dir(&dir)?;
        for (k, r) in runs.iter().enumerate() {
            let path = dir.join(format!("traj_{k:05}.csv"));
            let f = File::create(&path).map(BufWriter::new).map_err(|e| CliError::io(&path, e))?;
            write_quantum(f, &r.rows).map_err(|e| csv_error(&path, e))?;
        }
    }

    let bands: Vec<BandRow> = (0..runs[0].rows.len())
        .map(|i| BandRow {
            t: runs[0].rows[i].t,
            bands: vec![iqr(&runs.iter().map(|r| r.rows[i].n_expect).collect::<Vec<_>>())],
        })
        .collect();
    let path = out.join("ensemble.csv");
    let f = File::create(&path).map(BufWriter::new).map_err(|e| CliError::io(&path, e))?;
    write_bands(f, 1, &bands).map_err(|e| csv_error(&path, e))?;

    let m = runs.len();
    let period = std::f64::consts::TAU / cfg.omega;
    let mut summary = Vec::new();
    for &p in &args.probes {
        let i = ((p / cfg.kick_interval).round() as usize).min(bands.len() - 1);
        summary.push(SummaryRow::new(format!("n_at_{p}tau"), 1, bands[i].bands[0], m));
    }
    summary.push(SummaryRow::new("n_final", 1, bands.last().unwrap().bands[0], m));
    let mean_final = runs.iter().map(|r| r.rows.last().unwrap().n_expect).sum::<f64>() / m as f64;
    let returns: Vec<f64> = runs.iter().map(|r| r.rewards.iter().sum()).collect();
    summary.push(SummaryRow::new("return", 1, iqr(&returns), m));
    let path = out.join("summary.csv");
    let f = File::create(&path).map(BufWriter::new).map_err(|e| CliError::io(&path, e))?;
    write_summary(f, &summary).map_err(|e| csv_error(&path, e))?;
    info!("final <n>: median {:.4e}, mean {:.4e}", summary[summary.len() - 2].median, mean_final);

    if args.common.plot {
        let plot = Plot {
            title: format!("{:?} controller, {m} quantum trajectories", c.controller),
            x_label: "t / tau".into(),
            y_label: "<n>".into(),
            log_y: true,
            series: vec![Series {
                name: "median <n>".into(),
                points: bands.iter().map(|b| (b.t / period, b.bands[0].median)).collect(),
            }],
        };
        let path = out.join("ensemble.svg");
        std::fs::write(&path, plot.to_svg()).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}
