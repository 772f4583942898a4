//! Ensemble runs of the classical environment under a fixed controller.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::control::baseline_policy;
use crate::csvio::{BandRow, SummaryRow, TrajectoryRow};
use crate::dynamics::{energies, TAU};
use crate::env::{action_to_phase, CoolingEnv, EnvError, EpisodeConfig};
use crate::metrics::{iqr, time_to_threshold, IQRSummary};
use crate::rng::{derive_seed, stream, StreamTag};
use crate::sac::TrainedPolicy;

/// Chooses one phase per leaf from the latest observation.
pub trait PhaseController {
    /// Called after every reset with the trajectory seed.
    fn reset(&mut self, _seed: u64) {}
    fn phases(&mut self, env: &CoolingEnv, obs: &[f64]) -> Vec<f64>;
}

/// Analytical per-leaf kicks computed from the measured quadratures.
#[derive(Debug, Clone, Default)]
pub struct AnalyticController {
    previous: Vec<f64>,
}

impl PhaseController for AnalyticController {
    fn reset(&mut self, _seed: u64) {
        self.previous.clear();
    }

    fn phases(&mut self, env: &CoolingEnv, obs: &[f64]) -> Vec<f64> {
        let net = env.network().expect("controller used before reset");
        let norm = env.normalization();
        let measured: Vec<f64> = obs.iter().map(|x| x * norm).collect();
        let kicks = baseline_policy(&measured, net, env.config().eta, &self.previous);
        self.previous = kicks.iter().map(|k| k.phi).collect();
        self.previous.clone()
    }
}

/// Independent uniform phases in `[-pi, pi)`, seeded per trajectory.
#[derive(Debug, Clone)]
pub struct RandomController {
    rng: ChaCha8Rng,
}

impl Default for RandomController {
    fn default() -> Self {
        Self { rng: stream(0, 0, StreamTag::Policy) }
    }
}

impl PhaseController for RandomController {
    fn reset(&mut self, seed: u64) {
        self.rng = stream(seed, 0, StreamTag::Policy);
    }

    fn phases(&mut self, env: &CoolingEnv, _obs: &[f64]) -> Vec<f64> {
        (0..env.n_leaves()).map(|_| self.rng.gen_range(-PI..PI)).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedPhaseController(pub f64);

impl PhaseController for FixedPhaseController {
    fn phases(&mut self, env: &CoolingEnv, _obs: &[f64]) -> Vec<f64> {
        vec![self.0; env.n_leaves()]
    }
}

/// Deterministic action of a trained actor.
#[derive(Debug, Clone)]
pub struct TrainedController(pub TrainedPolicy);

impl PhaseController for TrainedController {
    fn phases(&mut self, _env: &CoolingEnv, obs: &[f64]) -> Vec<f64> {
        self.0.act(obs).into_iter().map(action_to_phase).collect()
    }
}

/// Noiseless record of one trajectory: the state at reset followed by the
/// state after every kick interval. `t` is in units of `1/Omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutcome {
    pub seed: u64,
    pub rows: Vec<TrajectoryRow>,
    pub episode_return: f64,
}

impl TrajectoryOutcome {
    pub fn n_nodes(&self) -> usize {
        self.rows[0].energies.len()
    }

    /// `(t in tau, n_node)` series of one node (zero-based).
    pub fn energy_series(&self, node: usize) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.t / TAU, r.energies[node])).collect()
    }
}

pub fn run_trajectory(
    config: &EpisodeConfig,
    controller: &mut dyn PhaseController,
    seed: u64,
) -> Result<TrajectoryOutcome, EnvError> {
    let mut env = CoolingEnv::new(config.clone())?;
    let mut obs = env.reset(seed)?;
    controller.reset(seed);
    let s = env.state().expect("state after reset");
    let mut rows = vec![TrajectoryRow { t: s.t, quadratures: s.v.clone(), energies: energies(s) }];
    let mut ret = 0.0;
    for _ in 0..config.horizon {
        let phases = controller.phases(&env, &obs);
        let r = env.step_phases(&phases)?;
        ret += r.reward;
        obs = r.obs;
        rows.push(TrajectoryRow { t: r.info.t, quadratures: r.info.quadratures, energies: r.info.energies });
    }
    Ok(TrajectoryOutcome { seed, rows, episode_return: ret })
}

/// Runs `m` trajectories with seeds `derive_seed(master_seed, k)` on the
/// current rayon pool. Results are ordered by `k`.
pub fn run_ensemble<F, C>(
    config: &EpisodeConfig,
    make_controller: F,
    master_seed: u64,
    m: usize,
) -> Result<Vec<TrajectoryOutcome>, EnvError>
where
    F: Fn() -> C + Sync,
    C: PhaseController,
{
    config.validate()?;
    (0..m as u64)
        .into_par_iter()
        .map(|k| run_trajectory(config, &mut make_controller(), derive_seed(master_seed, k)))
        .collect()
}

/// Energy of `node` at the recorded sample closest to `t_tau`.
pub fn energy_at(outcome: &TrajectoryOutcome, node: usize, t_tau: f64) -> f64 {
    let t = t_tau * TAU;
    let row = outcome
        .rows
        .iter()
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
        .expect("trajectory has rows");
    row.energies[node]
}

/// IQR of every node's energy at each sample index across the ensemble.
/// All outcomes must come from the same configuration.
pub fn energy_bands(outcomes: &[TrajectoryOutcome]) -> Vec<BandRow> {
    assert!(!outcomes.is_empty(), "bands of an empty ensemble");
    let n_nodes = outcomes[0].n_nodes();
    (0..outcomes[0].rows.len())
        .map(|i| BandRow {
            t: outcomes[0].rows[i].t,
            bands: (0..n_nodes)
                .map(|j| iqr(&outcomes.iter().map(|o| o.rows[i].energies[j]).collect::<Vec<_>>()))
                .collect(),
        })
        .collect()
}

/// Per-node IQRs of the energy at each probe time (in `tau`), of the final
/// energy and of the time to reach `threshold`. Trajectories that never
/// cross are left out of the crossing-time quantiles; if none crosses the
/// quantiles are NaN.
pub fn summarize(outcomes: &[TrajectoryOutcome], probes_tau: &[f64], threshold: f64) -> Vec<SummaryRow> {
    assert!(!outcomes.is_empty(), "summary of an empty ensemble");
    let n_nodes = outcomes[0].n_nodes();
    let m = outcomes.len();
    let mut rows = Vec::new();
    for node in 0..n_nodes {
        for &p in probes_tau {
            let vals: Vec<f64> = outcomes.iter().map(|o| energy_at(o, node, p)).collect();
            rows.push(SummaryRow::new(format!("n_at_{p}tau"), node + 1, iqr(&vals), m));
        }
        let last: Vec<f64> = outcomes.iter().map(|o| o.rows.last().unwrap().energies[node]).collect();
        rows.push(SummaryRow::new("n_final", node + 1, iqr(&last), m));
        let crossed: Vec<f64> = outcomes
            .iter()
            .filter_map(|o| time_to_threshold(&o.energy_series(node), threshold))
            .collect();
        let s = if crossed.is_empty() {
            IQRSummary { q25: f64::NAN, median: f64::NAN, q75: f64::NAN }
        } else {
            iqr(&crossed)
        };
        rows.push(SummaryRow::new("time_to_threshold_tau", node + 1, s, crossed.len()));
    }
    rows
}
