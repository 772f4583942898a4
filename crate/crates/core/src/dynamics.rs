//! Semi-classical quadrature dynamics of a damped, thermally driven
//! oscillator network with phase-modulated feedback on its leaves.
//!
//! Time is measured in units of `1/Omega` where `Omega` is the base
//! frequency; one period is [`TAU`].
//!
//! For each node `j` the vector field is
//!
//! ```text
//! dq_j/dt = -(gamma/2) q_j + Omega_j p_j
//! dp_j/dt = -(gamma/2) p_j - Omega_j q_j + lambda * sum_{k ~ j} q_k + [j leaf] 2 eta_j(t) q_j
//! ```
//!
//! plus additive white noise of strength `sqrt(gamma (n_th + 1/2))` on every
//! quadrature.
//!
//! # Integration scheme
//!
//! Each step splits the field into the local damped rotation, which is
//! integrated exactly, and the coupling plus feedback force, which is
//! applied as an explicit Euler kick on the momenta:
//!
//! ```text
//! v' = v + dt * K(t, v)            (K acts on p only)
//! v_next = exp(L dt) v' + g sqrt(dt) xi
//! ```
//!
//! The scheme is first order like plain Euler-Maruyama and identical to it
//! in the additive noise term. Because the kick and the rotation are each
//! exact Hamiltonian flows, the closed system does not pick up the secular
//! energy growth of an explicit Euler rotation.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::OscillatorNetwork;

/// One period of the base oscillator in units of `1/Omega`.
pub const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite value in component {index} at t = {t}")]
    BlowUp { index: usize, t: f64, state: Vec<f64> },
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("interval end {t_end} precedes current time {t}")]
    InvalidInterval { t: f64, t_end: f64 },
}

/// Quadratures `[q_1, p_1, q_2, p_2, ...]` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureState {
    pub v: Vec<f64>,
    pub t: f64,
}

impl QuadratureState {
    pub fn zeros(n_nodes: usize) -> Self {
        Self { v: vec![0.0; 2 * n_nodes], t: 0.0 }
    }

    /// Thermal state with `<q^2> = <p^2> = n_th + 1/2` on every node.
    pub fn thermal<R: Rng + ?Sized>(rng: &mut R, n_nodes: usize, n_th: f64) -> Self {
        let normal = Normal::new(0.0, (n_th + 0.5).sqrt()).expect("n_th >= 0");
        Self {
            v: (0..2 * n_nodes).map(|_| normal.sample(rng)).collect(),
            t: 0.0,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.v.len() / 2
    }

    /// Quadratures of zero-based node `j`.
    pub fn node(&self, j: usize) -> (f64, f64) {
        (self.v[2 * j], self.v[2 * j + 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathParams {
    pub gamma: f64,
    pub n_th: f64,
    pub sigma_m: f64,
}

impl BathParams {
    pub fn is_valid(&self) -> bool {
        [self.gamma, self.n_th, self.sigma_m]
            .iter()
            .all(|x| x.is_finite() && *x >= 0.0)
    }

    /// Standard deviation of the noise per unit `sqrt(dt)`.
    pub fn diffusion(&self) -> f64 {
        (self.gamma * (self.n_th + 0.5)).sqrt()
    }
}

/// Parametric drive `eta cos(2 Omega (t - t_origin) + phi)` on each leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackDrive {
    pub eta: f64,
    /// One phase per leaf, in the order of [`OscillatorNetwork::leaves`].
    pub phases: Vec<f64>,
    pub base_freq: f64,
    pub t_origin: f64,
}

impl FeedbackDrive {
    pub fn new(eta: f64, n_leaves: usize) -> Self {
        Self { eta, phases: vec![0.0; n_leaves], base_freq: 1.0, t_origin: 0.0 }
    }

    /// Installs new phases and restarts the modulation clock at `t`.
    pub fn kick(&mut self, phases: &[f64], t: f64) {
        self.phases.clear();
        self.phases.extend_from_slice(phases);
        self.t_origin = t;
    }
}

pub fn feedback_strength(t: f64, drive: &FeedbackDrive, leaf_index: usize) -> f64 {
    drive.eta * (2.0 * drive.base_freq * (t - drive.t_origin) + drive.phases[leaf_index]).cos()
}

/// Deterministic part of the equations of motion.
pub fn drift(
    state: &QuadratureState,
    net: &OscillatorNetwork,
    bath: &BathParams,
    drive: &FeedbackDrive,
) -> Vec<f64> {
    let n = net.n_nodes();
    assert_eq!(state.v.len(), 2 * n, "state length does not match network");
    assert_eq!(drive.phases.len(), net.leaves().len(), "one phase per leaf");
    let half_gamma = 0.5 * bath.gamma;
    let mut f = vec![0.0; 2 * n];
    for j in 0..n {
        let (q, p) = state.node(j);
        let w = net.frequencies()[j];
        f[2 * j] = -half_gamma * q + w * p;
        f[2 * j + 1] = -half_gamma * p - w * q + force(state, net, drive, j, state.t);
    }
    f
}

/// Coupling plus feedback force on `p_j`.
#[inline]
fn force(state: &QuadratureState, net: &OscillatorNetwork, drive: &FeedbackDrive, j: usize, t: f64) -> f64 {
    let lambda = net.coupling();
    let mut f = 0.0;
    if lambda != 0.0 {
        f += lambda * net.neighbours(j).iter().map(|&k| state.v[2 * k]).sum::<f64>();
    }
    if let Some(slot) = net.leaf_slot(j) {
        f += 2.0 * feedback_strength(t, drive, slot) * state.v[2 * j];
    }
    f
}

/// Precomputed per-node propagator for a fixed step size.
#[derive(Debug, Clone)]
pub struct Stepper {
    dt: f64,
    // (damping * cos, damping * sin) per node
    rotation: Vec<(f64, f64)>,
    noise: f64,
    kick: Vec<f64>,
}

impl Stepper {
    pub fn new(net: &OscillatorNetwork, bath: &BathParams, dt: f64) -> Result<Self, DynamicsError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DynamicsError::InvalidStep(dt));
        }
        let damping = (-0.5 * bath.gamma * dt).exp();
        let rotation = net
            .frequencies()
            .iter()
            .map(|w| {
                let (s, c) = (w * dt).sin_cos();
                (damping * c, damping * s)
            })
            .collect();
        Ok(Self {
            dt,
            rotation,
            noise: bath.diffusion() * dt.sqrt(),
            kick: vec![0.0; net.n_nodes()],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `state` by one step in place.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        state: &mut QuadratureState,
        net: &OscillatorNetwork,
        drive: &FeedbackDrive,
        rng: &mut R,
    ) -> Result<(), DynamicsError> {
        let n = net.n_nodes();
        assert_eq!(state.v.len(), 2 * n, "state length does not match network");
        for j in 0..n {
            self.kick[j] = force(state, net, drive, j, state.t);
        }
        for j in 0..n {
            let q = state.v[2 * j];
            let p = state.v[2 * j + 1] + self.dt * self.kick[j];
            let (c, s) = self.rotation[j];
            state.v[2 * j] = c * q + s * p;
            state.v[2 * j + 1] = -s * q + c * p;
        }
        if self.noise != 0.0 {
            for x in state.v.iter_mut() {
                let xi: f64 = StandardNormal.sample(rng);
                *x += self.noise * xi;
            }
        }
        state.t += self.dt;
        check_finite(state)
    }
}

fn check_finite(state: &QuadratureState) -> Result<(), DynamicsError> {
    match state.v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(index) => Err(DynamicsError::BlowUp { index, t: state.t, state: state.v.clone() }),
    }
}

pub fn euler_maruyama_step<R: Rng + ?Sized>(
    state: &QuadratureState,
    net: &OscillatorNetwork,
    bath: &BathParams,
    drive: &FeedbackDrive,
    dt: f64,
    rng: &mut R,
) -> Result<QuadratureState, DynamicsError> {
    let mut next = state.clone();
    Stepper::new(net, bath, dt)?.step(&mut next, net, drive, rng)?;
    Ok(next)
}

/// Number of full steps of size `dt` in `span` and the length of the final
/// shortened step (zero when `span` is a whole multiple of `dt`).
pub fn interval_plan(span: f64, dt: f64) -> (usize, f64) {
    if span <= 0.0 {
        return (0, 0.0);
    }
    let ratio = span / dt;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
        return (nearest as usize, 0.0);
    }
    let full = ratio.floor();
    (full as usize, span - full * dt)
}

/// Steps `state` up to exactly `t_end`.
pub fn integrate_interval<R: Rng + ?Sized>(
    state: &mut QuadratureState,
    net: &OscillatorNetwork,
    bath: &BathParams,
    drive: &FeedbackDrive,
    t_end: f64,
    dt: f64,
    rng: &mut R,
) -> Result<(), DynamicsError> {
    let mut stepper = Stepper::new(net, bath, dt)?;
    integrate_with(&mut stepper, state, net, bath, drive, t_end, rng)
}

/// As [`integrate_interval`] with a prepared stepper.
pub fn integrate_with<R: Rng + ?Sized>(
    stepper: &mut Stepper,
    state: &mut QuadratureState,
    net: &OscillatorNetwork,
    bath: &BathParams,
    drive: &FeedbackDrive,
    t_end: f64,
    rng: &mut R,
) -> Result<(), DynamicsError> {
    if t_end < state.t {
        return Err(DynamicsError::InvalidInterval { t: state.t, t_end });
    }
    let (full, tail) = interval_plan(t_end - state.t, stepper.dt());
    for _ in 0..full {
        stepper.step(state, net, drive, rng)?;
    }
    if tail > 0.0 {
        Stepper::new(net, bath, tail)?.step(state, net, drive, rng)?;
    }
    state.t = t_end;
    Ok(())
}

/// Noisy copy of the quadratures; `state` is untouched.
pub fn measure<R: Rng + ?Sized>(state: &QuadratureState, bath: &BathParams, rng: &mut R) -> Vec<f64> {
    if bath.sigma_m == 0.0 {
        return state.v.clone();
    }
    state
        .v
        .iter()
        .map(|x| {
            let e: f64 = StandardNormal.sample(rng);
            x + bath.sigma_m * e
        })
        .collect()
}

/// `n_j = (q_j^2 + p_j^2) / 2` for a flat quadrature vector.
pub fn energies_of(v: &[f64]) -> Vec<f64> {
    v.chunks_exact(2).map(|c| 0.5 * (c[0] * c[0] + c[1] * c[1])).collect()
}

pub fn energies(state: &QuadratureState) -> Vec<f64> {
    energies_of(&state.v)
}

/// Classical network energy `sum_j Omega_j n_j - lambda sum_edges q_a q_b`,
/// conserved by the closed (`gamma = eta = 0`) equations of motion.
pub fn network_energy(state: &QuadratureState, net: &OscillatorNetwork) -> f64 {
    let local: f64 = energies(state)
        .iter()
        .zip(net.frequencies())
        .map(|(n, w)| w * n)
        .sum();
    let bonds: f64 = net
        .edges()
        .iter()
        .map(|&(a, b)| state.v[2 * (a - 1)] * state.v[2 * (b - 1)])
        .sum();
    local - net.coupling() * bonds
}
