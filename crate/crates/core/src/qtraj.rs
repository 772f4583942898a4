//! Quantum-jump (Monte Carlo wave function) trajectories of a single
//! parametrically driven oscillator in a truncated number basis.
//!
//! Units: `hbar = 1`, times in `1/Omega`. Between jumps the state follows
//! `H_eff = Omega b^dag b - eta(t) q^2 - (i/2) sum C^dag C`, integrated with
//! a classical fourth-order Runge-Kutta step and renormalised. Jumps are
//! decided once per step with probability `<C^dag C> dt`.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::wrap_phase;
use crate::dynamics::{interval_plan, TAU};
use crate::env::{action_to_phase, Environment};
use crate::rewards::{RewardError, RewardKind, RewardSpec};
use crate::rng::{stream, StreamTag};

/// Jump probability per step above which the first-order jump rule is
/// considered unreliable.
pub const MAX_JUMP_PROBABILITY: f64 = 0.1;
/// Allowed population of the two highest basis states.
pub const LEAKAGE_LIMIT: f64 = 1e-3;
/// Lower bound applied to `<n>` before taking logarithms for rewards.
pub const N_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("Fock cutoff {cutoff} too small: top-level population {leakage:.3e} at t = {t:.4} (raise the cutoff)")]
    CutoffTooSmall { cutoff: usize, leakage: f64, t: f64 },
    #[error("time step too large: jump probability {dp:.3} per step at t = {t:.4} (reduce dt below {suggest:.3e})")]
    StepTooLarge { dp: f64, t: f64, suggest: f64 },
    #[error("invalid quantum configuration: {0}")]
    Config(String),
    #[error("episode finished")]
    EpisodeFinished,
    #[error("step before reset")]
    NoEpisode,
    #[error("expected {expected} action(s), got {got}")]
    BadAction { expected: usize, got: usize },
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Dense square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub dim: usize,
    pub data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![Complex64::new(0.0, 0.0); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for k in 0..dim {
            m.data[k * dim + k] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.dim + c]
    }

    pub fn mul(&self, other: &Self) -> Self {
        let d = self.dim;
        let mut out = Self::zeros(d);
        for r in 0..d {
            for k in 0..d {
                let a = self.data[r * d + k];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..d {
                    out.data[r * d + c] += a * other.data[k * d + c];
                }
            }
        }
        out
    }

    pub fn dagger(&self) -> Self {
        let d = self.dim;
        let mut out = Self::zeros(d);
        for r in 0..d {
            for c in 0..d {
                out.data[c * d + r] = self.data[r * d + c].conj();
            }
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { dim: self.dim, data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let d = self.dim;
        (0..d).map(|r| (0..d).map(|c| self.data[r * d + c] * v[c]).sum()).collect()
    }

    /// `<v|M|v>`.
    pub fn expect(&self, v: &[Complex64]) -> Complex64 {
        v.iter().zip(self.apply(v)).map(|(a, b)| a.conj() * b).sum()
    }
}

/// Ladder, quadrature and jump operators for cutoff `dim`, built by
/// truncated matrix products, with the band coefficients used for stepping.
#[derive(Debug, Clone)]
pub struct QuantumOps {
    pub dim: usize,
    pub gamma: f64,
    pub n_th: f64,
    pub b: CMatrix,
    pub bd: CMatrix,
    pub q: CMatrix,
    pub p: CMatrix,
    pub q2: CMatrix,
    pub p2: CMatrix,
    /// `(qp + pq) / 2`.
    pub qp_sym: CMatrix,
    pub number: CMatrix,
    pub c_plus: CMatrix,
    pub c_minus: CMatrix,
    // q^2 main diagonal and second superdiagonal (real, symmetric)
    q2_diag: Vec<f64>,
    q2_off: Vec<f64>,
    // <k|C+^dag C+|k> and <k|C-^dag C-|k>
    up_rate: Vec<f64>,
    down_rate: Vec<f64>,
}

pub fn build_operators(dim: usize, gamma: f64, n_th: f64) -> QuantumOps {
    assert!(dim >= 4, "cutoff must be at least 4");
    let mut b = CMatrix::zeros(dim);
    for k in 1..dim {
        b.data[(k - 1) * dim + k] = Complex64::new((k as f64).sqrt(), 0.0);
    }
    let bd = b.dagger();
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let q = b.add(&bd).scale(Complex64::new(r2, 0.0));
    let p = bd.sub(&b).scale(Complex64::new(0.0, r2));
    let q2 = q.mul(&q);
    let p2 = p.mul(&p);
    let qp_sym = q.mul(&p).add(&p.mul(&q)).scale(Complex64::new(0.5, 0.0));
    let number = bd.mul(&b);
    let c_plus = bd.scale(Complex64::new((gamma * n_th).sqrt(), 0.0));
    let c_minus = b.scale(Complex64::new((gamma * (n_th + 1.0)).sqrt(), 0.0));
    let up = c_plus.dagger().mul(&c_plus);
    let down = c_minus.dagger().mul(&c_minus);
    QuantumOps {
        dim,
        gamma,
        n_th,
        q2_diag: (0..dim).map(|k| q2.get(k, k).re).collect(),
        q2_off: (0..dim - 2).map(|k| q2.get(k, k + 2).re).collect(),
        up_rate: (0..dim).map(|k| up.get(k, k).re).collect(),
        down_rate: (0..dim).map(|k| down.get(k, k).re).collect(),
        b,
        bd,
        q,
        p,
        q2,
        p2,
        qp_sym,
        number,
        c_plus,
        c_minus,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FockState {
    pub amplitudes: Vec<Complex64>,
}

impl FockState {
    pub fn fock(dim: usize, n: usize) -> Self {
        assert!(n < dim, "level {n} outside cutoff {dim}");
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[n] = Complex64::new(1.0, 0.0);
        Self { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sqr().sqrt();
        for a in &mut self.amplitudes {
            *a /= n;
        }
    }

    /// Population of the two highest levels.
    pub fn leakage(&self) -> f64 {
        let d = self.dim();
        self.amplitudes[d - 1].norm_sqr() + self.amplitudes[d - 2].norm_sqr()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Jump {
    /// Emission into the bath (`C-`).
    Down,
    /// Absorption from the bath (`C+`).
    Up,
}

/// Second moments of a normalised state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub q2: f64,
    pub p2: f64,
    pub qp: f64,
    /// `(q2 + p2 - 1) / 2`.
    pub n: f64,
}

pub fn expectations(state: &FockState, ops: &QuantumOps) -> Moments {
    debug_assert!((state.norm_sqr() - 1.0).abs() < 1e-8, "state not normalised");
    let a = &state.amplitudes;
    let d = ops.dim;
    let mut q2 = 0.0;
    let mut b2 = Complex64::new(0.0, 0.0);
    for k in 0..d {
        q2 += ops.q2_diag[k] * a[k].norm_sqr();
        if k + 2 < d {
            // <k|b^2|k+2> = sqrt((k+1)(k+2))
            let amp = a[k].conj() * a[k + 2];
            q2 += 2.0 * ops.q2_off[k] * amp.re;
            b2 += amp * ((k + 1) as f64 * (k + 2) as f64).sqrt();
        }
    }
    // p^2 shares the diagonal of q^2 and flips the sign of the b^2 terms
    let diag: f64 = (0..d).map(|k| ops.q2_diag[k] * a[k].norm_sqr()).sum();
    let p2 = 2.0 * diag - q2;
    let qp = b2.im;
    Moments { q2, p2, qp, n: (q2 + p2 - 1.0) / 2.0 }
}

/// `<b^dag b>` directly from the populations.
pub fn number_expectation(state: &FockState) -> f64 {
    state.amplitudes.iter().enumerate().map(|(k, a)| k as f64 * a.norm_sqr()).sum()
}

/// `-i H_eff psi` with `H_eff` as in the module docs.
fn rhs(ops: &QuantumOps, omega: f64, eta_t: f64, psi: &[Complex64], out: &mut [Complex64]) {
    let d = ops.dim;
    for k in 0..d {
        let decay = 0.5 * (ops.up_rate[k] + ops.down_rate[k]);
        let mut h = Complex64::new(omega * k as f64 - eta_t * ops.q2_diag[k], -decay) * psi[k];
        if eta_t != 0.0 {
            if k + 2 < d {
                h -= eta_t * ops.q2_off[k] * psi[k + 2];
            }
            if k >= 2 {
                h -= eta_t * ops.q2_off[k - 2] * psi[k - 2];
            }
        }
        out[k] = Complex64::new(h.im, -h.re);
    }
}

/// Parametric drive `eta cos(2 omega (t - t0) + phi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantumDrive {
    pub eta: f64,
    pub omega: f64,
    pub phi: f64,
    pub t_origin: f64,
}

impl QuantumDrive {
    pub fn strength(&self, t: f64) -> f64 {
        self.eta * (2.0 * self.omega * (t - self.t_origin) + self.phi).cos()
    }
}

/// One step of length `dt` starting at time `t`. Returns the jump that
/// fired, if any.
pub fn mcwf_step<R: Rng + ?Sized>(
    state: &mut FockState,
    ops: &QuantumOps,
    drive: &QuantumDrive,
    t: f64,
    dt: f64,
    rng: &mut R,
) -> Result<Option<Jump>, QuantumError> {
    let a = &state.amplitudes;
    let mut dp_up = 0.0;
    let mut dp_down = 0.0;
    for k in 0..ops.dim {
        let w = a[k].norm_sqr();
        dp_up += ops.up_rate[k] * w;
        dp_down += ops.down_rate[k] * w;
    }
    dp_up *= dt;
    dp_down *= dt;
    let dp = dp_up + dp_down;
    if dp >= MAX_JUMP_PROBABILITY {
        return Err(QuantumError::StepTooLarge { dp, t, suggest: dt * MAX_JUMP_PROBABILITY / dp / 2.0 });
    }
    let r: f64 = rng.gen();
    let jump = if r < dp {
        let d = ops.dim;
        let mut next = vec![Complex64::new(0.0, 0.0); d];
        let kind = if r < dp_up {
            for k in 0..d - 1 {
                next[k + 1] = a[k] * ((k + 1) as f64).sqrt();
            }
            Jump::Up
        } else {
            for k in 1..d {
                next[k - 1] = a[k] * (k as f64).sqrt();
            }
            Jump::Down
        };
        state.amplitudes = next;
        Some(kind)
    } else {
        rk4(state, ops, drive, t, dt);
        None
    };
    state.normalize();
    let leakage = state.leakage();
    if leakage >= LEAKAGE_LIMIT {
        return Err(QuantumError::CutoffTooSmall { cutoff: ops.dim, leakage, t: t + dt });
    }
    Ok(jump)
}

fn rk4(state: &mut FockState, ops: &QuantumOps, drive: &QuantumDrive, t: f64, dt: f64) {
    let d = ops.dim;
    let psi = state.amplitudes.clone();
    let mut k1 = vec![Complex64::new(0.0, 0.0); d];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();
    let eta0 = drive.strength(t);
    let eta_mid = drive.strength(t + 0.5 * dt);
    let eta1 = drive.strength(t + dt);
    rhs(ops, drive.omega, eta0, &psi, &mut k1);
    for k in 0..d {
        tmp[k] = psi[k] + 0.5 * dt * k1[k];
    }
    rhs(ops, drive.omega, eta_mid, &tmp, &mut k2);
    for k in 0..d {
        tmp[k] = psi[k] + 0.5 * dt * k2[k];
    }
    rhs(ops, drive.omega, eta_mid, &tmp, &mut k3);
    for k in 0..d {
        tmp[k] = psi[k] + dt * k3[k];
    }
    rhs(ops, drive.omega, eta1, &tmp, &mut k4);
    for k in 0..d {
        state.amplitudes[k] = psi[k] + dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantumConfig {
    pub cutoff: usize,
    /// Initial Fock level.
    pub n0: usize,
    pub omega: f64,
    pub eta: f64,
    pub gamma: f64,
    pub n_th: f64,
    /// In units of `tau = 2 pi / omega`.
    pub kick_interval: f64,
    pub horizon: usize,
    /// Integration step in units of `tau`.
    pub dt: f64,
    pub reward: RewardSpec,
}

impl Default for QuantumConfig {
    fn default() -> Self {
        Self {
            cutoff: 80,
            n0: 12,
            omega: 1.0,
            eta: 0.5,
            gamma: 1e-6,
            n_th: 1e4,
            kick_interval: 0.1,
            horizon: 50,
            dt: 1e-4,
            reward: RewardSpec::uniform(RewardKind::Gaussian, 1, -2.0, 1.0),
        }
    }
}

impl QuantumConfig {
    pub fn validate(&self) -> Result<(), QuantumError> {
        let bad = |m: &str| Err(QuantumError::Config(m.into()));
        if self.cutoff < 4 {
            return bad("cutoff must be at least 4");
        }
        if self.n0 + 2 >= self.cutoff {
            return bad("initial level must lie below the two guard levels of the cutoff");
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return bad("omega must be positive");
        }
        if !(self.eta.is_finite() && self.gamma >= 0.0 && self.gamma.is_finite() && self.n_th >= 0.0 && self.n_th.is_finite()) {
            return bad("eta, gamma and n_th must be finite; gamma and n_th non-negative");
        }
        if !(self.dt > 0.0 && self.kick_interval >= self.dt && self.kick_interval.is_finite()) {
            return bad("need 0 < dt <= kick_interval");
        }
        self.reward.validate(1)?;
        Ok(())
    }

    fn time_unit(&self) -> f64 {
        TAU / self.omega
    }
}

/// Chooses the phase of the next kick from the current moments.
pub trait QuantumController {
    fn phase(&mut self, m: &Moments) -> f64;
}

/// Moment-based phase rule. Under free rotation `<qp>_sym` oscillates as
/// `R cos(2 omega s + theta)` with `R cos theta = <qp>_sym` and
/// `R sin theta = (<q^2> - <p^2>) / 2`, and the drive changes `<n>` at rate
/// `2 eta(t) <qp>_sym`, so the drive is placed in antiphase. A state without
/// phase structure (`R` near zero) keeps the previous phase.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AnalyticQuantum {
    last: f64,
}

impl AnalyticQuantum {
    pub fn new() -> Self {
        Self::default()
    }
}

impl QuantumController for AnalyticQuantum {
    fn phase(&mut self, m: &Moments) -> f64 {
        let u = 0.5 * (m.q2 - m.p2);
        if u.hypot(m.qp) > 1e-12 * (m.q2 + m.p2) {
            self.last = wrap_phase(u.atan2(m.qp) + std::f64::consts::PI);
        }
        self.last
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedQuantum(pub f64);

impl QuantumController for FixedQuantum {
    fn phase(&mut self, _: &Moments) -> f64 {
        wrap_phase(self.0)
    }
}

pub struct RandomQuantum(pub ChaCha8Rng);

impl QuantumController for RandomQuantum {
    fn phase(&mut self, _: &Moments) -> f64 {
        self.0.gen_range(-std::f64::consts::PI..=std::f64::consts::PI)
    }
}

/// Adapts any observation-to-raw-action map (for example a trained
/// policy) to a controller.
pub struct PolicyQuantum<F: FnMut(&[f64]) -> Vec<f64>>(pub F);

impl<F: FnMut(&[f64]) -> Vec<f64>> QuantumController for PolicyQuantum<F> {
    fn phase(&mut self, m: &Moments) -> f64 {
        action_to_phase((self.0)(&observation(m))[0])
    }
}

/// Agent observation: `log10 <q^2>`, `log10 <p^2>` and a signed
/// logarithm of `<qp>_sym`.
pub fn observation(m: &Moments) -> Vec<f64> {
    vec![m.q2.max(N_FLOOR).log10(), m.p2.max(N_FLOOR).log10(), m.qp.signum() * m.qp.abs().ln_1p() / std::f64::consts::LN_10]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumRow {
    pub t: f64,
    pub n_expect: f64,
    pub q2: f64,
    pub p2: f64,
    pub qp: f64,
    pub jumps_so_far: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumSeries {
    /// Row `k` is taken just before kick `k`; the last row ends the episode.
    pub rows: Vec<QuantumRow>,
    pub rewards: Vec<f64>,
}

/// A running quantum trajectory with kick-level control.
pub struct QuantumTrajectory {
    config: QuantumConfig,
    ops: QuantumOps,
    state: FockState,
    t: f64,
    steps: usize,
    jumps: u64,
    rng: ChaCha8Rng,
    prev_n: f64,
}

impl QuantumTrajectory {
    pub fn new(config: QuantumConfig, seed: u64) -> Result<Self, QuantumError> {
        config.validate()?;
        let ops = build_operators(config.cutoff, config.gamma, config.n_th);
        let state = FockState::fock(config.cutoff, config.n0);
        Ok(Self {
            ops,
            state,
            t: 0.0,
            steps: 0,
            jumps: 0,
            rng: stream(seed, 0, StreamTag::Jumps),
            prev_n: config.n0 as f64,
            config,
        })
    }

    pub fn moments(&self) -> Moments {
        expectations(&self.state, &self.ops)
    }

    pub fn state(&self) -> &FockState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn row(&self) -> QuantumRow {
        let m = self.moments();
        QuantumRow { t: self.t, n_expect: m.n, q2: m.q2, p2: m.p2, qp: m.qp, jumps_so_far: self.jumps }
    }

    /// Evolves without kicks (drive off) for `span`.
    pub fn evolve_free(&mut self, span: f64) -> Result<(), QuantumError> {
        let drive = QuantumDrive { eta: 0.0, omega: self.config.omega, phi: 0.0, t_origin: self.t };
        self.evolve(span, &drive)
    }

    fn evolve(&mut self, span: f64, drive: &QuantumDrive) -> Result<(), QuantumError> {
        let dt = self.config.dt * self.config.time_unit();
        let t_end = self.t + span;
        let (full, tail) = interval_plan(span, dt);
        for _ in 0..full {
            if mcwf_step(&mut self.state, &self.ops, drive, self.t, dt, &mut self.rng)?.is_some() {
                self.jumps += 1;
            }
            self.t += dt;
        }
        if tail > 0.0 && mcwf_step(&mut self.state, &self.ops, drive, self.t, tail, &mut self.rng)?.is_some() {
            self.jumps += 1;
        }
        self.t = t_end;
        Ok(())
    }

    /// Applies one kick with phase `phi` and integrates to the next kick.
    /// Returns the reward evaluated on the resulting `<n>`.
    pub fn kick(&mut self, phi: f64) -> Result<f64, QuantumError> {
        if self.steps >= self.config.horizon {
            return Err(QuantumError::EpisodeFinished);
        }
        let drive = QuantumDrive { eta: self.config.eta, omega: self.config.omega, phi, t_origin: self.t };
        let span = self.config.kick_interval * self.config.time_unit();
        // land on the kick grid exactly
        let target = (self.steps + 1) as f64 * span;
        self.evolve(target - self.t, &drive)?;
        self.t = target;
        self.steps += 1;
        let n = self.moments().n.max(N_FLOOR);
        let r = self.config.reward.evaluate(&[n], &[self.prev_n])?;
        self.prev_n = n;
        Ok(r)
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn finished(&self) -> bool {
        self.steps >= self.config.horizon
    }
}

/// Runs a full episode under `controller`.
pub fn quantum_episode(
    config: &QuantumConfig,
    controller: &mut dyn QuantumController,
    seed: u64,
) -> Result<QuantumSeries, QuantumError> {
    let mut traj = QuantumTrajectory::new(config.clone(), seed)?;
    let mut rows = vec![traj.row()];
    let mut rewards = Vec::with_capacity(config.horizon);
    while !traj.finished() {
        let phi = controller.phase(&traj.moments());
        rewards.push(traj.kick(phi)?);
        rows.push(traj.row());
    }
    Ok(QuantumSeries { rows, rewards })
}

/// Environment view of a quantum trajectory for agents.
pub struct QuantumEnv {
    config: QuantumConfig,
    traj: Option<QuantumTrajectory>,
}

impl QuantumEnv {
    pub fn new(config: QuantumConfig) -> Result<Self, QuantumError> {
        config.validate()?;
        Ok(Self { config, traj: None })
    }

    pub fn trajectory(&self) -> Option<&QuantumTrajectory> {
        self.traj.as_ref()
    }
}

impl Environment for QuantumEnv {
    type Error = QuantumError;

    fn obs_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, QuantumError> {
        let traj = QuantumTrajectory::new(self.config.clone(), seed)?;
        let obs = observation(&traj.moments());
        self.traj = Some(traj);
        Ok(obs)
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64, bool, bool), QuantumError> {
        let traj = self.traj.as_mut().ok_or(QuantumError::NoEpisode)?;
        if action.len() != 1 {
            return Err(QuantumError::BadAction { expected: 1, got: action.len() });
        }
        let r = traj.kick(action_to_phase(action[0]))?;
        Ok((observation(&traj.moments()), r, false, traj.finished()))
    }
}
