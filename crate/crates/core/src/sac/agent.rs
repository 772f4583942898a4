//! Twin-critic soft actor-critic learner.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::MLPParams;
use super::policy::GaussianPolicy;
use super::replay::Batch;

/// A loss or gradient became non-finite; parameters are left untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("non-finite {0} loss")]
pub struct Diverged(pub &'static str);

fn all_finite(loss: f64, g: &[f64]) -> bool {
    loss.is_finite() && g.iter().all(|x| x.is_finite())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SACHyper {
    /// Discount factor.
    pub gamma: f64,
    /// Fixed entropy temperature.
    pub alpha: f64,
    pub policy_lr: f64,
    pub q_lr: f64,
    pub batch_size: usize,
    pub buffer_size: usize,
    /// Target-network averaging rate.
    pub rho: f64,
    pub gradient_steps: usize,
    /// Critic updates per actor update.
    pub policy_delay: usize,
    pub actor_width: usize,
    pub critic_width: usize,
    pub hidden_layers: usize,
    pub critic_layer_norm: bool,
    /// Environment steps of uniformly random actions before learning.
    pub learning_starts: usize,
}

impl Default for SACHyper {
    fn default() -> Self {
        Self::for_nodes(1)
    }
}

impl SACHyper {
    /// Reference settings for an `n`-node network.
    pub fn for_nodes(n: usize) -> Self {
        Self {
            gamma: 0.95,
            alpha: 0.01,
            policy_lr: if n <= 4 { 3e-4 } else { 1e-3 },
            q_lr: 1e-3,
            batch_size: 512,
            buffer_size: 1_000_000,
            rho: 0.005,
            gradient_steps: 2,
            policy_delay: 2,
            actor_width: 256,
            critic_width: 1024,
            hidden_layers: if n < 4 { 3 } else { 4 },
            critic_layer_norm: true,
            learning_starts: 100,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err("alpha must be non-negative".into());
        }
        if !pos(self.policy_lr) || !pos(self.q_lr) {
            return Err("learning rates must be positive".into());
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err("rho must lie in (0, 1]".into());
        }
        if self.batch_size == 0 || self.buffer_size == 0 || self.policy_delay == 0 {
            return Err("batch size, buffer size and policy delay must be positive".into());
        }
        if self.actor_width == 0 || self.critic_width == 0 || self.hidden_layers == 0 {
            return Err("network sizes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SACAgent {
    pub hyper: SACHyper,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub actor: GaussianPolicy,
    pub critics: [MLPParams; 2],
    pub targets: [MLPParams; 2],
    pub actor_opt: Adam,
    pub critic_opts: [Adam; 2],
    /// Critic updates performed so far.
    pub updates: u64,
}

/// Losses of one gradient step; the actor loss is absent on delayed steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub q_loss: f64,
    pub pi_loss: Option<f64>,
}

fn concat_rows(a: &[f64], a_w: usize, b: &[f64], b_w: usize, batch: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * (a_w + b_w));
    for r in 0..batch {
        out.extend_from_slice(&a[r * a_w..(r + 1) * a_w]);
        out.extend_from_slice(&b[r * b_w..(r + 1) * b_w]);
    }
    out
}

/// Mean squared error of `critic(obs, act)` against fixed targets `y`,
/// with its parameter gradient.
pub fn critic_loss(critic: &MLPParams, obs: &[f64], act: &[f64], y: &[f64], obs_dim: usize) -> (f64, Vec<f64>) {
    let batch = y.len();
    let act_dim = critic.input_dim() - obs_dim;
    let x = concat_rows(obs, obs_dim, act, act_dim, batch);
    let (q, cache) = critic.forward(&x, batch);
    let mut loss = 0.0;
    let mut dq = vec![0.0; batch];
    for i in 0..batch {
        let e = q[i] - y[i];
        loss += e * e;
        dq[i] = 2.0 * e / batch as f64;
    }
    let g = critic.backward(&cache, &dq, true, false).0.unwrap();
    (loss / batch as f64, g)
}

/// `mean(alpha log pi(a|s) - min_i Q_i(s, a))` for reparameterised actions
/// driven by `eps`, with the actor gradient. Critics are held fixed.
pub fn actor_loss(
    actor: &GaussianPolicy,
    critics: &[MLPParams; 2],
    obs: &[f64],
    eps: Vec<f64>,
    alpha: f64,
) -> (f64, Vec<f64>) {
    actor_loss_with(actor, obs, eps, alpha, |o, a, batch| twin_min(critics, o, a, batch))
}

/// Pointwise minimum of the twin critics and its action gradient.
fn twin_min(critics: &[MLPParams; 2], obs: &[f64], act: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
    let act_dim = act.len() / batch;
    let obs_dim = obs.len() / batch;
    let x = concat_rows(obs, obs_dim, act, act_dim, batch);
    let (q0, c0) = critics[0].forward(&x, batch);
    let (q1, c1) = critics[1].forward(&x, batch);
    let mut g0 = vec![0.0; batch];
    let mut g1 = vec![0.0; batch];
    let mut q = Vec::with_capacity(batch);
    for i in 0..batch {
        if q0[i] <= q1[i] {
            g0[i] = 1.0;
            q.push(q0[i]);
        } else {
            g1[i] = 1.0;
            q.push(q1[i]);
        }
    }
    let dx0 = critics[0].backward(&c0, &g0, false, true).1.unwrap();
    let dx1 = critics[1].backward(&c1, &g1, false, true).1.unwrap();
    let w = obs_dim + act_dim;
    let mut da = vec![0.0; batch * act_dim];
    for r in 0..batch {
        for k in 0..act_dim {
            da[r * act_dim + k] = dx0[r * w + obs_dim + k] + dx1[r * w + obs_dim + k];
        }
    }
    (q, da)
}

/// Policy loss against an arbitrary differentiable `q(obs, act, batch)`
/// returning values and action gradients.
pub fn actor_loss_with<F>(actor: &GaussianPolicy, obs: &[f64], eps: Vec<f64>, alpha: f64, q: F) -> (f64, Vec<f64>)
where
    F: Fn(&[f64], &[f64], usize) -> (Vec<f64>, Vec<f64>),
{
    let batch = obs.len() / actor.obs_dim();
    let s = actor.sample_with_noise(obs, batch, eps);
    let (qv, dq) = q(obs, &s.actions, batch);
    let inv_b = 1.0 / batch as f64;
    let loss: f64 = (0..batch).map(|i| alpha * s.log_prob[i] - qv[i]).sum::<f64>() * inv_b;
    let d_act: Vec<f64> = dq.iter().map(|g| -g * inv_b).collect();
    let d_lp = vec![alpha * inv_b; batch];
    (loss, actor.backward(&s, &d_act, &d_lp))
}

/// `target <- (1 - rho) target + rho online`.
pub fn soft_update(target: &mut [f64], online: &[f64], rho: f64) {
    assert_eq!(target.len(), online.len(), "parameter shapes differ");
    for (a, b) in target.iter_mut().zip(online) {
        *a = (1.0 - rho) * *a + rho * b;
    }
}

impl SACAgent {
    pub fn new(obs_dim: usize, act_dim: usize, hyper: SACHyper, rng: &mut ChaCha8Rng) -> Self {
        let actor = GaussianPolicy::new(obs_dim, act_dim, &vec![hyper.actor_width; hyper.hidden_layers], rng);
        let mut widths = vec![obs_dim + act_dim];
        widths.extend(std::iter::repeat_n(hyper.critic_width, hyper.hidden_layers));
        widths.push(1);
        let critics = [
            MLPParams::new(&widths, hyper.critic_layer_norm, rng),
            MLPParams::new(&widths, hyper.critic_layer_norm, rng),
        ];
        let targets = critics.clone();
        let actor_opt = Adam::new(actor.net.n_params(), hyper.policy_lr);
        let critic_opts = [Adam::new(critics[0].n_params(), hyper.q_lr), Adam::new(critics[1].n_params(), hyper.q_lr)];
        Self { hyper, obs_dim, act_dim, actor, critics, targets, actor_opt, critic_opts, updates: 0 }
    }

    /// Stochastic action for a single observation.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Vec<f64> {
        self.actor.sample(obs, 1, rng).actions
    }

    pub fn act_deterministic(&self, obs: &[f64]) -> Vec<f64> {
        self.actor.deterministic(obs, 1)
    }

    /// Soft Bellman targets `r + gamma (1 - d)(min Q' - alpha log pi)`.
    pub fn targets_for<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Vec<f64> {
        let n = batch.size;
        let next = self.actor.sample(&batch.next_obs, n, rng);
        let x = concat_rows(&batch.next_obs, self.obs_dim, &next.actions, self.act_dim, n);
        let q0 = self.targets[0].predict(&x, n);
        let q1 = self.targets[1].predict(&x, n);
        (0..n)
            .map(|i| {
                let soft = q0[i].min(q1[i]) - self.hyper.alpha * next.log_prob[i];
                let cont = if batch.terminated[i] { 0.0 } else { 1.0 };
                batch.rew[i] + self.hyper.gamma * cont * soft
            })
            .collect()
    }

    /// Both critics take one Adam step; returns their mean loss.
    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<f64, Diverged> {
        let y = self.targets_for(batch, rng);
        let (l0, g0) = critic_loss(&self.critics[0], &batch.obs, &batch.act, &y, self.obs_dim);
        let (l1, g1) = critic_loss(&self.critics[1], &batch.obs, &batch.act, &y, self.obs_dim);
        if !all_finite(l0, &g0) || !all_finite(l1, &g1) {
            return Err(Diverged("critic"));
        }
        self.critic_opts[0].step(&mut self.critics[0].data, &g0);
        self.critic_opts[1].step(&mut self.critics[1].data, &g1);
        self.updates += 1;
        Ok((l0 + l1) / 2.0)
    }

    pub fn actor_update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<f64, Diverged> {
        let eps: Vec<f64> = (0..batch.size * self.act_dim).map(|_| StandardNormal.sample(rng)).collect();
        let (loss, g) = actor_loss(&self.actor, &self.critics, &batch.obs, eps, self.hyper.alpha);
        if !all_finite(loss, &g) {
            return Err(Diverged("policy"));
        }
        self.actor_opt.step(&mut self.actor.net.data, &g);
        Ok(loss)
    }

    pub fn soft_update(&mut self) {
        for (t, c) in self.targets.iter_mut().zip(&self.critics) {
            soft_update(&mut t.data, &c.data, self.hyper.rho);
        }
    }

    /// Critic step, delayed actor step, then target averaging.
    pub fn gradient_step<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<UpdateStats, Diverged> {
        let q_loss = self.critic_update(batch, rng)?;
        let pi_loss = if self.updates.is_multiple_of(self.hyper.policy_delay as u64) {
            Some(self.actor_update(batch, rng)?)
        } else {
            None
        };
        self.soft_update();
        Ok(UpdateStats { q_loss, pi_loss })
    }

    pub fn is_finite(&self) -> bool {
        self.actor.net.is_finite() && self.critics.iter().all(MLPParams::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_hyper() -> SACHyper {
        SACHyper { actor_width: 16, critic_width: 24, hidden_layers: 2, batch_size: 8, ..SACHyper::for_nodes(1) }
    }

    fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn reference_settings() {
        let h = SACHyper::for_nodes(4);
        assert_eq!((h.policy_lr, h.hidden_layers), (3e-4, 4));
        let h = SACHyper::for_nodes(5);
        assert_eq!(h.policy_lr, 1e-3);
        let h = SACHyper::for_nodes(3);
        assert_eq!((h.hidden_layers, h.batch_size, h.gamma, h.alpha), (3, 512, 0.95, 0.01));
        assert!(h.validate().is_ok());
        assert!(SACHyper { gamma: 1.0, ..h }.validate().is_err());
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let agent = SACAgent::new(3, 2, small_hyper(), &mut rng);
        let b = 8;
        let obs = randn(&mut rng, b * 3);
        let act: Vec<f64> = randn(&mut rng, b * 2).iter().map(|x| x.tanh()).collect();
        let y = randn(&mut rng, b);
        let c = &agent.critics[0];
        let (_, g) = critic_loss(c, &obs, &act, &y, 3);
        let h = 1e-5;
        for _ in 0..32 {
            let d = randn(&mut rng, c.n_params());
            let (mut p, mut m) = (c.clone(), c.clone());
            for i in 0..d.len() {
                p.data[i] += h * d[i];
                m.data[i] -= h * d[i];
            }
            let fd = (critic_loss(&p, &obs, &act, &y, 3).0 - critic_loss(&m, &obs, &act, &y, 3).0) / (2.0 * h);
            let an: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            assert!(rel(fd, an) < 1e-4, "fd {fd} an {an}");
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let agent = SACAgent::new(3, 2, small_hyper(), &mut rng);
        let b = 8;
        let obs = randn(&mut rng, b * 3);
        let eps = randn(&mut rng, b * 2);
        let alpha = 0.3;
        let (_, g) = actor_loss(&agent.actor, &agent.critics, &obs, eps.clone(), alpha);
        let h = 1e-5;
        for _ in 0..32 {
            let d = randn(&mut rng, agent.actor.net.n_params());
            let (mut p, mut m) = (agent.actor.clone(), agent.actor.clone());
            for i in 0..d.len() {
                p.net.data[i] += h * d[i];
                m.net.data[i] -= h * d[i];
            }
            let lp = actor_loss(&p, &agent.critics, &obs, eps.clone(), alpha).0;
            let lm = actor_loss(&m, &agent.critics, &obs, eps.clone(), alpha).0;
            let fd = (lp - lm) / (2.0 * h);
            let an: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            assert!(rel(fd, an) < 1e-4, "fd {fd} an {an}");
        }
    }

    #[test]
    fn soft_update_moves_by_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = SACAgent::new(2, 1, small_hyper(), &mut rng);
        agent.critics[0].data.iter_mut().for_each(|x| *x += 1.0);
        let before = agent.targets[0].data.clone();
        agent.soft_update();
        for ((t, b), c) in agent.targets[0].data.iter().zip(&before).zip(&agent.critics[0].data) {
            assert!((t - (0.995 * b + 0.005 * c)).abs() < 1e-14);
        }
        // unchanged critic: target stays put
        for (t, c) in agent.targets[1].data.iter().zip(&agent.critics[1].data) {
            assert!((t - c).abs() < 1e-15);
        }
    }

    #[test]
    fn terminal_transitions_do_not_bootstrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let agent = SACAgent::new(2, 1, small_hyper(), &mut rng);
        let batch = Batch {
            size: 2,
            obs: vec![0.0; 4],
            act: vec![0.0; 2],
            rew: vec![0.7, 0.7],
            next_obs: vec![0.3, -0.2, 0.3, -0.2],
            terminated: vec![true, false],
        };
        let y = agent.targets_for(&batch, &mut rng);
        assert_eq!(y[0], 0.7);
        assert_ne!(y[1], 0.7);
    }

    #[test]
    fn actor_updates_are_delayed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut agent = SACAgent::new(2, 1, small_hyper(), &mut rng);
        let batch = Batch {
            size: 4,
            obs: randn(&mut rng, 8),
            act: vec![0.1, -0.2, 0.3, 0.0],
            rew: vec![1.0; 4],
            next_obs: randn(&mut rng, 8),
            terminated: vec![false; 4],
        };
        let s1 = agent.gradient_step(&batch, &mut rng).unwrap();
        let s2 = agent.gradient_step(&batch, &mut rng).unwrap();
        assert!(s1.pi_loss.is_none());
        assert!(s2.pi_loss.is_some());
        assert_eq!(agent.actor_opt.t, 1);
        assert_eq!(agent.critic_opts[0].t, 2);
    }

    fn toy_batch(rng: &mut ChaCha8Rng, size: usize, reward: f64) -> Batch {
        Batch {
            size,
            obs: randn(rng, size * 2),
            act: randn(rng, size).iter().map(|x| x.tanh()).collect(),
            rew: vec![reward; size],
            next_obs: randn(rng, size * 2),
            terminated: vec![false; size],
        }
    }

    #[test]
    fn zero_discount_regresses_to_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hyper = SACHyper { gamma: 0.0, ..small_hyper() };
        let mut agent = SACAgent::new(2, 1, hyper, &mut rng);
        let batch = toy_batch(&mut rng, 32, 0.5);
        let mut loss = f64::INFINITY;
        for _ in 0..600 {
            loss = agent.critic_update(&batch, &mut rng).unwrap();
        }
        assert!(loss < 1e-4, "loss {loss}");
        let x = concat_rows(&batch.obs, 2, &batch.act, 1, 32);
        for q in agent.critics[0].predict(&x, 32) {
            assert!((q - 0.5).abs() < 0.02, "q {q}");
        }
    }

    #[test]
    fn identical_twins_match_single_critic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hyper = SACHyper { alpha: 0.0, ..small_hyper() };
        let mut agent = SACAgent::new(2, 1, hyper, &mut rng);
        agent.targets[1] = agent.targets[0].clone();
        let batch = toy_batch(&mut rng, 16, 0.2);
        let mut r1 = ChaCha8Rng::seed_from_u64(99);
        let y = agent.targets_for(&batch, &mut r1);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        let next = agent.actor.sample(&batch.next_obs, 16, &mut r2);
        let x = concat_rows(&batch.next_obs, 2, &next.actions, 1, 16);
        let q = agent.targets[0].predict(&x, 16);
        for i in 0..16 {
            assert_eq!(y[i], 0.2 + 0.95 * q[i]);
        }
    }

    #[test]
    fn alpha_shifts_targets_by_minus_gamma_log_prob() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut agent = SACAgent::new(2, 1, small_hyper(), &mut rng);
        let batch = toy_batch(&mut rng, 64, 0.0);
        let lp = agent.actor.sample(&batch.next_obs, 64, &mut ChaCha8Rng::seed_from_u64(1)).log_prob;
        let lo = agent.targets_for(&batch, &mut ChaCha8Rng::seed_from_u64(1));
        agent.hyper.alpha = 0.5;
        let hi = agent.targets_for(&batch, &mut ChaCha8Rng::seed_from_u64(1));
        for i in 0..64 {
            let expected = -0.95 * (0.5 - 0.01) * lp[i];
            assert!((hi[i] - lo[i] - expected).abs() < 1e-12);
            assert_eq!(hi[i] < lo[i], lp[i] > 0.0);
        }
    }

    #[test]
    fn constant_critic_without_entropy_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let agent = SACAgent::new(2, 1, small_hyper(), &mut rng);
        let obs = randn(&mut rng, 20);
        let (_, g) = actor_loss_with(&agent.actor, &obs, randn(&mut rng, 10), 0.0, |_, _, b| (vec![3.0; b], vec![0.0; b]));
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "norm {norm}");
    }

    fn mean_log_std(p: &GaussianPolicy, obs: &[f64], batch: usize) -> f64 {
        let out = p.net.predict(obs, batch);
        out.chunks_exact(2).map(|r| r[1]).sum::<f64>() / batch as f64
    }

    #[test]
    fn entropy_bonus_raises_log_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut agent = SACAgent::new(2, 1, small_hyper(), &mut rng);
        let last = agent.actor.net.widths().len() - 2;
        agent.actor.net.bias_mut(last)[1] = -1.5;
        let obs = randn(&mut rng, 2 * 64);
        let before = mean_log_std(&agent.actor, &obs, 64);
        let (_, g) = actor_loss_with(&agent.actor, &obs, randn(&mut rng, 64), 0.2, |_, _, b| (vec![1.0; b], vec![0.0; b]));
        agent.actor_opt.step(&mut agent.actor.net.data, &g);
        assert!(mean_log_std(&agent.actor, &obs, 64) > before);
    }

    #[test]
    fn quadratic_critic_pulls_mean_to_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let hyper = SACHyper { policy_lr: 3e-3, ..small_hyper() };
        let mut agent = SACAgent::new(2, 1, hyper, &mut rng);
        let target = 0.5f64;
        let obs = randn(&mut rng, 2 * 32);
        let quad = |_: &[f64], a: &[f64], _: usize| {
            (a.iter().map(|x| -(x - target).powi(2)).collect(), a.iter().map(|x| -2.0 * (x - target)).collect())
        };
        let gap = |p: &GaussianPolicy| {
            let out = p.net.predict(&obs, 32);
            out.chunks_exact(2).map(|r| (r[0] - target.atanh()).abs()).sum::<f64>() / 32.0
        };
        let start = gap(&agent.actor);
        for _ in 0..1500 {
            let (_, g) = actor_loss_with(&agent.actor, &obs, randn(&mut rng, 32), 0.0, quad);
            agent.actor_opt.step(&mut agent.actor.net.data, &g);
        }
        let end = gap(&agent.actor);
        assert!(end < start && end < 0.1, "gap {start} -> {end}");
    }

    #[test]
    fn soft_update_limits_and_contraction() {
        let online = vec![1.0, -2.0, 3.0];
        let mut t = vec![0.0; 3];
        soft_update(&mut t, &online, 1.0);
        assert_eq!(t, online);
        let mut t = vec![5.0; 3];
        soft_update(&mut t, &online, 0.0);
        assert_eq!(t, vec![5.0; 3]);
        let dist = |t: &[f64]| t.iter().zip(&online).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        for _ in 0..50 {
            let d0 = dist(&t);
            soft_update(&mut t, &online, 0.005);
            assert!((dist(&t) - 0.995 * d0).abs() < 1e-12);
        }
    }
}
