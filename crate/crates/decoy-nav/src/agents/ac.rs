//! Entropy-regularized actor-critic subagents with target networks.
//!
//! The discrete variant uses a categorical actor over the 8 moves and a
//! critic emitting all 8 Q-values; the continuous variant uses a squashed
//! Gaussian actor over (heading, velocity) and a Q(s, a) critic. Both take
//! one adaptive-moment gradient step per update and refresh the target as
//! `target = rho * online + (1 - rho) * target`.
//!
//! All gradients are closed-form; `losses` functions are pure in the
//! parameters (with frozen noise in the continuous case) so they can be
//! verified against central finite differences.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::mlp::{Adam, Mlp};
use super::{AcConfig, LearnStats, Subagent, TrainError, Transition};
use crate::env::{ContAction, Move, Point};
use crate::grid::Cell;

const LOG_STD_LO: f64 = -4.0;
const LOG_STD_HI: f64 = 1.0;
const SQUASH_EPS: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn softmax_logp(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let p: Vec<f64> = exps.iter().map(|&e| e / z).collect();
    let logp: Vec<f64> = logits.iter().map(|&l| l - m - z.ln()).collect();
    (p, logp)
}

/// Smooth log-std squashing into [LOG_STD_LO, LOG_STD_HI].
fn soft_log_std(raw: f64) -> f64 {
    LOG_STD_LO + 0.5 * (LOG_STD_HI - LOG_STD_LO) * (raw.tanh() + 1.0)
}

fn soft_log_std_grad(raw: f64) -> f64 {
    let t = raw.tanh();
    0.5 * (LOG_STD_HI - LOG_STD_LO) * (1.0 - t * t)
}

// ---------------------------------------------------------------------------
// Discrete
// ---------------------------------------------------------------------------

/// Categorical actor-critic over the 8 grid moves.
#[derive(Debug, Clone)]
pub struct DiscreteAcSubagent {
    actor: Mlp,
    critic: Mlp,
    target: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    cfg: AcConfig,
    own_goal: Cell,
    width: i32,
    height: i32,
}

impl DiscreteAcSubagent {
    pub fn new(width: i32, height: i32, own_goal: Cell, cfg: &AcConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![2usize];
        dims.extend(&cfg.hidden);
        dims.push(8);
        let actor = Mlp::new(&dims, &mut rng);
        let critic = Mlp::new(&dims, &mut rng);
        let target = critic.clone();
        let actor_opt = Adam::new(cfg.lr, actor.n_params());
        let critic_opt = Adam::new(cfg.lr, critic.n_params());
        DiscreteAcSubagent {
            actor,
            critic,
            target,
            actor_opt,
            critic_opt,
            cfg: cfg.clone(),
            own_goal,
            width,
            height,
        }
    }

    fn feat(&self, s: Cell) -> [f64; 2] {
        [
            2.0 * s.x as f64 / (self.width - 1).max(1) as f64 - 1.0,
            2.0 * s.y as f64 / (self.height - 1).max(1) as f64 - 1.0,
        ]
    }

    pub fn own_goal(&self) -> Cell {
        self.own_goal
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut Mlp {
        &mut self.critic
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn networks(&self) -> (&Mlp, &Mlp, &Mlp) {
        (&self.actor, &self.critic, &self.target)
    }

    pub fn set_networks(&mut self, actor: Mlp, critic: Mlp, target: Mlp) {
        self.actor = actor;
        self.critic = critic;
        self.target = target;
    }

    /// Soft-Bellman critic loss and its gradient in the critic parameters.
    pub fn critic_loss_and_grads(&self, batch: &[Transition<Cell, Move>]) -> (f64, Vec<f64>) {
        let b = batch.len() as f64;
        let alpha = self.cfg.alpha;
        let mut loss = 0.0;
        let mut grads = self.critic.zero_grads();
        for t in batch {
            let xn = self.feat(t.s_next);
            let (p, logp) = softmax_logp(&self.actor.forward(&xn));
            let qt = self.target.forward(&xn);
            let v_next: f64 = (0..8).map(|a| p[a] * (qt[a] - alpha * logp[a])).sum();
            let y = t.reward
                + self.cfg.gamma * if t.terminal { 0.0 } else { v_next };
            let (q, cache) = self.critic.forward_cached(&self.feat(t.s));
            let diff = q[t.a.index()] - y;
            loss += diff * diff / b;
            let mut grad_out = vec![0.0; 8];
            grad_out[t.a.index()] = 2.0 * diff / b;
            self.critic.backward(&cache, &grad_out, &mut grads);
        }
        (loss, grads)
    }

    /// Policy loss `E_s sum_a pi(a|s) (alpha ln pi(a|s) - Q(s,a))`, gradient
    /// in the actor parameters, and the mean policy entropy (nats).
    pub fn actor_loss_and_grads(&self, batch: &[Transition<Cell, Move>]) -> (f64, Vec<f64>, f64) {
        let b = batch.len() as f64;
        let alpha = self.cfg.alpha;
        let mut loss = 0.0;
        let mut entropy = 0.0;
        let mut grads = self.actor.zero_grads();
        for t in batch {
            let xs = self.feat(t.s);
            let (logits, cache) = self.actor.forward_cached(&xs);
            let (p, logp) = softmax_logp(&logits);
            let q = self.critic.forward(&xs);
            let f: Vec<f64> = (0..8).map(|a| alpha * logp[a] - q[a]).collect();
            let ls: f64 = (0..8).map(|a| p[a] * f[a]).sum();
            loss += ls / b;
            entropy -= (0..8).map(|a| p[a] * logp[a]).sum::<f64>() / b;
            let grad_out: Vec<f64> = (0..8).map(|a| p[a] * (f[a] - ls) / b).collect();
            self.actor.backward(&cache, &grad_out, &mut grads);
        }
        (loss, grads, entropy)
    }

    /// One gradient step on critic and actor plus the exact target blend.
    pub fn update(&mut self, batch: &[Transition<Cell, Move>]) -> Result<LearnStats, TrainError> {
        assert_eq!(
            batch.len(),
            self.cfg.minibatch,
            "batch size must equal the configured minibatch"
        );
        let (critic_loss, cgrads) = self.critic_loss_and_grads(batch);
        let (actor_loss, agrads, entropy) = self.actor_loss_and_grads(batch);
        if !critic_loss.is_finite() || !actor_loss.is_finite() {
            return Err(TrainError::Divergence {
                episode: None,
                critic_loss,
                actor_loss,
            });
        }
        self.critic_opt.step(self.critic.params_mut(), &cgrads);
        self.actor_opt.step(self.actor.params_mut(), &agrads);
        self.target.blend_from(&self.critic, self.cfg.rho);
        Ok(LearnStats {
            critic_loss,
            actor_loss,
            entropy,
        })
    }

    fn absorbing_view(&self, t: &Transition<Cell, Move>) -> Transition<Cell, Move> {
        Transition {
            terminal: t.terminal || t.s_next == self.own_goal,
            ..*t
        }
    }
}

impl Subagent for DiscreteAcSubagent {
    type State = Cell;
    type Action = Move;

    fn sample_action(&self, s: Cell, rng: &mut dyn RngCore) -> Move {
        let (p, _) = softmax_logp(&self.actor.forward(&self.feat(s)));
        let mut u: f64 = rand::Rng::random(rng);
        for a in Move::ALL {
            u -= p[a.index()];
            if u <= 0.0 {
                return a;
            }
        }
        Move::DownRight
    }

    fn greedy_action(&self, s: Cell) -> Move {
        let logits = self.actor.forward(&self.feat(s));
        let mut best = Move::Up;
        let mut best_l = f64::NEG_INFINITY;
        for a in Move::ALL {
            if logits[a.index()] > best_l {
                best_l = logits[a.index()];
                best = a;
            }
        }
        best
    }

    fn q_value(&self, s: Cell, a: Move) -> f64 {
        self.critic.forward(&self.feat(s))[a.index()]
    }

    fn learn(
        &mut self,
        batch: &[Transition<Cell, Move>],
        _rng: &mut dyn RngCore,
    ) -> Result<LearnStats, TrainError> {
        let adjusted: Vec<_> = batch.iter().map(|t| self.absorbing_view(t)).collect();
        self.update(&adjusted)
    }

    fn learn_batch_size(&self) -> usize {
        self.cfg.minibatch
    }
}

// ---------------------------------------------------------------------------
// Continuous
// ---------------------------------------------------------------------------

/// Frozen Gaussian noise for one continuous update: one sample per batch item
/// for the actor's fresh action and one for the critic's next-state action.
#[derive(Debug, Clone)]
pub struct ContNoise {
    pub cur: Vec<[f64; 2]>,
    pub next: Vec<[f64; 2]>,
}

impl ContNoise {
    pub fn sample(n: usize, rng: &mut dyn RngCore) -> Self {
        let draw = |rng: &mut dyn RngCore| {
            [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ]
        };
        ContNoise {
            cur: (0..n).map(|_| draw(rng)).collect(),
            next: (0..n).map(|_| draw(rng)).collect(),
        }
    }
}

/// Squashed-Gaussian actor-critic over (heading, velocity).
///
/// The actor emits `(mu_1, mu_2, raw_1, raw_2)`; pre-squash samples are
/// `u = mu + exp(log_std) * eps` and the critic consumes the squashed
/// features `tanh(u)` directly, which also parameterize the action as
/// `heading = (tanh(u_1) + 1) * pi`, `velocity = tanh(u_2)`.
#[derive(Debug, Clone)]
pub struct ContinuousAcSubagent {
    actor: Mlp,
    critic: Mlp,
    target: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    cfg: AcConfig,
    own_goal: Point,
    goal_radius: f64,
    width: f64,
    height: f64,
}

/// Maps an action to the critic's squashed feature pair.
fn action_features(a: ContAction) -> [f64; 2] {
    let a = a.clipped();
    [a.heading / std::f64::consts::PI - 1.0, a.velocity]
}

fn features_to_action(t: [f64; 2]) -> ContAction {
    ContAction::new((t[0] + 1.0) * std::f64::consts::PI, t[1])
}

impl ContinuousAcSubagent {
    pub fn new(
        width: f64,
        height: f64,
        own_goal: Point,
        goal_radius: f64,
        cfg: &AcConfig,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor_dims = vec![2usize];
        actor_dims.extend(&cfg.hidden);
        actor_dims.push(4);
        let mut critic_dims = vec![4usize];
        critic_dims.extend(&cfg.hidden);
        critic_dims.push(1);
        let actor = Mlp::new(&actor_dims, &mut rng);
        let critic = Mlp::new(&critic_dims, &mut rng);
        let target = critic.clone();
        let actor_opt = Adam::new(cfg.lr, actor.n_params());
        let critic_opt = Adam::new(cfg.lr, critic.n_params());
        ContinuousAcSubagent {
            actor,
            critic,
            target,
            actor_opt,
            critic_opt,
            cfg: cfg.clone(),
            own_goal,
            goal_radius,
            width,
            height,
        }
    }

    fn feat(&self, p: Point) -> [f64; 2] {
        [2.0 * p.x / self.width - 1.0, 2.0 * p.y / self.height - 1.0]
    }

    pub fn own_goal(&self) -> Point {
        self.own_goal
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut Mlp {
        &mut self.critic
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn networks(&self) -> (&Mlp, &Mlp, &Mlp) {
        (&self.actor, &self.critic, &self.target)
    }

    pub fn set_networks(&mut self, actor: Mlp, critic: Mlp, target: Mlp) {
        self.actor = actor;
        self.critic = critic;
        self.target = target;
    }

    /// Actor head at `x`: means, squashed log-stds and stds.
    fn policy_params(&self, out: &[f64]) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let mu = [out[0], out[1]];
        let ls = [soft_log_std(out[2]), soft_log_std(out[3])];
        let sigma = [ls[0].exp(), ls[1].exp()];
        (mu, ls, sigma)
    }

    /// Log-density of the squashed sample with pre-squash value `u`,
    /// standardized noise `eps` and squashed features `t`.
    fn log_prob(ls: &[f64; 2], eps: &[f64; 2], t: &[f64; 2]) -> f64 {
        let mut lp = -std::f64::consts::PI.ln();
        for j in 0..2 {
            lp += -ls[j] - 0.5 * LN_2PI - 0.5 * eps[j] * eps[j]
                - (1.0 - t[j] * t[j] + SQUASH_EPS).ln();
        }
        lp
    }

    /// Soft-Bellman critic loss under frozen noise, with critic-parameter
    /// gradients.
    pub fn critic_loss_and_grads(
        &self,
        batch: &[Transition<Point, ContAction>],
        noise: &ContNoise,
    ) -> (f64, Vec<f64>) {
        assert_eq!(noise.next.len(), batch.len());
        let b = batch.len() as f64;
        let alpha = self.cfg.alpha;
        let mut loss = 0.0;
        let mut grads = self.critic.zero_grads();
        for (i, tr) in batch.iter().enumerate() {
            let xn = self.feat(tr.s_next);
            let (mu, ls, sigma) = self.policy_params(&self.actor.forward(&xn));
            let eps = noise.next[i];
            let t: [f64; 2] = std::array::from_fn(|j| (mu[j] + sigma[j] * eps[j]).tanh());
            let logp = Self::log_prob(&ls, &eps, &t);
            let qt = self.target.forward(&[xn[0], xn[1], t[0], t[1]])[0];
            let y = tr.reward
                + self.cfg.gamma * if tr.terminal { 0.0 } else { qt - alpha * logp };
            let xs = self.feat(tr.s);
            let af = action_features(tr.a);
            let (q, cache) = self.critic.forward_cached(&[xs[0], xs[1], af[0], af[1]]);
            let diff = q[0] - y;
            loss += diff * diff / b;
            self.critic.backward(&cache, &[2.0 * diff / b], &mut grads);
        }
        (loss, grads)
    }

    /// Reparameterized policy loss `E[alpha ln pi(a|s) - Q(s, a)]` under
    /// frozen noise, with actor-parameter gradients and the entropy estimate
    /// `E[-ln pi]`.
    pub fn actor_loss_and_grads(
        &self,
        batch: &[Transition<Point, ContAction>],
        noise: &ContNoise,
    ) -> (f64, Vec<f64>, f64) {
        assert_eq!(noise.cur.len(), batch.len());
        let b = batch.len() as f64;
        let alpha = self.cfg.alpha;
        let mut loss = 0.0;
        let mut entropy = 0.0;
        let mut grads = self.actor.zero_grads();
        let mut critic_scratch = self.critic.zero_grads();
        for (i, tr) in batch.iter().enumerate() {
            let xs = self.feat(tr.s);
            let (out, acache) = self.actor.forward_cached(&xs);
            let (mu, ls, sigma) = self.policy_params(&out);
            let eps = noise.cur[i];
            let u: [f64; 2] = std::array::from_fn(|j| mu[j] + sigma[j] * eps[j]);
            let t: [f64; 2] = std::array::from_fn(|j| u[j].tanh());
            let logp = Self::log_prob(&ls, &eps, &t);
            let (q, ccache) = self.critic.forward_cached(&[xs[0], xs[1], t[0], t[1]]);
            loss += (alpha * logp - q[0]) / b;
            entropy += -logp / b;
            // Gradient of Q with respect to its action features.
            critic_scratch.iter_mut().for_each(|g| *g = 0.0);
            let gin = self.critic.backward(&ccache, &[1.0], &mut critic_scratch);
            let mut grad_out = [0.0f64; 4];
            for j in 0..2 {
                let dtanh = 1.0 - t[j] * t[j];
                let dlogp_du = 2.0 * t[j] * dtanh / (1.0 - t[j] * t[j] + SQUASH_EPS);
                let dq_dt = gin[2 + j];
                // d/d mu_j
                let dlogp_dmu = dlogp_du;
                let dq_dmu = dq_dt * dtanh;
                grad_out[j] = (alpha * dlogp_dmu - dq_dmu) / b;
                // d/d log_std_j, then through the soft clamp.
                let du_dls = eps[j] * sigma[j];
                let dlogp_dls = -1.0 + dlogp_du * du_dls;
                let dq_dls = dq_dt * dtanh * du_dls;
                grad_out[2 + j] =
                    (alpha * dlogp_dls - dq_dls) / b * soft_log_std_grad(out[2 + j]);
            }
            self.actor.backward(&acache, &grad_out, &mut grads);
        }
        (loss, grads, entropy)
    }

    pub fn update(
        &mut self,
        batch: &[Transition<Point, ContAction>],
        noise: &ContNoise,
    ) -> Result<LearnStats, TrainError> {
        assert_eq!(
            batch.len(),
            self.cfg.minibatch,
            "batch size must equal the configured minibatch"
        );
        let (critic_loss, cgrads) = self.critic_loss_and_grads(batch, noise);
        let (actor_loss, agrads, entropy) = self.actor_loss_and_grads(batch, noise);
        if !critic_loss.is_finite() || !actor_loss.is_finite() {
            return Err(TrainError::Divergence {
                episode: None,
                critic_loss,
                actor_loss,
            });
        }
        self.critic_opt.step(self.critic.params_mut(), &cgrads);
        self.actor_opt.step(self.actor.params_mut(), &agrads);
        self.target.blend_from(&self.critic, self.cfg.rho);
        Ok(LearnStats {
            critic_loss,
            actor_loss,
            entropy,
        })
    }

    fn absorbing_view(&self, t: &Transition<Point, ContAction>) -> Transition<Point, ContAction> {
        Transition {
            terminal: t.terminal || t.s_next.distance(self.own_goal) <= self.goal_radius,
            ..*t
        }
    }
}

impl Subagent for ContinuousAcSubagent {
    type State = Point;
    type Action = ContAction;

    fn sample_action(&self, s: Point, rng: &mut dyn RngCore) -> ContAction {
        let (mu, _, sigma) = self.policy_params(&self.actor.forward(&self.feat(s)));
        let eps: [f64; 2] = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
        let t: [f64; 2] = std::array::from_fn(|j| (mu[j] + sigma[j] * eps[j]).tanh());
        features_to_action(t)
    }

    fn greedy_action(&self, s: Point) -> ContAction {
        let (mu, _, _) = self.policy_params(&self.actor.forward(&self.feat(s)));
        features_to_action([mu[0].tanh(), mu[1].tanh()])
    }

    fn q_value(&self, s: Point, a: ContAction) -> f64 {
        let xs = self.feat(s);
        let af = action_features(a);
        self.critic.forward(&[xs[0], xs[1], af[0], af[1]])[0]
    }

    fn learn(
        &mut self,
        batch: &[Transition<Point, ContAction>],
        rng: &mut dyn RngCore,
    ) -> Result<LearnStats, TrainError> {
        let adjusted: Vec<_> = batch.iter().map(|t| self.absorbing_view(t)).collect();
        let noise = ContNoise::sample(adjusted.len(), rng);
        self.update(&adjusted, &noise)
    }

    fn learn_batch_size(&self) -> usize {
        self.cfg.minibatch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn discrete_batch(n: usize, seed: u64) -> Vec<Transition<Cell, Move>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Transition {
                s: Cell::new(rng.random_range(0..7), rng.random_range(0..7)),
                a: Move::from_index(rng.random_range(0..8)),
                s_next: Cell::new(rng.random_range(0..7), rng.random_range(0..7)),
                reward: rng.random_range(-2.0..2.0),
                terminal: rng.random_bool(0.1),
            })
            .collect()
    }

    fn continuous_batch(n: usize, seed: u64) -> Vec<Transition<Point, ContAction>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Transition {
                s: Point::new(rng.random_range(0.0..7.0), rng.random_range(0.0..7.0)),
                a: ContAction::new(
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(-1.0..1.0),
                ),
                s_next: Point::new(rng.random_range(0.0..7.0), rng.random_range(0.0..7.0)),
                reward: rng.random_range(-8.0..0.0),
                terminal: rng.random_bool(0.1),
            })
            .collect()
    }

    fn small_cfg() -> AcConfig {
        AcConfig {
            hidden: vec![8, 8],
            minibatch: 12,
            ..AcConfig::discrete()
        }
    }

    #[test]
    fn target_blend_is_exact() {
        let cfg = small_cfg();
        let mut agent = DiscreteAcSubagent::new(7, 7, Cell::new(6, 6), &cfg, 9);
        let before_target = agent.target().params().to_vec();
        let batch = discrete_batch(cfg.minibatch, 1);
        agent.update(&batch).unwrap();
        let online = agent.critic().params().to_vec();
        for i in 0..online.len() {
            let expected = cfg.rho * online[i] + (1.0 - cfg.rho) * before_target[i];
            assert_eq!(agent.target().params()[i], expected);
        }
    }

    #[test]
    fn repeated_updates_descend_on_frozen_batch() {
        let cfg = small_cfg();
        let mut agent = DiscreteAcSubagent::new(7, 7, Cell::new(6, 6), &cfg, 2);
        let batch = discrete_batch(cfg.minibatch, 3);
        let first = agent.update(&batch).unwrap();
        let mut last = first;
        for _ in 0..199 {
            last = agent.update(&batch).unwrap();
        }
        assert!(
            last.critic_loss < first.critic_loss,
            "critic loss did not descend: {} -> {}",
            first.critic_loss,
            last.critic_loss
        );
    }

    #[test]
    fn zero_alpha_reduces_to_plain_targets() {
        let cfg = AcConfig {
            alpha: 0.0,
            ..small_cfg()
        };
        let agent = DiscreteAcSubagent::new(7, 7, Cell::new(6, 6), &cfg, 4);
        let batch = discrete_batch(cfg.minibatch, 5);
        let (closs, _) = agent.critic_loss_and_grads(&batch);
        // Recompute the critic loss with entropy-free targets by hand.
        let mut expect = 0.0;
        for t in &batch {
            let xn = agent.feat(t.s_next);
            let (p, _) = softmax_logp(&agent.actor.forward(&xn));
            let qt = agent.target.forward(&xn);
            let v: f64 = (0..8).map(|a| p[a] * qt[a]).sum();
            let y = t.reward + cfg.gamma * if t.terminal { 0.0 } else { v };
            let q = agent.critic.forward(&agent.feat(t.s))[t.a.index()];
            expect += (q - y) * (q - y) / batch.len() as f64;
        }
        assert!((closs - expect).abs() < 1e-12);

        let (aloss, _, _) = agent.actor_loss_and_grads(&batch);
        let mut expect_a = 0.0;
        for t in &batch {
            let xs = agent.feat(t.s);
            let (p, _) = softmax_logp(&agent.actor.forward(&xs));
            let q = agent.critic.forward(&xs);
            expect_a += (0..8).map(|a| -p[a] * q[a]).sum::<f64>() / batch.len() as f64;
        }
        assert!((aloss - expect_a).abs() < 1e-12);
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn discrete_gradients_match_finite_differences() {
        let cfg = small_cfg();
        let agent = DiscreteAcSubagent::new(7, 7, Cell::new(6, 6), &cfg, 11);
        let batch = discrete_batch(cfg.minibatch, 12);
        let h = 1e-5;

        let (_, cgrads) = agent.critic_loss_and_grads(&batch);
        let mut fd = vec![0.0; cgrads.len()];
        let mut probe = agent.clone();
        for i in 0..cgrads.len() {
            let orig = probe.critic.params()[i];
            probe.critic.params_mut()[i] = orig + h;
            let up = probe.critic_loss_and_grads(&batch).0;
            probe.critic.params_mut()[i] = orig - h;
            let down = probe.critic_loss_and_grads(&batch).0;
            probe.critic.params_mut()[i] = orig;
            fd[i] = (up - down) / (2.0 * h);
        }
        assert!(max_rel_err(&cgrads, &fd) < 1e-4);

        let (_, agrads, _) = agent.actor_loss_and_grads(&batch);
        let mut fd = vec![0.0; agrads.len()];
        for i in 0..agrads.len() {
            let orig = probe.actor.params()[i];
            probe.actor.params_mut()[i] = orig + h;
            let up = probe.actor_loss_and_grads(&batch).0;
            probe.actor.params_mut()[i] = orig - h;
            let down = probe.actor_loss_and_grads(&batch).0;
            probe.actor.params_mut()[i] = orig;
            fd[i] = (up - down) / (2.0 * h);
        }
        assert!(max_rel_err(&agrads, &fd) < 1e-4);
    }

    #[test]
    fn continuous_gradients_match_finite_differences() {
        let cfg = AcConfig {
            hidden: vec![8, 8],
            minibatch: 10,
            ..AcConfig::continuous()
        };
        let agent =
            ContinuousAcSubagent::new(7.0, 7.0, Point::new(6.0, 6.0), 1.0, &cfg, 21);
        let batch = continuous_batch(cfg.minibatch, 22);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let noise = ContNoise::sample(batch.len(), &mut rng);
        let h = 1e-5;

        let (_, cgrads) = agent.critic_loss_and_grads(&batch, &noise);
        let mut probe = agent.clone();
        let mut fd = vec![0.0; cgrads.len()];
        for i in 0..cgrads.len() {
            let orig = probe.critic.params()[i];
            probe.critic.params_mut()[i] = orig + h;
            let up = probe.critic_loss_and_grads(&batch, &noise).0;
            probe.critic.params_mut()[i] = orig - h;
            let down = probe.critic_loss_and_grads(&batch, &noise).0;
            probe.critic.params_mut()[i] = orig;
            fd[i] = (up - down) / (2.0 * h);
        }
        assert!(max_rel_err(&cgrads, &fd) < 1e-4);

        let (_, agrads, _) = agent.actor_loss_and_grads(&batch, &noise);
        let mut fd = vec![0.0; agrads.len()];
        for i in 0..agrads.len() {
            let orig = probe.actor.params()[i];
            probe.actor.params_mut()[i] = orig + h;
            let up = probe.actor_loss_and_grads(&batch, &noise).0;
            probe.actor.params_mut()[i] = orig - h;
            let down = probe.actor_loss_and_grads(&batch, &noise).0;
            probe.actor.params_mut()[i] = orig;
            fd[i] = (up - down) / (2.0 * h);
        }
        assert!(max_rel_err(&agrads, &fd) < 1e-4);
    }

    #[test]
    fn continuous_actions_stay_in_range() {
        let cfg = AcConfig {
            hidden: vec![8, 8],
            ..AcConfig::continuous()
        };
        let agent = ContinuousAcSubagent::new(7.0, 7.0, Point::new(6.0, 6.0), 1.0, &cfg, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..200 {
            let s = Point::new(rng.random_range(0.0..7.0), rng.random_range(0.0..7.0));
            let a = agent.sample_action(s, &mut rng);
            assert!(a.heading >= 0.0 && a.heading <= std::f64::consts::TAU);
            assert!(a.velocity >= -1.0 && a.velocity <= 1.0);
        }
    }

    #[test]
    fn update_touches_only_the_targeted_subagent() {
        let cfg = small_cfg();
        let mut a0 = DiscreteAcSubagent::new(7, 7, Cell::new(6, 6), &cfg, 41);
        let a1 = DiscreteAcSubagent::new(7, 7, Cell::new(0, 6), &cfg, 42);
        let snapshot = a1.clone();
        a0.update(&discrete_batch(cfg.minibatch, 43)).unwrap();
        assert_eq!(a1.actor().params(), snapshot.actor().params());
        assert_eq!(a1.critic().params(), snapshot.critic().params());
        assert_eq!(a1.target().params(), snapshot.target().params());
    }

    #[test]
    fn seeded_updates_are_bit_identical() {
        let cfg = small_cfg();
        let batch = discrete_batch(cfg.minibatch, 50);
        let mut a = DiscreteAcSubagent::new(7, 7, Cell::new(6, 6), &cfg, 51);
        let mut b = DiscreteAcSubagent::new(7, 7, Cell::new(6, 6), &cfg, 51);
        let sa = a.update(&batch).unwrap();
        let sb = b.update(&batch).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(a.critic().params(), b.critic().params());
    }
}
