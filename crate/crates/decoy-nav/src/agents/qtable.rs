//! Tabular Q-functions: exact value iteration and off-policy Q-learning.

use rand::RngCore;

use super::{LearnStats, Subagent, TrainError, Transition};
use crate::env::{step_discrete, Mode, Move, Scenario, GOAL_REWARD};
use crate::grid::Cell;

/// Dense Q-table over all map cells and the 8 moves. Entries start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    width: i32,
    height: i32,
    q: Vec<f64>,
}

impl QTable {
    pub fn zeros(width: i32, height: i32) -> Self {
        QTable {
            width,
            height,
            q: vec![0.0; (width * height) as usize * 8],
        }
    }

    pub fn from_values(width: i32, height: i32, q: Vec<f64>) -> Self {
        assert_eq!(q.len(), (width * height) as usize * 8);
        QTable { width, height, q }
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    fn idx(&self, s: Cell, a: Move) -> usize {
        debug_assert!(s.x >= 0 && s.x < self.width && s.y >= 0 && s.y < self.height);
        ((s.y * self.width + s.x) as usize) * 8 + a.index()
    }

    pub fn get(&self, s: Cell, a: Move) -> f64 {
        self.q[self.idx(s, a)]
    }

    pub fn set(&mut self, s: Cell, a: Move, v: f64) {
        let i = self.idx(s, a);
        self.q[i] = v;
    }

    pub fn max_q(&self, s: Cell) -> f64 {
        Move::ALL
            .iter()
            .map(|&a| self.get(s, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Argmax action; ties break to the lowest move index.
    pub fn greedy(&self, s: Cell) -> Move {
        let mut best = Move::Up;
        let mut best_q = f64::NEG_INFINITY;
        for a in Move::ALL {
            let q = self.get(s, a);
            if q > best_q {
                best_q = q;
                best = a;
            }
        }
        best
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }
}

/// Solves candidate `candidate`'s Q-function exactly by synchronous value
/// iteration to sup-norm `tol`.
///
/// The candidate's own goal is absorbing: its Q-row stays zero and a
/// transition onto it contributes its reward only, with no bootstrap.
pub fn value_iteration(
    scn: &Scenario,
    candidate: usize,
    gamma: f64,
    tol: f64,
) -> Result<QTable, TrainError> {
    if scn.mode() != Mode::Discrete {
        return Err(TrainError::UnsupportedMode);
    }
    assert!(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
    assert!(tol > 0.0, "tol must be positive");
    let map = scn.map();
    let goal = scn.candidates().goal(candidate);
    let mut q = QTable::zeros(map.width(), map.height());
    let free: Vec<Cell> = map.free_cells().filter(|&c| c != goal).collect();

    // Precompute successors and rewards; dynamics are deterministic.
    struct Edge {
        from: Cell,
        a: Move,
        to: Cell,
        reward: f64,
        to_goal: bool,
    }
    let mut edges = Vec::with_capacity(free.len() * 8);
    for &s in &free {
        for a in Move::ALL {
            let (dx, dy) = a.delta();
            let target = s.offset(dx, dy);
            let to = if map.is_free(target) { target } else { s };
            let to_goal = to == goal;
            let reward = -a.cost() + if to_goal { GOAL_REWARD } else { 0.0 };
            edges.push(Edge {
                from: s,
                a,
                to,
                reward,
                to_goal,
            });
        }
    }

    let max_sweeps = 1_000_000;
    for _ in 0..max_sweeps {
        let mut next = q.clone();
        let mut sup = 0.0f64;
        for e in &edges {
            let target = if e.to_goal {
                e.reward
            } else {
                e.reward + gamma * q.max_q(e.to)
            };
            let old = q.get(e.from, e.a);
            sup = sup.max((target - old).abs());
            next.set(e.from, e.a, target);
        }
        q = next;
        if sup < tol {
            return Ok(q);
        }
    }
    unreachable!("value iteration failed to converge within {max_sweeps} sweeps");
}

/// One off-policy temporal-difference update:
/// `Q(s,a) += lr * (r + gamma * max_a' Q(s',a') * (1 - terminal) - Q(s,a))`.
/// Returns the TD error before the update. No other entry changes.
pub fn tabular_update(q: &mut QTable, t: &Transition<Cell, Move>, lr: f64, gamma: f64) -> f64 {
    let bootstrap = if t.terminal { 0.0 } else { gamma * q.max_q(t.s_next) };
    let td = t.reward + bootstrap - q.get(t.s, t.a);
    let updated = q.get(t.s, t.a) + lr * td;
    q.set(t.s, t.a, updated);
    td
}

/// Tabular Q-learning subagent. Its stochastic policy is the greedy policy:
/// exploration comes from the deceptive selection layer, not the subagent.
#[derive(Debug, Clone)]
pub struct TabularSubagent {
    q: QTable,
    own_goal: Cell,
    lr: f64,
    gamma: f64,
}

impl TabularSubagent {
    pub fn new(width: i32, height: i32, own_goal: Cell, lr: f64, gamma: f64) -> Self {
        TabularSubagent {
            q: QTable::zeros(width, height),
            own_goal,
            lr,
            gamma,
        }
    }

    pub fn for_scenario(scn: &Scenario, candidate: usize, lr: f64, gamma: f64) -> Self {
        Self::new(
            scn.map().width(),
            scn.map().height(),
            scn.candidates().goal(candidate),
            lr,
            gamma,
        )
    }

    pub fn with_table(q: QTable, own_goal: Cell, lr: f64, gamma: f64) -> Self {
        TabularSubagent {
            q,
            own_goal,
            lr,
            gamma,
        }
    }

    pub fn table(&self) -> &QTable {
        &self.q
    }

    pub fn own_goal(&self) -> Cell {
        self.own_goal
    }

    /// Online update from a single fresh transition.
    pub fn update_online(&mut self, t: &Transition<Cell, Move>) -> f64 {
        let adjusted = self.absorbing_view(t);
        tabular_update(&mut self.q, &adjusted, self.lr, self.gamma)
    }

    /// Rewrites the shared-buffer terminal flag into this candidate's own
    /// MDP view: bootstrap stops at the candidate's own goal.
    fn absorbing_view(&self, t: &Transition<Cell, Move>) -> Transition<Cell, Move> {
        Transition {
            terminal: t.terminal || t.s_next == self.own_goal,
            ..*t
        }
    }
}

impl Subagent for TabularSubagent {
    type State = Cell;
    type Action = Move;

    fn sample_action(&self, s: Cell, _rng: &mut dyn RngCore) -> Move {
        self.q.greedy(s)
    }

    fn greedy_action(&self, s: Cell) -> Move {
        self.q.greedy(s)
    }

    fn q_value(&self, s: Cell, a: Move) -> f64 {
        self.q.get(s, a)
    }

    fn learn(
        &mut self,
        batch: &[Transition<Cell, Move>],
        _rng: &mut dyn RngCore,
    ) -> Result<LearnStats, TrainError> {
        let mut sq_err = 0.0;
        let mut n = 0usize;
        for t in batch {
            if t.s == self.own_goal {
                // Post-terminal for this candidate's MDP; nothing to learn.
                continue;
            }
            let td = self.update_online(t);
            sq_err += td * td;
            n += 1;
        }
        Ok(LearnStats {
            critic_loss: if n > 0 { sq_err / n as f64 } else { 0.0 },
            actor_loss: 0.0,
            entropy: 0.0,
        })
    }

    fn learn_batch_size(&self) -> usize {
        1
    }
}

/// Frozen value-iteration subagent.
#[derive(Debug, Clone)]
pub struct ViSubagent {
    q: QTable,
}

impl ViSubagent {
    pub fn new(q: QTable) -> Self {
        ViSubagent { q }
    }

    /// Solves the candidate's Q-function and wraps it.
    pub fn solve(scn: &Scenario, candidate: usize, gamma: f64, tol: f64) -> Result<Self, TrainError> {
        Ok(ViSubagent {
            q: value_iteration(scn, candidate, gamma, tol)?,
        })
    }

    pub fn table(&self) -> &QTable {
        &self.q
    }
}

impl Subagent for ViSubagent {
    type State = Cell;
    type Action = Move;

    fn sample_action(&self, s: Cell, _rng: &mut dyn RngCore) -> Move {
        self.q.greedy(s)
    }

    fn greedy_action(&self, s: Cell) -> Move {
        self.q.greedy(s)
    }

    fn q_value(&self, s: Cell, a: Move) -> f64 {
        self.q.get(s, a)
    }

    fn learn(
        &mut self,
        _batch: &[Transition<Cell, Move>],
        _rng: &mut dyn RngCore,
    ) -> Result<LearnStats, TrainError> {
        Ok(LearnStats::default())
    }

    fn learn_batch_size(&self) -> usize {
        1
    }
}

/// Rolls the greedy policy of `q` from `start` until the goal or `limit`
/// steps, returning the visited cells (including start) and the path cost.
pub fn greedy_rollout(
    scn: &Scenario,
    q: &QTable,
    start: Cell,
    goal: Cell,
    limit: usize,
) -> (Vec<Cell>, f64, bool) {
    let mut s = start;
    let mut cells = vec![s];
    let mut cost = 0.0;
    for _ in 0..limit {
        if s == goal {
            return (cells, cost, true);
        }
        let a = q.greedy(s);
        let out = step_discrete(scn, s, a).expect("greedy rollout left free space");
        cost += a.cost();
        s = out.next;
        cells.push(s);
    }
    (cells, cost, s == goal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::CandidateSet;
    use crate::grid::{optimal_cost, GridMap};
    use std::f64::consts::SQRT_2;

    fn three_by_three() -> Scenario {
        let map = GridMap::empty(3, 3).unwrap();
        let cs = CandidateSet::uniform(vec![Cell::new(2, 2), Cell::new(0, 2)], 0).unwrap();
        Scenario::discrete(map, Cell::new(0, 0), cs).unwrap()
    }

    #[test]
    fn one_step_goal_transition_has_no_bootstrap() {
        let scn = three_by_three();
        let q = value_iteration(&scn, 0, 0.99, 1e-10).unwrap();
        let expected = GOAL_REWARD - SQRT_2;
        assert!((q.get(Cell::new(1, 1), Move::UpRight) - expected).abs() < 1e-9);
    }

    /// Brute-force oracle: enumerate all action sequences up to `depth`
    /// and return the best discounted return per first action.
    fn best_first_action_by_enumeration(scn: &Scenario, start: Cell, depth: usize, gamma: f64) -> Move {
        fn best_return(scn: &Scenario, s: Cell, depth: usize, gamma: f64) -> f64 {
            if depth == 0 {
                return f64::NEG_INFINITY;
            }
            let mut best = f64::NEG_INFINITY;
            for a in Move::ALL {
                let out = step_discrete(scn, s, a).unwrap();
                let r = out.rewards[scn.candidates().real_index()];
                let v = if out.terminal {
                    r
                } else {
                    let tail = best_return(scn, out.next, depth - 1, gamma);
                    if tail == f64::NEG_INFINITY {
                        continue;
                    }
                    r + gamma * tail
                };
                if v > best {
                    best = v;
                }
            }
            best
        }
        let mut best_a = Move::Up;
        let mut best_v = f64::NEG_INFINITY;
        for a in Move::ALL {
            let out = step_discrete(scn, start, a).unwrap();
            let r = out.rewards[scn.candidates().real_index()];
            let v = if out.terminal {
                r
            } else {
                r + gamma * best_return(scn, out.next, depth - 1, gamma)
            };
            if v > best_v {
                best_v = v;
                best_a = a;
            }
        }
        best_a
    }

    #[test]
    fn greedy_action_matches_enumeration_oracle() {
        let scn = three_by_three();
        let q = value_iteration(&scn, 0, 0.99, 1e-10).unwrap();
        let oracle = best_first_action_by_enumeration(&scn, Cell::new(0, 0), 6, 0.99);
        assert_eq!(oracle, Move::UpRight);
        assert_eq!(q.greedy(Cell::new(0, 0)), oracle);
    }

    #[test]
    fn value_iteration_rejects_continuous_mode() {
        let map = GridMap::empty(5, 5).unwrap();
        let cs = CandidateSet::uniform(vec![Cell::new(4, 4), Cell::new(0, 4)], 0).unwrap();
        let scn = Scenario::continuous(map, Cell::new(0, 0), cs).unwrap();
        assert!(matches!(
            value_iteration(&scn, 0, 0.99, 1e-6),
            Err(TrainError::UnsupportedMode)
        ));
    }

    #[test]
    fn bellman_residual_below_tol_everywhere() {
        let scn = three_by_three();
        let gamma = 0.99;
        let tol = 1e-9;
        let q = value_iteration(&scn, 0, gamma, tol).unwrap();
        let goal = scn.candidates().goal(0);
        for s in scn.map().free_cells() {
            if s == goal {
                continue;
            }
            for a in Move::ALL {
                let out = step_discrete(&scn, s, a).unwrap();
                let r = out.rewards[0];
                let target = if out.next == goal {
                    r
                } else {
                    r + gamma * q.max_q(out.next)
                };
                assert!(
                    (q.get(s, a) - target).abs() <= tol * 2.0,
                    "residual at {s} {a:?}"
                );
            }
        }
    }

    #[test]
    fn greedy_rollout_cost_equals_oracle() {
        let scn = three_by_three();
        let q = value_iteration(&scn, 0, 0.99, 1e-10).unwrap();
        let goal = scn.candidates().goal(0);
        for start in scn.map().free_cells() {
            if start == goal {
                continue;
            }
            let (_, cost, reached) = greedy_rollout(&scn, &q, start, goal, 100);
            assert!(reached);
            let oracle = optimal_cost(scn.map(), start, goal).unwrap();
            assert!((cost - oracle).abs() < 1e-9, "start {start}");
        }
    }

    #[test]
    fn tabular_update_simple_arithmetic() {
        let mut q = QTable::zeros(3, 3);
        let t = Transition {
            s: Cell::new(0, 0),
            a: Move::Right,
            s_next: Cell::new(1, 0),
            reward: -1.0,
            terminal: false,
        };
        tabular_update(&mut q, &t, 0.5, 0.99);
        assert!((q.get(Cell::new(0, 0), Move::Right) - (-0.5)).abs() < 1e-12);
        // No other entry changed.
        assert_eq!(q.get(Cell::new(0, 0), Move::Up), 0.0);
        assert_eq!(q.get(Cell::new(1, 0), Move::Right), 0.0);
    }

    #[test]
    fn tabular_update_terminal_target() {
        let mut q = QTable::zeros(3, 3);
        let t = Transition {
            s: Cell::new(1, 1),
            a: Move::UpRight,
            s_next: Cell::new(2, 2),
            reward: 100.0,
            terminal: true,
        };
        tabular_update(&mut q, &t, 1.0, 0.99);
        assert!((q.get(Cell::new(1, 1), Move::UpRight) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_updates_converge_to_chain_fixed_point() {
        // Two-state chain: A --a--> B (reward -1), B --a--> goal (reward 100,
        // terminal). Bellman: Q(B) = 100, Q(A) = -1 + gamma * 100 = 98.
        let gamma = 0.99;
        let mut q = QTable::zeros(4, 1);
        let a = Cell::new(0, 0);
        let b = Cell::new(1, 0);
        let goal = Cell::new(2, 0);
        let t_ab = Transition {
            s: a,
            a: Move::Right,
            s_next: b,
            reward: -1.0,
            terminal: false,
        };
        let t_bg = Transition {
            s: b,
            a: Move::Right,
            s_next: goal,
            reward: 100.0,
            terminal: true,
        };
        for _ in 0..2000 {
            tabular_update(&mut q, &t_ab, 0.2, gamma);
            tabular_update(&mut q, &t_bg, 0.2, gamma);
        }
        // max_q(B) is driven by the only updated entry (B, Right).
        assert!((q.get(b, Move::Right) - 100.0).abs() < 1e-6);
        assert!((q.get(a, Move::Right) - (-1.0 + gamma * 100.0)).abs() < 1e-6);
    }

    #[test]
    fn subagent_absorbs_at_own_goal() {
        let mut agent = TabularSubagent::new(3, 3, Cell::new(2, 2), 1.0, 0.99);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        use rand::SeedableRng;
        // Shared-buffer transition: env did not terminate (fake-goal touch),
        // but this candidate's own goal was reached.
        let t = Transition {
            s: Cell::new(1, 1),
            a: Move::UpRight,
            s_next: Cell::new(2, 2),
            reward: 100.0 - SQRT_2,
            terminal: false,
        };
        agent.learn(&[t], &mut rng).unwrap();
        assert!((agent.q_value(Cell::new(1, 1), Move::UpRight) - (100.0 - SQRT_2)).abs() < 1e-12);
        // Transitions departing the own goal are ignored.
        let t2 = Transition {
            s: Cell::new(2, 2),
            a: Move::Down,
            s_next: Cell::new(2, 1),
            reward: -1.0,
            terminal: false,
        };
        agent.learn(&[t2], &mut rng).unwrap();
        assert_eq!(agent.q_value(Cell::new(2, 2), Move::Down), 0.0);
    }
}
