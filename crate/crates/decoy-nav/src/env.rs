//! Multi-goal navigation environments.
//!
//! A [`Scenario`] binds a map, a start and a [`CandidateSet`] of goals, one
//! of which is real. Every step returns one reward per candidate goal, so a
//! single environment interaction feeds every per-candidate learner.
//!
//! Stepping is a pure function of `(scenario, state, action)`: scenarios are
//! immutable after construction, so any number of workers may step the same
//! scenario concurrently.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{optimal_cost, step_cost, Cell, GridError, GridMap, MapFile};

/// Reward granted when a transition ends on a candidate's goal.
pub const GOAL_REWARD: f64 = 100.0;

/// Default distance at which a continuous agent counts as having reached a
/// goal: one grid cell.
pub const DEFAULT_GOAL_RADIUS: f64 = 1.0;

/// The eight grid moves, in canonical index order. All index-based
/// tie-breaking uses this order. `Up` increases `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
    DownLeft,
    UpLeft,
    UpRight,
    DownRight,
}

impl Move {
    pub const ALL: [Move; 8] = [
        Move::Up,
        Move::Down,
        Move::Left,
        Move::Right,
        Move::DownLeft,
        Move::UpLeft,
        Move::UpRight,
        Move::DownRight,
    ];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Move::Up => (0, 1),
            Move::Down => (0, -1),
            Move::Left => (-1, 0),
            Move::Right => (1, 0),
            Move::DownLeft => (-1, -1),
            Move::UpLeft => (-1, 1),
            Move::UpRight => (1, 1),
            Move::DownRight => (1, -1),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Move {
        Move::ALL[i]
    }

    /// Step cost charged for this move, whether or not it is blocked.
    pub fn cost(self) -> f64 {
        let (dx, dy) = self.delta();
        step_cost(dx, dy)
    }

    pub fn name(self) -> &'static str {
        match self {
            Move::Up => "up",
            Move::Down => "down",
            Move::Left => "left",
            Move::Right => "right",
            Move::DownLeft => "down-left",
            Move::UpLeft => "up-left",
            Move::UpRight => "up-right",
            Move::DownRight => "down-right",
        }
    }
}

/// A position in the continuous world. Cell `(x, y)` occupies the unit
/// square `[x, x+1] x [y, y+1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    /// Center of a cell in world coordinates.
    pub fn cell_center(c: Cell) -> Self {
        Point::new(c.x as f64 + 0.5, c.y as f64 + 0.5)
    }

    pub fn distance(self, other: Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// A continuous action: heading in `[0, 2*pi]`, velocity in `[-1, 1]`.
/// Out-of-range values are clipped at the environment boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContAction {
    pub heading: f64,
    pub velocity: f64,
}

impl ContAction {
    pub const fn new(heading: f64, velocity: f64) -> Self {
        ContAction { heading, velocity }
    }

    pub fn clipped(self) -> Self {
        ContAction {
            heading: self.heading.clamp(0.0, std::f64::consts::TAU),
            velocity: self.velocity.clamp(-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Discrete,
    Continuous,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Discrete => "discrete",
            Mode::Continuous => "continuous",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("candidate set needs at least one goal")]
    NoGoals,
    #[error("real goal index {index} out of range for {k} goals")]
    RealIndexOutOfRange { index: usize, k: usize },
    #[error("priors must have one entry per goal ({k}), got {len}")]
    PriorLength { k: usize, len: usize },
    #[error("priors must be nonnegative and sum to 1 within 1e-9 (sum = {sum})")]
    PriorSum { sum: f64 },
    #[error("goal {0} duplicated in candidate set")]
    DuplicateGoal(Cell),
    #[error("start {0} collides with a goal")]
    StartOnGoal(Cell),
    #[error("cell {0} is not free")]
    NotFree(Cell),
    #[error("goal {goal} unreachable from start {start}")]
    UnreachableGoal { start: Cell, goal: Cell },
    #[error("goal points must have one entry per goal ({k}), got {len}")]
    GoalPointLength { k: usize, len: usize },
    #[error("goal radius must be positive, got {0}")]
    BadGoalRadius(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Candidate goals with priors and the designated real goal.
///
/// Deceptive runs need `k >= 2`; a single-goal set is accepted so degenerate
/// policies (entropy identically zero) stay expressible.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    goals: Vec<Cell>,
    real_index: usize,
    priors: Vec<f64>,
}

impl CandidateSet {
    pub fn new(goals: Vec<Cell>, real_index: usize, priors: Vec<f64>) -> Result<Self, ScenarioError> {
        let k = goals.len();
        if k == 0 {
            return Err(ScenarioError::NoGoals);
        }
        if real_index >= k {
            return Err(ScenarioError::RealIndexOutOfRange { index: real_index, k });
        }
        if priors.len() != k {
            return Err(ScenarioError::PriorLength { k, len: priors.len() });
        }
        let sum: f64 = priors.iter().sum();
        if priors.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(ScenarioError::PriorSum { sum });
        }
        for (i, g) in goals.iter().enumerate() {
            if goals[..i].contains(g) {
                return Err(ScenarioError::DuplicateGoal(*g));
            }
        }
        Ok(CandidateSet {
            goals,
            real_index,
            priors,
        })
    }

    pub fn uniform(goals: Vec<Cell>, real_index: usize) -> Result<Self, ScenarioError> {
        let k = goals.len();
        if k == 0 {
            return Err(ScenarioError::NoGoals);
        }
        let priors = vec![1.0 / k as f64; k];
        Self::new(goals, real_index, priors)
    }

    pub fn k(&self) -> usize {
        self.goals.len()
    }

    pub fn goals(&self) -> &[Cell] {
        &self.goals
    }

    pub fn goal(&self, i: usize) -> Cell {
        self.goals[i]
    }

    pub fn real_index(&self) -> usize {
        self.real_index
    }

    pub fn real_goal(&self) -> Cell {
        self.goals[self.real_index]
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }
}

/// An immutable navigation problem: map, start, candidate goals, mode.
///
/// Construction verifies that the start and all goals are free, mutually
/// distinct cells and that every goal is reachable from the start.
///
/// In continuous mode the start and goals are embedded at cell centers by
/// default; `with_start_point` / `with_goal_points` override the embedding.
#[derive(Debug, Clone)]
pub struct Scenario {
    map: GridMap,
    start: Cell,
    candidates: CandidateSet,
    mode: Mode,
    start_point: Point,
    goal_points: Vec<Point>,
    goal_radius: f64,
}

impl Scenario {
    pub fn new(
        map: GridMap,
        start: Cell,
        candidates: CandidateSet,
        mode: Mode,
    ) -> Result<Self, ScenarioError> {
        if !map.is_free(start) {
            return Err(ScenarioError::NotFree(start));
        }
        for &g in candidates.goals() {
            if !map.is_free(g) {
                return Err(ScenarioError::NotFree(g));
            }
            if g == start {
                return Err(ScenarioError::StartOnGoal(start));
            }
            optimal_cost(&map, start, g)
                .map_err(|_| ScenarioError::UnreachableGoal { start, goal: g })?;
        }
        let start_point = Point::cell_center(start);
        let goal_points = candidates.goals().iter().map(|&g| Point::cell_center(g)).collect();
        Ok(Scenario {
            map,
            start,
            candidates,
            mode,
            start_point,
            goal_points,
            goal_radius: DEFAULT_GOAL_RADIUS,
        })
    }

    pub fn discrete(map: GridMap, start: Cell, candidates: CandidateSet) -> Result<Self, ScenarioError> {
        Self::new(map, start, candidates, Mode::Discrete)
    }

    pub fn continuous(map: GridMap, start: Cell, candidates: CandidateSet) -> Result<Self, ScenarioError> {
        Self::new(map, start, candidates, Mode::Continuous)
    }

    /// Builds a scenario from a parsed map file ('G' real, 'F' fakes in
    /// row-major order, uniform priors).
    pub fn from_map_file(mf: &MapFile, mode: Mode) -> Result<Self, ScenarioError> {
        let mut goals = vec![mf.real_goal];
        goals.extend(mf.fake_goals.iter().copied());
        let candidates = CandidateSet::uniform(goals, 0)?;
        Self::new(mf.map.clone(), mf.start, candidates, mode)
    }

    /// Overrides the continuous embedding of the goals.
    pub fn with_goal_points(mut self, pts: Vec<Point>) -> Result<Self, ScenarioError> {
        if pts.len() != self.candidates.k() {
            return Err(ScenarioError::GoalPointLength {
                k: self.candidates.k(),
                len: pts.len(),
            });
        }
        self.goal_points = pts;
        Ok(self)
    }

    pub fn with_start_point(mut self, p: Point) -> Self {
        self.start_point = p;
        self
    }

    pub fn with_goal_radius(mut self, r: f64) -> Result<Self, ScenarioError> {
        if r <= 0.0 {
            return Err(ScenarioError::BadGoalRadius(r));
        }
        self.goal_radius = r;
        Ok(self)
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn start_point(&self) -> Point {
        self.start_point
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }

    pub fn k(&self) -> usize {
        self.candidates.k()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn goal_points(&self) -> &[Point] {
        &self.goal_points
    }

    pub fn goal_point(&self, i: usize) -> Point {
        self.goal_points[i]
    }

    pub fn goal_radius(&self) -> f64 {
        self.goal_radius
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("state {0} is not a free cell of the map")]
    BadCell(Cell),
    #[error("state ({0}, {1}) is outside free space")]
    BadPoint(f64, f64),
}

/// Result of one environment step, with one reward and one reached flag per
/// candidate. `terminal` is real-goal arrival; fake-goal arrival never ends
/// an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<S> {
    pub next: S,
    pub rewards: Vec<f64>,
    pub reached: Vec<bool>,
    pub terminal: bool,
}

/// One discrete step. Moves into obstacles or off-map leave the state
/// unchanged but still charge the move's step cost.
pub fn step_discrete(scn: &Scenario, s: Cell, a: Move) -> Result<StepOutcome<Cell>, EnvError> {
    if !scn.map.is_free(s) {
        return Err(EnvError::BadCell(s));
    }
    let (dx, dy) = a.delta();
    let target = s.offset(dx, dy);
    let next = if scn.map.is_free(target) { target } else { s };
    let cs = &scn.candidates;
    let mut rewards = Vec::with_capacity(cs.k());
    let mut reached = Vec::with_capacity(cs.k());
    for &g in cs.goals() {
        let hit = next == g;
        rewards.push(-a.cost() + if hit { GOAL_REWARD } else { 0.0 });
        reached.push(hit);
    }
    let terminal = reached[cs.real_index()];
    Ok(StepOutcome {
        next,
        rewards,
        reached,
        terminal,
    })
}

/// One continuous step: Euler displacement `v * (cos h, sin h)` over a unit
/// time step, truncated at the first obstacle or world-boundary intersection.
/// Rewards are the negated Euclidean distances from the next state to each
/// goal (post-transition).
pub fn step_continuous(
    scn: &Scenario,
    s: Point,
    a: ContAction,
) -> Result<StepOutcome<Point>, EnvError> {
    if !point_in_free_space(scn.map(), s) {
        return Err(EnvError::BadPoint(s.x, s.y));
    }
    let a = a.clipped();
    let d = (a.velocity * a.heading.cos(), a.velocity * a.heading.sin());
    let next = truncate_motion(scn.map(), s, d);
    debug_assert!(point_in_free_space(scn.map(), next));
    let cs = &scn.candidates;
    let mut rewards = Vec::with_capacity(cs.k());
    let mut reached = Vec::with_capacity(cs.k());
    for gp in &scn.goal_points {
        let dist = next.distance(*gp);
        rewards.push(-dist);
        reached.push(dist <= scn.goal_radius);
    }
    let terminal = reached[cs.real_index()];
    Ok(StepOutcome {
        next,
        rewards,
        reached,
        terminal,
    })
}

/// True when `p` lies inside the world and not strictly inside an obstacle
/// square. Points exactly on an obstacle face count as free (wall surface).
pub fn point_in_free_space(map: &GridMap, p: Point) -> bool {
    if p.x < 0.0 || p.x > map.width() as f64 || p.y < 0.0 || p.y > map.height() as f64 {
        return false;
    }
    !point_strictly_in_obstacle(map, p)
}

fn point_strictly_in_obstacle(map: &GridMap, p: Point) -> bool {
    // Only the containing cell can strictly contain p; a point on a cell
    // boundary is not strictly inside either neighbor.
    let cx = p.x.floor() as i32;
    let cy = p.y.floor() as i32;
    let c = Cell::new(cx, cy);
    if !map.is_obstacle(c) {
        return false;
    }
    let (fx, fy) = (p.x - cx as f64, p.y - cy as f64);
    fx > 0.0 && fx < 1.0 && fy > 0.0 && fy < 1.0
}

const TRUNCATION_BACKOFF: f64 = 1e-7;

/// Moves from `s` by displacement `d`, stopping just before the first
/// obstacle or world-boundary intersection along the segment.
pub fn truncate_motion(map: &GridMap, s: Point, d: (f64, f64)) -> Point {
    let len = (d.0 * d.0 + d.1 * d.1).sqrt();
    if len < 1e-12 {
        return s;
    }
    let mut t_hit = 1.0f64;
    let mut hit = false;

    // World boundary.
    for (pos, vel, lo, hi) in [
        (s.x, d.0, 0.0, map.width() as f64),
        (s.y, d.1, 0.0, map.height() as f64),
    ] {
        if vel > 0.0 {
            let t = (hi - pos) / vel;
            if t < t_hit {
                t_hit = t;
                hit = true;
            }
        } else if vel < 0.0 {
            let t = (lo - pos) / vel;
            if t < t_hit {
                t_hit = t;
                hit = true;
            }
        }
    }

    // Obstacle squares: earliest entry into an interior along the segment.
    // Only squares near the segment's bounding box can matter.
    let min_x = (s.x.min(s.x + d.0).floor() as i32 - 1).max(0);
    let max_x = (s.x.max(s.x + d.0).ceil() as i32 + 1).min(map.width());
    let min_y = (s.y.min(s.y + d.1).floor() as i32 - 1).max(0);
    let max_y = (s.y.max(s.y + d.1).ceil() as i32 + 1).min(map.height());
    for cy in min_y..max_y {
        for cx in min_x..max_x {
            let c = Cell::new(cx, cy);
            if !map.is_obstacle(c) {
                continue;
            }
            if let Some(t) = segment_box_entry(s, d, cx as f64, cy as f64) {
                if t < t_hit {
                    t_hit = t;
                    hit = true;
                }
            }
        }
    }

    if !hit {
        return Point::new(s.x + d.0, s.y + d.1);
    }
    let t = (t_hit - TRUNCATION_BACKOFF / len).max(0.0);
    let mut next = Point::new(s.x + t * d.0, s.y + t * d.1);
    // Guard against the backed-off point landing inside due to rounding.
    let mut t_guard = t;
    while point_strictly_in_obstacle(map, next) && t_guard > 0.0 {
        t_guard = (t_guard - TRUNCATION_BACKOFF / len).max(0.0);
        next = Point::new(s.x + t_guard * d.0, s.y + t_guard * d.1);
    }
    next
}

/// Entry parameter of the segment `s + t*d`, `t` in `[0, 1]`, into the open
/// unit square at `(bx, by)`; `None` if the interior is never entered.
fn segment_box_entry(s: Point, d: (f64, f64), bx: f64, by: f64) -> Option<f64> {
    let mut t_enter = 0.0f64;
    let mut t_exit = 1.0f64;
    for (pos, vel, lo, hi) in [(s.x, d.0, bx, bx + 1.0), (s.y, d.1, by, by + 1.0)] {
        if vel == 0.0 {
            if pos <= lo || pos >= hi {
                return None;
            }
        } else {
            let mut t0 = (lo - pos) / vel;
            let mut t1 = (hi - pos) / vel;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_enter = t_enter.max(t0);
            t_exit = t_exit.min(t1);
        }
    }
    (t_enter < t_exit).then_some(t_enter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::load_map;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, SQRT_2};

    fn two_goal_scenario() -> Scenario {
        // 5x5 empty, start bottom-left, real goal (4,4), fake (0,4).
        let map = GridMap::empty(5, 5).unwrap();
        let cs = CandidateSet::uniform(vec![Cell::new(4, 4), Cell::new(0, 4)], 0).unwrap();
        Scenario::discrete(map, Cell::new(0, 0), cs).unwrap()
    }

    #[test]
    fn step_moves_and_charges_lateral_cost() {
        let scn = two_goal_scenario();
        let out = step_discrete(&scn, Cell::new(0, 0), Move::Right).unwrap();
        assert_eq!(out.next, Cell::new(1, 0));
        assert_eq!(out.rewards, vec![-1.0, -1.0]);
        assert!(!out.terminal);
        assert_eq!(out.reached, vec![false, false]);
    }

    #[test]
    fn reaching_real_goal_is_terminal_with_goal_reward() {
        let scn = two_goal_scenario();
        let out = step_discrete(&scn, Cell::new(3, 3), Move::UpRight).unwrap();
        assert_eq!(out.next, Cell::new(4, 4));
        assert!((out.rewards[0] - (GOAL_REWARD - SQRT_2)).abs() < 1e-12);
        assert!((out.rewards[1] - (-SQRT_2)).abs() < 1e-12);
        assert!(out.terminal);
    }

    #[test]
    fn blocked_move_is_a_charged_noop() {
        let scn = two_goal_scenario();
        let out = step_discrete(&scn, Cell::new(0, 0), Move::Left).unwrap();
        assert_eq!(out.next, Cell::new(0, 0));
        assert_eq!(out.rewards, vec![-1.0, -1.0]);
        assert!(!out.terminal);
    }

    #[test]
    fn move_into_obstacle_is_a_charged_noop() {
        let mf = load_map("S#.\n...\nF.G").unwrap();
        let scn = Scenario::from_map_file(&mf, Mode::Discrete).unwrap();
        let out = step_discrete(&scn, Cell::new(0, 0), Move::Right).unwrap();
        assert_eq!(out.next, Cell::new(0, 0));
        assert_eq!(out.rewards, vec![-1.0, -1.0]);
    }

    #[test]
    fn stepping_from_invalid_state_is_a_contract_violation() {
        let scn = two_goal_scenario();
        let err = step_discrete(&scn, Cell::new(-1, 0), Move::Up).unwrap_err();
        assert!(matches!(err, EnvError::BadCell(_)));
    }

    #[test]
    fn fake_goal_arrival_rewards_that_candidate_only() {
        let scn = two_goal_scenario();
        let out = step_discrete(&scn, Cell::new(0, 3), Move::Up).unwrap();
        assert_eq!(out.next, Cell::new(0, 4));
        assert!((out.rewards[1] - (GOAL_REWARD - 1.0)).abs() < 1e-12);
        assert!((out.rewards[0] - (-1.0)).abs() < 1e-12);
        assert!(out.reached[1]);
        assert!(!out.terminal);
    }

    fn open_continuous_scenario() -> Scenario {
        let map = GridMap::empty(8, 8).unwrap();
        let cs = CandidateSet::uniform(vec![Cell::new(5, 0), Cell::new(0, 5)], 0).unwrap();
        Scenario::continuous(map, Cell::new(2, 2), cs)
            .unwrap()
            .with_goal_points(vec![Point::new(5.0, 0.0), Point::new(0.0, 5.0)])
            .unwrap()
            .with_start_point(Point::new(0.0, 0.0))
    }

    #[test]
    fn continuous_step_in_open_space() {
        let scn = open_continuous_scenario();
        let out = step_continuous(&scn, Point::new(0.0, 0.0), ContAction::new(0.0, 1.0)).unwrap();
        assert!((out.next.x - 1.0).abs() < 1e-9);
        assert!(out.next.y.abs() < 1e-9);
        assert!((out.rewards[0] - (-4.0)).abs() < 1e-9);
    }

    #[test]
    fn continuous_step_truncates_at_wall() {
        // Wall column of obstacle squares at x in [1, 2], gap at y=4.
        let map = GridMap::new(5, 5, (0..4).map(|y| Cell::new(1, y))).unwrap();
        let cs = CandidateSet::uniform(vec![Cell::new(4, 4), Cell::new(4, 0)], 0).unwrap();
        let scn = Scenario::continuous(map, Cell::new(0, 0), cs).unwrap();
        let out = step_continuous(&scn, Point::new(0.5, 0.5), ContAction::new(0.0, 1.0)).unwrap();
        assert!(out.next.x < 1.0 && out.next.x > 1.0 - 1e-5, "x = {}", out.next.x);
        assert!((out.next.y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn continuous_goal_radius_terminates() {
        let map = GridMap::empty(8, 8).unwrap();
        let cs = CandidateSet::uniform(vec![Cell::new(5, 4), Cell::new(0, 0)], 0).unwrap();
        let scn = Scenario::continuous(map, Cell::new(2, 2), cs)
            .unwrap()
            .with_goal_points(vec![Point::new(5.0, 4.0), Point::new(0.5, 0.5)])
            .unwrap();
        let out = step_continuous(&scn, Point::new(4.2, 4.0), ContAction::new(0.0, 1.0)).unwrap();
        assert!(out.reached[0]);
        assert!(out.terminal);
    }

    #[test]
    fn continuous_negative_velocity_reverses() {
        let scn = open_continuous_scenario();
        let out =
            step_continuous(&scn, Point::new(3.0, 3.0), ContAction::new(FRAC_PI_2, -1.0)).unwrap();
        assert!((out.next.x - 3.0).abs() < 1e-9);
        assert!((out.next.y - 2.0).abs() < 1e-9);
    }

    #[test]
    fn continuous_world_boundary_truncates() {
        let scn = open_continuous_scenario();
        let out = step_continuous(&scn, Point::new(7.5, 3.0), ContAction::new(0.0, 1.0)).unwrap();
        assert!(out.next.x <= 8.0);
        assert!(out.next.x > 8.0 - 1e-5);
    }

    #[test]
    fn scenario_rejects_unreachable_goal() {
        // Full wall column isolates the right side.
        let map = GridMap::new(5, 5, (0..5).map(|y| Cell::new(2, y))).unwrap();
        let cs = CandidateSet::uniform(vec![Cell::new(4, 0), Cell::new(0, 4)], 0).unwrap();
        let err = Scenario::discrete(map, Cell::new(0, 0), cs).unwrap_err();
        assert!(matches!(err, ScenarioError::UnreachableGoal { .. }));
    }

    #[test]
    fn scenario_rejects_start_on_goal_and_duplicates() {
        let map = GridMap::empty(5, 5).unwrap();
        let cs = CandidateSet::uniform(vec![Cell::new(0, 0), Cell::new(4, 4)], 0).unwrap();
        let err = Scenario::discrete(map.clone(), Cell::new(0, 0), cs).unwrap_err();
        assert!(matches!(err, ScenarioError::StartOnGoal(_)));
        let dup = CandidateSet::uniform(vec![Cell::new(4, 4), Cell::new(4, 4)], 0).unwrap_err();
        assert!(matches!(dup, ScenarioError::DuplicateGoal(_)));
    }

    #[test]
    fn candidate_set_validates_priors() {
        let goals = vec![Cell::new(1, 1), Cell::new(3, 3)];
        assert!(matches!(
            CandidateSet::new(goals.clone(), 0, vec![0.5]).unwrap_err(),
            ScenarioError::PriorLength { .. }
        ));
        assert!(matches!(
            CandidateSet::new(goals.clone(), 0, vec![0.7, 0.7]).unwrap_err(),
            ScenarioError::PriorSum { .. }
        ));
        assert!(matches!(
            CandidateSet::new(goals, 2, vec![0.5, 0.5]).unwrap_err(),
            ScenarioError::RealIndexOutOfRange { .. }
        ));
    }

    #[test]
    fn discrete_step_is_deterministic() {
        let scn = two_goal_scenario();
        for a in Move::ALL {
            let o1 = step_discrete(&scn, Cell::new(2, 2), a).unwrap();
            let o2 = step_discrete(&scn, Cell::new(2, 2), a).unwrap();
            assert_eq!(o1, o2);
        }
    }

    proptest! {
        // Truncation never places the agent inside an obstacle, and stepping
        // is deterministic.
        #[test]
        fn truncation_never_enters_obstacles(
            sx in 0.0f64..5.0, sy in 0.0f64..5.0,
            heading in 0.0f64..std::f64::consts::TAU,
            velocity in -1.0f64..1.0,
        ) {
            let map = GridMap::new(
                5, 5,
                [Cell::new(2, 2), Cell::new(3, 1), Cell::new(1, 3)],
            ).unwrap();
            let s = Point::new(sx, sy);
            prop_assume!(point_in_free_space(&map, s));
            let cs = CandidateSet::uniform(vec![Cell::new(4, 4), Cell::new(0, 4)], 0).unwrap();
            let scn = Scenario::continuous(map.clone(), Cell::new(0, 0), cs).unwrap();
            let a = ContAction::new(heading, velocity);
            let o1 = step_continuous(&scn, s, a).unwrap();
            let o2 = step_continuous(&scn, s, a).unwrap();
            prop_assert!(point_in_free_space(&map, o1.next));
            prop_assert!(!point_strictly_in_obstacle(&map, o1.next));
            prop_assert_eq!(o1.clone(), o2);
            // Reward vector length always equals k.
            prop_assert_eq!(o1.rewards.len(), scn.k());
        }
    }
}
