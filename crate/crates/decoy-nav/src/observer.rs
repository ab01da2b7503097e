//! Observer models: Q-difference belief accumulation, the Boltzmann
//! posterior over candidate goals, entropy scoring, and the independent
//! cost-based plan recognizer used by the passive evaluation and the pirate.
//!
//! Beliefs are per-episode values owned by one worker; every scoring
//! function here is pure given its inputs.

use rand::RngCore;
use thiserror::Error;

use crate::agents::Subagent;
use crate::env::{CandidateSet, Move, Point};
use crate::grid::{step_cost, Cell, DistanceField, GridMap};

#[derive(Debug, Error, PartialEq)]
pub enum ObserverError {
    #[error("all candidate weights vanished; posterior undefined")]
    AllWeightsZero,
    #[error("observer requires a free current cell, got {0}")]
    BadCell(Cell),
}

/// Running per-candidate Q-difference accumulators for one episode.
///
/// `delta(i)` is the sum over observed steps of the gap between the taken
/// action's Q-value and the candidate's best Q-value; zero means the
/// trajectory so far is optimal for that candidate. In discrete mode every
/// term is nonpositive; the continuous variant's stochastic baseline can
/// make single terms positive.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTrace {
    deltas: Vec<f64>,
    steps: usize,
}

impl BeliefTrace {
    pub fn new(k: usize) -> Self {
        BeliefTrace {
            deltas: vec![0.0; k],
            steps: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.deltas.len()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn delta(&self, i: usize) -> f64 {
        self.deltas[i]
    }

    /// Commits one observed step's per-candidate terms.
    pub fn extend(&mut self, terms: &[f64]) {
        assert_eq!(terms.len(), self.deltas.len());
        for (d, t) in self.deltas.iter_mut().zip(terms) {
            *d += t;
        }
        self.steps += 1;
    }

    /// Accumulators as they would look after one more step, without
    /// committing it.
    pub fn extended(&self, terms: &[f64]) -> Vec<f64> {
        assert_eq!(terms.len(), self.deltas.len());
        self.deltas.iter().zip(terms).map(|(d, t)| d + t).collect()
    }
}

/// Discrete per-step Q-difference term: `Q_i(s,a) - max_a' Q_i(s,a')`.
/// Always nonpositive; zero iff `a` maximizes the candidate's Q at `s`.
pub fn delta_step_discrete<SA>(agent: &SA, s: Cell, a: Move) -> f64
where
    SA: Subagent<State = Cell, Action = Move>,
{
    let q = agent.q_value(s, a);
    let best = Move::ALL
        .iter()
        .map(|&m| agent.q_value(s, m))
        .fold(f64::NEG_INFINITY, f64::max);
    q - best
}

/// Continuous per-step Q-difference term against a sampled-policy baseline:
/// `Q_i(s,a) - mean_j Q_i(s, a*_j)` with `a*_j ~ pi_i(s)`.
///
/// The baseline actions are sampled once per decision (see
/// [`sample_baselines`]) and reused for every candidate action scored within
/// that decision. With a stochastic baseline the term may be positive.
pub fn delta_step_continuous<SA>(agent: &SA, s: Point, a: SA::Action, baseline: &[SA::Action]) -> f64
where
    SA: Subagent<State = Point>,
{
    assert!(!baseline.is_empty(), "need at least one baseline sample");
    let base: f64 = baseline.iter().map(|&b| agent.q_value(s, b)).sum::<f64>()
        / baseline.len() as f64;
    agent.q_value(s, a) - base
}

/// Draws each candidate's baseline action set for one decision point.
pub fn sample_baselines<SA>(
    agents: &[SA],
    s: Point,
    samples: usize,
    rng: &mut dyn RngCore,
) -> Vec<Vec<SA::Action>>
where
    SA: Subagent<State = Point>,
{
    agents
        .iter()
        .map(|ag| (0..samples.max(1)).map(|_| ag.sample_action(s, rng)).collect())
        .collect()
}

/// Boltzmann posterior over candidates: `p_i ~ exp(delta_i) * prior_i`,
/// renormalized to a distribution. Computed in log space with max
/// subtraction.
pub fn posterior(deltas: &[f64], priors: &[f64]) -> Vec<f64> {
    assert_eq!(deltas.len(), priors.len());
    let log_w: Vec<f64> = deltas
        .iter()
        .zip(priors)
        .map(|(&d, &p)| if p > 0.0 { d + p.ln() } else { f64::NEG_INFINITY })
        .collect();
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(
        m.is_finite(),
        "posterior undefined: all candidate weights vanished"
    );
    let w: Vec<f64> = log_w.iter().map(|&lw| (lw - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|&x| x / z).collect()
}

/// Shannon entropy in bits, with `0 * log 0 := 0`. Ranges over
/// `[0, log2 k]` for a k-way distribution.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.log2())
        .sum::<f64>()
}

/// Snaps a continuous position to the nearest free cell (by distance to the
/// cell center), ties broken toward the lexicographically lower `(x, y)`.
pub fn snap_to_free_cell(map: &GridMap, p: Point) -> Cell {
    let containing = Cell::new(p.x.floor() as i32, p.y.floor() as i32);
    let clamped = Cell::new(
        containing.x.clamp(0, map.width() - 1),
        containing.y.clamp(0, map.height() - 1),
    );
    if map.is_free(clamped) {
        return clamped;
    }
    let mut best: Option<Cell> = None;
    let mut best_d = f64::INFINITY;
    for c in map.free_cells() {
        let d = p.distance(Point::cell_center(c));
        let better = d < best_d - 1e-12
            || ((d - best_d).abs() <= 1e-12
                && best.is_some_and(|b| (c.x, c.y) < (b.x, b.y)));
        if better {
            best_d = d;
            best = Some(c);
        }
    }
    best.expect("map has at least one free cell")
}

/// Cost-based plan recognizer: goal weights from how little the observed
/// path diverges from the optimal path to each goal.
///
/// Independent of any agent Q-function; this is the evaluation observer and
/// the pirate's intention-recognition component.
#[derive(Debug, Clone)]
pub struct CostObserver {
    goal_fields: Vec<DistanceField>,
    priors: Vec<f64>,
}

impl CostObserver {
    pub fn new(map: &GridMap, cs: &CandidateSet) -> Self {
        // Costs are symmetric, so a field sourced at the goal gives the
        // distance from any cell to that goal.
        let goal_fields = cs
            .goals()
            .iter()
            .map(|&g| DistanceField::compute(map, g).expect("goals are free cells"))
            .collect();
        CostObserver {
            goal_fields,
            priors: cs.priors().to_vec(),
        }
    }

    pub fn k(&self) -> usize {
        self.goal_fields.len()
    }

    /// Posterior over goals given observed cells (start first). For each
    /// goal g: `delta_g = cost(start -> g) - (cost(obs) + cost(current -> g))`
    /// and `p_g ~ exp(delta_g) * prior_g`, renormalized. Goals unreachable
    /// from the current cell get weight zero.
    pub fn posterior_for_cells(&self, cells: &[Cell]) -> Result<Vec<f64>, ObserverError> {
        if cells.is_empty() {
            return Ok(self.priors.clone());
        }
        let start = cells[0];
        let current = *cells.last().unwrap();
        let mut path_cost = 0.0;
        for w in cells.windows(2) {
            path_cost += observed_step_cost(w[0], w[1]);
        }
        self.posterior_from_summary(start, current, path_cost)
    }

    /// Same posterior from an incrementally maintained summary.
    pub fn posterior_from_summary(
        &self,
        start: Cell,
        current: Cell,
        path_cost: f64,
    ) -> Result<Vec<f64>, ObserverError> {
        let mut log_w = Vec::with_capacity(self.k());
        for (field, &prior) in self.goal_fields.iter().zip(&self.priors) {
            match (field.distance(start), field.distance(current)) {
                (Some(d_start), Some(d_cur)) if prior > 0.0 => {
                    let delta = d_start - (path_cost + d_cur);
                    log_w.push(delta + prior.ln());
                }
                _ => log_w.push(f64::NEG_INFINITY),
            }
        }
        let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(ObserverError::AllWeightsZero);
        }
        let w: Vec<f64> = log_w.iter().map(|&lw| (lw - m).exp()).collect();
        let z: f64 = w.iter().sum();
        Ok(w.iter().map(|&x| x / z).collect())
    }
}

/// Cost the observer attributes to one observed displacement: the move cost
/// for adjacent cells, zero for no displacement, and the straight-line cost
/// between non-adjacent cells (snapped continuous observations may jump).
pub fn observed_step_cost(from: Cell, to: Cell) -> f64 {
    let (dx, dy) = (to.x - from.x, to.y - from.y);
    if dx == 0 && dy == 0 {
        0.0
    } else if dx.abs() <= 1 && dy.abs() <= 1 {
        step_cost(dx, dy)
    } else {
        let fx = (to.x - from.x) as f64;
        let fy = (to.y - from.y) as f64;
        (fx * fx + fy * fy).sqrt()
    }
}

/// Incremental wrapper over [`CostObserver`] for one growing trajectory.
#[derive(Debug, Clone)]
pub struct CostTracker<'a> {
    observer: &'a CostObserver,
    start: Cell,
    current: Cell,
    path_cost: f64,
}

impl<'a> CostTracker<'a> {
    pub fn new(observer: &'a CostObserver, start: Cell) -> Self {
        CostTracker {
            observer,
            start,
            current: start,
            path_cost: 0.0,
        }
    }

    pub fn advance(&mut self, next: Cell) {
        self.path_cost += observed_step_cost(self.current, next);
        self.current = next;
    }

    pub fn current(&self) -> Cell {
        self.current
    }

    pub fn posterior(&self) -> Result<Vec<f64>, ObserverError> {
        self.observer
            .posterior_from_summary(self.start, self.current, self.path_cost)
    }
}

/// One-shot form of the cost-based recognizer over an observed cell
/// sequence.
pub fn cost_based_posterior(
    map: &GridMap,
    observed: &[Cell],
    cs: &CandidateSet,
) -> Result<Vec<f64>, ObserverError> {
    CostObserver::new(map, cs).posterior_for_cells(observed)
}

/// Snaps a continuous trajectory to free cells for the recognizer.
pub fn snap_trajectory(map: &GridMap, points: &[Point]) -> Vec<Cell> {
    points.iter().map(|&p| snap_to_free_cell(map, p)).collect()
}
