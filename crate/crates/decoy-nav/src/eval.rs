//! Metrics and artifact emission: real-goal-probability curves, last
//! deceptive point, path-cost ratios, state-visitation heatmaps, and
//! deterministic CSV/SVG output.
//!
//! Every metric is a pure function of recorded trajectories; emission is
//! byte-deterministic for fixed input (fixed column order, `%.6f` floats,
//! no timestamps in file bodies).

use std::path::Path;

use rand::RngCore;
use thiserror::Error;

use crate::env::{Mode, Scenario};
use crate::grid::{optimal_cost, Cell, GridMap, VisitGrid};
use crate::observer::{snap_to_free_cell, CostObserver, CostTracker};
use crate::policies::DecisionPolicy;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty trajectory record")]
    EmptyRecord,
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One recorded step: the state the agent was in, what it paid to leave it,
/// and the evaluation observer's belief at that state (given the cells
/// observed so far, before the step executes).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajStep {
    pub cell: Cell,
    pub action: &'static str,
    pub step_cost: f64,
    pub rewards: Vec<f64>,
    pub posterior: Vec<f64>,
}

/// A full episode as the evaluation pipeline consumes it. The first step's
/// posterior equals the prior-adjusted initial belief.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub scenario_id: String,
    pub agent_kind: String,
    pub seed: u64,
    pub steps: Vec<TrajStep>,
    pub total_cost: f64,
    pub reached_real: bool,
}

impl TrajectoryRecord {
    pub fn start(&self) -> Option<Cell> {
        self.steps.first().map(|s| s.cell)
    }

    /// Per-step mean posterior probability of the real goal.
    pub fn mean_real_probability(&self, real_index: usize) -> f64 {
        if self.steps.is_empty() {
            return f64::NAN;
        }
        self.steps.iter().map(|s| s.posterior[real_index]).sum::<f64>() / self.steps.len() as f64
    }

    pub fn visited_cells(&self) -> Vec<Cell> {
        self.steps.iter().map(|s| s.cell).collect()
    }
}

/// Runs one discrete episode under `policy`, recording the cost-based
/// observer's posterior at every state.
pub fn record_episode<P>(
    scn: &Scenario,
    policy: &mut P,
    observer: &CostObserver,
    start: Cell,
    horizon: usize,
    scenario_id: &str,
    seed: u64,
    rng: &mut dyn RngCore,
) -> TrajectoryRecord
where
    P: DecisionPolicy<State = Cell, Action = crate::env::Move>,
{
    policy.begin_episode();
    let mut tracker = CostTracker::new(observer, start);
    let real = scn.candidates().real_index();
    let mut steps = Vec::new();
    let mut s = start;
    let mut total_cost = 0.0;
    let mut reached = false;
    for _ in 0..horizon {
        let belief = tracker
            .posterior()
            .unwrap_or_else(|_| scn.candidates().priors().to_vec());
        let a = policy.choose(s, rng);
        let out = crate::env::step_discrete(scn, s, a).expect("evaluation stays in free space");
        steps.push(TrajStep {
            cell: s,
            action: a.name(),
            step_cost: a.cost(),
            rewards: out.rewards.clone(),
            posterior: belief,
        });
        total_cost += a.cost();
        s = out.next;
        tracker.advance(s);
        if out.terminal {
            reached = true;
            break;
        }
    }
    let _ = real;
    TrajectoryRecord {
        scenario_id: scenario_id.to_string(),
        agent_kind: policy.kind().to_string(),
        seed,
        steps,
        total_cost,
        reached_real: reached,
    }
}

/// Continuous counterpart of [`record_episode`]: states are snapped to free
/// cells for the observer and cost is counted in time steps.
pub fn record_episode_continuous<P>(
    scn: &Scenario,
    policy: &mut P,
    observer: &CostObserver,
    start: crate::env::Point,
    horizon: usize,
    scenario_id: &str,
    seed: u64,
    rng: &mut dyn RngCore,
) -> TrajectoryRecord
where
    P: DecisionPolicy<State = crate::env::Point, Action = crate::env::ContAction>,
{
    assert_eq!(scn.mode(), Mode::Continuous);
    policy.begin_episode();
    let map = scn.map();
    let start_cell = snap_to_free_cell(map, start);
    let mut tracker = CostTracker::new(observer, start_cell);
    let mut steps = Vec::new();
    let mut s = start;
    let mut count = 0usize;
    let mut reached = false;
    for _ in 0..horizon {
        let belief = tracker
            .posterior()
            .unwrap_or_else(|_| scn.candidates().priors().to_vec());
        let a = policy.choose(s, rng);
        let out = crate::env::step_continuous(scn, s, a).expect("evaluation stays in free space");
        steps.push(TrajStep {
            cell: snap_to_free_cell(map, s),
            action: "steer",
            step_cost: 1.0,
            rewards: out.rewards.clone(),
            posterior: belief,
        });
        count += 1;
        s = out.next;
        tracker.advance(snap_to_free_cell(map, s));
        if out.terminal {
            reached = true;
            break;
        }
    }
    TrajectoryRecord {
        scenario_id: scenario_id.to_string(),
        agent_kind: policy.kind().to_string(),
        seed,
        steps,
        total_cost: count as f64,
        reached_real: reached,
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Real-goal probability at the given percentages of path completion.
///
/// Completion is measured as the fraction of accumulated cost: the value at
/// percentage `p` is the posterior at the last step whose cumulative cost
/// (including its own move) is at most `p%` of the total, clamped to the
/// first step below that (so `p = 0` reports the initial belief).
pub fn rg_prob_curve(
    rec: &TrajectoryRecord,
    real_index: usize,
    percentages: &[f64],
) -> Result<Vec<(f64, f64)>, EvalError> {
    if rec.steps.is_empty() {
        return Err(EvalError::EmptyRecord);
    }
    let mut cum = Vec::with_capacity(rec.steps.len());
    let mut acc = 0.0;
    for s in &rec.steps {
        acc += s.step_cost;
        cum.push(acc);
    }
    let total = acc;
    let mut out = Vec::with_capacity(percentages.len());
    for &pct in percentages {
        let budget = pct / 100.0 * total;
        let mut idx = 0usize;
        for (i, &c) in cum.iter().enumerate() {
            if c <= budget + 1e-12 {
                idx = i;
            } else {
                break;
            }
        }
        if cum[0] > budget + 1e-12 {
            idx = 0; // nothing qualifies: report the initial belief
        }
        out.push((pct, rec.steps[idx].posterior[real_index]));
    }
    Ok(out)
}

/// Last deceptive point: the greatest step index where the real goal is NOT
/// the strict argmax of the posterior (-1 when the real goal is strict
/// argmax at every step), plus the steps taken after it.
pub fn compute_ldp(rec: &TrajectoryRecord, real_index: usize) -> (i64, usize) {
    let n = rec.steps.len();
    let mut ldp: i64 = -1;
    for (t, step) in rec.steps.iter().enumerate() {
        let p_real = step.posterior[real_index];
        let strict = step
            .posterior
            .iter()
            .enumerate()
            .all(|(i, &p)| i == real_index || p_real > p);
        if !strict {
            ldp = t as i64;
        }
    }
    let steps_after = (n as i64 - 1 - ldp) as usize;
    (ldp, steps_after)
}

/// Path cost relative to the optimal honest cost from the record's start.
/// Non-reaching records report an infinity sentinel and are flagged for
/// exclusion from aggregates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostRatio {
    pub ratio: f64,
    pub excluded: bool,
}

pub fn path_cost_ratio(rec: &TrajectoryRecord, scn: &Scenario) -> Result<CostRatio, EvalError> {
    let start = rec.start().ok_or(EvalError::EmptyRecord)?;
    if !rec.reached_real {
        return Ok(CostRatio {
            ratio: f64::INFINITY,
            excluded: true,
        });
    }
    let oracle = optimal_cost(scn.map(), start, scn.candidates().real_goal())
        .expect("scenario construction verified reachability");
    Ok(CostRatio {
        ratio: rec.total_cost / oracle,
        excluded: false,
    })
}

/// One aggregated evaluation row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub scenario_id: String,
    pub agent: String,
    pub seed: u64,
    pub mean_real_probability: f64,
    pub mean_real_probability_pct: f64,
    pub path_cost_ratio: f64,
    pub ldp_index: i64,
    pub steps_after_ldp: usize,
    pub reached_real: bool,
}

/// Builds the metric row for one record. The percentile-mean probability is
/// also emitted because "average over the trajectory" is ambiguous between
/// per-step and per-completion-percentile averaging.
pub fn metric_row(rec: &TrajectoryRecord, scn: &Scenario) -> Result<MetricRow, EvalError> {
    let real = scn.candidates().real_index();
    let pcts: Vec<f64> = (0..=20).map(|i| i as f64 * 5.0).collect();
    let curve = rg_prob_curve(rec, real, &pcts)?;
    let pct_mean = curve.iter().map(|&(_, p)| p).sum::<f64>() / curve.len() as f64;
    let (ldp, steps_after) = compute_ldp(rec, real);
    let ratio = path_cost_ratio(rec, scn)?;
    Ok(MetricRow {
        scenario_id: rec.scenario_id.clone(),
        agent: rec.agent_kind.clone(),
        seed: rec.seed,
        mean_real_probability: rec.mean_real_probability(real),
        mean_real_probability_pct: pct_mean,
        path_cost_ratio: ratio.ratio,
        ldp_index: ldp,
        steps_after_ldp: steps_after,
        reached_real: rec.reached_real,
    })
}

/// Mean over reaching rows plus the failure rate, keeping non-reaching runs
/// out of cost/probability aggregates so they cannot distort them.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub agent: String,
    pub runs: usize,
    pub reached: usize,
    pub failure_rate: f64,
    pub mean_real_probability: f64,
    pub mean_cost_ratio: f64,
    pub mean_steps_after_ldp: f64,
}

pub fn aggregate(agent: &str, rows: &[MetricRow]) -> Aggregate {
    let mine: Vec<&MetricRow> = rows.iter().filter(|r| r.agent == agent).collect();
    let reached: Vec<&&MetricRow> = mine.iter().filter(|r| r.reached_real).collect();
    let n = reached.len().max(1) as f64;
    Aggregate {
        agent: agent.to_string(),
        runs: mine.len(),
        reached: reached.len(),
        failure_rate: if mine.is_empty() {
            0.0
        } else {
            1.0 - reached.len() as f64 / mine.len() as f64
        },
        mean_real_probability: reached.iter().map(|r| r.mean_real_probability).sum::<f64>() / n,
        mean_cost_ratio: reached.iter().map(|r| r.path_cost_ratio).sum::<f64>() / n,
        mean_steps_after_ldp: reached
            .iter()
            .map(|r| r.steps_after_ldp as f64)
            .sum::<f64>()
            / n,
    }
}

// ---------------------------------------------------------------------------
// Heatmaps
// ---------------------------------------------------------------------------

/// Overlap coefficient between the set of path cells and the top fraction
/// of visited cells by count: `|A & B| / min(|A|, |B|)`.
pub fn overlap_coefficient(visits: &VisitGrid, path: &[Cell], top_fraction: f64) -> f64 {
    let mut visited: Vec<(Cell, u64)> = visits.iter().filter(|&(_, n)| n > 0).collect();
    if visited.is_empty() || path.is_empty() {
        return 0.0;
    }
    visited.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let take = ((visited.len() as f64 * top_fraction).ceil() as usize).max(1);
    let top: Vec<Cell> = visited[..take].iter().map(|&(c, _)| c).collect();
    let mut path_set: Vec<Cell> = path.to_vec();
    path_set.sort();
    path_set.dedup();
    let inter = path_set.iter().filter(|c| top.contains(c)).count();
    inter as f64 / (path_set.len().min(top.len())) as f64
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

/// Visit counts as a CSV matrix (row y per line, x across).
pub fn heatmap_csv(visits: &VisitGrid) -> String {
    let mut out = String::new();
    for y in 0..visits.height() {
        let row: Vec<String> = (0..visits.width())
            .map(|x| visits.count(Cell::new(x, y)).to_string())
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Grayscale SVG of the visitation counts with start/goal markers and the
/// final path overlaid. Self-contained, deterministic bytes.
pub fn heatmap_svg(
    visits: &VisitGrid,
    map: &GridMap,
    start: Cell,
    goals: &[Cell],
    real_index: usize,
    path: &[Cell],
) -> String {
    let cell_px = 16;
    let w = map.width() * cell_px;
    let h = map.height() * cell_px;
    let max = visits.max_count().max(1) as f64;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n"
    ));
    out.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"#000000\"/>\n"
    ));
    // SVG y grows downward; flip so that the movement direction "up"
    // renders upward.
    let flip_y = |y: i32| (map.height() - 1 - y) * cell_px;
    for y in 0..map.height() {
        for x in 0..map.width() {
            let c = Cell::new(x, y);
            let px = x * cell_px;
            let py = flip_y(y);
            if map.is_obstacle(c) {
                out.push_str(&format!(
                    "<rect x=\"{px}\" y=\"{py}\" width=\"{cell_px}\" height=\"{cell_px}\" \
                     fill=\"#20304a\"/>\n"
                ));
            } else {
                let n = visits.count(c);
                if n > 0 {
                    let level = (255.0 * (n as f64 / max).sqrt()).round() as u8;
                    out.push_str(&format!(
                        "<rect x=\"{px}\" y=\"{py}\" width=\"{cell_px}\" height=\"{cell_px}\" \
                         fill=\"#{level:02x}{level:02x}{level:02x}\"/>\n"
                    ));
                }
            }
        }
    }
    if path.len() > 1 {
        let pts: Vec<String> = path
            .iter()
            .map(|c| {
                format!(
                    "{},{}",
                    c.x * cell_px + cell_px / 2,
                    flip_y(c.y) + cell_px / 2
                )
            })
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#ffd24a\" stroke-width=\"2\" \
             stroke-dasharray=\"4,3\"/>\n",
            pts.join(" ")
        ));
    }
    let marker = |c: Cell, color: &str| {
        format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{color}\"/>\n",
            c.x * cell_px + cell_px / 2,
            flip_y(c.y) + cell_px / 2,
            cell_px / 3
        )
    };
    out.push_str(&marker(start, "#3a7bff"));
    for (i, &g) in goals.iter().enumerate() {
        out.push_str(&marker(g, if i == real_index { "#2ecc40" } else { "#ff4136" }));
    }
    out.push_str("</svg>\n");
    out
}

/// Polyline chart of one or more (x, y) series. Deterministic bytes.
pub fn curve_svg(series: &[(&str, Vec<(f64, f64)>)], x_label: &str, y_label: &str) -> String {
    let w = 480.0;
    let h = 320.0;
    let margin = 40.0;
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (_, pts) in series {
        for &(x, y) in pts {
            xs.push(x);
            ys.push(y);
        }
    }
    let (x0, x1) = bounds(&xs);
    let (y0, y1) = bounds(&ys);
    let sx = |x: f64| margin + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * margin);
    let sy = |y: f64| h - margin - (y - y0) / (y1 - y0).max(1e-12) * (h - 2.0 * margin);
    let palette = ["#3a7bff", "#2ecc40", "#ff4136", "#ffd24a", "#b10dc9", "#7fdbff"];
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>\n"
    ));
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"#333333\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"#333333\"/>\n",
        m = margin,
        b = h - margin,
        r = w - margin,
        t = margin
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#333333\">{x_label}</text>\n",
        w / 2.0 - 30.0,
        h - 8.0
    ));
    out.push_str(&format!(
        "<text x=\"8\" y=\"{}\" font-size=\"12\" fill=\"#333333\">{y_label}</text>\n",
        margin - 12.0
    ));
    for (i, (name, pts)) in series.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = palette[i % palette.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{},{}", fmt6(sx(x)), fmt6(sy(y))))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            coords.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{name}</text>\n",
            w - margin - 110.0,
            margin + 14.0 * (i as f64 + 1.0)
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() && hi.is_finite() && lo < hi {
        (lo, hi)
    } else if lo.is_finite() {
        (lo - 0.5, lo + 0.5)
    } else {
        (0.0, 1.0)
    }
}

// ---------------------------------------------------------------------------
// File emission
// ---------------------------------------------------------------------------

/// Writes a CSV with a fixed header and `%.6f`-formatted floats; the same
/// rows always produce identical bytes.
pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), EvalError> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), EvalError> {
    std::fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn metric_rows_csv(rows: &[MetricRow]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec![
        "scenario_id",
        "agent",
        "seed",
        "mean_real_probability",
        "mean_real_probability_pct",
        "path_cost_ratio",
        "ldp_index",
        "steps_after_ldp",
        "reached_real",
    ];
    let body = rows
        .iter()
        .map(|r| {
            vec![
                r.scenario_id.clone(),
                r.agent.clone(),
                r.seed.to_string(),
                fmt6(r.mean_real_probability),
                fmt6(r.mean_real_probability_pct),
                if r.path_cost_ratio.is_finite() {
                    fmt6(r.path_cost_ratio)
                } else {
                    "inf".to_string()
                },
                r.ldp_index.to_string(),
                r.steps_after_ldp.to_string(),
                (r.reached_real as u8).to_string(),
            ]
        })
        .collect();
    (header, body)
}

/// Serializes a record: one row per step with the full posterior snapshot.
pub fn trajectory_csv(rec: &TrajectoryRecord, k: usize) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec![
        "step".to_string(),
        "x".to_string(),
        "y".to_string(),
        "action".to_string(),
        "step_cost".to_string(),
    ];
    for i in 0..k {
        header.push(format!("posterior_{i}"));
    }
    for i in 0..k {
        header.push(format!("reward_{i}"));
    }
    let body = rec
        .steps
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let mut row = vec![
                t.to_string(),
                s.cell.x.to_string(),
                s.cell.y.to_string(),
                s.action.to_string(),
                fmt6(s.step_cost),
            ];
            row.extend(s.posterior.iter().map(|&p| fmt6(p)));
            row.extend(s.rewards.iter().map(|&r| fmt6(r)));
            row
        })
        .collect();
    (header, body)
}

/// Key-value run manifest; carries config hash, seeds and tool version but
/// never timestamps, so reruns are byte-identical.
pub fn manifest_text(entries: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    out
}
