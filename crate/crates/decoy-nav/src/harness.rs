//! Run harness behind the `decoy-nav` binary: layered TOML configuration,
//! scenario construction, the train/eval/pursue/sweep pipelines, checkpoint
//! wiring and run manifests.
//!
//! Every command is reproducible from its manifest: the config hash and the
//! seed fully determine the outputs on one platform. Outputs go only under
//! the chosen output directory.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adversary::{run_pursuit, run_pursuit_continuous, sample_placements, PursuitConfig};
use crate::agents::{
    load_checkpoint, save_checkpoint, AcConfig, Checkpoint, CheckpointBody, CheckpointError,
    ContinuousAcSubagent, DiscreteAcSubagent, TabularSubagent, TrainError, ViSubagent,
};
use crate::env::{CandidateSet, Mode, Point, Scenario};
use crate::eval::{
    aggregate, manifest_text, metric_row, metric_rows_csv, record_episode,
    record_episode_continuous, rg_prob_curve, trajectory_csv, write_csv, write_text, curve_svg,
    heatmap_csv, heatmap_svg, EvalError, MetricRow, TrajectoryRecord,
};
use crate::grid::{generate_map, load_map, Cell, Layout, MapParseError, VisitGrid};
use crate::observer::CostObserver;
use crate::policies::{
    pretrain_am_continuous_ac, pretrain_am_discrete_ac, pretrain_am_tabular, pretrain_am_vi,
    train_deam_continuous, train_deam_discrete, make_buffers, AmPolicy, ContDeamPolicy,
    DeamConfig, DeamPolicy, HonestPolicy, PretrainConfig, TrainingLog,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit code: 0 ok, 2 config error, 3 divergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Divergence(_) => 3,
            HarnessError::Io { .. } => 4,
        }
    }
}

impl From<TrainError> for HarnessError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::UnsupportedMode => HarnessError::Config(e.to_string()),
            TrainError::Divergence { .. } => HarnessError::Divergence(e.to_string()),
        }
    }
}

impl From<EvalError> for HarnessError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io { path, source } => HarnessError::Io { path, source },
            other => HarnessError::Config(other.to_string()),
        }
    }
}

impl From<CheckpointError> for HarnessError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { path, source } => HarnessError::Io { path, source },
            other => HarnessError::Config(other.to_string()),
        }
    }
}

impl From<MapParseError> for HarnessError {
    fn from(e: MapParseError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    #[serde(rename = "honest")]
    Honest,
    #[serde(rename = "vi-am")]
    ViAm,
    #[serde(rename = "mf-am")]
    MfAm,
    #[serde(rename = "deam")]
    Deam,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Honest => "honest",
            AgentKind::ViAm => "vi-am",
            AgentKind::MfAm => "mf-am",
            AgentKind::Deam => "deam",
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "honest" => Ok(AgentKind::Honest),
            "vi-am" => Ok(AgentKind::ViAm),
            "mf-am" => Ok(AgentKind::MfAm),
            "deam" => Ok(AgentKind::Deam),
            other => Err(format!("unknown agent kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Vi,
    Tabular,
    Ac,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Vi => "vi",
            Backend::Tabular => "tabular",
            Backend::Ac => "ac",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vi" => Ok(Backend::Vi),
            "tabular" => Ok(Backend::Tabular),
            "ac" => Ok(Backend::Ac),
            other => Err(format!("unknown backend {other:?}")),
        }
    }
}

/// Scenario source: an ASCII map file, or a generator spec with explicit
/// goal bindings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub map_file: Option<String>,
    pub layout: Option<Layout>,
    pub size: i32,
    pub map_seed: u64,
    pub start: Option<(i32, i32)>,
    pub goals: Vec<(i32, i32)>,
    pub real_index: usize,
    pub priors: Option<Vec<f64>>,
    pub goal_radius: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            mode: Mode::Discrete,
            map_file: None,
            layout: None,
            size: 11,
            map_seed: 0,
            start: None,
            goals: Vec::new(),
            real_index: 0,
            priors: None,
            goal_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub agent: AgentKind,
    pub backend: Backend,
    /// Training episodes (joint for the deceptive trainer, per candidate
    /// for pretraining).
    pub episodes: usize,
    pub eval_episodes: usize,
    /// Evaluation and pursuit horizon.
    pub horizon: usize,
    pub placements: usize,
    pub tabular_lr: f64,
    /// Discount for the value-iteration backend; desk-scale maps pair with
    /// a shorter value horizon than the paper's large maps.
    pub vi_gamma: f64,
    pub vi_tol: f64,
    /// Soft-max temperature at evaluation; 0 is the hard argmax.
    pub eval_tau: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            agent: AgentKind::Honest,
            backend: Backend::Vi,
            episodes: 500,
            eval_episodes: 3,
            horizon: 800,
            placements: 10,
            tabular_lr: 0.3,
            vi_gamma: 0.8,
            vi_tol: 1e-9,
            eval_tau: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub delta: Vec<f64>,
    pub tau0: Vec<f64>,
    pub tau_decay: Vec<f64>,
    pub seeds_per_cell: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            delta: vec![0.0],
            tau0: vec![1.0],
            tau_decay: vec![0.9],
            seeds_per_cell: 2,
        }
    }
}

/// Full run configuration; sections mirror the TOML file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub run: RunSection,
    pub deam: DeamConfig,
    pub ac: AcConfig,
    pub pretrain: PretrainConfig,
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Structural validation plus the mode/backend compatibility rules.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |msg: String| Err(HarnessError::Config(msg));
        if self.scenario.mode == Mode::Continuous {
            if self.run.agent == AgentKind::ViAm {
                return err("value-iteration ambiguity agent is inapplicable in continuous mode".into());
            }
            if self.run.backend == Backend::Vi {
                return err("the vi backend requires discrete mode".into());
            }
        }
        match (self.run.agent, self.run.backend) {
            (AgentKind::ViAm, b) if b != Backend::Vi => {
                return err(format!("agent vi-am requires backend vi, got {}", b.name()));
            }
            (AgentKind::MfAm, Backend::Vi) => {
                return err("agent mf-am is model-free; pick the tabular or ac backend".into());
            }
            _ => {}
        }
        if self.run.agent == AgentKind::Deam && self.run.backend == Backend::Vi
            && self.scenario.mode == Mode::Continuous
        {
            return err("the vi backend requires discrete mode".into());
        }
        self.deam
            .validate()
            .map_err(HarnessError::Config)?;
        self.ac.validate().map_err(HarnessError::Config)?;
        if !(self.run.vi_gamma > 0.0 && self.run.vi_gamma < 1.0) {
            return err(format!("run.vi_gamma must lie in (0, 1), got {}", self.run.vi_gamma));
        }
        if self.run.horizon == 0 {
            return err("run.horizon must be positive".into());
        }
        Ok(())
    }

    /// Hash over the training-relevant configuration; checkpoints carry it
    /// and refuse to load under a different one.
    pub fn config_hash(&self) -> String {
        let mut canon = String::new();
        let s = &self.scenario;
        canon.push_str(&format!(
            "mode={} map_file={:?} layout={:?} size={} map_seed={} start={:?} goals={:?} \
             real_index={} priors={:?} goal_radius={}\n",
            s.mode, s.map_file, s.layout, s.size, s.map_seed, s.start, s.goals, s.real_index,
            s.priors, s.goal_radius
        ));
        let r = &self.run;
        canon.push_str(&format!(
            "agent={} backend={} episodes={} tabular_lr={} vi_gamma={} vi_tol={}\n",
            r.agent.name(),
            r.backend.name(),
            r.episodes,
            r.tabular_lr,
            r.vi_gamma,
            r.vi_tol
        ));
        let d = &self.deam;
        canon.push_str(&format!(
            "delta={} tau0={} tau_decay={} baseline_samples={}\n",
            d.delta, d.tau0, d.tau_decay, d.baseline_samples
        ));
        let a = &self.ac;
        canon.push_str(&format!(
            "gamma={} lr={} alpha={} rho={} minibatch={} horizon={} hidden={:?} replay={}\n",
            a.gamma, a.lr, a.alpha, a.rho, a.minibatch, a.horizon, a.hidden, a.replay_capacity
        ));
        let p = &self.pretrain;
        canon.push_str(&format!(
            "pre_lr={} pre_gamma={} eps0={} eps1={}\n",
            p.lr, p.gamma, p.epsilon_start, p.epsilon_final
        ));
        let digest = Sha256::digest(canon.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }
}

/// Builds the scenario and a stable identifier from the config.
pub fn build_scenario(cfg: &RunConfig) -> Result<(Scenario, String), HarnessError> {
    let sc = &cfg.scenario;
    if let Some(path) = &sc.map_file {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        let mf = load_map(&text)?;
        let mut scn = Scenario::from_map_file(&mf, sc.mode)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(priors) = &sc.priors {
            let cs = CandidateSet::new(
                scn.candidates().goals().to_vec(),
                scn.candidates().real_index(),
                priors.clone(),
            )
            .map_err(|e| HarnessError::Config(e.to_string()))?;
            scn = Scenario::new(scn.map().clone(), scn.start(), cs, sc.mode)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        let scn = scn
            .with_goal_radius(sc.goal_radius)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let id = Path::new(path)
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "map".into());
        return Ok((scn, id));
    }
    let layout = sc
        .layout
        .ok_or_else(|| HarnessError::Config("scenario needs map_file or layout".into()))?;
    let start = sc
        .start
        .ok_or_else(|| HarnessError::Config("generator scenarios need a start cell".into()))?;
    if sc.goals.len() < 2 {
        return Err(HarnessError::Config(
            "generator scenarios need at least two goals".into(),
        ));
    }
    let map = generate_map(layout, sc.size, sc.map_seed);
    let goals: Vec<Cell> = sc.goals.iter().map(|&(x, y)| Cell::new(x, y)).collect();
    let cs = match &sc.priors {
        Some(p) => CandidateSet::new(goals, sc.real_index, p.clone()),
        None => CandidateSet::uniform(goals, sc.real_index),
    }
    .map_err(|e| HarnessError::Config(e.to_string()))?;
    let scn = Scenario::new(map, Cell::new(start.0, start.1), cs, sc.mode)
        .and_then(|s| s.with_goal_radius(sc.goal_radius))
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let id = format!("gen-{layout:?}-{}-{}", sc.size, sc.map_seed).to_lowercase();
    Ok((scn, id))
}

// ---------------------------------------------------------------------------
// Trained agents
// ---------------------------------------------------------------------------

/// The per-candidate subagents a run produced, by backend.
pub enum AgentBundle {
    Vi(Vec<ViSubagent>),
    Tabular(Vec<TabularSubagent>),
    DiscreteAc(Vec<DiscreteAcSubagent>),
    ContinuousAc(Vec<ContinuousAcSubagent>),
}

impl AgentBundle {
    pub fn backend_name(&self) -> &'static str {
        match self {
            AgentBundle::Vi(_) => "vi",
            AgentBundle::Tabular(_) => "tabular",
            AgentBundle::DiscreteAc(_) | AgentBundle::ContinuousAc(_) => "ac",
        }
    }

    pub fn k(&self) -> usize {
        match self {
            AgentBundle::Vi(v) => v.len(),
            AgentBundle::Tabular(v) => v.len(),
            AgentBundle::DiscreteAc(v) => v.len(),
            AgentBundle::ContinuousAc(v) => v.len(),
        }
    }
}

fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 of the index, xor-mixed with the base seed.
    let mut z = index.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    base ^ (z ^ (z >> 31))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

pub struct TrainOutputs {
    pub bundle: AgentBundle,
    pub scenario: Scenario,
    pub scenario_id: String,
    pub log: Option<TrainingLog>,
    pub visits: VisitGrid,
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.display().to_string(),
        source,
    })
}

/// Trains (or solves) the configured agent and writes checkpoints, the
/// training log, the exploration heatmap and the manifest under `out`.
pub fn cmd_train(cfg: &RunConfig, seed: u64, out: &Path) -> Result<TrainOutputs, HarnessError> {
    cfg.validate()?;
    let (scn, scenario_id) = build_scenario(cfg)?;
    ensure_dir(out)?;
    let ckpt_dir = out.join("checkpoints");
    ensure_dir(&ckpt_dir)?;

    let mut deam = cfg.deam.clone();
    deam.episodes = cfg.run.episodes;
    deam.seed = seed;

    let (bundle, log, visits): (AgentBundle, Option<TrainingLog>, VisitGrid) =
        match (cfg.run.agent, cfg.run.backend, scn.mode()) {
            (AgentKind::Deam, Backend::Tabular, Mode::Discrete) => {
                let mut agents: Vec<TabularSubagent> = (0..scn.k())
                    .map(|i| {
                        TabularSubagent::for_scenario(&scn, i, cfg.run.tabular_lr, cfg.ac.gamma)
                    })
                    .collect();
                let mut buffers = make_buffers(scn.k(), cfg.ac.replay_capacity, seed);
                let log = train_deam_discrete(&scn, &mut agents, &mut buffers, &deam, cfg.ac.horizon)?;
                let visits = log.visits.clone();
                (AgentBundle::Tabular(agents), Some(log), visits)
            }
            (AgentKind::Deam, Backend::Vi, Mode::Discrete) => {
                // Subagents are exact; the joint loop still runs to produce
                // the training log and visitation footprint.
                let mut agents = pretrain_am_vi(&scn, cfg.run.vi_gamma, cfg.run.vi_tol)?;
                let mut buffers = make_buffers(scn.k(), cfg.ac.replay_capacity, seed);
                let log = train_deam_discrete(&scn, &mut agents, &mut buffers, &deam, cfg.ac.horizon)?;
                let visits = log.visits.clone();
                (AgentBundle::Vi(agents), Some(log), visits)
            }
            (AgentKind::Deam, Backend::Ac, Mode::Discrete) => {
                let mut agents: Vec<DiscreteAcSubagent> = (0..scn.k())
                    .map(|i| {
                        DiscreteAcSubagent::new(
                            scn.map().width(),
                            scn.map().height(),
                            scn.candidates().goal(i),
                            &cfg.ac,
                            derive_seed(seed, 7000 + i as u64),
                        )
                    })
                    .collect();
                let mut buffers = make_buffers(scn.k(), cfg.ac.replay_capacity, seed);
                let log = train_deam_discrete(&scn, &mut agents, &mut buffers, &deam, cfg.ac.horizon)?;
                let visits = log.visits.clone();
                (AgentBundle::DiscreteAc(agents), Some(log), visits)
            }
            (AgentKind::Deam, Backend::Ac, Mode::Continuous) => {
                let mut agents: Vec<ContinuousAcSubagent> = (0..scn.k())
                    .map(|i| {
                        ContinuousAcSubagent::new(
                            scn.map().width() as f64,
                            scn.map().height() as f64,
                            scn.goal_point(i),
                            scn.goal_radius(),
                            &cfg.ac,
                            derive_seed(seed, 7000 + i as u64),
                        )
                    })
                    .collect();
                let mut buffers = make_buffers(scn.k(), cfg.ac.replay_capacity, seed);
                let log =
                    train_deam_continuous(&scn, &mut agents, &mut buffers, &deam, cfg.ac.horizon)?;
                let visits = log.visits.clone();
                (AgentBundle::ContinuousAc(agents), Some(log), visits)
            }
            (_, Backend::Vi, Mode::Discrete) => {
                let agents = pretrain_am_vi(&scn, cfg.run.vi_gamma, cfg.run.vi_tol)?;
                let visits = VisitGrid::for_map(scn.map());
                (AgentBundle::Vi(agents), None, visits)
            }
            (_, Backend::Tabular, Mode::Discrete) => {
                let out = pretrain_am_tabular(
                    &scn,
                    cfg.run.episodes,
                    cfg.ac.horizon,
                    &cfg.pretrain,
                    seed,
                )?;
                (AgentBundle::Tabular(out.agents), None, out.visits)
            }
            (_, Backend::Ac, Mode::Discrete) => {
                let out = pretrain_am_discrete_ac(&scn, cfg.run.episodes, &cfg.ac, seed)?;
                (AgentBundle::DiscreteAc(out.agents), None, out.visits)
            }
            (_, Backend::Ac, Mode::Continuous) => {
                let out = pretrain_am_continuous_ac(&scn, cfg.run.episodes, &cfg.ac, seed)?;
                (AgentBundle::ContinuousAc(out.agents), None, out.visits)
            }
            (_, Backend::Vi, Mode::Continuous) | (_, Backend::Tabular, Mode::Continuous) => {
                return Err(HarnessError::Config(
                    "tabular and vi backends require discrete mode".into(),
                ));
            }
        };

    write_checkpoints(&ckpt_dir, cfg, &bundle)?;

    // Training log CSV (header-only for pretraining paths).
    let log_rows: Vec<Vec<String>> = log
        .as_ref()
        .map(|l| {
            l.rows
                .iter()
                .map(|r| {
                    vec![
                        r.episode.to_string(),
                        r.steps.to_string(),
                        format!("{:.6}", r.path_cost),
                        format!("{:.6}", r.tau),
                        format!("{:.6}", r.mean_real_posterior),
                        (r.reached_real as u8).to_string(),
                    ]
                })
                .collect()
        })
        .unwrap_or_default();
    write_csv(
        &out.join("training_log.csv"),
        &["episode", "steps", "path_cost", "tau", "mean_real_posterior", "reached_real"],
        &log_rows,
    )?;

    write_text(&out.join("heatmap.csv"), &heatmap_csv(&visits))?;
    let svg = heatmap_svg(
        &visits,
        scn.map(),
        scn.start(),
        scn.candidates().goals(),
        scn.candidates().real_index(),
        &[],
    );
    write_text(&out.join("heatmap.svg"), &svg)?;

    write_text(
        &out.join("manifest.txt"),
        &manifest_text(&[
            ("command", "train".into()),
            ("tool_version", TOOL_VERSION.into()),
            ("config_hash", cfg.config_hash()),
            ("scenario_id", scenario_id.clone()),
            ("agent", cfg.run.agent.name().into()),
            ("backend", cfg.run.backend.name().into()),
            ("seed", seed.to_string()),
            ("episodes", cfg.run.episodes.to_string()),
        ]),
    )?;

    Ok(TrainOutputs {
        bundle,
        scenario: scn,
        scenario_id,
        log,
        visits,
    })
}

fn write_checkpoints(dir: &Path, cfg: &RunConfig, bundle: &AgentBundle) -> Result<(), HarnessError> {
    let hash = cfg.config_hash();
    let mode = cfg.scenario.mode;
    let save = |i: usize, body: CheckpointBody| -> Result<(), HarnessError> {
        let ck = Checkpoint {
            backend: bundle.backend_name().to_string(),
            mode,
            k_index: i,
            config_hash: hash.clone(),
            body,
        };
        save_checkpoint(&dir.join(format!("agent_{i}.ckpt")), &ck)?;
        Ok(())
    };
    match bundle {
        AgentBundle::Vi(agents) => {
            for (i, a) in agents.iter().enumerate() {
                save(i, CheckpointBody::Table(a.table().clone()))?;
            }
        }
        AgentBundle::Tabular(agents) => {
            for (i, a) in agents.iter().enumerate() {
                save(i, CheckpointBody::Table(a.table().clone()))?;
            }
        }
        AgentBundle::DiscreteAc(agents) => {
            for (i, a) in agents.iter().enumerate() {
                let (actor, critic, target) = a.networks();
                save(
                    i,
                    CheckpointBody::Ac {
                        actor: actor.clone(),
                        critic: critic.clone(),
                        target: target.clone(),
                    },
                )?;
            }
        }
        AgentBundle::ContinuousAc(agents) => {
            for (i, a) in agents.iter().enumerate() {
                let (actor, critic, target) = a.networks();
                save(
                    i,
                    CheckpointBody::Ac {
                        actor: actor.clone(),
                        critic: critic.clone(),
                        target: target.clone(),
                    },
                )?;
            }
        }
    }
    Ok(())
}

/// Loads the per-candidate checkpoints back into subagents, refusing on a
/// config-hash mismatch.
pub fn load_bundle(
    dir: &Path,
    cfg: &RunConfig,
    scn: &Scenario,
) -> Result<AgentBundle, HarnessError> {
    let hash = cfg.config_hash();
    let k = scn.k();
    let mut checkpoints = Vec::with_capacity(k);
    for i in 0..k {
        let path = dir.join(format!("agent_{i}.ckpt"));
        checkpoints.push(load_checkpoint(&path, Some(&hash))?);
    }
    let backend = checkpoints[0].backend.clone();
    match (backend.as_str(), scn.mode()) {
        ("vi", Mode::Discrete) => {
            let agents = checkpoints
                .into_iter()
                .map(|ck| match ck.body {
                    CheckpointBody::Table(q) => Ok(ViSubagent::new(q)),
                    _ => Err(HarnessError::Config("vi checkpoint without a table".into())),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(AgentBundle::Vi(agents))
        }
        ("tabular", Mode::Discrete) => {
            let agents = checkpoints
                .into_iter()
                .enumerate()
                .map(|(i, ck)| match ck.body {
                    CheckpointBody::Table(q) => Ok(TabularSubagent::with_table(
                        q,
                        scn.candidates().goal(i),
                        cfg.run.tabular_lr,
                        cfg.ac.gamma,
                    )),
                    _ => Err(HarnessError::Config(
                        "tabular checkpoint without a table".into(),
                    )),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(AgentBundle::Tabular(agents))
        }
        ("ac", Mode::Discrete) => {
            let agents = checkpoints
                .into_iter()
                .enumerate()
                .map(|(i, ck)| match ck.body {
                    CheckpointBody::Ac {
                        actor,
                        critic,
                        target,
                    } => {
                        let mut agent = DiscreteAcSubagent::new(
                            scn.map().width(),
                            scn.map().height(),
                            scn.candidates().goal(i),
                            &cfg.ac,
                            0,
                        );
                        agent.set_networks(actor, critic, target);
                        Ok(agent)
                    }
                    _ => Err(HarnessError::Config("ac checkpoint without nets".into())),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(AgentBundle::DiscreteAc(agents))
        }
        ("ac", Mode::Continuous) => {
            let agents = checkpoints
                .into_iter()
                .enumerate()
                .map(|(i, ck)| match ck.body {
                    CheckpointBody::Ac {
                        actor,
                        critic,
                        target,
                    } => {
                        let mut agent = ContinuousAcSubagent::new(
                            scn.map().width() as f64,
                            scn.map().height() as f64,
                            scn.goal_point(i),
                            scn.goal_radius(),
                            &cfg.ac,
                            0,
                        );
                        agent.set_networks(actor, critic, target);
                        Ok(agent)
                    }
                    _ => Err(HarnessError::Config("ac checkpoint without nets".into())),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(AgentBundle::ContinuousAc(agents))
        }
        (other, mode) => Err(HarnessError::Config(format!(
            "checkpoint backend {other:?} incompatible with {mode} mode"
        ))),
    }
}

#[derive(Debug)]
pub struct EvalOutputs {
    pub records: Vec<TrajectoryRecord>,
    pub rows: Vec<MetricRow>,
}

/// Records one evaluation episode for the configured policy.
fn run_eval_episode(
    cfg: &RunConfig,
    scn: &Scenario,
    bundle: &AgentBundle,
    observer: &CostObserver,
    scenario_id: &str,
    seed: u64,
) -> TrajectoryRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = cfg.run.horizon;
    let tau = cfg.run.eval_tau;
    let delta = cfg.deam.delta;
    let cs = scn.candidates();
    match (scn.mode(), bundle) {
        (Mode::Discrete, AgentBundle::Vi(agents)) => match cfg.run.agent {
            AgentKind::Honest => record_episode(
                scn,
                &mut HonestPolicy::new(agents, cs),
                observer,
                scn.start(),
                horizon,
                scenario_id,
                seed,
                &mut rng,
            ),
            AgentKind::Deam => record_episode(
                scn,
                &mut DeamPolicy::new(agents, cs, delta, tau),
                observer,
                scn.start(),
                horizon,
                scenario_id,
                seed,
                &mut rng,
            ),
            _ => record_episode(
                scn,
                &mut AmPolicy::new(agents, cs, delta),
                observer,
                scn.start(),
                horizon,
                scenario_id,
                seed,
                &mut rng,
            ),
        },
        (Mode::Discrete, AgentBundle::Tabular(agents)) => match cfg.run.agent {
            AgentKind::Honest => record_episode(
                scn,
                &mut HonestPolicy::new(agents, cs),
                observer,
                scn.start(),
                horizon,
                scenario_id,
                seed,
                &mut rng,
            ),
            AgentKind::Deam => record_episode(
                scn,
                &mut DeamPolicy::new(agents, cs, delta, tau),
                observer,
                scn.start(),
                horizon,
                scenario_id,
                seed,
                &mut rng,
            ),
            _ => record_episode(
                scn,
                &mut AmPolicy::new(agents, cs, delta),
                observer,
                scn.start(),
                horizon,
                scenario_id,
                seed,
                &mut rng,
            ),
        },
        (Mode::Discrete, AgentBundle::DiscreteAc(agents)) => match cfg.run.agent {
            AgentKind::Honest => record_episode(
                scn,
                &mut HonestPolicy::new(agents, cs),
                observer,
                scn.start(),
                horizon,
                scenario_id,
                seed,
                &mut rng,
            ),
            AgentKind::Deam => record_episode(
                scn,
                &mut DeamPolicy::new(agents, cs, delta, tau),
                observer,
                scn.start(),
                horizon,
                scenario_id,
                seed,
                &mut rng,
            ),
            _ => record_episode(
                scn,
                &mut AmPolicy::new(agents, cs, delta),
                observer,
                scn.start(),
                horizon,
                scenario_id,
                seed,
                &mut rng,
            ),
        },
        (Mode::Continuous, AgentBundle::ContinuousAc(agents)) => match cfg.run.agent {
            AgentKind::Honest => record_episode_continuous(
                scn,
                &mut HonestPolicy::new(agents, cs),
                observer,
                scn.start_point(),
                horizon,
                scenario_id,
                seed,
                &mut rng,
            ),
            _ => {
                // Both ambiguity variants use the candidate-set mechanism in
                // continuous mode; tau = 0 is the hard-argmax form.
                let policy_tau = if cfg.run.agent == AgentKind::Deam { tau } else { 0.0 };
                record_episode_continuous(
                    scn,
                    &mut ContDeamPolicy::new(agents, cs, delta, policy_tau, cfg.deam.baseline_samples),
                    observer,
                    scn.start_point(),
                    horizon,
                    scenario_id,
                    seed,
                    &mut rng,
                )
            }
        },
        _ => unreachable!("bundle/mode compatibility was validated at load"),
    }
}

/// Evaluates a trained checkpoint: greedy episodes, per-episode trajectory
/// CSVs, metric rows, probability curves and aggregates.
pub fn cmd_eval(
    cfg: &RunConfig,
    seed: u64,
    out: &Path,
    checkpoint_dir: &Path,
) -> Result<EvalOutputs, HarnessError> {
    cfg.validate()?;
    let (scn, scenario_id) = build_scenario(cfg)?;
    let bundle = load_bundle(checkpoint_dir, cfg, &scn)?;
    ensure_dir(out)?;
    let observer = CostObserver::new(scn.map(), scn.candidates());

    let mut records = Vec::new();
    let mut rows = Vec::new();
    for ep in 0..cfg.run.eval_episodes {
        let ep_seed = derive_seed(seed, ep as u64);
        let rec = run_eval_episode(cfg, &scn, &bundle, &observer, &scenario_id, ep_seed);
        rows.push(metric_row(&rec, &scn)?);
        records.push(rec);
    }

    for (i, rec) in records.iter().enumerate() {
        let (header, body) = trajectory_csv(rec, scn.k());
        let hdr: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        write_csv(&out.join(format!("trajectory_{i}.csv")), &hdr, &body)?;
    }
    let (header, body) = metric_rows_csv(&rows);
    write_csv(&out.join("metrics.csv"), &header, &body)?;

    // Real-goal probability curve of the first record.
    if let Some(rec) = records.first() {
        let pcts: Vec<f64> = (0..=20).map(|i| i as f64 * 5.0).collect();
        let curve = rg_prob_curve(rec, scn.candidates().real_index(), &pcts)?;
        let curve_rows: Vec<Vec<String>> = curve
            .iter()
            .map(|&(p, v)| vec![format!("{p:.6}"), format!("{v:.6}")])
            .collect();
        write_csv(&out.join("rg_curve.csv"), &["pct", "p_real"], &curve_rows)?;
        write_text(
            &out.join("rg_curve.svg"),
            &curve_svg(
                &[(cfg.run.agent.name(), curve)],
                "path completion (%)",
                "P(real goal)",
            ),
        )?;
    }

    let agg = aggregate(cfg.run.agent.name(), &rows);
    write_text(
        &out.join("manifest.txt"),
        &manifest_text(&[
            ("command", "eval".into()),
            ("tool_version", TOOL_VERSION.into()),
            ("config_hash", cfg.config_hash()),
            ("scenario_id", scenario_id),
            ("agent", cfg.run.agent.name().into()),
            ("seed", seed.to_string()),
            ("eval_episodes", cfg.run.eval_episodes.to_string()),
            ("failure_rate", format!("{:.6}", agg.failure_rate)),
            ("mean_real_probability", format!("{:.6}", agg.mean_real_probability)),
            ("mean_cost_ratio", format!("{:.6}", agg.mean_cost_ratio)),
        ]),
    )?;

    Ok(EvalOutputs { records, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PursuitRow {
    pub scenario_id: String,
    pub placement_seed: u64,
    pub agent_kind: String,
    pub captured: bool,
    pub capture_step: Option<usize>,
    pub agent_cost: f64,
    pub steps: usize,
}

pub struct PursuitOutputs {
    pub rows: Vec<PursuitRow>,
    pub capture_rate: f64,
}

/// Runs `run.placements` random pursuit trials against the pirate and
/// aggregates the capture rate.
pub fn cmd_pursue(
    cfg: &RunConfig,
    seed: u64,
    out: &Path,
    checkpoint_dir: &Path,
) -> Result<PursuitOutputs, HarnessError> {
    cfg.validate()?;
    let (scn, scenario_id) = build_scenario(cfg)?;
    let bundle = load_bundle(checkpoint_dir, cfg, &scn)?;
    ensure_dir(out)?;
    let pursuit_cfg = PursuitConfig::default();

    let placements: Vec<(usize, u64)> = (0..cfg.run.placements)
        .map(|i| (i, derive_seed(seed, 4_000_000 + i as u64)))
        .collect();

    let rows: Vec<PursuitRow> = placements
        .par_iter()
        .map(|&(_, pseed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(pseed);
            let result = match (scn.mode(), &bundle) {
                (Mode::Discrete, AgentBundle::Vi(agents)) => run_pursuit_dispatch(
                    cfg, &scn, agents, pseed, &pursuit_cfg, &mut rng,
                ),
                (Mode::Discrete, AgentBundle::Tabular(agents)) => run_pursuit_dispatch(
                    cfg, &scn, agents, pseed, &pursuit_cfg, &mut rng,
                ),
                (Mode::Discrete, AgentBundle::DiscreteAc(agents)) => run_pursuit_dispatch(
                    cfg, &scn, agents, pseed, &pursuit_cfg, &mut rng,
                ),
                (Mode::Continuous, AgentBundle::ContinuousAc(agents)) => {
                    let placement =
                        sample_placements(scn.map(), scn.candidates(), 1, &mut rng)[0];
                    let policy_tau = if cfg.run.agent == AgentKind::Deam {
                        cfg.run.eval_tau
                    } else {
                        0.0
                    };
                    let cs = scn.candidates();
                    let result = match cfg.run.agent {
                        AgentKind::Honest => run_pursuit_continuous(
                            &scn,
                            &mut HonestPolicy::new(agents, cs),
                            Point::cell_center(placement.0),
                            Point::cell_center(placement.1),
                            cfg.run.horizon,
                            &mut rng,
                        ),
                        _ => run_pursuit_continuous(
                            &scn,
                            &mut ContDeamPolicy::new(
                                agents,
                                cs,
                                cfg.deam.delta,
                                policy_tau,
                                cfg.deam.baseline_samples,
                            ),
                            Point::cell_center(placement.0),
                            Point::cell_center(placement.1),
                            cfg.run.horizon,
                            &mut rng,
                        ),
                    };
                    result
                }
                _ => unreachable!("bundle/mode compatibility was validated at load"),
            };
            PursuitRow {
                scenario_id: scenario_id.clone(),
                placement_seed: pseed,
                agent_kind: cfg.run.agent.name().to_string(),
                captured: result.captured,
                capture_step: result.capture_step,
                agent_cost: result.agent_path_cost,
                steps: result.steps,
            }
        })
        .collect();

    let captured = rows.iter().filter(|r| r.captured).count();
    let capture_rate = captured as f64 / rows.len().max(1) as f64;

    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.scenario_id.clone(),
                r.placement_seed.to_string(),
                r.agent_kind.clone(),
                (r.captured as u8).to_string(),
                r.capture_step.map(|s| s.to_string()).unwrap_or_default(),
                format!("{:.6}", r.agent_cost),
                r.steps.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("pursuit.csv"),
        &["scenario_id", "placement_seed", "agent_kind", "captured", "capture_step", "agent_cost", "steps"],
        &body,
    )?;
    write_text(
        &out.join("manifest.txt"),
        &manifest_text(&[
            ("command", "pursue".into()),
            ("tool_version", TOOL_VERSION.into()),
            ("config_hash", cfg.config_hash()),
            ("scenario_id", scenario_id),
            ("agent", cfg.run.agent.name().into()),
            ("seed", seed.to_string()),
            ("placements", cfg.run.placements.to_string()),
            ("capture_rate", format!("{capture_rate:.6}")),
        ]),
    )?;

    Ok(PursuitOutputs { rows, capture_rate })
}

fn run_pursuit_dispatch<SA>(
    cfg: &RunConfig,
    scn: &Scenario,
    agents: &[SA],
    pseed: u64,
    pursuit_cfg: &PursuitConfig,
    rng: &mut ChaCha8Rng,
) -> crate::adversary::PursuitResult
where
    SA: crate::agents::Subagent<State = Cell, Action = crate::env::Move>,
{
    let placement = sample_placements(scn.map(), scn.candidates(), 1, rng)[0];
    let cs = scn.candidates();
    let _ = pseed;
    match cfg.run.agent {
        AgentKind::Honest => run_pursuit(
            scn,
            &mut HonestPolicy::new(agents, cs),
            placement.0,
            placement.1,
            cfg.run.horizon,
            pursuit_cfg,
            rng,
        ),
        AgentKind::Deam => run_pursuit(
            scn,
            &mut DeamPolicy::new(agents, cs, cfg.deam.delta, cfg.run.eval_tau),
            placement.0,
            placement.1,
            cfg.run.horizon,
            pursuit_cfg,
            rng,
        ),
        _ => run_pursuit(
            scn,
            &mut AmPolicy::new(agents, cs, cfg.deam.delta),
            placement.0,
            placement.1,
            cfg.run.horizon,
            pursuit_cfg,
            rng,
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub delta: f64,
    pub tau0: f64,
    pub tau_decay: f64,
    pub seed: u64,
    pub mean_real_probability: f64,
    pub mean_cost_ratio: f64,
    pub failure_rate: f64,
}

/// Trains and evaluates one configuration per grid cell x seed; rows come
/// back sorted by (delta, tau0, tau_decay, seed).
pub fn cmd_sweep(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Vec<SweepRow>, HarnessError> {
    cfg.validate()?;
    if cfg.run.agent != AgentKind::Deam {
        return Err(HarnessError::Config(
            "sweeps study the deceptive trainer; set run.agent = \"deam\"".into(),
        ));
    }
    if cfg.sweep.delta.is_empty() || cfg.sweep.tau0.is_empty() || cfg.sweep.tau_decay.is_empty() {
        return Err(HarnessError::Config("sweep grid must be nonempty".into()));
    }
    ensure_dir(out)?;

    let mut cells = Vec::new();
    for &delta in &cfg.sweep.delta {
        for &tau0 in &cfg.sweep.tau0 {
            for &tau_decay in &cfg.sweep.tau_decay {
                for s in 0..cfg.sweep.seeds_per_cell {
                    cells.push((delta, tau0, tau_decay, s as u64));
                }
            }
        }
    }

    let rows_result: Result<Vec<SweepRow>, HarnessError> = cells
        .par_iter()
        .enumerate()
        .map(|(idx, &(delta, tau0, tau_decay, cell_seed))| {
            let mut cell_cfg = cfg.clone();
            cell_cfg.deam.delta = delta;
            cell_cfg.deam.tau0 = tau0;
            cell_cfg.deam.tau_decay = tau_decay;
            let run_seed = derive_seed(seed, idx as u64 ^ (cell_seed << 32));
            let tmp = tempfile_dir(out, idx)?;
            let trained = cmd_train(&cell_cfg, run_seed, &tmp)?;
            let observer = CostObserver::new(trained.scenario.map(), trained.scenario.candidates());
            let mut rows = Vec::new();
            for ep in 0..cell_cfg.run.eval_episodes {
                let rec = run_eval_episode(
                    &cell_cfg,
                    &trained.scenario,
                    &trained.bundle,
                    &observer,
                    &trained.scenario_id,
                    derive_seed(run_seed, ep as u64),
                );
                rows.push(metric_row(&rec, &trained.scenario)?);
            }
            let agg = aggregate("deam", &rows);
            Ok(SweepRow {
                delta,
                tau0,
                tau_decay,
                seed: cell_seed,
                mean_real_probability: agg.mean_real_probability,
                mean_cost_ratio: agg.mean_cost_ratio,
                failure_rate: agg.failure_rate,
            })
        })
        .collect();
    let mut rows = rows_result?;
    rows.sort_by(|a, b| {
        (a.delta, a.tau0, a.tau_decay, a.seed)
            .partial_cmp(&(b.delta, b.tau0, b.tau_decay, b.seed))
            .unwrap()
    });

    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{:.6}", r.delta),
                format!("{:.6}", r.tau0),
                format!("{:.6}", r.tau_decay),
                r.seed.to_string(),
                format!("{:.6}", r.mean_real_probability),
                if r.mean_cost_ratio.is_finite() {
                    format!("{:.6}", r.mean_cost_ratio)
                } else {
                    "inf".into()
                },
                format!("{:.6}", r.failure_rate),
            ]
        })
        .collect();
    write_csv(
        &out.join("sweep.csv"),
        &["delta", "tau0", "tau_decay", "seed", "mean_real_probability", "mean_cost_ratio", "failure_rate"],
        &body,
    )?;
    write_text(
        &out.join("manifest.txt"),
        &manifest_text(&[
            ("command", "sweep".into()),
            ("tool_version", TOOL_VERSION.into()),
            ("config_hash", cfg.config_hash()),
            ("seed", seed.to_string()),
            ("cells", cells.len().to_string()),
        ]),
    )?;
    Ok(rows)
}

fn tempfile_dir(out: &Path, idx: usize) -> Result<PathBuf, HarnessError> {
    let dir = out.join(format!("cell_{idx:04}"));
    ensure_dir(&dir)?;
    Ok(dir)
}
