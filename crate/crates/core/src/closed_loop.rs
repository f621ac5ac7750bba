//! Outer objective over the plan → track → simulate pipeline, scenario
//! configuration, weight sweeps and BO tuning runs.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bo::{self, BoConfig, BoError, BoRun};
use crate::gait_qp::{self, GaitError, GaitPlan, GaitTask, GaitWeights};
use crate::lipm::LipmParams;
use crate::plant::{self, Disturbance, PlantError, PlantParams, PlantTrace};
use crate::tracker::{self, TrackerConfig, TrackerCost, TrackerStats};

/// Fraction of the nominal push magnitudes applied to the point-mass plant.
/// Picked from the band of scales where the lateral push separates β=0 (falls)
/// from β=70 (walks); see [`push_calibration`].
pub const PUSH_CALIBRATION: f64 = 0.5;

/// Environment variable holding the worker count for sweeps.
pub const WORKERS_ENV: &str = "GAITTUNE_WORKERS";

#[derive(Debug, Error)]
pub enum ClosedLoopError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("plan failed: {0}")]
    Plan(#[from] GaitError),
    #[error("simulation failed: {0}")]
    Plant(#[from] PlantError),
    #[error("tracker setup failed: {0}")]
    Tracker(String),
    #[error(transparent)]
    Bo(#[from] BoError),
    #[error("invalid grid: {0}")]
    Grid(String),
}

impl ClosedLoopError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) | Self::Parse(_) => "config",
            Self::Plan(_) => "plan_failed",
            Self::Plant(_) => "sim_failed",
            Self::Tracker(_) => "tracker_failed",
            Self::Bo(_) => "bo_failed",
            Self::Grid(_) => "grid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// λ, weight of the final-height hinge.
    pub fall_weight: f64,
    pub desired_height: f64,
    pub height_threshold: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            fall_weight: 1000.0,
            desired_height: 0.8,
            height_threshold: 0.05,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<(), ClosedLoopError> {
        if !(self.fall_weight >= 0.0 && self.height_threshold >= 0.0 && self.desired_height.is_finite()) {
            return Err(ClosedLoopError::Config(
                "objective: fall_weight and height_threshold must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// `max(|h_N − h_des| − threshold, 0)`.
    pub fn height_hinge(&self, final_height: f64) -> f64 {
        ((final_height - self.desired_height).abs() - self.height_threshold).max(0.0)
    }

    /// `(Σ‖v − v_des‖², λ·hinge)`.
    pub fn terms(&self, velocity: &[Vector2<f64>], desired: &[Vector2<f64>], final_height: f64) -> (f64, f64) {
        let tracking = velocity.iter().zip(desired).map(|(v, d)| (v - d).norm_squared()).sum();
        (tracking, self.fall_weight * self.height_hinge(final_height))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Nominal,
    Push,
    Slip,
    PushAndSlip,
    Custom,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Nominal => "nominal",
            Self::Push => "push",
            Self::Slip => "slip",
            Self::PushAndSlip => "push_and_slip",
            Self::Custom => "custom",
        }
    }
}

/// Which gait weights the search controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `(β, γ)` shared by both axes, `α = 1`.
    Two,
    /// `(α_x, α_y, β_x, β_y, γ_x, γ_y)`.
    Six,
}

impl WeightMode {
    pub fn names(self) -> &'static [&'static str] {
        match self {
            Self::Two => &["beta", "gamma"],
            Self::Six => &["alpha_x", "alpha_y", "beta_x", "beta_y", "gamma_x", "gamma_y"],
        }
    }

    pub fn default_bounds(self) -> Vec<[f64; 2]> {
        match self {
            Self::Two => vec![[0.0, 1000.0]; 2],
            Self::Six => vec![
                [1.0, 100.0],
                [1.0, 100.0],
                [0.0, 1000.0],
                [0.0, 1000.0],
                [0.0, 1000.0],
                [0.0, 1000.0],
            ],
        }
    }

    pub fn default_start(self) -> Vec<f64> {
        match self {
            Self::Two => vec![1000.0, 1000.0],
            Self::Six => vec![1.0, 1.0, 1000.0, 1000.0, 1000.0, 1000.0],
        }
    }

    pub fn weights(self, x: &[f64]) -> GaitWeights {
        match self {
            Self::Two => GaitWeights::uniform(1.0, x[0], x[1]),
            Self::Six => GaitWeights {
                alpha_x: x[0],
                alpha_y: x[1],
                beta_x: x[2],
                beta_y: x[3],
                gamma_x: x[4],
                gamma_y: x[5],
            },
        }
    }

    pub fn coordinates(self, w: &GaitWeights) -> Vec<f64> {
        match self {
            Self::Two => vec![w.beta_x, w.gamma_x],
            Self::Six => vec![w.alpha_x, w.alpha_y, w.beta_x, w.beta_y, w.gamma_x, w.gamma_y],
        }
    }
}

/// External push `(t_start, t_end, fx, fy, fz)` before calibration scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PushSpec {
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default)]
    pub fx: f64,
    #[serde(default)]
    pub fy: f64,
    #[serde(default)]
    pub fz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub mode: WeightMode,
    pub budget: usize,
    pub seed: u64,
    /// Friction coefficient of the simulated ground.
    pub surface_friction: f64,
    pub pushes: Vec<PushSpec>,
    /// Multiplier applied to every push force.
    pub push_scale: f64,
    /// Search box per tuned weight; mode defaults when absent.
    pub bounds: Option<Vec<[f64; 2]>>,
    /// First BO evaluation; mode default (robustness weights at the top) when absent.
    pub start: Option<Vec<f64>>,
    pub qp_tolerance: f64,
    pub task: GaitTask,
    pub lipm: LipmParams,
    pub plant: PlantParams,
    pub tracker: TrackerConfig,
    pub tracker_cost: TrackerCost,
    pub objective: ObjectiveConfig,
    pub bo: BoConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::Nominal,
            mode: WeightMode::Two,
            budget: 40,
            seed: 1,
            surface_friction: 0.8,
            pushes: Vec::new(),
            push_scale: PUSH_CALIBRATION,
            bounds: None,
            start: None,
            qp_tolerance: 1e-8,
            task: GaitTask::default(),
            lipm: LipmParams::default(),
            plant: PlantParams::default(),
            tracker: TrackerConfig::default(),
            tracker_cost: TrackerCost::default(),
            objective: ObjectiveConfig::default(),
            bo: BoConfig::default(),
        }
    }
}

/// Forward and lateral push at 3.1 s, then lateral and backward at 6.1 s.
pub fn tuning_pushes() -> Vec<PushSpec> {
    vec![
        PushSpec {
            t_start: 3.1,
            t_end: 3.3,
            fx: 50.0,
            fy: 75.0,
            fz: 0.0,
        },
        PushSpec {
            t_start: 6.1,
            t_end: 6.3,
            fx: -75.0,
            fy: -65.0,
            fz: 0.0,
        },
    ]
}

/// Single lateral push used for the fixed-weight comparison.
pub fn lateral_push() -> PushSpec {
    PushSpec {
        t_start: 4.9,
        t_end: 5.1,
        fx: 0.0,
        fy: 60.0,
        fz: 0.0,
    }
}

impl ScenarioConfig {
    pub fn preset(kind: ScenarioKind) -> Self {
        let base = Self {
            scenario: kind,
            ..Self::default()
        };
        match kind {
            ScenarioKind::Nominal | ScenarioKind::Custom => base,
            ScenarioKind::Push => Self {
                pushes: tuning_pushes(),
                ..base
            },
            ScenarioKind::Slip => Self {
                surface_friction: 0.1,
                budget: 75,
                ..base
            },
            ScenarioKind::PushAndSlip => Self {
                pushes: tuning_pushes(),
                surface_friction: 0.15,
                ..base
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ClosedLoopError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Header line carried by every CSV output.
    pub fn csv_header(&self) -> String {
        format!("# config_sha256={},seed={}\n", self.digest(), self.seed)
    }

    pub fn bounds(&self) -> Vec<[f64; 2]> {
        self.bounds.clone().unwrap_or_else(|| self.mode.default_bounds())
    }

    pub fn start(&self) -> Vec<f64> {
        self.start.clone().unwrap_or_else(|| self.mode.default_start())
    }

    /// Plant parameters with the scenario surface friction applied.
    pub fn plant_params(&self) -> PlantParams {
        PlantParams {
            surface_friction: self.surface_friction,
            ..self.plant
        }
    }

    pub fn disturbances(&self) -> Result<Vec<Disturbance>, ClosedLoopError> {
        self.pushes
            .iter()
            .map(|p| {
                let f = [p.fx, p.fy, p.fz].map(|v| v * self.push_scale);
                Disturbance::push(f, p.t_start, p.t_end).map_err(ClosedLoopError::from)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ClosedLoopError> {
        let cfg = |m: String| Err(ClosedLoopError::Config(m));
        if self.budget == 0 {
            return cfg("budget: must be at least 1".into());
        }
        if !(self.surface_friction.is_finite() && self.surface_friction > 0.0) {
            return cfg(format!("surface_friction: {} must be positive", self.surface_friction));
        }
        if !(self.push_scale.is_finite() && self.push_scale >= 0.0) {
            return cfg(format!("push_scale: {} must be non-negative", self.push_scale));
        }
        if !(self.qp_tolerance > 0.0) {
            return cfg("qp_tolerance: must be positive".into());
        }
        let dim = self.mode.names().len();
        let bounds = self.bounds();
        if bounds.len() != dim {
            return cfg(format!("bounds: {} ranges for {} weights", bounds.len(), dim));
        }
        for (name, [lo, hi]) in self.mode.names().iter().zip(&bounds) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && *lo >= 0.0) {
                return cfg(format!("bounds: {name} range [{lo}, {hi}] is invalid"));
            }
        }
        let start = self.start();
        if start.len() != dim {
            return cfg(format!("start: {} values for {} weights", start.len(), dim));
        }
        self.task.validate()?;
        self.lipm.validate().map_err(GaitError::from)?;
        self.plant_params().validate()?;
        self.tracker.validate().map_err(|e| ClosedLoopError::Config(format!("tracker: {e}")))?;
        self.tracker_cost
            .validate()
            .map_err(|e| ClosedLoopError::Config(format!("tracker_cost: {e}")))?;
        self.objective.validate()?;
        self.bo.validate()?;
        self.disturbances()?;
        Ok(())
    }
}

/// Outcome of one pipeline run.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub plan: GaitPlan,
    pub trace: PlantTrace,
    pub tracker: TrackerStats,
}

pub fn rollout(weights: &GaitWeights, config: &ScenarioConfig) -> Result<Rollout, ClosedLoopError> {
    let initial = gait_qp::default_initial_state(&config.task);
    let plan = gait_qp::plan_gait(&config.task, weights, &initial, &config.lipm, config.qp_tolerance)?;
    let plant = config.plant_params();
    let mut controller =
        tracker::track(&plan, &plant, &config.tracker, &config.tracker_cost).map_err(ClosedLoopError::Tracker)?;
    let trace = plant::simulate(&plan, &mut controller, &plant, &config.disturbances()?)?;
    let tracker = controller.stats.clone();
    Ok(Rollout { plan, trace, tracker })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub weights: GaitWeights,
    pub objective: f64,
    pub velocity_cost: f64,
    pub fall_penalty: f64,
    pub fell: bool,
    pub fall_time: Option<f64>,
    pub final_height: f64,
    /// Largest realized-minus-desired velocity norm over plan samples.
    pub max_velocity_error: f64,
    pub max_zmp_offset: f64,
    pub max_rcof: f64,
    pub mean_step_length: f64,
    pub controller_failures: usize,
}

/// `J = Σ‖Ẋ_real − Ẋ_des‖² + λ·max(|h_N − h_des| − threshold, 0)`.
pub fn evaluate_objective(weights: &GaitWeights, config: &ScenarioConfig) -> Result<Evaluation, ClosedLoopError> {
    Ok(score(&rollout(weights, config)?, &config.objective))
}

/// Objective terms and summary metrics of a finished rollout.
pub fn score(r: &Rollout, objective: &ObjectiveConfig) -> Evaluation {
    let (velocity_cost, fall_penalty) =
        objective.terms(&r.trace.velocity, &r.plan.reference_velocity, r.trace.final_height);
    Evaluation {
        weights: r.plan.weights,
        objective: velocity_cost + fall_penalty,
        velocity_cost,
        fall_penalty,
        fell: r.trace.fell,
        fall_time: r.trace.fall_time,
        final_height: r.trace.final_height,
        max_velocity_error: r.trace.max_velocity_error(&r.plan.reference_velocity),
        max_zmp_offset: r.plan.max_zmp_offset(),
        max_rcof: r.plan.max_rcof(),
        mean_step_length: r.plan.mean_step_length(),
        controller_failures: r.tracker.failures,
    }
}

/// One sweep or tuning evaluation, with failures kept as rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationRecord {
    pub weights: GaitWeights,
    /// `ok` or the error kind.
    pub status: String,
    pub error: Option<String>,
    pub evaluation: Option<Evaluation>,
}

impl EvaluationRecord {
    fn from_result(weights: GaitWeights, result: Result<Evaluation, ClosedLoopError>) -> Self {
        match result {
            Ok(e) => Self {
                weights,
                status: "ok".into(),
                error: None,
                evaluation: Some(e),
            },
            Err(e) => Self {
                weights,
                status: e.kind().into(),
                error: Some(e.to_string()),
                evaluation: None,
            },
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.9e}"))
}

fn fmt_bool(v: Option<bool>) -> String {
    v.map_or_else(String::new, |v| u8::from(v).to_string())
}

const WEIGHT_COLUMNS: &str = "alpha_x,alpha_y,beta_x,beta_y,gamma_x,gamma_y";

fn weight_cells(w: &GaitWeights) -> String {
    [w.alpha_x, w.alpha_y, w.beta_x, w.beta_y, w.gamma_x, w.gamma_y]
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Run the pipeline for every grid point. Rows keep the grid order.
pub fn weight_sweep(config: &ScenarioConfig, grid: &[GaitWeights]) -> Result<Vec<EvaluationRecord>, ClosedLoopError> {
    if grid.is_empty() {
        return Err(ClosedLoopError::Grid("weight grid is empty".into()));
    }
    config.validate()?;
    let run = || {
        grid.par_iter()
            .map(|w| EvaluationRecord::from_result(*w, evaluate_objective(w, config)))
            .collect()
    };
    Ok(match worker_count() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ClosedLoopError::Config(format!("{WORKERS_ENV}: {e}")))?
            .install(run),
        None => run(),
    })
}

fn worker_count() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

/// Columns: weights, `status,objective,velocity_cost,fell,final_height,
/// max_velocity_error,max_zmp_offset,max_rcof,mean_step_length`.
pub fn sweep_csv(config: &ScenarioConfig, rows: &[EvaluationRecord]) -> String {
    let mut out = config.csv_header();
    out.push_str(WEIGHT_COLUMNS);
    out.push_str(
        ",status,objective,velocity_cost,fell,final_height,max_velocity_error,max_zmp_offset,max_rcof,mean_step_length\n",
    );
    for r in rows {
        let e = r.evaluation.as_ref();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            weight_cells(&r.weights),
            r.status,
            fmt_opt(e.map(|e| e.objective)),
            fmt_opt(e.map(|e| e.velocity_cost)),
            fmt_bool(e.map(|e| e.fell)),
            fmt_opt(e.map(|e| e.final_height)),
            fmt_opt(e.map(|e| e.max_velocity_error)),
            fmt_opt(e.map(|e| e.max_zmp_offset)),
            fmt_opt(e.map(|e| e.max_rcof)),
            fmt_opt(e.map(|e| e.mean_step_length)),
        ));
    }
    out
}

/// Parse `beta=0,70;gamma=0,30` into the cartesian product of the listed
/// values. `alpha`, `beta` and `gamma` set both axes; `_x`/`_y` suffixes set
/// one. Unlisted weights are `α = 1`, `β = γ = 0`.
pub fn parse_grid(spec: &str) -> Result<Vec<GaitWeights>, ClosedLoopError> {
    let mut axes: Vec<(String, Vec<f64>)> = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| ClosedLoopError::Grid(format!("`{part}` is not key=values")))?;
        let key = key.trim().to_string();
        if !matches!(
            key.as_str(),
            "alpha" | "beta" | "gamma" | "alpha_x" | "alpha_y" | "beta_x" | "beta_y" | "gamma_x" | "gamma_y"
        ) {
            return Err(ClosedLoopError::Grid(format!("unknown weight `{key}`")));
        }
        let values: Result<Vec<f64>, _> = values.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let values = values.map_err(|e| ClosedLoopError::Grid(format!("{key}: {e}")))?;
        if values.is_empty() {
            return Err(ClosedLoopError::Grid(format!("{key}: no values")));
        }
        axes.push((key, values));
    }
    if axes.is_empty() {
        return Err(ClosedLoopError::Grid("empty grid".into()));
    }
    let mut grid = vec![GaitWeights::uniform(1.0, 0.0, 0.0)];
    for (key, values) in &axes {
        let mut next = Vec::with_capacity(grid.len() * values.len());
        for w in &grid {
            for v in values {
                let mut w = *w;
                match key.as_str() {
                    "alpha" => (w.alpha_x, w.alpha_y) = (*v, *v),
                    "beta" => (w.beta_x, w.beta_y) = (*v, *v),
                    "gamma" => (w.gamma_x, w.gamma_y) = (*v, *v),
                    "alpha_x" => w.alpha_x = *v,
                    "alpha_y" => w.alpha_y = *v,
                    "beta_x" => w.beta_x = *v,
                    "beta_y" => w.beta_y = *v,
                    "gamma_x" => w.gamma_x = *v,
                    _ => w.gamma_y = *v,
                }
                w.validate().map_err(|e| ClosedLoopError::Grid(e.to_string()))?;
                next.push(w);
            }
        }
        grid = next;
    }
    Ok(grid)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub scenario: ScenarioKind,
    pub mode: WeightMode,
    pub seed: u64,
    pub budget: usize,
    pub config_sha256: String,
    pub weight_names: Vec<String>,
    pub bounds: Vec<[f64; 2]>,
    pub best_x: Vec<f64>,
    pub best_weights: GaitWeights,
    pub best_objective: f64,
    /// Iteration at which the best objective was first reached.
    pub best_iteration: usize,
    pub trace: BoRun,
    pub evaluations: Vec<EvaluationRecord>,
    pub wall_clock_s: f64,
}

impl ScenarioReport {
    /// Columns: iteration, tuned weights, `objective,best_objective,source,
    /// status,fell,final_height,velocity_cost`. Penalized failures show the
    /// recorded penalty as objective.
    pub fn trace_csv(&self, config: &ScenarioConfig) -> String {
        let mut out = config.csv_header();
        out.push_str("iteration,");
        for n in &self.weight_names {
            out.push_str(n);
            out.push(',');
        }
        out.push_str("objective,best_objective,source,status,fell,final_height,velocity_cost\n");
        for (it, rec) in self.trace.iterations.iter().zip(&self.evaluations) {
            let e = rec.evaluation.as_ref();
            out.push_str(&format!("{},", it.iteration));
            for v in &it.x {
                out.push_str(&format!("{v:.9e},"));
            }
            out.push_str(&format!(
                "{:.9e},{:.9e},{},{},{},{},{}\n",
                it.y,
                it.y_best,
                it.source,
                rec.status,
                fmt_bool(e.map(|e| e.fell)),
                fmt_opt(e.map(|e| e.final_height)),
                fmt_opt(e.map(|e| e.velocity_cost)),
            ));
        }
        out
    }

    /// JSON document without the wall-clock time, so reruns compare equal.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("wall_clock_s");
        }
        serde_json::to_string_pretty(&v).expect("report serializes")
    }
}

/// Tune the scenario weights with BO.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioReport, ClosedLoopError> {
    config.validate()?;
    let started = Instant::now();
    let mode = config.mode;
    let bounds: Vec<(f64, f64)> = config.bounds().iter().map(|[lo, hi]| (*lo, *hi)).collect();
    let mut evaluations = Vec::with_capacity(config.budget);
    let mut objective = |x: &[f64]| {
        let weights = mode.weights(x);
        let record = EvaluationRecord::from_result(weights, evaluate_objective(&weights, config));
        let result = match (&record.evaluation, &record.error) {
            (Some(e), _) => Ok(e.objective),
            (None, err) => Err(err.clone().unwrap_or_default()),
        };
        evaluations.push(record);
        result
    };
    let trace = bo::minimize(
        &mut objective,
        &bounds,
        Some(&config.start()),
        config.budget,
        config.seed,
        &config.bo,
    )?;
    let best_iteration = trace
        .iterations
        .iter()
        .position(|it| !it.failed && it.y == trace.best_y)
        .unwrap_or(0);
    Ok(ScenarioReport {
        scenario: config.scenario,
        mode,
        seed: config.seed,
        budget: config.budget,
        config_sha256: config.digest(),
        weight_names: mode.names().iter().map(|s| s.to_string()).collect(),
        bounds: config.bounds(),
        best_x: trace.best_x.clone(),
        best_weights: mode.weights(&trace.best_x),
        best_objective: trace.best_y,
        best_iteration,
        trace,
        evaluations,
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

/// Fall outcomes of β=0 and β=70 (α=1, γ=0) under the lateral push at each
/// scale, as `(scale, falls at β=0, falls at β=70)`.
pub fn push_calibration(base: &ScenarioConfig, scales: &[f64]) -> Result<Vec<(f64, bool, bool)>, ClosedLoopError> {
    let mut grid = Vec::new();
    for s in scales {
        for beta in [0.0, 70.0] {
            grid.push((*s, beta));
        }
    }
    let outcomes: Result<Vec<bool>, ClosedLoopError> = grid
        .par_iter()
        .map(|(s, beta)| {
            let config = ScenarioConfig {
                pushes: vec![lateral_push()],
                push_scale: *s,
                ..base.clone()
            };
            Ok(rollout(&GaitWeights::uniform(1.0, *beta, 0.0), &config)?.trace.fell)
        })
        .collect();
    let outcomes = outcomes?;
    Ok(scales
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, outcomes[2 * i], outcomes[2 * i + 1]))
        .collect())
}

/// Plot-ready series from a tuning trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSeries {
    pub weight_names: Vec<String>,
    pub iteration: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub objective: Vec<f64>,
    /// Running minimum of the objective.
    pub best_so_far: Vec<f64>,
}

impl TraceSeries {
    /// Parse a trace written by [`ScenarioReport::trace_csv`].
    pub fn from_trace_csv(text: &str) -> Result<Self, ClosedLoopError> {
        let bad = |m: String| ClosedLoopError::Config(format!("trace csv: {m}"));
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("missing header".into()))?.split(',').collect();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| *h == name)
                .ok_or_else(|| bad(format!("missing column `{name}`")))
        };
        let it_col = col("iteration")?;
        let obj_col = col("objective")?;
        let weight_names: Vec<String> = header[it_col + 1..obj_col].iter().map(|s| s.to_string()).collect();
        let mut series = Self {
            weight_names,
            iteration: Vec::new(),
            weights: Vec::new(),
            objective: Vec::new(),
            best_so_far: Vec::new(),
        };
        let mut best = f64::INFINITY;
        for (n, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(bad(format!("row {} has {} cells", n + 1, cells.len())));
            }
            let num = |i: usize| cells[i].parse::<f64>().map_err(|e| bad(format!("row {}: {e}", n + 1)));
            series.iteration.push(
                cells[it_col]
                    .parse()
                    .map_err(|e| bad(format!("row {}: {e}", n + 1)))?,
            );
            series
                .weights
                .push((it_col + 1..obj_col).map(num).collect::<Result<_, _>>()?);
            let y = num(obj_col)?;
            let failed = header
                .iter()
                .position(|h| *h == "status")
                .is_some_and(|i| cells[i] != "ok");
            if !failed {
                best = best.min(y);
            }
            series.objective.push(y);
            series.best_so_far.push(best);
        }
        Ok(series)
    }

    /// Columns: `iteration,<weights>,objective,best_so_far`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("iteration,{},objective,best_so_far\n", self.weight_names.join(","));
        for i in 0..self.iteration.len() {
            let w: Vec<String> = self.weights[i].iter().map(|v| format!("{v:.9e}")).collect();
            out.push_str(&format!(
                "{},{},{:.9e},{:.9e}\n",
                self.iteration[i],
                w.join(","),
                self.objective[i],
                self.best_so_far[i]
            ));
        }
        out
    }
}

/// Scenario presets keyed by name.
pub fn presets() -> BTreeMap<&'static str, ScenarioConfig> {
    [
        ScenarioKind::Nominal,
        ScenarioKind::Push,
        ScenarioKind::Slip,
        ScenarioKind::PushAndSlip,
    ]
    .into_iter()
    .map(|k| (k.name(), ScenarioConfig::preset(k)))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_is_zero_inside_threshold() {
        let o = ObjectiveConfig::default();
        assert_eq!(o.height_hinge(0.8), 0.0);
        assert_eq!(o.height_hinge(0.76), 0.0);
        assert_eq!(o.height_hinge(0.84), 0.0);
        assert!((o.height_hinge(0.5) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn perfect_tracking_costs_nothing() {
        let o = ObjectiveConfig::default();
        let v = vec![Vector2::new(1.0, 0.1); 5];
        assert_eq!(o.terms(&v, &v, 0.8), (0.0, 0.0));
        let (t, p) = o.terms(&v, &[Vector2::new(1.0, 0.0); 5], 0.4);
        assert!((t - 0.05).abs() < 1e-12);
        assert!((p - 350.0).abs() < 1e-9);
    }

    #[test]
    fn weight_modes_round_trip() {
        for mode in [WeightMode::Two, WeightMode::Six] {
            let x = mode.default_start();
            assert_eq!(mode.coordinates(&mode.weights(&x)), x);
            assert_eq!(mode.default_bounds().len(), mode.names().len());
        }
        let w = WeightMode::Two.weights(&[70.0, 30.0]);
        assert_eq!(w, GaitWeights::uniform(1.0, 70.0, 30.0));
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("beta=0,70; gamma=0,30").unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g[1], GaitWeights::uniform(1.0, 0.0, 30.0));
        assert_eq!(g[2], GaitWeights::uniform(1.0, 70.0, 0.0));
        let g = parse_grid("beta_y=5").unwrap();
        assert_eq!((g[0].beta_x, g[0].beta_y), (0.0, 5.0));
        assert!(parse_grid("delta=1").is_err());
        assert!(parse_grid("beta=a").is_err());
        assert!(parse_grid("beta=-1").is_err());
        assert!(parse_grid("").is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        for (_, preset) in presets() {
            let back = ScenarioConfig::from_toml(&preset.to_toml()).unwrap();
            assert_eq!(back, preset);
            assert_eq!(back.digest(), preset.digest());
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ScenarioConfig::from_toml("scenario = \"push\"\nbudgett = 3\n").unwrap_err();
        assert!(err.to_string().contains("budgett"), "{err}");
        let err = ScenarioConfig::from_toml("[plant]\nmas = 3\n").unwrap_err();
        assert!(err.to_string().contains("mas"), "{err}");
    }

    #[test]
    fn invalid_values_are_named() {
        let err = ScenarioConfig::from_toml("budget = 0\n").unwrap_err();
        assert!(err.to_string().contains("budget"));
        let err = ScenarioConfig::from_toml("bounds = [[0.0, 1.0]]\n").unwrap_err();
        assert!(err.to_string().contains("bounds"));
        let err = ScenarioConfig::from_toml("surface_friction = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("surface_friction"));
    }

    #[test]
    fn digest_tracks_content() {
        let a = ScenarioConfig::default();
        let b = ScenarioConfig {
            seed: 2,
            ..a.clone()
        };
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        assert!(a.csv_header().starts_with("# config_sha256="));
    }

    #[test]
    fn pushes_are_scaled() {
        let c = ScenarioConfig::preset(ScenarioKind::Push);
        let d = c.disturbances().unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].force, [50.0 * PUSH_CALIBRATION, 75.0 * PUSH_CALIBRATION, 0.0]);
    }

    #[test]
    fn trace_series_running_minimum() {
        let csv = "# config_sha256=x,seed=1\niteration,beta,gamma,objective,best_objective,source,status,fell,final_height,velocity_cost\n\
                   0,1,1,5.0,5.0,init,ok,0,0.8,5.0\n1,0,0,50.0,5.0,init,plan_failed,,,\n2,0,1,3.0,3.0,ei,ok,0,0.8,3.0\n3,1,0,4.0,3.0,ei,ok,0,0.8,4.0\n";
        let s = TraceSeries::from_trace_csv(csv).unwrap();
        assert_eq!(s.weight_names, vec!["beta", "gamma"]);
        assert_eq!(s.best_so_far, vec![5.0, 5.0, 3.0, 3.0]);
        assert!(TraceSeries::from_trace_csv("iteration,beta\n").is_err());
    }
}
