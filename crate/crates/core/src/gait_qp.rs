//! Convex gait planning: CoM jerk sequence and footstep locations trading off
//! velocity tracking, ZMP centering and required friction.
//!
//! The decision vector is `[jerk_x; jerk_y; step_dx; step_dy]` where the jerks
//! are held constant over each sample period and `step_d*` are displacements
//! of every new foothold relative to the previous one. Everything the cost and
//! the constraints need (velocities, ZMPs, accelerations, foot centers) is an
//! affine function of that vector, which keeps the problem a QP.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lipm::{self, ComState, LipmParams};
use crate::qp::{self, ConstraintFamily, KktResiduals, QpError, QpProblem, QpStatus};
use crate::swing::{self, SwingTrajectory};

#[derive(Debug, Error)]
pub enum GaitError {
    #[error("invalid gait task: {0}")]
    Task(String),
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("qp solver: {0}")]
    Solver(#[from] QpError),
    #[error("gait qp infeasible: {family} constraint at row {row} cannot be satisfied")]
    Infeasible { family: ConstraintFamily, row: usize },
    #[error("gait qp stopped after {0} iterations without converging")]
    MaxIterations(usize),
    #[error(transparent)]
    Lipm(#[from] lipm::LipmError),
    #[error(transparent)]
    Swing(#[from] swing::SwingError),
}

/// Cost weights of the gait QP, split per horizontal direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitWeights {
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub beta_x: f64,
    pub beta_y: f64,
    pub gamma_x: f64,
    pub gamma_y: f64,
}

impl GaitWeights {
    pub fn uniform(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self {
            alpha_x: alpha,
            alpha_y: alpha,
            beta_x: beta,
            beta_y: beta,
            gamma_x: gamma,
            gamma_y: gamma,
        }
    }

    pub fn validate(&self) -> Result<(), GaitError> {
        for (name, w) in [
            ("alpha_x", self.alpha_x),
            ("alpha_y", self.alpha_y),
            ("beta_x", self.beta_x),
            ("beta_y", self.beta_y),
            ("gamma_x", self.gamma_x),
            ("gamma_y", self.gamma_y),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(GaitError::Weights(format!("{name} = {w}")));
            }
        }
        Ok(())
    }

    fn alpha(&self) -> [f64; 2] {
        [self.alpha_x, self.alpha_y]
    }
    fn beta(&self) -> [f64; 2] {
        [self.beta_x, self.beta_y]
    }
    fn gamma(&self) -> [f64; 2] {
        [self.gamma_x, self.gamma_y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Self {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitTask {
    /// Desired CoM velocity for each step, constant over the step [m/s].
    pub desired_velocity: Vec<[f64; 2]>,
    pub step_duration: f64,
    pub foot_half_length: f64,
    pub foot_half_width: f64,
    /// Lower corner of the displacement box of a left foothold relative to the
    /// previous (right) one. Right footholds mirror the lateral bounds.
    pub reach_min: [f64; 2],
    pub reach_max: [f64; 2],
    /// Friction coefficient assumed by the planner.
    pub friction_limit: f64,
    pub initial_stance_foot: [f64; 2],
    pub initial_swing_foot: [f64; 2],
    pub first_swing: Side,
    pub swing_apex: f64,
}

impl Default for GaitTask {
    fn default() -> Self {
        let mut desired_velocity = vec![[1.0, 0.0]; 10];
        desired_velocity[0] = [0.0, 0.0];
        desired_velocity[9] = [0.0, 0.0];
        Self {
            desired_velocity,
            step_duration: 0.8,
            foot_half_length: 0.1,
            foot_half_width: 0.05,
            reach_min: [-0.3, 0.12],
            reach_max: [0.6, 0.4],
            friction_limit: 0.4,
            initial_stance_foot: [0.0, -0.1],
            initial_swing_foot: [0.0, 0.1],
            first_swing: Side::Left,
            swing_apex: 0.05,
        }
    }
}

impl GaitTask {
    pub fn n_steps(&self) -> usize {
        self.desired_velocity.len()
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps() as f64 * self.step_duration
    }

    /// Samples per step; the step duration must be a whole number of periods.
    pub fn samples_per_step(&self, params: &LipmParams) -> Result<usize, GaitError> {
        let ratio = self.step_duration / params.sample_period;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
            return Err(GaitError::Task(format!(
                "step duration {} is not a whole number of sample periods {}",
                self.step_duration, params.sample_period
            )));
        }
        Ok(k as usize)
    }

    pub fn validate(&self) -> Result<(), GaitError> {
        if self.n_steps() == 0 {
            return Err(GaitError::Task("empty horizon".into()));
        }
        let positive = [
            ("step_duration", self.step_duration),
            ("foot_half_length", self.foot_half_length),
            ("foot_half_width", self.foot_half_width),
            ("friction_limit", self.friction_limit),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(GaitError::Task(format!("{name} must be positive, got {v}")));
            }
        }
        for a in 0..2 {
            if !(self.reach_min[a] <= self.reach_max[a]) {
                return Err(GaitError::Task(format!(
                    "reach box axis {a}: min {} > max {}",
                    self.reach_min[a], self.reach_max[a]
                )));
            }
        }
        if self
            .desired_velocity
            .iter()
            .flatten()
            .chain(&self.initial_stance_foot)
            .chain(&self.initial_swing_foot)
            .any(|v| !v.is_finite())
        {
            return Err(GaitError::Task("non-finite task data".into()));
        }
        Ok(())
    }

    /// Side of foothold `k`; foothold 0 is the initial stance foot.
    pub fn foothold_side(&self, k: usize) -> Side {
        if k % 2 == 1 {
            self.first_swing
        } else {
            self.first_swing.other()
        }
    }

    /// Displacement bounds of foothold `k >= 1` relative to foothold `k - 1`.
    pub fn reach_bounds(&self, k: usize) -> ([f64; 2], [f64; 2]) {
        match self.foothold_side(k) {
            Side::Left => (self.reach_min, self.reach_max),
            Side::Right => (
                [self.reach_min[0], -self.reach_max[1]],
                [self.reach_max[0], -self.reach_min[1]],
            ),
        }
    }

    fn half_extent(&self) -> [f64; 2] {
        [self.foot_half_length, self.foot_half_width]
    }
}

/// Index layout of the decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionLayout {
    pub samples: usize,
    pub steps: usize,
}

impl DecisionLayout {
    pub fn dimension(&self) -> usize {
        2 * self.samples + 2 * self.steps
    }
    pub fn jerk(&self, axis: usize, k: usize) -> usize {
        axis * self.samples + k
    }
    /// Displacement of foothold `k` (1-based) along `axis`.
    pub fn step(&self, axis: usize, k: usize) -> usize {
        2 * self.samples + axis * self.steps + (k - 1)
    }
}

/// Rows of affine maps `x -> M x + c` for one axis, one row per sample 1..=N.
struct AffineRows {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
}

impl AffineRows {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(rows, cols),
            offset: DVector::zeros(rows),
        }
    }
}

struct AxisMaps {
    velocity: AffineRows,
    zmp_offset: AffineRows,
    acceleration: AffineRows,
}

/// Sample `i` (1-based) belongs to step `(i - 1) / K`.
pub fn step_of_sample(i: usize, samples_per_step: usize, steps: usize) -> usize {
    ((i - 1) / samples_per_step).min(steps - 1)
}

fn axis_maps(
    axis: usize,
    layout: &DecisionLayout,
    samples_per_step: usize,
    task: &GaitTask,
    initial: &ComState,
    params: &LipmParams,
) -> AxisMaps {
    let n = layout.samples;
    let dim = layout.dimension();
    let dt = params.sample_period;
    let ratio = params.com_height / params.gravity;

    // Response of (pos, vel, acc) m periods after a unit jerk sample.
    let mut response = Vec::with_capacity(n);
    let mut g = [dt.powi(3) / 6.0, dt * dt / 2.0, dt];
    for _ in 0..n {
        response.push(g);
        g = [g[0] + dt * g[1] + dt * dt / 2.0 * g[2], g[1] + dt * g[2], g[2]];
    }

    let mut velocity = AffineRows::zeros(n, dim);
    let mut zmp_offset = AffineRows::zeros(n, dim);
    let mut acceleration = AffineRows::zeros(n, dim);
    let (p0, v0, a0) = (
        initial.position[axis],
        initial.velocity[axis],
        initial.acceleration[axis],
    );
    for i in 1..=n {
        let row = i - 1;
        let t = i as f64 * dt;
        let free_pos = p0 + v0 * t + a0 * t * t / 2.0;
        let free_vel = v0 + a0 * t;
        velocity.offset[row] = free_vel;
        acceleration.offset[row] = a0;
        zmp_offset.offset[row] = free_pos - ratio * a0 - task.initial_stance_foot[axis];
        for k in 0..i {
            let [gp, gv, ga] = response[i - 1 - k];
            let col = layout.jerk(axis, k);
            velocity.matrix[(row, col)] = gv;
            acceleration.matrix[(row, col)] = ga;
            zmp_offset.matrix[(row, col)] = gp - ratio * ga;
        }
        let step = step_of_sample(i, samples_per_step, layout.steps);
        for k in 1..=step {
            zmp_offset.matrix[(row, layout.step(axis, k))] = -1.0;
        }
    }
    AxisMaps {
        velocity,
        zmp_offset,
        acceleration,
    }
}

/// Accumulate `w * ‖M x + c - target‖²` into the quadratic objective.
fn add_least_squares(
    hessian: &mut DMatrix<f64>,
    linear: &mut DVector<f64>,
    constant: &mut f64,
    weight: f64,
    rows: &AffineRows,
    target: &DVector<f64>,
) {
    if weight == 0.0 {
        return;
    }
    let residual = &rows.offset - target;
    let mt = rows.matrix.transpose();
    *hessian += (&mt * &rows.matrix) * (2.0 * weight);
    *linear += (&mt * &residual) * (2.0 * weight);
    *constant += weight * residual.norm_squared();
}

/// Faces of the friction pyramid: inscribed regular octagon with vertices on
/// the circle ‖a‖ = μg every 45°, written as n·a <= μg.
pub fn friction_faces() -> [[f64; 2]; 8] {
    let t = std::f64::consts::SQRT_2 - 1.0;
    [
        [1.0, t],
        [1.0, -t],
        [-1.0, t],
        [-1.0, -t],
        [t, 1.0],
        [-t, 1.0],
        [t, -1.0],
        [-t, -1.0],
    ]
}

/// Assemble the gait QP for a task, weight vector and initial CoM state.
pub fn build_problem(
    task: &GaitTask,
    weights: &GaitWeights,
    initial: &ComState,
    params: &LipmParams,
) -> Result<(QpProblem, DecisionLayout), GaitError> {
    task.validate()?;
    weights.validate()?;
    params.validate()?;
    if !initial.is_finite() {
        return Err(GaitError::Task("non-finite initial CoM state".into()));
    }
    let k = task.samples_per_step(params)?;
    let layout = DecisionLayout {
        samples: k * task.n_steps(),
        steps: task.n_steps(),
    };
    let n = layout.samples;
    let dim = layout.dimension();

    let mut hessian = DMatrix::zeros(dim, dim);
    let mut linear = DVector::zeros(dim);
    let mut constant = 0.0;
    let maps = [
        axis_maps(0, &layout, k, task, initial, params),
        axis_maps(1, &layout, k, task, initial, params),
    ];
    let zeros = DVector::zeros(n);
    for (axis, m) in maps.iter().enumerate() {
        let vref = DVector::from_fn(n, |row, _| {
            task.desired_velocity[step_of_sample(row + 1, k, layout.steps)][axis]
        });
        add_least_squares(
            &mut hessian,
            &mut linear,
            &mut constant,
            weights.alpha()[axis],
            &m.velocity,
            &vref,
        );
        add_least_squares(
            &mut hessian,
            &mut linear,
            &mut constant,
            weights.beta()[axis],
            &m.zmp_offset,
            &zeros,
        );
        let g2 = params.gravity * params.gravity;
        add_least_squares(
            &mut hessian,
            &mut linear,
            &mut constant,
            weights.gamma()[axis] / g2,
            &m.acceleration,
            &zeros,
        );
    }
    // Symmetrize away rounding.
    hessian = (&hessian + hessian.transpose()) * 0.5;

    let rows = 4 * n + 8 * n + 4 * layout.steps;
    let mut a = DMatrix::zeros(rows, dim);
    let mut b = DVector::zeros(rows);
    let mut families = Vec::with_capacity(rows);
    let mut r = 0;
    let half = task.half_extent();
    for axis in 0..2 {
        let m = &maps[axis].zmp_offset;
        for row in 0..n {
            for sign in [1.0, -1.0] {
                a.row_mut(r).copy_from(&(m.matrix.row(row) * sign));
                b[r] = half[axis] - sign * m.offset[row];
                families.push(ConstraintFamily::SupportPolygon);
                r += 1;
            }
        }
    }
    let mu_g = task.friction_limit * params.gravity;
    for row in 0..n {
        for face in friction_faces() {
            let lhs = maps[0].acceleration.matrix.row(row) * face[0]
                + maps[1].acceleration.matrix.row(row) * face[1];
            a.row_mut(r).copy_from(&lhs);
            b[r] = mu_g
                - face[0] * maps[0].acceleration.offset[row]
                - face[1] * maps[1].acceleration.offset[row];
            families.push(ConstraintFamily::FrictionCone);
            r += 1;
        }
    }
    for step in 1..=layout.steps {
        let (lo, hi) = task.reach_bounds(step);
        for axis in 0..2 {
            let col = layout.step(axis, step);
            a[(r, col)] = 1.0;
            b[r] = hi[axis];
            a[(r + 1, col)] = -1.0;
            b[r + 1] = -lo[axis];
            families.push(ConstraintFamily::ReachableArea);
            families.push(ConstraintFamily::ReachableArea);
            r += 2;
        }
    }
    debug_assert_eq!(r, rows);

    let problem = QpProblem {
        hessian,
        linear,
        constant,
        inequality: a,
        upper: b,
        families,
    };
    problem.check_dimensions()?;
    Ok((problem, layout))
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub status: QpStatus,
    pub iterations: usize,
    pub residuals: KktResiduals,
    pub ridge: f64,
    pub active_constraints: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaitPlan {
    pub params: LipmParams,
    pub weights: GaitWeights,
    pub samples_per_step: usize,
    pub step_duration: f64,
    pub foot_half_extent: [f64; 2],
    pub initial: ComState,
    /// CoM states at t = i·dt for i = 1..=N.
    pub com_states: Vec<ComState>,
    pub zmp: Vec<Vector2<f64>>,
    pub rcof: Vec<f64>,
    /// Desired velocity at each sample (the planner's reference).
    pub reference_velocity: Vec<Vector2<f64>>,
    /// Footholds 0..=n_steps; foothold `s` supports step `s`.
    pub footsteps: Vec<Vector2<f64>>,
    pub swings: Vec<SwingTrajectory>,
    pub qp_cost: f64,
    pub solve: SolveReport,
}

impl GaitPlan {
    pub fn sample_count(&self) -> usize {
        self.com_states.len()
    }

    pub fn n_steps(&self) -> usize {
        self.footsteps.len() - 1
    }

    pub fn sample_period(&self) -> f64 {
        self.params.sample_period
    }

    pub fn horizon(&self) -> f64 {
        self.sample_count() as f64 * self.sample_period()
    }

    /// Time of sample `i` (0-based index into `com_states`).
    pub fn sample_time(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.sample_period()
    }

    pub fn support_step(&self, i: usize) -> usize {
        step_of_sample(i + 1, self.samples_per_step, self.n_steps())
    }

    /// Step active at time `t`; the support changes instantly at step boundaries.
    pub fn step_at(&self, t: f64) -> usize {
        let s = (t / self.step_duration).floor();
        (s.max(0.0) as usize).min(self.n_steps() - 1)
    }

    pub fn support_foot_at(&self, t: f64) -> Vector2<f64> {
        self.footsteps[self.step_at(t)]
    }

    /// CoM state at arbitrary `t`, integrating the piecewise-constant jerk
    /// exactly from the nearest preceding sample. Clamped to the horizon.
    pub fn com_at(&self, t: f64) -> ComState {
        let dt = self.sample_period();
        let t = t.clamp(0.0, self.horizon());
        let idx = (t / dt).floor() as usize;
        let (base, next) = if idx == 0 {
            (self.initial, self.com_states[0])
        } else if idx >= self.sample_count() {
            return self.com_states[self.sample_count() - 1];
        } else {
            (self.com_states[idx - 1], self.com_states[idx])
        };
        let jerk = (next.acceleration - base.acceleration) / dt;
        lipm::propagate_unchecked(&base, jerk, t - idx as f64 * dt)
    }

    /// Largest Euclidean distance between a ZMP sample and its foot center.
    pub fn max_zmp_offset(&self) -> f64 {
        self.zmp
            .iter()
            .enumerate()
            .map(|(i, z)| (z - self.footsteps[self.support_step(i)]).norm())
            .fold(0.0, f64::max)
    }

    /// Smallest distance from a ZMP sample to the edge of its support polygon
    /// (negative when outside).
    pub fn min_zmp_margin(&self) -> f64 {
        self.zmp
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let d = z - self.footsteps[self.support_step(i)];
                (self.foot_half_extent[0] - d.x.abs()).min(self.foot_half_extent[1] - d.y.abs())
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_rcof(&self) -> f64 {
        self.rcof.iter().copied().fold(0.0, f64::max)
    }

    /// Mean sagittal foothold displacement.
    pub fn mean_step_length(&self) -> f64 {
        let n = self.n_steps();
        (1..=n)
            .map(|k| (self.footsteps[k].x - self.footsteps[k - 1].x).abs())
            .sum::<f64>()
            / n as f64
    }

    /// Sum of squared ZMP deviations from the foot centers.
    pub fn zmp_cost(&self) -> f64 {
        self.zmp
            .iter()
            .enumerate()
            .map(|(i, z)| (z - self.footsteps[self.support_step(i)]).norm_squared())
            .sum()
    }

    pub fn rcof_cost(&self) -> f64 {
        self.rcof.iter().map(|m| m * m).sum()
    }

    pub fn velocity_cost(&self) -> f64 {
        self.com_states
            .iter()
            .zip(&self.reference_velocity)
            .map(|(s, r)| (s.velocity - r).norm_squared())
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "t,c_x,c_y,v_x,v_y,a_x,a_y,z_x,z_y,rcof,step,foot_x,foot_y,swing_x,swing_y,swing_z\n",
        );
        for (i, s) in self.com_states.iter().enumerate() {
            let t = self.sample_time(i);
            let step = self.support_step(i);
            let foot = self.footsteps[step];
            let swing = self.swings[step].position(t);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                t,
                s.position.x,
                s.position.y,
                s.velocity.x,
                s.velocity.y,
                s.acceleration.x,
                s.acceleration.y,
                self.zmp[i].x,
                self.zmp[i].y,
                self.rcof[i],
                step,
                foot.x,
                foot.y,
                swing.x,
                swing.y,
                swing.z
            );
        }
        out
    }
}

/// Worst violation of each constraint family, recomputed from the plan's
/// reconstructed trajectories rather than the solver output.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ConstraintViolations {
    pub support_polygon: f64,
    pub friction: f64,
    pub reach: f64,
}

impl ConstraintViolations {
    pub fn max(&self) -> f64 {
        self.support_polygon.max(self.friction).max(self.reach)
    }
}

pub fn constraint_violations(plan: &GaitPlan, task: &GaitTask) -> ConstraintViolations {
    let mut v = ConstraintViolations::default();
    for (i, s) in plan.com_states.iter().enumerate() {
        let z = lipm::zmp_of(s, &plan.params);
        let d = z - plan.footsteps[plan.support_step(i)];
        v.support_polygon = v
            .support_polygon
            .max(d.x.abs() - task.foot_half_length)
            .max(d.y.abs() - task.foot_half_width);
        v.friction = v
            .friction
            .max(lipm::rcof_of(s, &plan.params) - task.friction_limit);
    }
    for k in 1..plan.footsteps.len() {
        let d = plan.footsteps[k] - plan.footsteps[k - 1];
        let (lo, hi) = task.reach_bounds(k);
        for axis in 0..2 {
            v.reach = v.reach.max(lo[axis] - d[axis]).max(d[axis] - hi[axis]);
        }
    }
    v
}

/// Solve the gait QP and reconstruct the full plan.
pub fn plan_gait(
    task: &GaitTask,
    weights: &GaitWeights,
    initial: &ComState,
    params: &LipmParams,
    tolerance: f64,
) -> Result<GaitPlan, GaitError> {
    let (problem, layout) = build_problem(task, weights, initial, params)?;
    let solution = qp::solve(&problem, tolerance)?;
    match solution.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible { row, family } => return Err(GaitError::Infeasible { family, row }),
        QpStatus::MaxIterations => return Err(GaitError::MaxIterations(solution.iterations)),
    }
    let x = &solution.x;
    let k = layout.samples / layout.steps;

    let mut com_states = Vec::with_capacity(layout.samples);
    let mut state = *initial;
    for i in 0..layout.samples {
        let jerk = Vector2::new(x[layout.jerk(0, i)], x[layout.jerk(1, i)]);
        state = lipm::propagate(&state, jerk, params)?;
        com_states.push(state);
    }
    let zmp = com_states.iter().map(|s| lipm::zmp_of(s, params)).collect();
    let rcof = com_states.iter().map(|s| lipm::rcof_of(s, params)).collect();
    let reference_velocity = (1..=layout.samples)
        .map(|i| {
            let v = task.desired_velocity[step_of_sample(i, k, layout.steps)];
            Vector2::new(v[0], v[1])
        })
        .collect();

    let mut footsteps = vec![Vector2::from(task.initial_stance_foot)];
    for step in 1..=layout.steps {
        let d = Vector2::new(x[layout.step(0, step)], x[layout.step(1, step)]);
        footsteps.push(footsteps[step - 1] + d);
    }
    let mut swings = Vec::with_capacity(layout.steps);
    for s in 0..layout.steps {
        let from = if s == 0 {
            Vector2::from(task.initial_swing_foot)
        } else {
            footsteps[s - 1]
        };
        swings.push(swing::plan_swing(
            from,
            footsteps[s + 1],
            task.swing_apex,
            task.step_duration,
            s as f64 * task.step_duration,
        )?);
    }

    Ok(GaitPlan {
        params: *params,
        weights: *weights,
        samples_per_step: k,
        step_duration: task.step_duration,
        foot_half_extent: task.half_extent(),
        initial: *initial,
        com_states,
        zmp,
        rcof,
        reference_velocity,
        footsteps,
        swings,
        qp_cost: solution.objective,
        solve: SolveReport {
            status: solution.status,
            iterations: solution.iterations,
            residuals: solution.residuals,
            ridge: solution.ridge,
            active_constraints: solution.active_set.len(),
        },
    })
}

/// Initial CoM state used by the default scenarios: at rest above the
/// initial stance foot (single support only, so starting between the feet
/// would diverge before the first exchange).
pub fn default_initial_state(task: &GaitTask) -> ComState {
    ComState::at_rest(Vector2::from(task.initial_stance_foot))
}
