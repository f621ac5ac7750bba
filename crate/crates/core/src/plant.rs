//! Reduced nonlinear plant: a point mass on a massless telescoping leg.
//!
//! The leg transmits force along the line from the center of pressure to the
//! CoM, so a commanded normal force `f_z` at CoP `p` produces the tangential
//! force `f_z (c_xy - p) / c_z`. Saturation is applied in order: leg force
//! within `[0, f_max]` (zero when the leg is over-extended), CoP inside the
//! support region, tangential force inside the friction cone. When the cone
//! binds the stance foot slides away from the CoM.
//!
//! The support region is the stance-foot box, except during the weight
//! transfer right after a support exchange, when it is the convex hull of the
//! outgoing and incoming feet.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait_qp::GaitPlan;

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("invalid plant parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("disturbance ends before it starts ({start} >= {end})")]
    Disturbance { start: f64, end: f64 },
    #[error("plan horizon is empty")]
    EmptyPlan,
    #[error("controller diverged at t = {time:.3} s")]
    ControllerDiverged { time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    pub mass: f64,
    pub gravity: f64,
    /// Not read from config files; scenarios set it through their own field.
    #[serde(skip)]
    pub surface_friction: f64,
    pub foot_half_length: f64,
    pub foot_half_width: f64,
    pub sim_step: f64,
    /// True mass is `mass * mass_scale`; the controller only knows `mass`.
    pub mass_scale: f64,
    /// Offset between the true pendulum pivot height and the measured CoM height [m].
    pub height_offset: f64,
    pub nominal_height: f64,
    pub max_leg_length: f64,
    /// Upper bound on the normal force, in body weights.
    pub max_normal_force: f64,
    /// Foot sliding speed per unit of relative excess friction demand [m/s].
    pub slip_gain: f64,
    pub fall_height_ratio: f64,
    pub capture_dwell: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            mass: 41.0,
            gravity: 9.81,
            surface_friction: 0.8,
            foot_half_length: 0.1,
            foot_half_width: 0.05,
            sim_step: 0.001,
            mass_scale: 1.0,
            height_offset: 0.0,
            nominal_height: 0.8,
            max_leg_length: 1.0,
            max_normal_force: 3.0,
            slip_gain: 1.0,
            fall_height_ratio: 0.6,
            capture_dwell: 0.3,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("foot_half_length", self.foot_half_length),
            ("foot_half_width", self.foot_half_width),
            ("sim_step", self.sim_step),
            ("mass_scale", self.mass_scale),
            ("nominal_height", self.nominal_height),
            ("max_leg_length", self.max_leg_length),
            ("max_normal_force", self.max_normal_force),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(PlantError::InvalidParam { name, value });
            }
        }
        let non_negative = [
            ("surface_friction", self.surface_friction),
            ("slip_gain", self.slip_gain),
            ("capture_dwell", self.capture_dwell),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(PlantError::InvalidParam { name, value });
            }
        }
        if !(self.fall_height_ratio > 0.0 && self.fall_height_ratio < 1.0) {
            return Err(PlantError::InvalidParam {
                name: "fall_height_ratio",
                value: self.fall_height_ratio,
            });
        }
        if !self.height_offset.is_finite() {
            return Err(PlantError::InvalidParam {
                name: "height_offset",
                value: self.height_offset,
            });
        }
        Ok(())
    }

    pub fn true_mass(&self) -> f64 {
        self.mass * self.mass_scale
    }

    pub fn foot_half_diagonal(&self) -> f64 {
        self.foot_half_length.hypot(self.foot_half_width)
    }

    pub fn fall_height(&self) -> f64 {
        self.fall_height_ratio * self.nominal_height
    }
}

/// External push applied to the CoM over `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub force: [f64; 3],
    pub start: f64,
    pub end: f64,
}

impl Disturbance {
    pub fn push(force: [f64; 3], start: f64, end: f64) -> Result<Self, PlantError> {
        let d = Self { force, start, end };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.end > self.start) {
            return Err(PlantError::Disturbance {
                start: self.start,
                end: self.end,
            });
        }
        Ok(())
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

/// Sum of the pushes active at `t`.
pub fn push_force(disturbances: &[Disturbance], t: f64) -> Vector3<f64> {
    disturbances
        .iter()
        .filter(|d| d.is_active(t))
        .fold(Vector3::zeros(), |acc, d| acc + Vector3::from(d.force))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContactMode {
    Stick,
    Slip,
    /// Leg over-extended or unloaded; no ground force.
    Flight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub stance_foot: Vector2<f64>,
    /// Outgoing foot while weight is being transferred to `stance_foot`.
    pub transfer_from: Option<Vector2<f64>>,
    pub mode: ContactMode,
    /// Cumulative distance slid by stance feet [m].
    pub slip_distance: f64,
}

impl PlantState {
    pub fn standing(com: Vector2<f64>, height: f64, foot: Vector2<f64>) -> Self {
        Self {
            position: Vector3::new(com.x, com.y, height),
            velocity: Vector3::zeros(),
            stance_foot: foot,
            transfer_from: None,
            mode: ContactMode::Stick,
            slip_distance: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|v| v.is_finite())
            && self.stance_foot.iter().all(|v| v.is_finite())
    }
}

/// Normal force [N] and absolute CoP position.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantCommand {
    pub normal_force: f64,
    pub cop: Vector2<f64>,
}

/// Ground reaction actually applied during a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AppliedForce {
    pub force: Vector3<f64>,
    pub cop: Vector2<f64>,
    /// Tangential force the leg geometry asked for before the friction clamp.
    pub demanded_tangential: Vector2<f64>,
    pub mode: ContactMode,
}

pub fn clamp_to_foot(p: Vector2<f64>, foot: Vector2<f64>, params: &PlantParams) -> Vector2<f64> {
    Vector2::new(
        p.x.clamp(foot.x - params.foot_half_length, foot.x + params.foot_half_length),
        p.y.clamp(foot.y - params.foot_half_width, foot.y + params.foot_half_width),
    )
}

fn cross(o: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise convex hull (monotone chain).
fn convex_hull(mut points: Vec<Vector2<f64>>) -> Vec<Vector2<f64>> {
    points.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    points.dedup();
    if points.len() < 3 {
        return points;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * points.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 {
            Box::new(points.iter())
        } else {
            Box::new(points.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn project_to_segment(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> Vector2<f64> {
    let d = b - a;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return a;
    }
    a + d * ((p - a).dot(&d) / len2).clamp(0.0, 1.0)
}

/// Closest point to `p` in the convex hull of the two foot boxes.
pub fn clamp_to_double_support(
    p: Vector2<f64>,
    a: Vector2<f64>,
    b: Vector2<f64>,
    params: &PlantParams,
) -> Vector2<f64> {
    let (hx, hy) = (params.foot_half_length, params.foot_half_width);
    let corners = [a, b]
        .iter()
        .flat_map(|f| {
            [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
                .map(|(sx, sy)| Vector2::new(f.x + sx * hx, f.y + sy * hy))
        })
        .collect();
    let hull = convex_hull(corners);
    let n = hull.len();
    if (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0.0) {
        return p;
    }
    (0..n)
        .map(|i| project_to_segment(p, hull[i], hull[(i + 1) % n]))
        .min_by(|x, y| (x - p).norm_squared().total_cmp(&(y - p).norm_squared()))
        .expect("non-empty hull")
}

/// Closest admissible CoP for `state`.
pub fn clamp_to_support(p: Vector2<f64>, state: &PlantState, params: &PlantParams) -> Vector2<f64> {
    match state.transfer_from {
        Some(from) => clamp_to_double_support(p, from, state.stance_foot, params),
        None => clamp_to_foot(p, state.stance_foot, params),
    }
}

/// Ground force produced by `command` in `state`, after saturation.
pub fn ground_force(state: &PlantState, command: &PlantCommand, params: &PlantParams) -> AppliedForce {
    let cop = clamp_to_support(command.cop, state, params);
    let leg = state.position - Vector3::new(cop.x, cop.y, 0.0);
    let weight = params.mass * params.gravity;
    let mut fz = command.normal_force.clamp(0.0, params.max_normal_force * weight);
    let lever = state.position.z + params.height_offset;
    if leg.norm() > params.max_leg_length || lever <= 0.0 {
        fz = 0.0;
    }
    if fz == 0.0 {
        return AppliedForce {
            force: Vector3::zeros(),
            cop,
            demanded_tangential: Vector2::zeros(),
            mode: ContactMode::Flight,
        };
    }
    let demanded = (state.position.xy() - cop) * (fz / lever);
    let limit = params.surface_friction * fz;
    let (tangential, mode) = if demanded.norm() > limit {
        (demanded * (limit / demanded.norm()), ContactMode::Slip)
    } else {
        (demanded, ContactMode::Stick)
    };
    AppliedForce {
        force: Vector3::new(tangential.x, tangential.y, fz),
        cop,
        demanded_tangential: demanded,
        mode,
    }
}

/// Advance one simulation step with semi-implicit Euler.
pub fn step(
    state: &PlantState,
    command: &PlantCommand,
    params: &PlantParams,
    push: Vector3<f64>,
) -> (PlantState, AppliedForce) {
    let dt = params.sim_step;
    let applied = ground_force(state, command, params);
    let accel = (applied.force + push) / params.true_mass() - Vector3::new(0.0, 0.0, params.gravity);
    let velocity = state.velocity + accel * dt;
    let position = state.position + velocity * dt;

    let mut stance_foot = state.stance_foot;
    let mut slip_distance = state.slip_distance;
    if applied.mode == ContactMode::Slip {
        // The leg pushes the foot away from the CoM; the excess over the
        // friction limit sets the sliding speed.
        let demand = applied.demanded_tangential.norm();
        let limit = params.surface_friction * applied.force.z;
        let excess = if limit > 0.0 {
            demand / limit - 1.0
        } else {
            1.0
        };
        let slide = -applied.demanded_tangential / demand * (params.slip_gain * excess * dt);
        stance_foot += slide;
        slip_distance += slide.norm();
    }
    (
        PlantState {
            position,
            velocity,
            stance_foot,
            transfer_from: state.transfer_from,
            mode: applied.mode,
            slip_distance,
        },
        applied,
    )
}

/// Tracking controller driven by the simulator at its own control period.
pub trait Controller {
    fn control_period(&self) -> f64;
    /// Command for the next control period. `Err` marks an optimizer failure;
    /// the simulator then holds the previous command.
    fn command(&mut self, t: f64, state: &PlantState) -> Result<PlantCommand, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FallCause {
    Height,
    Capturability,
}

/// One row per control period.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub force: Vector3<f64>,
    pub cop: Vector2<f64>,
    pub stance_foot: Vector2<f64>,
    pub mode: ContactMode,
    pub saturated: bool,
    pub controller_failed: bool,
    pub fallen: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlantTrace {
    /// Plan sample times.
    pub sample_times: Vec<f64>,
    /// Realized horizontal CoM velocity at each plan sample time.
    pub velocity: Vec<Vector2<f64>>,
    pub final_height: f64,
    pub fell: bool,
    pub fall_time: Option<f64>,
    pub fall_cause: Option<FallCause>,
    pub controller_failures: usize,
    pub saturation_events: usize,
    pub slip_distance: f64,
    pub rows: Vec<TraceRow>,
}

impl PlantTrace {
    /// Largest velocity deviation from `reference` over the samples.
    pub fn max_velocity_error(&self, reference: &[Vector2<f64>]) -> f64 {
        self.velocity
            .iter()
            .zip(reference)
            .map(|(v, r)| (v - r).norm())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "t,c_x,c_y,c_z,v_x,v_y,v_z,f_x,f_y,f_z,cop_x,cop_y,foot_x,foot_y,mode,saturated,controller_failed,fallen\n",
        );
        for r in &self.rows {
            let mode = match r.mode {
                ContactMode::Stick => "stick",
                ContactMode::Slip => "slip",
                ContactMode::Flight => "flight",
            };
            out.push_str(&format!(
                "{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4},{:.6},{:.6},{:.6},{:.6},{},{},{},{}\n",
                r.t,
                r.position.x,
                r.position.y,
                r.position.z,
                r.velocity.x,
                r.velocity.y,
                r.velocity.z,
                r.force.x,
                r.force.y,
                r.force.z,
                r.cop.x,
                r.cop.y,
                r.stance_foot.x,
                r.stance_foot.y,
                mode,
                r.saturated as u8,
                r.controller_failed as u8,
                r.fallen as u8,
            ));
        }
        out
    }
}

/// Run `controller` against the plant over the plan horizon.
///
/// Falls are declared when the CoM height drops below the fall height, or
/// when the CoM stays outside its capturability radius around the CoP for
/// `capture_dwell` seconds. In the second case the leg collapses and the
/// fall is recorded once the height threshold is crossed, so the final height
/// reflects the fall. After a fall the remaining velocity samples hold the
/// fall-time value.
pub fn simulate(
    plan: &GaitPlan,
    controller: &mut dyn Controller,
    params: &PlantParams,
    disturbances: &[Disturbance],
) -> Result<PlantTrace, PlantError> {
    params.validate()?;
    for d in disturbances {
        d.validate()?;
    }
    if plan.sample_count() == 0 {
        return Err(PlantError::EmptyPlan);
    }
    let substeps = (controller.control_period() / params.sim_step).round().max(1.0) as usize;
    let ticks_per_sample = (plan.sample_period() / controller.control_period()).round().max(1.0) as usize;
    let n_ticks = plan.sample_count() * ticks_per_sample;
    let tick_dt = substeps as f64 * params.sim_step;
    let transfer = plan.sample_period();

    let mut state = PlantState::standing(
        plan.initial.position,
        params.nominal_height,
        plan.support_foot_at(0.0),
    );
    state.velocity = Vector3::new(plan.initial.velocity.x, plan.initial.velocity.y, 0.0);

    let mut trace = PlantTrace {
        sample_times: (0..plan.sample_count()).map(|i| plan.sample_time(i)).collect(),
        velocity: Vec::with_capacity(plan.sample_count()),
        final_height: state.position.z,
        fell: false,
        fall_time: None,
        fall_cause: None,
        controller_failures: 0,
        saturation_events: 0,
        slip_distance: 0.0,
        rows: Vec::with_capacity(n_ticks),
    };
    let mut last_command = PlantCommand {
        normal_force: params.mass * params.gravity,
        cop: state.position.xy(),
    };
    let mut outside_since: Option<f64> = None;
    let mut collapsed = false;
    let mut current_step = plan.step_at(0.0);

    'ticks: for tick in 0..n_ticks {
        let t = tick as f64 * tick_dt;
        let step_index = plan.step_at(t + 0.5 * params.sim_step);
        if step_index != current_step {
            current_step = step_index;
            state.transfer_from = Some(state.stance_foot);
            state.stance_foot = plan.footsteps[step_index];
        }
        if state.transfer_from.is_some()
            && t + 0.5 * params.sim_step >= step_index as f64 * plan.step_duration + transfer
        {
            state.transfer_from = None;
        }
        let mut failed = false;
        if !collapsed {
            match controller.command(t, &state) {
                Ok(c) if c.normal_force.is_finite() && c.cop.iter().all(|v| v.is_finite()) => {
                    last_command = c
                }
                Ok(_) => return Err(PlantError::ControllerDiverged { time: t }),
                Err(_) => {
                    failed = true;
                    trace.controller_failures += 1;
                }
            }
        }
        let command = if collapsed {
            PlantCommand {
                normal_force: 0.0,
                cop: last_command.cop,
            }
        } else {
            last_command
        };

        let mut applied = None;
        let mut saturated = false;
        for sub in 0..substeps {
            let ts = t + sub as f64 * params.sim_step;
            let (next, force) = step(&state, &command, params, push_force(disturbances, ts));
            if !next.is_finite() {
                return Err(PlantError::ControllerDiverged { time: ts });
            }
            saturated |= force.mode == ContactMode::Slip
                || force.force.z >= params.max_normal_force * params.mass * params.gravity
                || force.cop != command.cop;
            state = next;
            applied = Some(force);
            let now = ts + params.sim_step;

            if !trace.fell && state.position.z < params.fall_height() {
                trace.fell = true;
                trace.fall_time = Some(now);
                trace.fall_cause.get_or_insert(FallCause::Height);
                trace.final_height = state.position.z;
            }
            if !collapsed {
                let rel = state.position.xy() - force.cop;
                let radius = (state.position.z.max(1e-6) / params.gravity).sqrt()
                    * state.velocity.xy().norm()
                    + params.foot_half_diagonal();
                if rel.norm() > radius {
                    let since = *outside_since.get_or_insert(now);
                    if now - since >= params.capture_dwell - 1e-12 {
                        collapsed = true;
                        trace.fall_cause = Some(FallCause::Capturability);
                    }
                } else {
                    outside_since = None;
                }
            }
        }
        if saturated {
            trace.saturation_events += 1;
        }
        let applied = applied.expect("at least one substep");
        trace.rows.push(TraceRow {
            t: t + tick_dt,
            position: state.position,
            velocity: state.velocity,
            force: applied.force,
            cop: applied.cop,
            stance_foot: state.stance_foot,
            mode: applied.mode,
            saturated,
            controller_failed: failed,
            fallen: trace.fell,
        });
        if (tick + 1) % ticks_per_sample == 0 {
            trace.velocity.push(state.velocity.xy());
        }
        if trace.fell {
            break 'ticks;
        }
    }
    if trace.fell {
        // the loop stops on the fall tick, so `state` is the fall-time state
        trace.velocity.resize(plan.sample_count(), state.velocity.xy());
    } else {
        trace.final_height = state.position.z;
    }
    trace.slip_distance = state.slip_distance;
    Ok(trace)
}
