//! Receding-horizon tracking of a gait plan with box-constrained iLQR on the
//! leg model.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::gait_qp::GaitPlan;
use crate::lipm::{self, ComState};
use crate::ilqr::{self, ControlBounds, Cost, IlqrConfig, LegDynamics, Matrix, StageExpansion, Vector};
use crate::plant::{Controller, PlantCommand, PlantParams, PlantState};

/// `sqrt(x² + ε²) − ε` and its first two derivatives.
pub fn smooth_abs(x: f64, eps: f64) -> (f64, f64, f64) {
    let r = (x * x + eps * eps).sqrt();
    (r - eps, x / r, eps * eps / (r * r * r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerCost {
    pub position: f64,
    pub velocity: f64,
    pub height: f64,
    pub vertical_velocity: f64,
    /// CoP distance from the stance-foot center.
    pub cop: f64,
    /// Normal force deviation from body weight, in body weights.
    pub effort: f64,
    /// Multiplier on the state terms at the end of the horizon.
    pub terminal_scale: f64,
    pub smooth_abs_eps: f64,
}

impl Default for TrackerCost {
    fn default() -> Self {
        Self {
            position: 20.0,
            velocity: 5.0,
            height: 200.0,
            vertical_velocity: 10.0,
            cop: 0.1,
            effort: 0.05,
            terminal_scale: 5.0,
            smooth_abs_eps: 0.01,
        }
    }
}

impl TrackerCost {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.position,
            self.velocity,
            self.height,
            self.vertical_velocity,
            self.cop,
            self.effort,
            self.terminal_scale,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err("tracker cost weights must be finite and non-negative".into());
        }
        if !(self.smooth_abs_eps > 0.0) {
            return Err("smooth-abs sharpness must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub horizon: f64,
    pub control_period: f64,
    /// Normal-force bounds in body weights.
    pub min_normal_force: f64,
    pub max_normal_force: f64,
    pub ilqr: IlqrConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            horizon: 0.4,
            control_period: 0.01,
            min_normal_force: 0.0,
            max_normal_force: 2.5,
            ilqr: IlqrConfig {
                max_iterations: 4,
                reg_initial: 1e-6,
                ..IlqrConfig::default()
            },
        }
    }
}

impl TrackerConfig {
    pub fn stages(&self) -> usize {
        (self.horizon / self.control_period).round().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.horizon > 0.0 && self.control_period > 0.0) {
            return Err("horizon and control period must be positive".into());
        }
        if !(self.min_normal_force < self.max_normal_force) {
            return Err("normal-force bounds must satisfy lower < upper".into());
        }
        Ok(())
    }
}

/// Per-stage reference: CoM position and velocity, stance-foot center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageReference {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub foot: Vector2<f64>,
}

/// Tracking cost over one horizon window.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingCost {
    pub weights: TrackerCost,
    pub height: f64,
    /// One entry per stage plus the terminal reference.
    pub references: Vec<StageReference>,
}

impl TrackingCost {
    fn state_terms(&self, r: &StageReference, x: &Vector<6>, scale: f64) -> (f64, Vector<6>, Matrix<6, 6>) {
        let w = &self.weights;
        let mut value = 0.0;
        let mut grad = Vector::<6>::zeros();
        let mut hess = Matrix::<6, 6>::zeros();
        for i in 0..2 {
            let (s, ds, dds) = smooth_abs(x[i] - r.position[i], w.smooth_abs_eps);
            value += scale * w.position * s;
            grad[i] += scale * w.position * ds;
            hess[(i, i)] += scale * w.position * dds;
            let ev = x[3 + i] - r.velocity[i];
            value += scale * w.velocity * ev * ev;
            grad[3 + i] += 2.0 * scale * w.velocity * ev;
            hess[(3 + i, 3 + i)] += 2.0 * scale * w.velocity;
        }
        let eh = x[2] - self.height;
        value += scale * w.height * eh * eh;
        grad[2] += 2.0 * scale * w.height * eh;
        hess[(2, 2)] += 2.0 * scale * w.height;
        value += scale * w.vertical_velocity * x[5] * x[5];
        grad[5] += 2.0 * scale * w.vertical_velocity * x[5];
        hess[(5, 5)] += 2.0 * scale * w.vertical_velocity;
        (value, grad, hess)
    }

    fn control_terms(&self, r: &StageReference, u: &Vector<3>) -> (f64, Vector<3>, Matrix<3, 3>) {
        let w = &self.weights;
        let ef = u[0] - 1.0;
        let ep = Vector2::new(u[1] - r.foot.x, u[2] - r.foot.y);
        let value = w.effort * ef * ef + w.cop * ep.norm_squared();
        let grad = Vector::<3>::new(2.0 * w.effort * ef, 2.0 * w.cop * ep.x, 2.0 * w.cop * ep.y);
        let hess = Matrix::<3, 3>::from_diagonal(&Vector::<3>::new(2.0 * w.effort, 2.0 * w.cop, 2.0 * w.cop));
        (value, grad, hess)
    }
}

impl Cost<6, 3> for TrackingCost {
    fn stage(&self, stage: usize, x: &Vector<6>, u: &Vector<3>) -> f64 {
        let r = &self.references[stage];
        self.state_terms(r, x, 1.0).0 + self.control_terms(r, u).0
    }

    fn stage_expansion(&self, stage: usize, x: &Vector<6>, u: &Vector<3>) -> StageExpansion<6, 3> {
        let r = &self.references[stage];
        let (_, lx, lxx) = self.state_terms(r, x, 1.0);
        let (_, lu, luu) = self.control_terms(r, u);
        StageExpansion {
            lx,
            lu,
            lxx,
            luu,
            lux: Matrix::zeros(),
        }
    }

    fn terminal(&self, x: &Vector<6>) -> f64 {
        let r = self.references.last().expect("terminal reference");
        self.state_terms(r, x, self.weights.terminal_scale).0
    }

    fn terminal_expansion(&self, x: &Vector<6>) -> (Vector<6>, Matrix<6, 6>) {
        let r = self.references.last().expect("terminal reference");
        let (_, g, h) = self.state_terms(r, x, self.weights.terminal_scale);
        (g, h)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrackerStats {
    pub solves: usize,
    pub failures: usize,
    pub iterations: usize,
}

/// Plan-tracking controller. Knows the nominal mass and height only.
pub struct Tracker<'a> {
    plan: &'a GaitPlan,
    model: LegDynamics,
    weights: TrackerCost,
    config: TrackerConfig,
    height: f64,
    half_extent: Vector2<f64>,
    warm: Vec<Vector<3>>,
    pub stats: TrackerStats,
}

/// Build a tracker for `plan` using the controller's view of the plant.
pub fn track<'a>(
    plan: &'a GaitPlan,
    plant: &PlantParams,
    config: &TrackerConfig,
    cost: &TrackerCost,
) -> Result<Tracker<'a>, String> {
    config.validate()?;
    cost.validate()?;
    Ok(Tracker {
        plan,
        model: LegDynamics {
            mass: plant.mass,
            gravity: plant.gravity,
            dt: config.control_period,
        },
        weights: *cost,
        config: config.clone(),
        height: plan.params.com_height,
        half_extent: Vector2::new(plant.foot_half_length, plant.foot_half_width),
        warm: Vec::new(),
        stats: TrackerStats::default(),
    })
}

impl Tracker<'_> {
    fn plan_zmp(&self, t: f64) -> Vector2<f64> {
        lipm::zmp_of(&self.reference(t), &self.plan.params)
    }

    /// Plan CoM state, continued with constant acceleration past the horizon.
    fn reference(&self, t: f64) -> ComState {
        let end = self.plan.horizon();
        if t <= end {
            self.plan.com_at(t)
        } else {
            lipm::propagate_unchecked(&self.plan.com_at(end), Vector2::zeros(), t - end)
        }
    }

    /// References, bounds and an initial control guess for the window at `t`.
    fn window(&self, t: f64, state: &PlantState) -> (TrackingCost, ControlBounds<3>, Vec<Vector<3>>) {
        let stages = self.config.stages();
        let dt = self.config.control_period;
        let current_step = self.plan.step_at(t);
        let transfer = self.plan.sample_period();
        let foot_of = |step: usize| {
            if step == current_step {
                state.stance_foot
            } else if step + 1 == current_step {
                state.transfer_from.unwrap_or(self.plan.footsteps[step])
            } else {
                self.plan.footsteps[step]
            }
        };
        // (center, lower corner, upper corner) of the admissible CoP box
        let support = |tk: f64| {
            let step = self.plan.step_at(tk);
            let foot = foot_of(step);
            let mut lo = foot - self.half_extent;
            let mut hi = foot + self.half_extent;
            if step > 0 && tk < step as f64 * self.plan.step_duration + transfer {
                let from = foot_of(step - 1);
                lo = lo.inf(&(from - self.half_extent));
                hi = hi.sup(&(from + self.half_extent));
            }
            (foot, lo, hi)
        };
        let mut references = Vec::with_capacity(stages + 1);
        let mut lower = Vec::with_capacity(stages);
        let mut upper = Vec::with_capacity(stages);
        let mut guess = Vec::with_capacity(stages);
        for k in 0..=stages {
            let tk = t + k as f64 * dt;
            let reference = self.reference(tk);
            let (foot, lo, hi) = support(tk);
            references.push(StageReference {
                position: reference.position,
                velocity: reference.velocity,
                foot,
            });
            if k < stages {
                lower.push(Vector::<3>::new(self.config.min_normal_force, lo.x, lo.y));
                upper.push(Vector::<3>::new(self.config.max_normal_force, hi.x, hi.y));
                let zmp = self.plan_zmp(tk);
                guess.push(match self.warm.get(k + 1) {
                    Some(u) => *u,
                    None => Vector::<3>::new(1.0, zmp.x, zmp.y),
                });
            }
        }
        (
            TrackingCost {
                weights: self.weights,
                height: self.height,
                references,
            },
            ControlBounds { lower, upper },
            guess,
        )
    }
}

impl Controller for Tracker<'_> {
    fn control_period(&self) -> f64 {
        self.config.control_period
    }

    fn command(&mut self, t: f64, state: &PlantState) -> Result<PlantCommand, String> {
        let (cost, bounds, guess) = self.window(t, state);
        let x0 = Vector::<6>::new(
            state.position.x,
            state.position.y,
            state.position.z,
            state.velocity.x,
            state.velocity.y,
            state.velocity.z,
        );
        self.stats.solves += 1;
        let weight = self.model.mass * self.model.gravity;
        match ilqr::optimize(&self.model, &cost, &x0, &guess, &bounds, &self.config.ilqr) {
            Ok(solution) => {
                self.stats.iterations += solution.iterations;
                let u = solution.trajectory.controls[0];
                self.warm = solution.trajectory.controls;
                Ok(PlantCommand {
                    normal_force: u[0] * weight,
                    cop: Vector2::new(u[1], u[2]),
                })
            }
            Err(e) => {
                self.stats.failures += 1;
                self.warm.clear();
                Err(e.to_string())
            }
        }
    }
}
