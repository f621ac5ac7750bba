//! Box-constrained iterative LQR.
//!
//! Deterministic variant of iLQG: dynamics are linearized and the cost is
//! expanded to second order around the nominal trajectory, the backward pass
//! solves a box-constrained QP per stage with projected Newton, and the
//! forward pass is line searched on the ratio of actual to expected decrease.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vector<const D: usize> = SVector<f64, D>;
pub type Matrix<const R: usize, const C: usize> = SMatrix<f64, R, C>;

#[derive(Debug, Error, PartialEq)]
pub enum IlqrError {
    #[error("control Hessian not positive definite at stage {stage}")]
    NotPositiveDefinite { stage: usize },
    #[error("regularization exceeded {0:e} without an accepted step")]
    Regularization(f64),
    #[error("non-finite trajectory")]
    NonFinite,
    #[error("horizon mismatch: {0}")]
    Dimension(String),
}

pub trait Dynamics<const N: usize, const M: usize> {
    fn step(&self, stage: usize, x: &Vector<N>, u: &Vector<M>) -> Vector<N>;
    /// `(∂f/∂x, ∂f/∂u)` at `(x, u)`.
    fn jacobians(&self, stage: usize, x: &Vector<N>, u: &Vector<M>) -> (Matrix<N, N>, Matrix<N, M>);
}

/// Second-order expansion of a stage cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageExpansion<const N: usize, const M: usize> {
    pub lx: Vector<N>,
    pub lu: Vector<M>,
    pub lxx: Matrix<N, N>,
    pub luu: Matrix<M, M>,
    pub lux: Matrix<M, N>,
}

pub trait Cost<const N: usize, const M: usize> {
    fn stage(&self, stage: usize, x: &Vector<N>, u: &Vector<M>) -> f64;
    fn stage_expansion(&self, stage: usize, x: &Vector<N>, u: &Vector<M>) -> StageExpansion<N, M>;
    fn terminal(&self, x: &Vector<N>) -> f64;
    fn terminal_expansion(&self, x: &Vector<N>) -> (Vector<N>, Matrix<N, N>);
}

/// Per-stage control box.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBounds<const M: usize> {
    pub lower: Vec<Vector<M>>,
    pub upper: Vec<Vector<M>>,
}

impl<const M: usize> ControlBounds<M> {
    pub fn unbounded(horizon: usize) -> Self {
        Self {
            lower: vec![Vector::from_element(f64::NEG_INFINITY); horizon],
            upper: vec![Vector::from_element(f64::INFINITY); horizon],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn clamp(&self, stage: usize, u: &Vector<M>) -> Vector<M> {
        let (lo, hi) = (&self.lower[stage], &self.upper[stage]);
        Vector::from_fn(|i, _| u[i].clamp(lo[i], hi[i]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy<const N: usize, const M: usize> {
    pub feedforward: Vec<Vector<M>>,
    pub gains: Vec<Matrix<M, N>>,
}

/// Model decrease for step `a` is `-(a * linear + a^2 * quadratic)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExpectedDecrease {
    pub linear: f64,
    pub quadratic: f64,
}

impl ExpectedDecrease {
    pub fn at(&self, step: f64) -> f64 {
        -(step * self.linear + step * step * self.quadratic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlqrConfig {
    pub max_iterations: usize,
    /// Line-search steps tried in order, each `backtrack` times the previous.
    pub line_search_steps: usize,
    pub backtrack: f64,
    /// Minimum ratio of actual to expected decrease for acceptance.
    pub acceptance: f64,
    /// Stop when the relative cost decrease falls below this.
    pub tolerance: f64,
    pub reg_initial: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    pub reg_increase: f64,
    pub reg_decrease: f64,
}

impl Default for IlqrConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            line_search_steps: 10,
            backtrack: 0.5,
            acceptance: 0.1,
            tolerance: 1e-7,
            reg_initial: 1e-6,
            reg_min: 1e-9,
            reg_max: 1e10,
            reg_increase: 10.0,
            reg_decrease: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const N: usize, const M: usize> {
    pub states: Vec<Vector<N>>,
    pub controls: Vec<Vector<M>>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IlqrSolution<const N: usize, const M: usize> {
    pub trajectory: Trajectory<N, M>,
    pub policy: Option<Policy<N, M>>,
    /// Cost after each accepted iteration, starting with the initial rollout.
    pub cost_history: Vec<f64>,
    pub regularization_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn linearize<D, const N: usize, const M: usize>(
    dynamics: &D,
    stage: usize,
    x: &Vector<N>,
    u: &Vector<M>,
) -> (Matrix<N, N>, Matrix<N, M>)
where
    D: Dynamics<N, M> + ?Sized,
{
    dynamics.jacobians(stage, x, u)
}

pub fn trajectory_cost<C, const N: usize, const M: usize>(
    cost: &C,
    states: &[Vector<N>],
    controls: &[Vector<M>],
) -> f64
where
    C: Cost<N, M> + ?Sized,
{
    controls
        .iter()
        .enumerate()
        .map(|(k, u)| cost.stage(k, &states[k], u))
        .sum::<f64>()
        + cost.terminal(&states[controls.len()])
}

pub fn rollout<D, C, const N: usize, const M: usize>(
    dynamics: &D,
    cost: &C,
    x0: &Vector<N>,
    controls: &[Vector<M>],
) -> Trajectory<N, M>
where
    D: Dynamics<N, M> + ?Sized,
    C: Cost<N, M> + ?Sized,
{
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*x0);
    for (k, u) in controls.iter().enumerate() {
        let next = dynamics.step(k, &states[k], u);
        states.push(next);
    }
    let cost = trajectory_cost(cost, &states, controls);
    Trajectory {
        states,
        controls: controls.to_vec(),
        cost,
    }
}

/// Matrix with rows and columns of clamped indices replaced by identity.
fn mask<const M: usize>(h: &Matrix<M, M>, free: &[bool; M]) -> Matrix<M, M> {
    Matrix::from_fn(|i, j| {
        if free[i] && free[j] {
            h[(i, j)]
        } else if i == j {
            1.0
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone)]
pub struct BoxQpSolution<const M: usize> {
    pub x: Vector<M>,
    pub free: [bool; M],
    /// Cholesky factor of the Hessian restricted to the free set (identity on clamped).
    factor: nalgebra::Cholesky<f64, nalgebra::Const<M>>,
}

/// Minimize `½ x'Hx + g'x` over `lower ≤ x ≤ upper` by projected Newton.
pub fn box_qp<const M: usize>(
    h: &Matrix<M, M>,
    g: &Vector<M>,
    lower: &Vector<M>,
    upper: &Vector<M>,
    start: &Vector<M>,
) -> Option<BoxQpSolution<M>> {
    let clamp = |x: &Vector<M>| Vector::<M>::from_fn(|i, _| x[i].clamp(lower[i], upper[i]));
    let value = |x: &Vector<M>| 0.5 * x.dot(&(h * x)) + g.dot(x);
    let mut x = clamp(start);
    let mut free = [true; M];
    for _ in 0..100 {
        let grad = g + h * x;
        for i in 0..M {
            free[i] = !((x[i] <= lower[i] && grad[i] > 0.0) || (x[i] >= upper[i] && grad[i] < 0.0));
        }
        let factor = mask(h, &free).cholesky()?;
        let masked_grad = Vector::<M>::from_fn(|i, _| if free[i] { grad[i] } else { 0.0 });
        if masked_grad.amax() < 1e-13 {
            return Some(BoxQpSolution { x, free, factor });
        }
        let direction = -factor.solve(&masked_grad);
        let current = value(&x);
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-12 {
            let candidate = clamp(&(x + direction * step));
            if value(&candidate) - current <= 0.01 * grad.dot(&(candidate - x)) {
                moved = candidate != x;
                x = candidate;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let grad = g + h * x;
    for i in 0..M {
        free[i] = !((x[i] <= lower[i] && grad[i] > 0.0) || (x[i] >= upper[i] && grad[i] < 0.0));
    }
    let factor = mask(h, &free).cholesky()?;
    Some(BoxQpSolution { x, free, factor })
}

/// Riccati-like backward sweep. `jacobians[k]` and `expansions[k]` are taken
/// along the nominal trajectory; `bounds` are absolute and converted to bounds
/// on the control change.
#[allow(clippy::type_complexity)]
pub fn backward_pass<const N: usize, const M: usize>(
    jacobians: &[(Matrix<N, N>, Matrix<N, M>)],
    expansions: &[StageExpansion<N, M>],
    terminal: (Vector<N>, Matrix<N, N>),
    nominal_controls: &[Vector<M>],
    bounds: &ControlBounds<M>,
    regularization: f64,
    warm_start: Option<&[Vector<M>]>,
) -> Result<(Policy<N, M>, ExpectedDecrease), IlqrError> {
    let horizon = nominal_controls.len();
    if jacobians.len() != horizon || expansions.len() != horizon || bounds.len() != horizon {
        return Err(IlqrError::Dimension(format!(
            "{} jacobians, {} expansions, {} bounds for {horizon} stages",
            jacobians.len(),
            expansions.len(),
            bounds.len()
        )));
    }
    let (mut vx, mut vxx) = terminal;
    let mut feedforward = vec![Vector::<M>::zeros(); horizon];
    let mut gains = vec![Matrix::<M, N>::zeros(); horizon];
    let mut expected = ExpectedDecrease::default();
    for k in (0..horizon).rev() {
        let (a, b) = &jacobians[k];
        let e = &expansions[k];
        let qx = e.lx + a.transpose() * vx;
        let qu = e.lu + b.transpose() * vx;
        let qxx = e.lxx + a.transpose() * vxx * a;
        let quu = e.luu + b.transpose() * vxx * b;
        let qux = e.lux + b.transpose() * vxx * a;
        let quu_reg = quu + Matrix::<M, M>::identity() * regularization;
        let u = &nominal_controls[k];
        let start = warm_start.map(|w| w[k]).unwrap_or_else(Vector::zeros);
        let qp = box_qp(
            &quu_reg,
            &qu,
            &(bounds.lower[k] - u),
            &(bounds.upper[k] - u),
            &start,
        )
        .ok_or(IlqrError::NotPositiveDefinite { stage: k })?;
        let ff = qp.x;
        let masked_qux = Matrix::<M, N>::from_fn(|i, j| if qp.free[i] { qux[(i, j)] } else { 0.0 });
        let gain = -qp.factor.solve(&masked_qux);

        expected.linear += ff.dot(&qu);
        expected.quadratic += 0.5 * ff.dot(&(quu * ff));
        vx = qx + gain.transpose() * quu * ff + gain.transpose() * qu + qux.transpose() * ff;
        vxx = qxx + gain.transpose() * quu * gain + gain.transpose() * qux + qux.transpose() * gain;
        vxx = (vxx + vxx.transpose()) * 0.5;
        feedforward[k] = ff;
        gains[k] = gain;
    }
    Ok((Policy { feedforward, gains }, expected))
}

/// Roll out `u = u_nom + step·k + K (x − x_nom)`, clamped to the box.
pub fn forward_pass<D, C, const N: usize, const M: usize>(
    dynamics: &D,
    cost: &C,
    policy: &Policy<N, M>,
    nominal: &Trajectory<N, M>,
    bounds: &ControlBounds<M>,
    step: f64,
) -> Trajectory<N, M>
where
    D: Dynamics<N, M> + ?Sized,
    C: Cost<N, M> + ?Sized,
{
    let horizon = nominal.controls.len();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    states.push(nominal.states[0]);
    for k in 0..horizon {
        let dx = states[k] - nominal.states[k];
        let u = nominal.controls[k] + policy.feedforward[k] * step + policy.gains[k] * dx;
        let u = bounds.clamp(k, &u);
        let next = dynamics.step(k, &states[k], &u);
        controls.push(u);
        states.push(next);
    }
    let cost = trajectory_cost(cost, &states, &controls);
    Trajectory {
        states,
        controls,
        cost,
    }
}

pub fn optimize<D, C, const N: usize, const M: usize>(
    dynamics: &D,
    cost: &C,
    x0: &Vector<N>,
    initial_controls: &[Vector<M>],
    bounds: &ControlBounds<M>,
    config: &IlqrConfig,
) -> Result<IlqrSolution<N, M>, IlqrError>
where
    D: Dynamics<N, M> + ?Sized,
    C: Cost<N, M> + ?Sized,
{
    let horizon = initial_controls.len();
    if bounds.len() != horizon || horizon == 0 {
        return Err(IlqrError::Dimension(format!(
            "{} bounds for {horizon} stages",
            bounds.len()
        )));
    }
    let clamped: Vec<_> = initial_controls
        .iter()
        .enumerate()
        .map(|(k, u)| bounds.clamp(k, u))
        .collect();
    let mut nominal = rollout(dynamics, cost, x0, &clamped);
    if !nominal.cost.is_finite() {
        return Err(IlqrError::NonFinite);
    }
    let mut solution = IlqrSolution {
        cost_history: vec![nominal.cost],
        regularization_history: Vec::new(),
        trajectory: nominal.clone(),
        policy: None,
        iterations: 0,
        converged: false,
    };
    let mut reg = config.reg_initial.max(config.reg_min);
    let mut previous_ff: Option<Vec<Vector<M>>> = None;

    for _ in 0..config.max_iterations {
        solution.iterations += 1;
        let jacobians: Vec<_> = (0..horizon)
            .map(|k| dynamics.jacobians(k, &nominal.states[k], &nominal.controls[k]))
            .collect();
        let expansions: Vec<_> = (0..horizon)
            .map(|k| cost.stage_expansion(k, &nominal.states[k], &nominal.controls[k]))
            .collect();
        let terminal = cost.terminal_expansion(&nominal.states[horizon]);

        let (policy, expected) = loop {
            match backward_pass(
                &jacobians,
                &expansions,
                terminal,
                &nominal.controls,
                bounds,
                reg,
                previous_ff.as_deref(),
            ) {
                Ok(result) => break result,
                Err(IlqrError::NotPositiveDefinite { .. }) => {
                    reg = (reg * config.reg_increase).max(config.reg_min);
                    if reg > config.reg_max {
                        return Err(IlqrError::Regularization(config.reg_max));
                    }
                }
                Err(e) => return Err(e),
            }
        };
        solution.regularization_history.push(reg);
        if expected.at(1.0) <= 1e-12 * (1.0 + nominal.cost.abs()) {
            solution.policy = Some(policy);
            solution.converged = true;
            break;
        }

        let mut accepted = None;
        let mut step = 1.0;
        for _ in 0..config.line_search_steps {
            let candidate = forward_pass(dynamics, cost, &policy, &nominal, bounds, step);
            let actual = nominal.cost - candidate.cost;
            let predicted = expected.at(step);
            if candidate.cost.is_finite() && predicted > 0.0 && actual >= config.acceptance * predicted {
                accepted = Some(candidate);
                break;
            }
            step *= config.backtrack;
        }
        match accepted {
            Some(next) => {
                let decrease = nominal.cost - next.cost;
                previous_ff = Some(policy.feedforward.clone());
                nominal = next;
                solution.cost_history.push(nominal.cost);
                solution.policy = Some(policy);
                reg = (reg / config.reg_decrease).max(config.reg_min);
                if decrease <= config.tolerance * nominal.cost.abs().max(1e-12) {
                    solution.converged = true;
                    break;
                }
            }
            None => {
                reg = (reg * config.reg_increase).max(config.reg_min);
                previous_ff = None;
                if reg > config.reg_max {
                    break;
                }
            }
        }
    }
    solution.trajectory = nominal;
    Ok(solution)
}

/// Force-controlled point mass in 3-D: state `(p, v)`, control force [N].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMassForce {
    pub mass: f64,
    pub gravity: f64,
    pub dt: f64,
}

impl Dynamics<6, 3> for PointMassForce {
    fn step(&self, _stage: usize, x: &Vector<6>, u: &Vector<3>) -> Vector<6> {
        let accel = u / self.mass - Vector::<3>::new(0.0, 0.0, self.gravity);
        let v = x.fixed_rows::<3>(3) + accel * self.dt;
        let p = x.fixed_rows::<3>(0) + v * self.dt;
        Vector::<6>::new(p.x, p.y, p.z, v.x, v.y, v.z)
    }

    fn jacobians(&self, _stage: usize, _x: &Vector<6>, _u: &Vector<3>) -> (Matrix<6, 6>, Matrix<6, 3>) {
        let mut a = Matrix::<6, 6>::identity();
        a.fixed_view_mut::<3, 3>(0, 3).fill_diagonal(self.dt);
        let mut b = Matrix::<6, 3>::zeros();
        b.fixed_view_mut::<3, 3>(0, 0).fill_diagonal(self.dt * self.dt / self.mass);
        b.fixed_view_mut::<3, 3>(3, 0).fill_diagonal(self.dt / self.mass);
        (a, b)
    }
}

/// Point mass on a massless leg. State `(c, v)` in 3-D; control
/// `(normal force / body weight, cop_x, cop_y)`. The tangential ground force
/// is `f_z (c_xy − p) / c_z`. Semi-implicit Euler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegDynamics {
    pub mass: f64,
    pub gravity: f64,
    pub dt: f64,
}

impl LegDynamics {
    fn acceleration(&self, x: &Vector<6>, u: &Vector<3>) -> Vector<3> {
        let specific = u[0] * self.gravity;
        let cz = x[2];
        Vector::<3>::new(
            specific * (x[0] - u[1]) / cz,
            specific * (x[1] - u[2]) / cz,
            specific - self.gravity,
        )
    }

    /// `(∂a/∂c, ∂a/∂u)`.
    fn acceleration_jacobians(&self, x: &Vector<6>, u: &Vector<3>) -> (Matrix<3, 3>, Matrix<3, 3>) {
        let g = self.gravity;
        let s = u[0] * g;
        let cz = x[2];
        let rx = x[0] - u[1];
        let ry = x[1] - u[2];
        let da_dc = Matrix::<3, 3>::new(
            s / cz, 0.0, -s * rx / (cz * cz),
            0.0, s / cz, -s * ry / (cz * cz),
            0.0, 0.0, 0.0,
        );
        let da_du = Matrix::<3, 3>::new(
            g * rx / cz, -s / cz, 0.0,
            g * ry / cz, 0.0, -s / cz,
            g, 0.0, 0.0,
        );
        (da_dc, da_du)
    }
}

impl Dynamics<6, 3> for LegDynamics {
    fn step(&self, _stage: usize, x: &Vector<6>, u: &Vector<3>) -> Vector<6> {
        let a = self.acceleration(x, u);
        let v = x.fixed_rows::<3>(3) + a * self.dt;
        let c = x.fixed_rows::<3>(0) + v * self.dt;
        Vector::<6>::new(c.x, c.y, c.z, v.x, v.y, v.z)
    }

    fn jacobians(&self, _stage: usize, x: &Vector<6>, u: &Vector<3>) -> (Matrix<6, 6>, Matrix<6, 3>) {
        let dt = self.dt;
        let (da_dc, da_du) = self.acceleration_jacobians(x, u);
        let mut a = Matrix::<6, 6>::identity();
        // v' = v + dt a(c, u);  c' = c + dt v'
        a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(da_dc * dt));
        a.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Matrix::<3, 3>::identity() + da_dc * (dt * dt)));
        a.fixed_view_mut::<3, 3>(0, 3).fill_diagonal(dt);
        let mut b = Matrix::<6, 3>::zeros();
        b.fixed_view_mut::<3, 3>(3, 0).copy_from(&(da_du * dt));
        b.fixed_view_mut::<3, 3>(0, 0).copy_from(&(da_du * (dt * dt)));
        (a, b)
    }
}

/// Time-varying linear dynamics `x' = A_k x + B_k u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics<const N: usize, const M: usize> {
    pub a: Vec<Matrix<N, N>>,
    pub b: Vec<Matrix<N, M>>,
}

impl<const N: usize, const M: usize> Dynamics<N, M> for LinearDynamics<N, M> {
    fn step(&self, stage: usize, x: &Vector<N>, u: &Vector<M>) -> Vector<N> {
        self.a[stage] * x + self.b[stage] * u
    }

    fn jacobians(&self, stage: usize, _x: &Vector<N>, _u: &Vector<M>) -> (Matrix<N, N>, Matrix<N, M>) {
        (self.a[stage], self.b[stage])
    }
}

/// Time-varying quadratic cost `½ x'Q_k x + ½ u'R_k u` with terminal `½ x'Q_f x`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost<const N: usize, const M: usize> {
    pub q: Vec<Matrix<N, N>>,
    pub r: Vec<Matrix<M, M>>,
    pub q_final: Matrix<N, N>,
}

impl<const N: usize, const M: usize> Cost<N, M> for QuadraticCost<N, M> {
    fn stage(&self, stage: usize, x: &Vector<N>, u: &Vector<M>) -> f64 {
        0.5 * x.dot(&(self.q[stage] * x)) + 0.5 * u.dot(&(self.r[stage] * u))
    }

    fn stage_expansion(&self, stage: usize, x: &Vector<N>, u: &Vector<M>) -> StageExpansion<N, M> {
        StageExpansion {
            lx: self.q[stage] * x,
            lu: self.r[stage] * u,
            lxx: self.q[stage],
            luu: self.r[stage],
            lux: Matrix::zeros(),
        }
    }

    fn terminal(&self, x: &Vector<N>) -> f64 {
        0.5 * x.dot(&(self.q_final * x))
    }

    fn terminal_expansion(&self, x: &Vector<N>) -> (Vector<N>, Matrix<N, N>) {
        (self.q_final * x, self.q_final)
    }
}
