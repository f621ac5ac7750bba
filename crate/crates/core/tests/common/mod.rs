//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code, clippy::needless_range_loop)]

use gaittune::gait_qp::{GaitTask, GaitWeights};
use gaittune::gp::Kernel;
use gaittune::ilqr::{ControlBounds, Dynamics, LinearDynamics, Matrix, QuadraticCost, Vector};
use gaittune::qp::QpProblem;
use gaittune::tracker::{StageReference, TrackerCost, TrackingCost};
use nalgebra::{DMatrix, DVector, Vector2};
use rand::Rng;

/// Random feasible gait task: per-step forward speed in [0, 1.2] m/s, small
/// lateral drift, start and end at rest.
pub fn random_task<R: Rng>(rng: &mut R) -> (GaitTask, GaitWeights) {
    let mut task = GaitTask::default();
    let n = task.desired_velocity.len();
    for (k, v) in task.desired_velocity.iter_mut().enumerate() {
        *v = if k == 0 || k + 1 == n {
            [0.0, 0.0]
        } else {
            [rng.random_range(0.0..1.2), rng.random_range(-0.15..0.15)]
        };
    }
    let pick = |rng: &mut R| {
        if rng.random_bool(0.25) {
            0.0
        } else {
            10f64.powf(rng.random_range(-1.0..3.0))
        }
    };
    let weights = GaitWeights {
        alpha_x: 10f64.powf(rng.random_range(0.0..1.0)),
        alpha_y: 10f64.powf(rng.random_range(0.0..1.0)),
        beta_x: pick(rng),
        beta_y: pick(rng),
        gamma_x: pick(rng),
        gamma_y: pick(rng),
    };
    (task, weights)
}

/// KKT residuals `[primal, stationarity, dual, complementarity]` of
/// `min ½x'Hx + q'x s.t. Ax ≤ b`, computed with plain loops.
pub fn kkt_check(p: &QpProblem, x: &DVector<f64>, lambda: &DVector<f64>) -> [f64; 4] {
    let n = x.len();
    let m = p.upper.len();
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        grad[i] = p.linear[i];
        for j in 0..n {
            grad[i] += p.hessian[(i, j)] * x[j];
        }
    }
    for r in 0..m {
        let mut ax = 0.0;
        for j in 0..n {
            ax += p.inequality[(r, j)] * x[j];
            grad[j] += p.inequality[(r, j)] * lambda[r];
        }
        let slack = ax - p.upper[r];
        primal = primal.max(slack);
        dual = dual.max(-lambda[r]);
        comp = comp.max((lambda[r] * slack).abs());
    }
    let stat = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    [primal.max(0.0), stat, dual.max(0.0), comp]
}

/// GP posterior by explicit inversion of `K + (σ_n² + ζ)I`.
pub fn explicit_posterior(
    x: &[Vec<f64>],
    y: &[f64],
    kernel: &Kernel,
    noise: f64,
    jitter: f64,
    query: &[f64],
) -> (f64, f64) {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
        kernel.amplitude * (-d2 / (2.0 * kernel.lengthscale)).exp()
    };
    let n = x.len();
    let gram = DMatrix::from_fn(n, n, |i, j| k(&x[i], &x[j]) + if i == j { noise + jitter } else { 0.0 });
    let inv = gram.try_inverse().expect("invertible gram matrix");
    let ks = DVector::from_fn(n, |i, _| k(&x[i], query));
    let yv = DVector::from_column_slice(y);
    let mean = (ks.transpose() * &inv * yv)[0];
    let var = k(query, query) - (ks.transpose() * &inv * &ks)[0];
    (mean, var)
}

/// Finite-horizon LQR by the backward Riccati recursion; returns the
/// optimal control sequence from `x0`.
pub fn riccati_controls(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    q: &[DMatrix<f64>],
    r: &[DMatrix<f64>],
    q_final: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> Vec<DVector<f64>> {
    let horizon = a.len();
    let mut p = q_final.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); horizon];
    for k in (0..horizon).rev() {
        let btp = b[k].transpose() * &p;
        let s = &r[k] + &btp * &b[k];
        let gain = s.try_inverse().expect("positive definite") * &btp * &a[k];
        p = &q[k] + a[k].transpose() * &p * &a[k] - a[k].transpose() * &p * &b[k] * &gain;
        p = 0.5 * (&p + p.transpose());
        gains[k] = gain;
    }
    let mut x = x0.clone();
    let mut controls = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let u = -&gains[k] * &x;
        x = &a[k] * &x + &b[k] * &u;
        controls.push(u);
    }
    controls
}

/// Branin–Hoo on [-5, 10] × [0, 15].
pub fn branin(x: &[f64]) -> f64 {
    use std::f64::consts::PI;
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x[1] - b * x[0] * x[0] + c * x[0] - 6.0).powi(2) + 10.0 * (1.0 - t) * x[0].cos() + 10.0
}

/// Global minimum of [`branin`]. At `x₁ = π` the squared term vanishes for
/// `x₂ = 2.275` and `cos π = −1`, leaving `10/(8π)`.
pub fn branin_minimum() -> f64 {
    10.0 / (8.0 * std::f64::consts::PI)
}

/// Random stable-ish linear dynamics with convex stage costs.
pub fn random_lq(rng: &mut impl Rng, horizon: usize) -> (LinearDynamics<4, 2>, QuadraticCost<4, 2>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut q = Vec::new();
    let mut r = Vec::new();
    for _ in 0..horizon {
        a.push(Matrix::<4, 4>::identity() + Matrix::<4, 4>::from_fn(|_, _| rng.random_range(-0.1..0.1)));
        b.push(Matrix::<4, 2>::from_fn(|_, _| rng.random_range(-0.5..0.5)));
        let l = Matrix::<4, 4>::from_fn(|_, _| rng.random_range(-1.0..1.0));
        q.push(l * l.transpose());
        let m = Matrix::<2, 2>::from_fn(|_, _| rng.random_range(-1.0..1.0));
        r.push(m * m.transpose() + Matrix::<2, 2>::identity() * 0.1);
    }
    let l = Matrix::<4, 4>::from_fn(|_, _| rng.random_range(-1.0..1.0));
    (LinearDynamics { a, b }, QuadraticCost { q, r, q_final: l * l.transpose() })
}

pub fn dyn_m<const R: usize, const C: usize>(m: &Matrix<R, C>) -> DMatrix<f64> {
    DMatrix::from_fn(R, C, |i, j| m[(i, j)])
}

/// Leg-model tracking problem: constant reference velocity over a fixed
/// foot, CoP boxed to the foot and normal force to [0, 2.5].
pub fn tracking_instance(rng: &mut impl Rng, stages: usize) -> (TrackingCost, ControlBounds<3>, Vector<6>) {
    let foot = Vector2::new(rng.random_range(-0.1..0.1), rng.random_range(-0.15..0.15));
    let v = Vector2::new(rng.random_range(0.0..1.0), rng.random_range(-0.3..0.3));
    let references = (0..=stages)
        .map(|k| StageReference {
            position: v * (k as f64 * 0.01),
            velocity: v,
            foot,
        })
        .collect();
    let half = Vector2::new(0.1, 0.05);
    let lower = vec![Vector::<3>::new(0.0, foot.x - half.x, foot.y - half.y); stages];
    let upper = vec![Vector::<3>::new(2.5, foot.x + half.x, foot.y + half.y); stages];
    let x0 = Vector::<6>::new(
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
        0.8 + rng.random_range(-0.02..0.02),
        v.x + rng.random_range(-0.3..0.3),
        v.y + rng.random_range(-0.3..0.3),
        rng.random_range(-0.1..0.1),
    );
    (
        TrackingCost {
            weights: TrackerCost::default(),
            height: 0.8,
            references,
        },
        ControlBounds { lower, upper },
        x0,
    )
}

/// Largest gap between analytic Jacobians and central differences.
pub fn fd_check<D: Dynamics<6, 3>>(d: &D, x: &Vector<6>, u: &Vector<3>) -> f64 {
    let (a, b) = d.jacobians(0, x, u);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for j in 0..6 {
        let mut e = Vector::<6>::zeros();
        e[j] = h;
        let col = (d.step(0, &(x + e), u) - d.step(0, &(x - e), u)) / (2.0 * h);
        for i in 0..6 {
            worst = worst.max((col[i] - a[(i, j)]).abs());
        }
    }
    for j in 0..3 {
        let mut e = Vector::<3>::zeros();
        e[j] = h;
        let col = (d.step(0, x, &(u + e)) - d.step(0, x, &(u - e))) / (2.0 * h);
        for i in 0..6 {
            worst = worst.max((col[i] - b[(i, j)]).abs());
        }
    }
    worst
}
