//! Dense strictly convex QP solver.
//!
//! Solves
//!
//! ```text
//!     minimize     1/2 x' H x + q' x + c
//!     subject to   A x <= b
//! ```
//!
//! with the Goldfarb-Idnani dual active-set method. The method starts from the
//! unconstrained minimizer and adds violated constraints one at a time while
//! keeping the multipliers dual feasible, so an empty feasible set is detected
//! as a failed step rather than by a separate phase-one problem.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

/// Ridge added to the Hessian diagonal when it is (numerically) singular.
pub const RIDGE: f64 = 1e-9;
/// Smallest Cholesky pivot accepted without regularization.
pub const MIN_EIGEN_ESTIMATE: f64 = 1e-10;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// Which physical constraint a row of the inequality matrix encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ConstraintFamily {
    SupportPolygon,
    FrictionCone,
    ReachableArea,
    Other,
}

impl std::fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ConstraintFamily::SupportPolygon => "support polygon",
            ConstraintFamily::FrictionCone => "friction cone",
            ConstraintFamily::ReachableArea => "reachable area",
            ConstraintFamily::Other => "generic",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("hessian is not positive definite even after ridge regularization")]
    NotConvex,
    #[error("non-finite problem data")]
    NonFinite,
    #[error("solver finished with KKT residuals above tolerance: {0:?}")]
    Inaccurate(KktResiduals),
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    /// Constant offset of the objective; does not affect the minimizer.
    pub constant: f64,
    pub inequality: DMatrix<f64>,
    pub upper: DVector<f64>,
    pub families: Vec<ConstraintFamily>,
}

impl QpProblem {
    pub fn new(
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        inequality: DMatrix<f64>,
        upper: DVector<f64>,
    ) -> Result<Self, QpError> {
        let rows = inequality.nrows();
        let problem = Self {
            hessian,
            linear,
            constant: 0.0,
            inequality,
            upper,
            families: vec![ConstraintFamily::Other; rows],
        };
        problem.check_dimensions()?;
        Ok(problem)
    }

    pub fn dimension(&self) -> usize {
        self.linear.len()
    }

    pub fn constraint_count(&self) -> usize {
        self.upper.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x) + self.constant
    }

    pub fn check_dimensions(&self) -> Result<(), QpError> {
        let n = self.linear.len();
        let m = self.upper.len();
        if self.hessian.shape() != (n, n) {
            return Err(QpError::Dimension(format!(
                "hessian is {:?}, expected ({n}, {n})",
                self.hessian.shape()
            )));
        }
        if self.inequality.shape() != (m, n) {
            return Err(QpError::Dimension(format!(
                "inequality matrix is {:?}, expected ({m}, {n})",
                self.inequality.shape()
            )));
        }
        if self.families.len() != m {
            return Err(QpError::Dimension(format!(
                "{} family labels for {m} rows",
                self.families.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    /// The constraint set is empty; carries the row that could not be satisfied.
    Infeasible { row: usize, family: ConstraintFamily },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct KktResiduals {
    /// max(Ax - b)+
    pub primal: f64,
    /// ‖Hx + q + A'λ‖∞
    pub stationarity: f64,
    /// |λ'(Ax - b)|
    pub complementarity: f64,
    /// max(-λ)+
    pub dual: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal
            .max(self.stationarity)
            .max(self.complementarity)
            .max(self.dual)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per inequality row, zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub active_set: Vec<usize>,
    pub status: QpStatus,
    pub residuals: KktResiduals,
    pub iterations: usize,
    /// Ridge added to the Hessian diagonal before solving (0 if none).
    pub ridge: f64,
    pub objective: f64,
}

/// KKT residuals of `(x, λ)` for the problem with `ridge` added to the Hessian.
pub fn kkt_residuals(
    problem: &QpProblem,
    ridge: f64,
    x: &DVector<f64>,
    multipliers: &DVector<f64>,
) -> KktResiduals {
    let slack = &problem.inequality * x - &problem.upper;
    let gradient = &problem.hessian * x
        + x * ridge
        + &problem.linear
        + problem.inequality.transpose() * multipliers;
    KktResiduals {
        primal: slack.iter().fold(0.0, |acc: f64, v| acc.max(*v)),
        stationarity: gradient.amax(),
        complementarity: multipliers.dot(&slack).abs(),
        dual: multipliers.iter().fold(0.0, |acc: f64, v| acc.max(-v)),
    }
}

pub fn max_iterations(problem: &QpProblem) -> usize {
    10 * (problem.dimension() + problem.constraint_count())
}

/// Factor `H` (with ridge if needed) and return `(L^{-T}, ridge)`.
fn factor(hessian: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, f64), QpError> {
    let n = hessian.nrows();
    let try_factor = |ridge: f64| {
        let mut h = hessian.clone();
        for i in 0..n {
            h[(i, i)] += ridge;
        }
        nalgebra::Cholesky::new(h).map(|c| c.unpack())
    };
    let (lower, ridge) = match try_factor(0.0) {
        Some(l) if (0..n).all(|i| l[(i, i)] * l[(i, i)] >= MIN_EIGEN_ESTIMATE) => (l, 0.0),
        _ => (try_factor(RIDGE).ok_or(QpError::NotConvex)?, RIDGE),
    };
    let inverse = lower
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(QpError::NotConvex)?;
    Ok((inverse.transpose(), lower, ridge))
}

/// Apply a Givens rotation to columns `i` and `i + 1` of `m`.
fn rotate_columns(m: &mut DMatrix<f64>, i: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let a = m[(r, i)];
        let b = m[(r, i + 1)];
        m[(r, i)] = c * a + s * b;
        m[(r, i + 1)] = -s * a + c * b;
    }
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

struct ActiveSet {
    /// J = L^{-T} rotated so that J' N = [R; 0] for the active normals N.
    j: DMatrix<f64>,
    /// Upper triangular factor; only the leading `rows.len()` columns are used.
    r: DMatrix<f64>,
    rows: Vec<usize>,
    multipliers: Vec<f64>,
}

impl ActiveSet {
    fn len(&self) -> usize {
        self.rows.len()
    }

    /// Append a constraint whose transformed normal is `d = J' n`.
    fn add(&mut self, mut d: DVector<f64>, row: usize, multiplier: f64) {
        let q = self.len();
        let n = d.len();
        for k in (q + 1..n).rev() {
            let (c, s, h) = givens(d[k - 1], d[k]);
            if s == 0.0 {
                continue;
            }
            d[k - 1] = h;
            d[k] = 0.0;
            rotate_columns(&mut self.j, k - 1, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.rows.push(row);
        self.multipliers.push(multiplier);
    }

    /// Remove the active constraint at position `pos`.
    fn drop(&mut self, pos: usize) {
        let q = self.len();
        for col in pos..q - 1 {
            for i in 0..q {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        for k in pos..q - 1 {
            let (c, s, h) = givens(self.r[(k, k)], self.r[(k + 1, k)]);
            if s != 0.0 {
                self.r[(k, k)] = h;
                self.r[(k + 1, k)] = 0.0;
                for col in k + 1..q - 1 {
                    let a = self.r[(k, col)];
                    let b = self.r[(k + 1, col)];
                    self.r[(k, col)] = c * a + s * b;
                    self.r[(k + 1, col)] = -s * a + c * b;
                }
                rotate_columns(&mut self.j, k, c, s);
            }
        }
        self.rows.remove(pos);
        self.multipliers.remove(pos);
    }

    /// Solve R[..q, ..q] r = d[..q].
    fn dual_direction(&self, d: &DVector<f64>) -> Vec<f64> {
        let q = self.len();
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let acc = d[i] - (i + 1..q).map(|k| self.r[(i, k)] * r[k]).sum::<f64>();
            r[i] = acc / self.r[(i, i)];
        }
        r
    }
}

/// Re-solve the equality-constrained KKT system on the final active set to
/// remove rounding accumulated by the rank-one updates.
fn polish(
    problem: &QpProblem,
    ridge: f64,
    rows: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = problem.dimension();
    let q = rows.len();
    let mut kkt = DMatrix::zeros(n + q, n + q);
    kkt.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
    for i in 0..n {
        kkt[(i, i)] += ridge;
    }
    let mut rhs = DVector::zeros(n + q);
    rhs.rows_mut(0, n).copy_from(&(-&problem.linear));
    for (k, row) in rows.iter().enumerate() {
        let a = problem.inequality.row(*row);
        kkt.view_mut((n + k, 0), (1, n)).copy_from(&a);
        kkt.view_mut((0, n + k), (n, 1)).copy_from(&a.transpose());
        rhs[n + k] = problem.upper[*row];
    }
    let sol = kkt.lu().solve(&rhs)?;
    let x = sol.rows(0, n).into_owned();
    let mut multipliers = DVector::zeros(problem.constraint_count());
    for (k, row) in rows.iter().enumerate() {
        multipliers[*row] = sol[n + k].max(0.0);
    }
    Some((x, multipliers))
}

/// Solve the QP to the given KKT tolerance.
pub fn solve(problem: &QpProblem, tolerance: f64) -> Result<QpSolution, QpError> {
    problem.check_dimensions()?;
    if problem.hessian.iter().any(|v| !v.is_finite())
        || problem.linear.iter().any(|v| !v.is_finite())
        || problem.inequality.iter().any(|v| !v.is_finite())
        || problem.upper.iter().any(|v| !v.is_finite())
    {
        return Err(QpError::NonFinite);
    }
    let n = problem.dimension();
    let m = problem.constraint_count();
    let (j, lower, ridge) = factor(&problem.hessian)?;

    // Unconstrained minimizer.
    let mut x = -&problem.linear;
    lower.solve_lower_triangular_mut(&mut x);
    lower.tr_solve_lower_triangular_mut(&mut x);

    let row_norms: Vec<f64> = (0..m)
        .map(|i| problem.inequality.row(i).norm().max(f64::MIN_POSITIVE))
        .collect();
    let feasibility = 0.1 * tolerance;
    let limit = max_iterations(problem);

    let mut active = ActiveSet {
        j,
        r: DMatrix::zeros(n, n),
        rows: Vec::new(),
        multipliers: Vec::new(),
    };
    let mut in_active = vec![false; m];
    let mut iterations = 0;
    let mut status = QpStatus::Optimal;

    'outer: loop {
        // Most violated inactive constraint, measured as distance to its hyperplane.
        let slack = &problem.inequality * &x - &problem.upper;
        let mut chosen = None;
        let mut worst = 0.0;
        for i in 0..m {
            if in_active[i] || slack[i] <= feasibility {
                continue;
            }
            let scaled = slack[i] / row_norms[i];
            if scaled > worst {
                worst = scaled;
                chosen = Some(i);
            }
        }
        let Some(p) = chosen else { break };

        // Internally constraints read n' x >= b with n = -a.
        let normal = -problem.inequality.row(p).transpose();
        let mut added_multiplier = 0.0;
        loop {
            iterations += 1;
            if iterations > limit {
                status = QpStatus::MaxIterations;
                break 'outer;
            }
            let q = active.len();
            let d = active.j.transpose() * &normal;
            let mut z = DVector::zeros(n);
            for k in q..n {
                z.axpy(d[k], &active.j.column(k), 1.0);
            }
            let r = active.dual_direction(&d);

            let mut partial = f64::INFINITY;
            let mut leaving = None;
            for (k, rk) in r.iter().enumerate() {
                if *rk > 0.0 {
                    let ratio = active.multipliers[k] / rk;
                    if ratio < partial {
                        partial = ratio;
                        leaving = Some(k);
                    }
                }
            }
            let null_part: f64 = d.rows(q, n - q).norm_squared();
            let violation = problem.upper[p] - problem.inequality.row(p).dot(&x.transpose());
            // violation < 0 means n' x < b, i.e. still violated.
            let full = if null_part > 1e-20 * d.norm_squared() {
                let curvature = z.dot(&normal);
                if curvature > 0.0 {
                    (-violation / curvature).max(0.0)
                } else {
                    f64::INFINITY
                }
            } else {
                f64::INFINITY
            };
            let step = partial.min(full);
            if step.is_infinite() {
                status = QpStatus::Infeasible {
                    row: p,
                    family: problem.families[p],
                };
                break 'outer;
            }
            for (u, rk) in active.multipliers.iter_mut().zip(&r) {
                *u -= step * rk;
            }
            added_multiplier += step;
            if full.is_finite() {
                x.axpy(step, &z, 1.0);
            }
            if full <= partial {
                active.add(d, p, added_multiplier);
                in_active[p] = true;
                break;
            }
            let pos = leaving.expect("partial step implies a leaving constraint");
            in_active[active.rows[pos]] = false;
            active.drop(pos);
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (row, u) in active.rows.iter().zip(&active.multipliers) {
        multipliers[*row] = u.max(0.0);
    }
    let mut residuals = kkt_residuals(problem, ridge, &x, &multipliers);
    if status == QpStatus::Optimal && residuals.max() > tolerance {
        if let Some((px, pm)) = polish(problem, ridge, &active.rows) {
            let polished = kkt_residuals(problem, ridge, &px, &pm);
            if polished.max() < residuals.max() {
                x = px;
                multipliers = pm;
                residuals = polished;
            }
        }
        if residuals.max() > tolerance {
            return Err(QpError::Inaccurate(residuals));
        }
    }
    let objective = problem.objective(&x);
    Ok(QpSolution {
        x,
        multipliers,
        active_set: active.rows,
        status,
        residuals,
        iterations,
        ridge,
        objective,
    })
}
