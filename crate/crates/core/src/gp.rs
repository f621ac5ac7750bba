//! Gaussian-process regression with a squared-exponential kernel.
//!
//! Inputs live in the unit box and observations are standardized; the
//! [`GpDataset`] keeps the raw-space transform.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("kernel matrix not positive definite with jitter up to {0:e}")]
    Factorization(f64),
    #[error("invalid hyperparameter {name} = {value}")]
    Hyperparameter { name: &'static str, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("malformed dataset csv at line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

/// `k(x, x') = a exp(-‖x - x'‖² / (2b))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub amplitude: f64,
    pub lengthscale: f64,
}

impl Default for Kernel {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            lengthscale: 0.04,
        }
    }
}

impl Kernel {
    pub fn validate(&self) -> Result<(), GpError> {
        for (name, value) in [("amplitude", self.amplitude), ("lengthscale", self.lengthscale)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(GpError::Hyperparameter { name, value });
            }
        }
        Ok(())
    }
}

pub fn kernel_eval(x: &[f64], y: &[f64], kernel: &Kernel) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    kernel.amplitude * (-d2 / (2.0 * kernel.lengthscale)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GpPosterior {
    pub mean: f64,
    pub variance: f64,
}

impl GpPosterior {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Factorized GP on unit-box inputs and standardized targets.
#[derive(Debug, Clone)]
pub struct GpFit {
    pub kernel: Kernel,
    pub noise_variance: f64,
    /// Diagonal jitter actually used, absolute.
    pub jitter: f64,
    inputs: Vec<Vec<f64>>,
    targets: DVector<f64>,
    cholesky: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

fn gram(inputs: &[Vec<f64>], kernel: &Kernel) -> DMatrix<f64> {
    let n = inputs.len();
    DMatrix::from_fn(n, n, |i, j| kernel_eval(&inputs[i], &inputs[j], kernel))
}

/// Factor `K + σ_n² I + ζ I`, growing ζ from `1e-10·a` by ×10 up to `1e-4·a`.
fn factor(
    k: &DMatrix<f64>,
    noise_variance: f64,
    amplitude: f64,
) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let n = k.nrows();
    let mut jitter = JITTER_START * amplitude;
    loop {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += noise_variance + jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
        if jitter > JITTER_MAX * amplitude * (1.0 + 1e-9) {
            return Err(GpError::Factorization(JITTER_MAX * amplitude));
        }
    }
}

pub fn fit(
    inputs: &[Vec<f64>],
    targets: &[f64],
    kernel: &Kernel,
    noise_variance: f64,
) -> Result<GpFit, GpError> {
    kernel.validate()?;
    if !(noise_variance.is_finite() && noise_variance >= 0.0) {
        return Err(GpError::Hyperparameter {
            name: "noise_variance",
            value: noise_variance,
        });
    }
    if inputs.len() != targets.len() {
        return Err(GpError::Dimension(format!(
            "{} inputs for {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if let Some(d) = inputs.first().map(Vec::len) {
        if inputs.iter().any(|x| x.len() != d) {
            return Err(GpError::Dimension("inputs of mixed dimension".into()));
        }
    }
    if targets.iter().chain(inputs.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(GpError::NonFinite("dataset"));
    }
    let y = DVector::from_column_slice(targets);
    if inputs.is_empty() {
        return Ok(GpFit {
            kernel: *kernel,
            noise_variance,
            jitter: 0.0,
            inputs: Vec::new(),
            targets: y,
            cholesky: None,
            alpha: DVector::zeros(0),
        });
    }
    let (chol, jitter) = factor(&gram(inputs, kernel), noise_variance, kernel.amplitude)?;
    let alpha = chol.solve(&y);
    Ok(GpFit {
        kernel: *kernel,
        noise_variance,
        jitter,
        inputs: inputs.to_vec(),
        targets: y,
        cholesky: Some(chol),
        alpha,
    })
}

impl GpFit {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn posterior(&self, query: &[f64]) -> GpPosterior {
        let prior = self.kernel.amplitude;
        let Some(chol) = &self.cholesky else {
            return GpPosterior {
                mean: 0.0,
                variance: prior,
            };
        };
        let ks = DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|x| kernel_eval(x, query, &self.kernel)),
        );
        let mean = ks.dot(&self.alpha);
        let mut v = ks.clone();
        chol.l_dirty().solve_lower_triangular_unchecked_mut(&mut v);
        let variance = (prior - v.norm_squared()).max(0.0);
        GpPosterior { mean, variance }
    }

    /// Log evidence and its gradient w.r.t. `(log a, log b, log σ_n)`.
    pub fn log_marginal_likelihood(&self) -> (f64, [f64; 3]) {
        let n = self.inputs.len();
        let Some(chol) = &self.cholesky else {
            return (0.0, [0.0; 3]);
        };
        let log_det: f64 = chol.l_dirty().diagonal().iter().take(n).map(|d| d.ln()).sum::<f64>() * 2.0;
        let value = -0.5 * self.targets.dot(&self.alpha)
            - 0.5 * log_det
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

        let kinv = chol.inverse();
        let inner = &self.alpha * self.alpha.transpose() - kinv;
        let k = gram(&self.inputs, &self.kernel);
        // jitter scales with the amplitude
        let mut dk_da = k.clone();
        for i in 0..n {
            dk_da[(i, i)] += self.jitter;
        }
        let dk_db = DMatrix::from_fn(n, n, |i, j| {
            let d2: f64 = self.inputs[i]
                .iter()
                .zip(&self.inputs[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            k[(i, j)] * d2 / (2.0 * self.kernel.lengthscale)
        });
        let trace_product = |m: &DMatrix<f64>| inner.component_mul(m).sum() * 0.5;
        let grad_noise = 0.5 * inner.diagonal().sum() * 2.0 * self.noise_variance;
        (value, [trace_product(&dk_da), trace_product(&dk_db), grad_noise])
    }
}

pub fn log_marginal_likelihood(
    inputs: &[Vec<f64>],
    targets: &[f64],
    kernel: &Kernel,
    noise_variance: f64,
) -> Result<(f64, [f64; 3]), GpError> {
    Ok(fit(inputs, targets, kernel, noise_variance)?.log_marginal_likelihood())
}

/// Multi-start gradient ascent on the log evidence in log-hyperparameter space.
/// The noise variance is kept at least `noise_floor`.
pub fn fit_hyperparameters<R: Rng>(
    inputs: &[Vec<f64>],
    targets: &[f64],
    starts: usize,
    noise_floor: f64,
    rng: &mut R,
) -> Result<(Kernel, f64), GpError> {
    let evaluate = |theta: [f64; 3]| {
        let kernel = Kernel {
            amplitude: theta[0].exp(),
            lengthscale: theta[1].exp(),
        };
        let noise = theta[2].exp().powi(2).max(noise_floor);
        log_marginal_likelihood(inputs, targets, &kernel, noise).ok()
    };
    let mut best: Option<([f64; 3], f64)> = None;
    for s in 0..starts.max(1) {
        let mut theta = if s == 0 {
            [0.0, 0.04f64.ln(), (noise_floor.max(1e-6)).sqrt().ln()]
        } else {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-5.0..0.0),
                rng.random_range(-7.0..-1.0),
            ]
        };
        let Some((mut value, mut grad)) = evaluate(theta) else { continue };
        let mut step = 0.1;
        for _ in 0..100 {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm < 1e-6 || step < 1e-8 {
                break;
            }
            let trial = [0, 1, 2].map(|i| (theta[i] + step * grad[i] / norm).clamp(-12.0, 5.0));
            match evaluate(trial) {
                Some((v, g)) if v > value => {
                    theta = trial;
                    value = v;
                    grad = g;
                    step *= 1.5;
                }
                _ => step *= 0.5,
            }
        }
        if best.is_none_or(|(_, v)| value > v) {
            best = Some((theta, value));
        }
    }
    let (theta, _) = best.ok_or(GpError::Factorization(JITTER_MAX))?;
    Ok((
        Kernel {
            amplitude: theta[0].exp(),
            lengthscale: theta[1].exp(),
        },
        theta[2].exp().powi(2).max(noise_floor),
    ))
}

/// Observations in raw space with the transform to the unit box and
/// standardized targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpDataset {
    pub bounds: Vec<(f64, f64)>,
    pub inputs: Vec<Vec<f64>>,
    pub observations: Vec<f64>,
}

impl GpDataset {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        Self {
            bounds,
            inputs: Vec::new(),
            observations: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<(), GpError> {
        if x.len() != self.dimension() {
            return Err(GpError::Dimension(format!(
                "point of dimension {} in a {}-d dataset",
                x.len(),
                self.dimension()
            )));
        }
        self.inputs.push(x);
        self.observations.push(y);
        Ok(())
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.bounds)
            .map(|(v, (lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.bounds)
            .map(|(v, (lo, hi))| (lo + v * (hi - lo)).clamp(*lo, *hi))
            .collect()
    }

    /// `(mean, scale)` of the observations; scale is 1 when undefined or zero.
    pub fn standardization(&self) -> (f64, f64) {
        let n = self.observations.len();
        if n == 0 {
            return (0.0, 1.0);
        }
        let mean = self.observations.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return (mean, 1.0);
        }
        let var = self.observations.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = var.sqrt();
        (mean, if scale > 1e-12 { scale } else { 1.0 })
    }

    pub fn unit_inputs(&self) -> Vec<Vec<f64>> {
        self.inputs.iter().map(|x| self.to_unit(x)).collect()
    }

    pub fn standardized(&self) -> Vec<f64> {
        let (mean, scale) = self.standardization();
        self.observations.iter().map(|y| (y - mean) / scale).collect()
    }

    pub fn fit(&self, kernel: &Kernel, noise_variance: f64) -> Result<GpFit, GpError> {
        fit(&self.unit_inputs(), &self.standardized(), kernel, noise_variance)
    }

    pub fn to_csv(&self) -> String {
        let d = self.dimension();
        let mut out = String::new();
        let header: Vec<String> = (0..d).map(|i| format!("x{i}")).chain(["y".to_string()]).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (x, y) in self.inputs.iter().zip(&self.observations) {
            let row: Vec<String> = x.iter().chain(std::iter::once(y)).map(|v| format!("{v:e}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Read rows written by [`GpDataset::to_csv`] into a dataset with `bounds`.
    pub fn from_csv(bounds: Vec<(f64, f64)>, text: &str) -> Result<Self, GpError> {
        let mut data = Self::new(bounds);
        for (line, row) in text.lines().enumerate().skip(1) {
            if row.trim().is_empty() {
                continue;
            }
            let values: Result<Vec<f64>, _> = row.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let values = values.map_err(|e| GpError::Csv {
                line: line + 1,
                reason: e.to_string(),
            })?;
            if values.len() != data.dimension() + 1 {
                return Err(GpError::Csv {
                    line: line + 1,
                    reason: format!("expected {} columns", data.dimension() + 1),
                });
            }
            let (x, y) = values.split_at(data.dimension());
            data.push(x.to_vec(), y[0])?;
        }
        Ok(data)
    }
}
