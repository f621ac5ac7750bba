//! Bayesian optimization with a hedged portfolio of acquisition functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::gp::{fit_hyperparameters, GpDataset, GpError, GpFit, Kernel};

#[derive(Debug, Error)]
pub enum BoError {
    #[error("invalid search bounds: {0}")]
    Bounds(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Gp(#[from] GpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Acquisition {
    /// `-μ + κσ`, maximized.
    LowerConfidenceBound { kappa: f64 },
    ExpectedImprovement { xi: f64 },
    ProbabilityOfImprovement { xi: f64 },
}

impl Acquisition {
    pub fn name(&self) -> &'static str {
        match self {
            Self::LowerConfidenceBound { .. } => "lcb",
            Self::ExpectedImprovement { .. } => "ei",
            Self::ProbabilityOfImprovement { .. } => "pi",
        }
    }

    /// Score to maximize for a minimization problem. `mean`, `std_dev` and
    /// `best` share one (standardized) scale.
    pub fn value(&self, mean: f64, std_dev: f64, best: f64) -> f64 {
        match *self {
            Self::LowerConfidenceBound { kappa } => -mean + kappa * std_dev,
            Self::ExpectedImprovement { xi } => {
                let gain = best - mean - xi;
                if std_dev <= 0.0 {
                    return gain.max(0.0);
                }
                let z = gain / std_dev;
                let n = standard_normal();
                gain * n.cdf(z) + std_dev * n.pdf(z)
            }
            Self::ProbabilityOfImprovement { xi } => {
                let gain = best - mean - xi;
                if std_dev <= 0.0 {
                    return if gain > 0.0 { 1.0 } else { 0.0 };
                }
                standard_normal().cdf(gain / std_dev)
            }
        }
    }
}

fn standard_normal() -> Normal {
    Normal::standard()
}

pub fn default_portfolio() -> Vec<Acquisition> {
    vec![
        Acquisition::LowerConfidenceBound { kappa: 2.0 },
        Acquisition::ExpectedImprovement { xi: 0.01 },
        Acquisition::ProbabilityOfImprovement { xi: 0.01 },
    ]
}

/// Softmax selection over cumulative gains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hedge {
    pub eta: f64,
    pub gains: Vec<f64>,
}

impl Hedge {
    pub fn new(arms: usize, eta: f64) -> Self {
        Self {
            eta,
            gains: vec![0.0; arms],
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let top = self.gains.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.gains.iter().map(|g| (self.eta * (g - top)).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter().map(|v| v / total).collect()
    }

    pub fn select<R: Rng>(&self, rng: &mut R) -> usize {
        let p = self.probabilities();
        let mut draw: f64 = rng.random();
        for (i, pi) in p.iter().enumerate() {
            if draw < *pi {
                return i;
            }
            draw -= pi;
        }
        p.len() - 1
    }

    pub fn update(&mut self, rewards: &[f64]) {
        for (g, r) in self.gains.iter_mut().zip(rewards) {
            *g += r;
        }
    }
}

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut factor = inv;
    let mut value = 0.0;
    while index > 0 {
        value += (index % base) as f64 * factor;
        index /= base;
        factor *= inv;
    }
    value
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Halton points `start..start+count` with a Cranley–Patterson shift.
pub fn halton(dim: usize, start: u64, count: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "halton supports up to {} dimensions", PRIMES.len());
    (0..count as u64)
        .map(|i| {
            (0..dim)
                .map(|d| (radical_inverse(start + i, PRIMES[d]) + shift.get(d).copied().unwrap_or(0.0)).fract())
                .collect()
        })
        .collect()
}

/// Coordinate pattern search maximizing `f` in the unit box.
pub fn pattern_search<F: Fn(&[f64]) -> f64>(
    f: &F,
    start: &[f64],
    initial_step: f64,
    shrink: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let mut x = start.to_vec();
    let mut fx = f(&x);
    let mut evals = 1;
    let mut step = initial_step;
    while evals < max_evals && step > 1e-9 {
        let mut improved = false;
        'dirs: for d in 0..x.len() {
            for sign in [1.0, -1.0] {
                if evals >= max_evals {
                    break 'dirs;
                }
                let mut trial = x.clone();
                trial[d] = (trial[d] + sign * step).clamp(0.0, 1.0);
                if trial[d] == x[d] {
                    continue;
                }
                let ft = f(&trial);
                evals += 1;
                if ft > fx {
                    x = trial;
                    fx = ft;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= shrink;
        }
    }
    (x, fx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoConfig {
    pub kernel: Kernel,
    /// Observation noise variance on the standardized scale.
    pub noise_variance: f64,
    pub portfolio: Vec<Acquisition>,
    pub hedge_eta: f64,
    /// Space-filling evaluations after the initial point.
    pub initial_design: usize,
    pub candidates: usize,
    pub refine_top: usize,
    pub refine_evals: usize,
    pub refine_step: f64,
    pub refine_shrink: f64,
    /// Failed evaluations are recorded as this multiple of the worst finite value.
    pub failure_factor: f64,
    /// Recorded for a failure before any finite observation exists.
    pub failure_fallback: f64,
    /// Refit kernel and noise by evidence maximization before each suggestion.
    pub fit_hyperparameters: bool,
    pub hyperparameter_starts: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::default(),
            noise_variance: 1e-6,
            portfolio: default_portfolio(),
            hedge_eta: 1.0,
            initial_design: 4,
            candidates: 512,
            refine_top: 8,
            refine_evals: 60,
            refine_step: 0.1,
            refine_shrink: 0.5,
            failure_factor: 10.0,
            failure_fallback: 1e6,
            fit_hyperparameters: false,
            hyperparameter_starts: 4,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<(), BoError> {
        if self.portfolio.is_empty() {
            return Err(BoError::Config("acquisition portfolio is empty".into()));
        }
        if self.candidates == 0 {
            return Err(BoError::Config("candidate count must be positive".into()));
        }
        if !(self.noise_variance >= 0.0 && self.hedge_eta >= 0.0) {
            return Err(BoError::Config("noise and hedge rate must be non-negative".into()));
        }
        self.kernel.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoIteration {
    pub iteration: usize,
    pub x: Vec<f64>,
    /// Value recorded in the dataset (penalized on failure).
    pub y: f64,
    pub y_best: f64,
    /// `init` for the design phase, otherwise the acquisition used.
    pub source: String,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoRun {
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
    pub iterations: Vec<BoIteration>,
    pub best_x: Vec<f64>,
    pub best_y: f64,
    pub hedge_gains: Vec<f64>,
    pub dataset: GpDataset,
}

impl BoRun {
    /// `iteration,x0..,y,y_best,source,failed`.
    pub fn to_csv(&self) -> String {
        let d = self.bounds.len();
        let mut out = String::from("iteration,");
        for i in 0..d {
            out.push_str(&format!("x{i},"));
        }
        out.push_str("y,y_best,source,failed\n");
        for it in &self.iterations {
            out.push_str(&format!("{},", it.iteration));
            for v in &it.x {
                out.push_str(&format!("{v:.9e},"));
            }
            out.push_str(&format!("{:.9e},{:.9e},{},{}\n", it.y, it.y_best, it.source, u8::from(it.failed)));
        }
        out
    }
}

fn check_bounds(bounds: &[(f64, f64)]) -> Result<(), BoError> {
    if bounds.is_empty() {
        return Err(BoError::Bounds("no dimensions".into()));
    }
    if bounds.len() > PRIMES.len() {
        return Err(BoError::Bounds(format!("at most {} dimensions", PRIMES.len())));
    }
    for (i, (lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(BoError::Bounds(format!("dimension {i}: [{lo}, {hi}]")));
        }
    }
    Ok(())
}

/// Maximize `acquisition` over the unit box: score Halton candidates, then
/// refine the best few by pattern search.
pub fn maximize_acquisition(
    fit: &GpFit,
    acquisition: &Acquisition,
    best: f64,
    dim: usize,
    shift: &[f64],
    config: &BoConfig,
) -> (Vec<f64>, f64) {
    let score = |u: &[f64]| {
        let p = fit.posterior(u);
        acquisition.value(p.mean, p.std_dev(), best)
    };
    let mut scored: Vec<(f64, Vec<f64>)> = halton(dim, 1, config.candidates, shift)
        .into_iter()
        .map(|u| (score(&u), u))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best_point = scored[0].1.clone();
    let mut best_value = scored[0].0;
    for (_, u) in scored.iter().take(config.refine_top) {
        let (x, v) = pattern_search(&score, u, config.refine_step, config.refine_shrink, config.refine_evals);
        if v > best_value {
            best_value = v;
            best_point = x;
        }
    }
    (best_point, best_value)
}

/// Minimize `objective` over `bounds` with `budget` evaluations. The first
/// evaluation is `start` (the box center if absent), followed by a
/// space-filling design and then hedged acquisitions.
pub fn minimize<F>(
    objective: &mut F,
    bounds: &[(f64, f64)],
    start: Option<&[f64]>,
    budget: usize,
    seed: u64,
    config: &BoConfig,
) -> Result<BoRun, BoError>
where
    F: FnMut(&[f64]) -> Result<f64, String>,
{
    check_bounds(bounds)?;
    config.validate()?;
    if budget == 0 {
        return Err(BoError::Config("budget must be at least 1".into()));
    }
    let dim = bounds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = GpDataset::new(bounds.to_vec());
    let mut hedge = Hedge::new(config.portfolio.len(), config.hedge_eta);
    let mut iterations = Vec::with_capacity(budget);
    let mut best: Option<(Vec<f64>, f64)> = None;

    let design_shift: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
    let design = halton(dim, 1, config.initial_design, &design_shift);
    let first = match start {
        Some(x) => {
            if x.len() != dim {
                return Err(BoError::Bounds(format!("start point has {} coordinates", x.len())));
            }
            x.iter().zip(bounds).map(|(v, (lo, hi))| v.clamp(*lo, *hi)).collect()
        }
        None => bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect::<Vec<f64>>(),
    };

    for iteration in 0..budget {
        if iteration <= config.initial_design {
            let x = if iteration == 0 {
                first.clone()
            } else {
                data.from_unit(&design[iteration - 1])
            };
            let y = record(objective, &x, &data, config);
            data.push(x.clone(), y.0)?;
            push_iteration(&mut iterations, &mut best, iteration, x, y, "init".into());
            continue;
        }
        let (kernel, noise) = if config.fit_hyperparameters {
            fit_hyperparameters(
                &data.unit_inputs(),
                &data.standardized(),
                config.hyperparameter_starts,
                config.noise_variance,
                &mut rng,
            )?
        } else {
            (config.kernel, config.noise_variance)
        };
        let fit = data.fit(&kernel, noise)?;
        let best_std = data.standardized().into_iter().fold(f64::INFINITY, f64::min);
        let shift: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
        let proposals: Vec<Vec<f64>> = config
            .portfolio
            .iter()
            .map(|a| maximize_acquisition(&fit, a, best_std, dim, &shift, config).0)
            .collect();
        let chosen = hedge.select(&mut rng);
        let x = data.from_unit(&proposals[chosen]);
        let y = record(objective, &x, &data, config);
        data.push(x.clone(), y.0)?;
        // each arm is rewarded by the updated posterior mean at its own proposal
        let refit = data.fit(&kernel, noise)?;
        let rewards: Vec<f64> = proposals.iter().map(|u| -refit.posterior(u).mean).collect();
        hedge.update(&rewards);
        let source = config.portfolio[chosen].name().to_string();
        push_iteration(&mut iterations, &mut best, iteration, x, y, source);
    }

    let (best_x, best_y) = best.expect("budget is at least one");
    Ok(BoRun {
        bounds: bounds.to_vec(),
        seed,
        iterations,
        best_x,
        best_y,
        hedge_gains: hedge.gains,
        dataset: data,
    })
}

/// Evaluate once; failures and non-finite values become a penalty.
fn record<F>(objective: &mut F, x: &[f64], data: &GpDataset, config: &BoConfig) -> (f64, bool)
where
    F: FnMut(&[f64]) -> Result<f64, String>,
{
    match objective(x) {
        Ok(y) if y.is_finite() => (y, false),
        _ => {
            let worst = data.observations.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let penalty = if !worst.is_finite() {
                config.failure_fallback
            } else if worst > 0.0 {
                config.failure_factor * worst
            } else {
                worst + config.failure_factor
            };
            (penalty, true)
        }
    }
}

fn push_iteration(
    iterations: &mut Vec<BoIteration>,
    best: &mut Option<(Vec<f64>, f64)>,
    iteration: usize,
    x: Vec<f64>,
    (y, failed): (f64, bool),
    source: String,
) {
    if !failed && best.as_ref().is_none_or(|(_, b)| y < *b) {
        *best = Some((x.clone(), y));
    }
    let y_best = best.as_ref().map_or(f64::INFINITY, |(_, b)| *b);
    iterations.push(BoIteration {
        iteration,
        x,
        y,
        y_best,
        source,
        failed,
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn acquisition_limits() {
        let ei = Acquisition::ExpectedImprovement { xi: 0.0 };
        assert_eq!(ei.value(0.0, 0.0, 0.0), 0.0);
        assert_eq!(ei.value(-1.0, 0.0, 0.0), 1.0);
        let pi = Acquisition::ProbabilityOfImprovement { xi: 0.0 };
        assert!((pi.value(0.0, 1.0, 0.0) - 0.5).abs() < 1e-12);
        let lcb = Acquisition::LowerConfidenceBound { kappa: 2.0 };
        assert_eq!(lcb.value(1.0, 0.5, 0.0), 0.0);
        // EI closed form at z = 0: σ φ(0)
        let v = ei.value(0.0, 2.0, 0.0);
        assert!((v - 2.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ei_is_monotone_in_mean_and_spread() {
        let ei = Acquisition::ExpectedImprovement { xi: 0.01 };
        let means = [-1.0, -0.5, 0.0, 0.5];
        let by_mean: Vec<f64> = means.iter().map(|m| ei.value(*m, 0.3, 0.0)).collect();
        assert!(by_mean.windows(2).all(|w| w[1] <= w[0]));
        let spreads = [0.1, 0.3, 1.0, 3.0];
        let by_spread: Vec<f64> = spreads.iter().map(|s| ei.value(0.2, *s, 0.0)).collect();
        assert!(by_spread.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn hedge_probabilities() {
        let mut h = Hedge::new(3, 1.0);
        assert_eq!(h.probabilities(), vec![1.0 / 3.0; 3]);
        h.update(&[1.0, 0.0, 0.0]);
        let p = h.probabilities();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 2.0)).abs() < 1e-12);
        h.update(&[1000.0, 0.0, 0.0]);
        assert!(h.probabilities()[0] > 1.0 - 1e-12);
    }

    #[test]
    fn hedge_selection_frequencies() {
        let mut h = Hedge::new(3, 1.0);
        h.update(&[0.5, 0.0, -0.5]);
        let p = h.probabilities();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 30_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[h.select(&mut rng)] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&p)
            .map(|(c, pi)| {
                let e = pi * n as f64;
                (*c as f64 - e).powi(2) / e
            })
            .sum();
        // 99.9% quantile of χ² with two degrees of freedom
        assert!(chi2 < 13.82, "chi2 = {chi2}");
    }

    #[test]
    fn halton_prefix() {
        let h = halton(2, 1, 3, &[]);
        assert_eq!(h[0], vec![0.5, 1.0 / 3.0]);
        assert_eq!(h[1], vec![0.25, 2.0 / 3.0]);
        assert_eq!(h[2], vec![0.75, 1.0 / 9.0]);
    }

    #[test]
    fn pattern_search_finds_interior_peak() {
        let f = |u: &[f64]| -((u[0] - 0.37).powi(2) + (u[1] - 0.81).powi(2));
        let (x, _) = pattern_search(&f, &[0.5, 0.5], 0.1, 0.5, 200);
        assert!((x[0] - 0.37).abs() < 1e-3 && (x[1] - 0.81).abs() < 1e-3);
    }

    #[test]
    fn single_observation_pushes_lcb_away() {
        let mut data = GpDataset::new(vec![(0.0, 1.0)]);
        data.push(vec![0.5], 0.0).unwrap();
        let fit = data.fit(&Kernel::default(), 1e-6).unwrap();
        let (u, _) = maximize_acquisition(
            &fit,
            &Acquisition::LowerConfidenceBound { kappa: 2.0 },
            0.0,
            1,
            &[0.0],
            &BoConfig::default(),
        );
        assert!((u[0] - 0.5).abs() > 0.2, "{u:?}");
    }

    #[test]
    fn failures_are_penalized_and_excluded_from_best() {
        let config = BoConfig::default();
        let mut calls = 0;
        let mut f = |x: &[f64]| {
            calls += 1;
            if calls == 2 {
                Err("boom".to_string())
            } else {
                Ok(1.0 + x[0])
            }
        };
        let run = minimize(&mut f, &[(0.0, 1.0)], Some(&[0.5]), 8, 0, &config).unwrap();
        assert!(run.iterations[1].failed);
        assert_eq!(run.iterations[1].y, 15.0);
        assert!(run.iterations.iter().all(|i| !i.y.is_nan()));
        assert!(run.best_y < 15.0);
    }

    #[test]
    fn constant_objective_is_stable() {
        let run = minimize(&mut |_: &[f64]| Ok(3.0), &[(0.0, 1.0), (0.0, 1.0)], None, 12, 0, &BoConfig::default()).unwrap();
        assert_eq!(run.best_y, 3.0);
        assert!(run.iterations.iter().all(|i| i.y_best == 3.0));
    }

    fn frozen_fit() -> GpFit {
        let mut data = GpDataset::new(vec![(0.0, 1.0), (0.0, 1.0)]);
        for (x, y) in [([0.1, 0.2], 1.0), ([0.7, 0.4], 0.2), ([0.4, 0.9], 0.5), ([0.9, 0.9], 1.4), ([0.5, 0.5], 0.1)] {
            data.push(x.to_vec(), y).unwrap();
        }
        data.fit(&Kernel::default(), 1e-6).unwrap()
    }

    fn grid_max(fit: &GpFit, a: &Acquisition, best: f64) -> (Vec<f64>, f64) {
        let mut top = (vec![], f64::NEG_INFINITY);
        for i in 0..50 {
            for j in 0..50 {
                let u = [i as f64 / 49.0, j as f64 / 49.0];
                let p = fit.posterior(&u);
                let v = a.value(p.mean, p.std_dev(), best);
                if v > top.1 {
                    top = (u.to_vec(), v);
                }
            }
        }
        top
    }

    #[test]
    fn suggestion_matches_grid_oracle() {
        let fit = frozen_fit();
        let best = -1.2;
        for a in default_portfolio() {
            let (_, grid) = grid_max(&fit, &a, best);
            let (u, v) = maximize_acquisition(&fit, &a, best, 2, &[0.3, 0.6], &BoConfig::default());
            assert!(u.iter().all(|c| (0.0..=1.0).contains(c)));
            assert!(v >= grid - 1e-3, "{}: {v} vs {grid}", a.name());
        }
    }

    #[test]
    fn small_kappa_finds_mean_minimizer() {
        let fit = frozen_fit();
        let a = Acquisition::LowerConfidenceBound { kappa: 1e-9 };
        let (g, _) = grid_max(&fit, &a, 0.0);
        let (u, _) = maximize_acquisition(&fit, &a, 0.0, 2, &[0.0, 0.0], &BoConfig::default());
        assert!(fit.posterior(&u).mean <= fit.posterior(&g).mean + 1e-9);
        assert!((u[0] - g[0]).abs() < 0.03 && (u[1] - g[1]).abs() < 0.03, "{u:?} vs {g:?}");
    }

    #[test]
    fn hedge_zero_rate_is_uniform() {
        let mut h = Hedge::new(3, 0.0);
        h.update(&[100.0, -4.0, 2.0]);
        assert_eq!(h.probabilities(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn best_is_running_minimum() {
        let objective = &mut |x: &[f64]| Ok((x[0] - 0.6).powi(2) + x[1]);
        let run = minimize(objective, &[(0.0, 1.0), (0.0, 2.0)], Some(&[1.0, 2.0]), 15, 3, &BoConfig::default()).unwrap();
        assert_eq!(run.iterations[0].x, vec![1.0, 2.0]);
        let mut running = f64::INFINITY;
        for it in &run.iterations {
            running = running.min(it.y);
            assert_eq!(it.y_best, running);
            assert!(it.x[0] >= 0.0 && it.x[0] <= 1.0 && it.x[1] >= 0.0 && it.x[1] <= 2.0);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut f = |_: &[f64]| Ok(0.0);
        assert!(minimize(&mut f, &[(1.0, 0.0)], None, 5, 0, &BoConfig::default()).is_err());
        assert!(minimize(&mut f, &[(0.0, 1.0)], None, 0, 0, &BoConfig::default()).is_err());
        assert!(minimize(&mut f, &[(0.0, 1.0)], Some(&[0.1, 0.2]), 5, 0, &BoConfig::default()).is_err());
    }
}
