//! Acceptance suite. Each criterion prints one `PASS` or `FAIL` line with the
//! measured quantity next to its pinned tolerance; any failure exits non-zero.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use gaittune::bo::{self, BoConfig};
use gaittune::closed_loop::{
    self, lateral_push, parse_grid, run_scenario, sweep_csv, weight_sweep, ScenarioConfig, ScenarioKind, WeightMode,
};
use gaittune::gait_qp::{self, build_problem, plan_gait, GaitTask, GaitWeights};
use gaittune::gp::{self, Kernel};
use gaittune::ilqr::{optimize, ControlBounds, IlqrConfig, LegDynamics, PointMassForce, Vector};
use gaittune::lipm::LipmParams;
use gaittune::qp;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KKT_TOL: f64 = 1e-6;
const QP_TIME: Duration = Duration::from_secs(1);
const SCENARIO1_TIME: Duration = Duration::from_secs(300);
const GP_TOL: f64 = 1e-8;
const LQR_TOL: f64 = 1e-8;
const JACOBIAN_TOL: f64 = 1e-5;
const QUADRATIC_TOL: f64 = 0.02;
const BRANIN_TOL: f64 = 1e-2;
const NOMINAL_TIME: Duration = Duration::from_secs(1800);
/// Weight range is [0, 1000] for both tuned weights.
const RANGE: f64 = 1000.0;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn qp_kkt() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let params = LipmParams::default();
    let mut worst = 0.0f64;
    let mut slowest = Duration::ZERO;
    for _ in 0..100 {
        let (task, weights) = common::random_task(&mut rng);
        let initial = gait_qp::default_initial_state(&task);
        let (problem, _) = build_problem(&task, &weights, &initial, &params).unwrap();
        let t = Instant::now();
        let sol = qp::solve(&problem, 1e-8).unwrap();
        slowest = slowest.max(t.elapsed());
        let r = common::kkt_check(&problem, &sol.x, &sol.multipliers);
        worst = r.iter().fold(worst, |a, v| a.max(*v));
    }
    (
        worst <= KKT_TOL && slowest <= QP_TIME,
        format!("max KKT residual {worst:.2e} (<= {KKT_TOL:e}), slowest solve {slowest:.2?} (<= 1 s)"),
    )
}

fn plan(weights: GaitWeights) -> gait_qp::GaitPlan {
    let task = GaitTask::default();
    let initial = gait_qp::default_initial_state(&task);
    plan_gait(&task, &weights, &initial, &LipmParams::default(), 1e-8).unwrap()
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn monotonicity() -> Outcome {
    let zmp: Vec<f64> = [0.0, 10.0, 70.0, 1000.0]
        .iter()
        .map(|b| plan(GaitWeights::uniform(1.0, *b, 0.0)).max_zmp_offset())
        .collect();
    let plans: Vec<_> = [0.0, 10.0, 30.0, 1000.0]
        .iter()
        .map(|g| plan(GaitWeights::uniform(1.0, 0.0, *g)))
        .collect();
    let rcof: Vec<f64> = plans.iter().map(|p| p.max_rcof()).collect();
    let step: Vec<f64> = plans.iter().map(|p| p.mean_step_length()).collect();
    (
        non_increasing(&zmp) && non_increasing(&rcof) && non_increasing(&step),
        format!("zmp offset {zmp:.4?}, max rcof {rcof:.4?}, mean step {step:.4?} (non-increasing)"),
    )
}

fn fell(config: &ScenarioConfig, grid: &str) -> Vec<bool> {
    weight_sweep(config, &parse_grid(grid).unwrap())
        .unwrap()
        .iter()
        .map(|r| r.evaluation.as_ref().is_none_or(|e| e.fell))
        .collect()
}

fn scenario1_falls() -> Outcome {
    let start = Instant::now();
    let pushed = ScenarioConfig {
        scenario: ScenarioKind::Custom,
        pushes: vec![lateral_push()],
        ..ScenarioConfig::default()
    };
    let slippery = ScenarioConfig {
        scenario: ScenarioKind::Custom,
        surface_friction: 0.15,
        ..ScenarioConfig::default()
    };
    let beta = fell(&pushed, "beta=0,70");
    let gamma = fell(&slippery, "gamma=0,30");
    let elapsed = start.elapsed();
    (
        beta == [true, false] && gamma == [true, false] && elapsed <= SCENARIO1_TIME,
        format!(
            "push scale {}: fell(beta=0,70) = {beta:?}; mu=0.15: fell(gamma=0,30) = {gamma:?}; {elapsed:.1?} (<= 5 min)",
            closed_loop::PUSH_CALIBRATION
        ),
    )
}

fn gp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    let mut above_prior = 0usize;
    for _ in 0..50 {
        let n = rng.random_range(1..=20);
        let d = rng.random_range(1..=6);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let kernel = Kernel {
            amplitude: rng.random_range(0.5..2.0),
            lengthscale: rng.random_range(0.01..0.2),
        };
        let noise = 10f64.powf(rng.random_range(-6.0..-3.0));
        let fit = gp::fit(&x, &y, &kernel, noise).unwrap();
        let queries = x.iter().cloned().chain((0..20).map(|_| (0..d).map(|_| rng.random()).collect()));
        for q in queries {
            let p = fit.posterior(&q);
            let (m, v) = common::explicit_posterior(&x, &y, &kernel, noise, fit.jitter, &q);
            worst = worst.max((p.mean - m).abs()).max((p.variance - v.max(0.0)).abs());
            if p.variance > kernel.amplitude {
                above_prior += 1;
            }
        }
    }
    (
        worst <= GP_TOL && above_prior == 0,
        format!("max |posterior - explicit| {worst:.2e} (<= {GP_TOL:e}), {above_prior} queries above prior variance"),
    )
}

fn ilqr_reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let exact = IlqrConfig {
        reg_initial: 0.0,
        reg_min: 0.0,
        tolerance: 1e-14,
        ..IlqrConfig::default()
    };
    let mut lqr_gap = 0.0f64;
    for _ in 0..10 {
        let horizon = 20;
        let (dynamics, cost) = common::random_lq(&mut rng, horizon);
        let x0 = Vector::<4>::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let sol = optimize(
            &dynamics,
            &cost,
            &x0,
            &vec![Vector::<2>::zeros(); horizon],
            &ControlBounds::unbounded(horizon),
            &exact,
        )
        .unwrap();
        let oracle = common::riccati_controls(
            &dynamics.a.iter().map(common::dyn_m).collect::<Vec<_>>(),
            &dynamics.b.iter().map(common::dyn_m).collect::<Vec<_>>(),
            &cost.q.iter().map(common::dyn_m).collect::<Vec<_>>(),
            &cost.r.iter().map(common::dyn_m).collect::<Vec<_>>(),
            &common::dyn_m(&cost.q_final),
            &DVector::from_column_slice(x0.as_slice()),
        );
        for (u, v) in sol.trajectory.controls.iter().zip(&oracle) {
            lqr_gap = lqr_gap.max((u[0] - v[0]).abs()).max((u[1] - v[1]).abs());
        }
    }

    let model = LegDynamics {
        mass: 41.0,
        gravity: 9.81,
        dt: 0.01,
    };
    let mut increases = 0usize;
    for _ in 0..20 {
        let (cost, bounds, x0) = common::tracking_instance(&mut rng, 40);
        let guess = vec![Vector::<3>::new(1.0, bounds.lower[0][1] + 0.1, bounds.lower[0][2] + 0.05); 40];
        let sol = optimize(&model, &cost, &x0, &guess, &bounds, &IlqrConfig::default()).unwrap();
        increases += sol.cost_history.windows(2).filter(|w| w[1] > w[0]).count();
    }

    let point = PointMassForce {
        mass: 41.0,
        gravity: 9.81,
        dt: 0.01,
    };
    let mut jac = 0.0f64;
    for _ in 0..50 {
        let x = Vector::<6>::from_fn(|i, _| if i == 2 { 0.8 } else { 0.0 } + rng.random_range(-0.2..0.2));
        let u = Vector::<3>::new(rng.random_range(0.0..2.5), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        let f = Vector::<3>::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(300.0..500.0));
        jac = jac.max(common::fd_check(&model, &x, &u)).max(common::fd_check(&point, &x, &f));
    }
    (
        lqr_gap <= LQR_TOL && increases == 0 && jac <= JACOBIAN_TOL,
        format!(
            "LQR gap {lqr_gap:.2e} (<= {LQR_TOL:e}), {increases} cost increases over 20 instances, Jacobian gap {jac:.2e} (<= {JACOBIAN_TOL:e})"
        ),
    )
}

fn running_min_exact(run: &bo::BoRun) -> bool {
    let mut best = f64::INFINITY;
    run.iterations.iter().all(|it| {
        best = best.min(it.y);
        it.y_best == best
    }) && non_increasing(&run.iterations.iter().map(|it| it.y_best).collect::<Vec<_>>())
}

fn bo_benchmarks() -> Outcome {
    let config = BoConfig {
        fit_hyperparameters: true,
        ..BoConfig::default()
    };
    let mut quad = |x: &[f64]| Ok((x[0] - 0.3).powi(2));
    let q = bo::minimize(&mut quad, &[(0.0, 1.0)], None, 30, 1, &config).unwrap();
    let q_gap = (q.best_x[0] - 0.3).abs();

    let mut branin = |x: &[f64]| Ok(common::branin(x));
    let b = bo::minimize(&mut branin, &[(-5.0, 10.0), (0.0, 15.0)], None, 60, 1, &config).unwrap();
    let b_gap = b.best_y - common::branin_minimum();

    let monotone = running_min_exact(&q) && running_min_exact(&b);
    (
        q_gap <= QUADRATIC_TOL && q.iterations.len() <= 30 && b_gap <= BRANIN_TOL && b.iterations.len() <= 60 && monotone,
        format!(
            "quadratic |x-0.3| {q_gap:.2e} in {} evals (<= {QUADRATIC_TOL}), branin gap {b_gap:.2e} in {} evals (<= {BRANIN_TOL:e}), y_best monotone: {monotone}",
            q.iterations.len(),
            b.iterations.len()
        ),
    )
}

fn nominal_convergence() -> Outcome {
    let config = ScenarioConfig::preset(ScenarioKind::Nominal);
    let report = run_scenario(&config).unwrap();
    let best: Vec<f64> = report.trace.iterations.iter().map(|it| it.y_best).collect();
    let window_start = best[best.len() - 16];
    let last = *best.last().unwrap();
    let late_gain = (window_start - last) / window_start.abs();
    let small = report.best_x.iter().all(|v| *v <= 0.05 * RANGE);
    let elapsed = Duration::from_secs_f64(report.wall_clock_s);
    (
        config.budget == 40 && small && late_gain <= 0.01 && elapsed <= NOMINAL_TIME,
        format!(
            "best (beta, gamma) = ({:.2}, {:.2}) (each <= {}), improvement over final 15 iterations {:.3}% (<= 1%), {elapsed:.1?} (<= 30 min)",
            report.best_x[0],
            report.best_x[1],
            0.05 * RANGE,
            100.0 * late_gain
        ),
    )
}

fn disturbance_orderings() -> Outcome {
    let best = |kind| run_scenario(&ScenarioConfig::preset(kind)).unwrap().best_x;
    let push = best(ScenarioKind::Push);
    let slip = best(ScenarioKind::Slip);
    let both = best(ScenarioKind::PushAndSlip);
    let floor = 0.02 * RANGE;
    (
        push[0] > floor && slip[1] > slip[0] && both[0] > floor && both[1] > floor,
        format!(
            "push (beta, gamma) = ({:.1}, {:.1}) beta > {floor}; slip ({:.1}, {:.1}) gamma > beta; combined ({:.1}, {:.1}) both > {floor}",
            push[0], push[1], slip[0], slip[1], both[0], both[1]
        ),
    )
}

fn six_weights() -> Outcome {
    let two = ScenarioConfig {
        budget: 75,
        ..ScenarioConfig::preset(ScenarioKind::Push)
    };
    let six = ScenarioConfig {
        mode: WeightMode::Six,
        ..two.clone()
    };
    let b2 = run_scenario(&two).unwrap().best_objective;
    let b6 = run_scenario(&six).unwrap().best_objective;
    (
        b6 <= b2 * 1.01,
        format!("budget 75 push: six-weight best {b6:.4} vs two-weight best {b2:.4} (<= x1.01)"),
    )
}

fn reproducibility() -> Outcome {
    let config = ScenarioConfig {
        budget: 8,
        ..ScenarioConfig::preset(ScenarioKind::Push)
    };
    let weights = GaitWeights::uniform(1.0, 70.0, 10.0);
    let plan_csv = || {
        let initial = gait_qp::default_initial_state(&config.task);
        config.csv_header() + &plan_gait(&config.task, &weights, &initial, &config.lipm, config.qp_tolerance).unwrap().to_csv()
    };
    let sim_csv = || config.csv_header() + &closed_loop::rollout(&weights, &config).unwrap().trace.to_csv();
    let grid = parse_grid("beta=0,70;gamma=0,30").unwrap();
    let sweep = || sweep_csv(&config, &weight_sweep(&config, &grid).unwrap());
    let tune = || run_scenario(&config).unwrap().trace_csv(&config);
    let same = [
        ("plan", plan_csv() == plan_csv()),
        ("simulate", sim_csv() == sim_csv()),
        ("sweep", sweep() == sweep()),
        ("tune", tune() == tune()),
    ];
    (
        same.iter().all(|(_, s)| *s),
        format!("byte-identical reruns: {same:?}"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 QP KKT", qp_kkt),
        ("2 plan monotonicity", monotonicity),
        ("3 fixed-weight fall ordering", scenario1_falls),
        ("4 GP oracle", gp_oracle),
        ("5 iLQR reductions", ilqr_reductions),
        ("6 BO benchmarks", bo_benchmarks),
        ("7 nominal convergence", nominal_convergence),
        ("8 disturbance orderings", disturbance_orderings),
        ("9 six vs two weights", six_weights),
        ("10 reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let (ok, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        println!("{} criterion {name}: {detail} [{:.1?}]", if ok { "PASS" } else { "FAIL" }, t.elapsed());
        failed += usize::from(!ok);
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
