mod common;

use gaittune::ilqr::{optimize, ControlBounds, IlqrConfig, LegDynamics, PointMassForce, Vector};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// No damping: the first backward pass is the Riccati recursion itself.
fn exact() -> IlqrConfig {
    IlqrConfig {
        reg_initial: 0.0,
        reg_min: 0.0,
        tolerance: 1e-14,
        ..IlqrConfig::default()
    }
}

#[test]
fn linear_quadratic_matches_riccati() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let horizon = 15;
        let (dynamics, cost) = common::random_lq(&mut rng, horizon);
        let x0 = Vector::<4>::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let sol = optimize(
            &dynamics,
            &cost,
            &x0,
            &vec![Vector::<2>::zeros(); horizon],
            &ControlBounds::unbounded(horizon),
            &exact(),
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
            assert!((u[0] - v[0]).abs() <= 1e-8 && (u[1] - v[1]).abs() <= 1e-8, "{u:?} vs {v:?}");
        }
    }
}

#[test]
fn nonlinear_cost_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = LegDynamics {
        mass: 41.0,
        gravity: 9.81,
        dt: 0.01,
    };
    for _ in 0..20 {
        let (cost, bounds, x0) = common::tracking_instance(&mut rng, 40);
        let guess = vec![Vector::<3>::new(1.0, bounds.lower[0][1] + 0.1, bounds.lower[0][2] + 0.05); 40];
        let sol = optimize(&model, &cost, &x0, &guess, &bounds, &IlqrConfig::default()).unwrap();
        assert!(sol.cost_history.windows(2).all(|w| w[1] <= w[0]), "{:?}", sol.cost_history);
        for (k, u) in sol.trajectory.controls.iter().enumerate() {
            assert_eq!(bounds.clamp(k, u), *u);
        }
    }
}

#[test]
fn jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let leg = LegDynamics {
        mass: 41.0,
        gravity: 9.81,
        dt: 0.01,
    };
    let point = PointMassForce {
        mass: 41.0,
        gravity: 9.81,
        dt: 0.01,
    };
    for _ in 0..50 {
        let x = Vector::<6>::from_fn(|i, _| if i == 2 { 0.8 } else { 0.0 } + rng.random_range(-0.2..0.2));
        let u = Vector::<3>::new(rng.random_range(0.0..2.5), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        assert!(common::fd_check(&leg, &x, &u) <= 1e-5);
        let f = Vector::<3>::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(300.0..500.0));
        assert!(common::fd_check(&point, &x, &f) <= 1e-5);
    }
}
