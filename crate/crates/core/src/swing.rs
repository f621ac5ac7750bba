//! Quintic swing-foot trajectories between consecutive footholds.

use nalgebra::{Vector2, Vector3};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SwingError {
    #[error("non-finite swing input")]
    NonFinite,
    #[error("swing duration must be positive, got {0}")]
    Duration(f64),
    #[error("apex height must be positive, got {0}")]
    Apex(f64),
}

/// Coefficients c0..c5 of a quintic in local time.
pub type Quintic = [f64; 6];

/// Quintic from `a` to `b` over `duration` with zero velocity and
/// acceleration at both ends.
fn rest_to_rest(a: f64, b: f64, duration: f64) -> Quintic {
    let delta = b - a;
    let d3 = duration.powi(3);
    [
        a,
        0.0,
        0.0,
        10.0 * delta / d3,
        -15.0 * delta / (d3 * duration),
        6.0 * delta / (d3 * duration * duration),
    ]
}

fn eval(c: &Quintic, t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, ci| acc * t + ci)
}

fn eval_derivative(c: &Quintic, t: f64) -> f64 {
    (1..6).rev().fold(0.0, |acc, i| acc * t + i as f64 * c[i])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwingTrajectory {
    pub start_time: f64,
    pub duration: f64,
    pub apex: f64,
    pub x: Quintic,
    pub y: Quintic,
    /// Vertical rise over the first half, local time from the start.
    pub rise: Quintic,
    /// Vertical descent over the second half, local time from mid-swing.
    pub fall: Quintic,
}

pub fn plan_swing(
    from: Vector2<f64>,
    to: Vector2<f64>,
    apex: f64,
    duration: f64,
    start_time: f64,
) -> Result<SwingTrajectory, SwingError> {
    if !(from.iter().chain(to.iter()).all(|v| v.is_finite())
        && apex.is_finite()
        && duration.is_finite()
        && start_time.is_finite())
    {
        return Err(SwingError::NonFinite);
    }
    if duration <= 0.0 {
        return Err(SwingError::Duration(duration));
    }
    if apex <= 0.0 {
        return Err(SwingError::Apex(apex));
    }
    let half = duration / 2.0;
    Ok(SwingTrajectory {
        start_time,
        duration,
        apex,
        x: rest_to_rest(from.x, to.x, duration),
        y: rest_to_rest(from.y, to.y, duration),
        rise: rest_to_rest(0.0, apex, half),
        fall: rest_to_rest(apex, 0.0, half),
    })
}

impl SwingTrajectory {
    fn local(&self, t: f64) -> f64 {
        (t - self.start_time).clamp(0.0, self.duration)
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        let tau = self.local(t);
        let half = self.duration / 2.0;
        let z = if tau <= half {
            eval(&self.rise, tau)
        } else {
            eval(&self.fall, tau - half)
        };
        Vector3::new(eval(&self.x, tau), eval(&self.y, tau), z)
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        let tau = self.local(t);
        let half = self.duration / 2.0;
        let z = if tau <= half {
            eval_derivative(&self.rise, tau)
        } else {
            eval_derivative(&self.fall, tau - half)
        };
        Vector3::new(
            eval_derivative(&self.x, tau),
            eval_derivative(&self.y, tau),
            z,
        )
    }
}
