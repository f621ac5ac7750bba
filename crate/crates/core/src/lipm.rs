//! Linear inverted pendulum quantities: jerk-driven CoM propagation, ZMP and
//! required coefficient of friction.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LipmError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid pendulum parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
}

/// Horizontal CoM state: position, velocity and acceleration per axis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComState {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub acceleration: Vector2<f64>,
}

impl ComState {
    pub fn at_rest(position: Vector2<f64>) -> Self {
        Self {
            position,
            ..Self::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.acceleration.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipmParams {
    /// Constant CoM height above the ground [m].
    pub com_height: f64,
    pub gravity: f64,
    /// Sample period of the jerk input [s].
    pub sample_period: f64,
}

impl Default for LipmParams {
    fn default() -> Self {
        Self {
            com_height: 0.8,
            gravity: 9.81,
            sample_period: 0.1,
        }
    }
}

impl LipmParams {
    pub fn validate(&self) -> Result<(), LipmError> {
        for (name, value) in [
            ("com_height", self.com_height),
            ("gravity", self.gravity),
            ("sample_period", self.sample_period),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(LipmError::InvalidParam { name, value });
            }
        }
        Ok(())
    }

    /// Squared natural frequency g/h of the pendulum.
    pub fn omega_squared(&self) -> f64 {
        self.gravity / self.com_height
    }
}

pub type ZmpPoint = Vector2<f64>;

/// Exact zero-order-hold update of the per-axis triple integrator under a
/// constant jerk held for one sample period.
pub fn propagate(
    state: &ComState,
    jerk: Vector2<f64>,
    params: &LipmParams,
) -> Result<ComState, LipmError> {
    params.validate()?;
    if !state.is_finite() {
        return Err(LipmError::NonFinite("state"));
    }
    if !jerk.iter().all(|j| j.is_finite()) {
        return Err(LipmError::NonFinite("jerk"));
    }
    Ok(propagate_unchecked(state, jerk, params.sample_period))
}

pub(crate) fn propagate_unchecked(state: &ComState, jerk: Vector2<f64>, dt: f64) -> ComState {
    let dt2 = dt * dt;
    let dt3 = dt2 * dt;
    ComState {
        position: state.position
            + state.velocity * dt
            + state.acceleration * (dt2 / 2.0)
            + jerk * (dt3 / 6.0),
        velocity: state.velocity + state.acceleration * dt + jerk * (dt2 / 2.0),
        acceleration: state.acceleration + jerk * dt,
    }
}

/// z = c - (h/g) c̈ per axis.
pub fn zmp_of(state: &ComState, params: &LipmParams) -> ZmpPoint {
    state.position - state.acceleration * (params.com_height / params.gravity)
}

/// Required coefficient of friction ‖c̈‖ / g (no vertical acceleration).
pub fn rcof_of(state: &ComState, params: &LipmParams) -> f64 {
    state.acceleration.norm() / params.gravity
}
