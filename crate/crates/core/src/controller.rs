//! Lane-tracking controllers and kinematic bicycle integration.
//!
//! The lateral loop turns a lateral offset into a lateral velocity command, then into a
//! required heading, a heading rate and finally a steering angle. The longitudinal loop
//! tracks the reference speed but never exceeds the IDM acceleration.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geom::{wrap_angle, Vec2};

/// Kinematic state of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec2,
    /// Speed, m/s, never negative.
    pub v: f64,
    /// Heading, radians in (-π, π].
    pub psi: f64,
    /// Last commanded acceleration, m/s².
    pub a: f64,
    /// Last steering angle, radians.
    pub phi: f64,
}

impl VehicleState {
    pub fn at_rest(position: Vec2, psi: f64) -> Self {
        Self {
            position,
            v: 0.0,
            psi: wrap_angle(psi),
            a: 0.0,
            phi: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleGeometry {
    /// Vehicle length, also used as the bicycle-model wheelbase, m.
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleGeometry {
    fn default() -> Self {
        Self {
            length: 4.0,
            width: 1.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    /// Lateral gain, 1/s.
    pub kp_lateral: f64,
    /// Heading gain, 1/s.
    pub kp_heading: f64,
    /// Lookahead horizon for the future lane heading, s.
    pub lookahead_time: f64,
    /// Minimum lookahead distance, m.
    pub lookahead_min: f64,
    /// Speed tracking gain, 1/s.
    pub kp_speed: f64,
    /// Steering limit, radians.
    pub phi_max: f64,
    /// Low-speed floor used in the speed quotients, m/s.
    pub v_eps: f64,
    /// Limit on the required heading correction, radians.
    pub psi_req_max: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            kp_lateral: 1.0,
            kp_heading: 2.5,
            lookahead_time: 0.5,
            lookahead_min: 2.0,
            kp_speed: 1.0,
            phi_max: 35f64.to_radians(),
            v_eps: 0.5,
            psi_req_max: 45f64.to_radians(),
        }
    }
}

impl ControllerParams {
    pub fn is_valid(&self) -> bool {
        self.kp_lateral > 0.0
            && self.kp_heading > 0.0
            && self.kp_speed > 0.0
            && self.v_eps > 0.0
            && self.lookahead_time >= 0.0
            && self.lookahead_min >= 0.0
            && self.phi_max > 0.0
            && self.phi_max < PI / 2.0
            && self.psi_req_max > 0.0
            && self.psi_req_max <= PI / 2.0
    }

    /// Arc distance ahead used to read the future lane heading.
    pub fn lookahead(&self, v: f64) -> f64 {
        (v * self.lookahead_time).max(self.lookahead_min)
    }
}

/// `v_lateral = -kp_lateral (x_lateral + epsilon)`; positive offsets (left of the lane)
/// give a rightward command.
pub fn lateral_velocity(kp_lateral: f64, x_lateral: f64, epsilon: f64) -> f64 {
    -kp_lateral * (x_lateral + epsilon)
}

/// `asin(v_lateral / max(v, v_eps))` with the ratio clamped to [-1, 1] and the result to
/// `±psi_req_max`.
pub fn required_heading(v: f64, v_lateral: f64, v_eps: f64, psi_req_max: f64) -> f64 {
    let ratio = (v_lateral / v.max(v_eps)).clamp(-1.0, 1.0);
    ratio.asin().clamp(-psi_req_max, psi_req_max)
}

/// Heading-rate command from the wrapped heading error `psi_future + psi_req - psi_current`.
pub fn heading_rate(kp_heading: f64, psi_future: f64, psi_req: f64, psi_current: f64) -> f64 {
    kp_heading * wrap_angle(psi_future + psi_req - psi_current)
}

/// Steering angle realising `psi_dot` at speed `v`: `atan(L psi_dot / max(v, v_eps))`.
pub fn steering_from_rate(length: f64, v: f64, psi_dot: f64, v_eps: f64, phi_max: f64) -> f64 {
    (length * psi_dot / v.max(v_eps)).atan().clamp(-phi_max, phi_max)
}

/// Speed-tracking command capped by the IDM acceleration, then clamped to
/// `[-max_decel, accel_cap]`.
pub fn longitudinal_command(
    v: f64,
    v_ref: f64,
    kp_speed: f64,
    a_idm: f64,
    max_decel: f64,
    accel_cap: f64,
) -> f64 {
    (kp_speed * (v_ref - v)).min(a_idm).clamp(-max_decel, accel_cap)
}

/// One forward-Euler step of the kinematic bicycle model.
pub fn step_kinematics(
    state: &VehicleState,
    a_cmd: f64,
    phi: f64,
    geom: &VehicleGeometry,
    dt: f64,
) -> VehicleState {
    let v = state.v;
    VehicleState {
        position: state.position + Vec2::from_heading(state.psi) * (v * dt),
        v: (v + a_cmd * dt).max(0.0),
        psi: wrap_angle(state.psi + v / geom.length * phi.tan() * dt),
        a: a_cmd,
        phi,
    }
}
