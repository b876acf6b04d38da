//! Intelligent Driver Model car-following accelerations.

use serde::{Deserialize, Serialize};

use crate::error::DynamicsError;

/// Hard braking bound applied before integration.
pub const MAX_DECEL: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdmParams {
    /// Desired (free-flow) speed v0, m/s.
    pub desired_speed: f64,
    /// Safe time headway T, s.
    pub time_headway: f64,
    /// Maximum acceleration a, m/s².
    pub max_accel: f64,
    /// Comfortable deceleration b, m/s² (positive).
    pub comfort_decel: f64,
    /// Free-road exponent delta.
    pub exponent: f64,
    /// Jam distance s0, m.
    pub jam_distance: f64,
    /// Standard deviation of the per-step acceleration noise, m/s².
    pub noise_std: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            desired_speed: 20.0,
            time_headway: 1.2,
            max_accel: 1.5,
            comfort_decel: 2.0,
            exponent: 4.0,
            jam_distance: 2.0,
            noise_std: 0.2,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("desired_speed", self.desired_speed),
            ("time_headway", self.time_headway),
            ("max_accel", self.max_accel),
            ("comfort_decel", self.comfort_decel),
            ("exponent", self.exponent),
            ("jam_distance", self.jam_distance),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(format!("idm.{name} must be positive, got {value}"));
            }
        }
        if !(self.noise_std >= 0.0) {
            return Err(format!("idm.noise_std must be >= 0, got {}", self.noise_std));
        }
        Ok(())
    }
}

/// Desired dynamic gap s*(v, Δv) with Δv = v - v_lead.
pub fn desired_gap(v: f64, v_lead: f64, p: &IdmParams) -> f64 {
    let approach = v * (v - v_lead) / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
    p.jam_distance + (v * p.time_headway + approach).max(0.0)
}

/// IDM acceleration for a vehicle at speed `v` whose leader (at speed
/// `v_lead`) is `h` metres ahead bumper-to-bumper. `h = f64::INFINITY`
/// means no leader.
pub fn idm_accel(h: f64, v: f64, v_lead: f64, p: &IdmParams, noise: f64) -> Result<f64, DynamicsError> {
    if !(h > 0.0) {
        return Err(DynamicsError::NonPositiveHeadway(h));
    }
    let free = (v / p.desired_speed).powf(p.exponent);
    let interaction = if h.is_infinite() {
        0.0
    } else {
        let ratio = desired_gap(v, v_lead, p) / h;
        ratio * ratio
    };
    Ok(p.max_accel * (1.0 - free - interaction) + noise)
}

/// Noise-free car-following evaluator used inside every incentive.
pub fn follow_eval(h: f64, v: f64, v_lead: f64, p: &IdmParams) -> Result<f64, DynamicsError> {
    idm_accel(h, v, v_lead, p, 0.0)
}

/// Like [`follow_eval`], but a non-positive gap (vehicles side by side or
/// overlapping) yields the emergency bound instead of an error.
pub fn follow_eval_or_brake(h: f64, v: f64, v_lead: f64, p: &IdmParams) -> f64 {
    follow_eval(h, v, v_lead, p).unwrap_or(-MAX_DECEL)
}

/// Clamps an executed acceleration to `[-MAX_DECEL, a]`.
pub fn clamp_accel(accel: f64, p: &IdmParams) -> f64 {
    accel.clamp(-MAX_DECEL, p.max_accel)
}
