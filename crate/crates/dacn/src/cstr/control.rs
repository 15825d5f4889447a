//! PI temperature controller: reactor temperature is held at the mode
//! setpoint by manipulating the coolant flow rate.

use serde::{Deserialize, Serialize};

/// Direct-acting PI controller with output clamping and conditional
/// anti-windup (the integral freezes while the output is saturated in the
/// direction the error pushes).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControllerState {
    /// Temperature setpoint (K).
    pub setpoint: f64,
    /// Proportional gain ((m³/min)/K).
    pub kp: f64,
    /// Integral gain ((m³/min)/(K·min)).
    pub ki: f64,
    /// Accumulated integral of the error (K·min).
    pub integral: f64,
    /// Coolant flow at the nominal operating point (m³/min).
    pub qc_bias: f64,
    pub qc_min: f64,
    pub qc_max: f64,
}

impl ControllerState {
    pub fn new(setpoint: f64, kp: f64, ki: f64, qc_bias: f64, qc_min: f64, qc_max: f64) -> Self {
        Self {
            setpoint,
            kp,
            ki,
            integral: 0.0,
            qc_bias,
            qc_min,
            qc_max,
        }
    }

    /// Advance the controller by `dt` using the measured reactor temperature
    /// and return the clamped coolant flow command.
    pub fn update(&mut self, t_measured: f64, dt: f64) -> f64 {
        // Higher temperature -> more cooling.
        let error = t_measured - self.setpoint;
        let raw = self.qc_bias + self.kp * error + self.ki * (self.integral + error * dt);
        let clamped = raw.clamp(self.qc_min, self.qc_max);
        let saturated_same_direction =
            (raw > self.qc_max && error > 0.0) || (raw < self.qc_min && error < 0.0);
        if !saturated_same_direction {
            self.integral += error * dt;
        }
        clamped
    }
}
