//! Fault definitions: parameter faults perturb the plant physics, sensor
//! faults bias recorded measurements (and, for the controlled temperature,
//! the feedback path).

use serde::{Deserialize, Serialize};

use crate::error::{DacnError, Result};

use super::plant::PlantParams;

/// Measured channels, in recording order.
pub const CHANNEL_NAMES: [&str; 7] = ["C", "T", "Tc", "Qc", "Ci_meas", "Ti_meas", "Tci_meas"];

/// Index of the reactor-temperature channel (the one the controller reads).
pub const REACTOR_TEMP_CHANNEL: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultMechanism {
    /// Healthy operation.
    None,
    /// Target parameter steps by `magnitude` (fraction of nominal) at onset.
    ParameterStep,
    /// Target parameter ramps linearly to `magnitude` fraction over `ramp_minutes`.
    ParameterRamp,
    /// Target channel reading is offset by `magnitude` (absolute) from onset on.
    SensorBias,
    /// Target parameter loses `magnitude` of its nominal value asymptotically:
    /// factor 1 - magnitude*(1 - exp(-(t - onset)/time_constant)). Bounded so
    /// degradation faults cannot extinguish the reaction and trigger a
    /// thermal runaway.
    ExponentialDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    /// Class identifier, `F0`..`F12` for the benchmark set.
    pub id: String,
    pub mechanism: FaultMechanism,
    /// Plant parameter name (parameter faults) or channel name (sensor faults).
    pub target: String,
    /// Fraction of nominal for parameter faults, absolute offset for sensor bias.
    pub magnitude: f64,
    /// Injection time (min).
    pub onset: f64,
    /// Decay time constant (min); used by `ExponentialDecay` only.
    pub time_constant: f64,
    /// Ramp duration (min); used by `ParameterRamp` only.
    pub ramp_minutes: f64,
}

impl FaultSpec {
    pub fn healthy() -> Self {
        Self {
            id: "F0".to_string(),
            mechanism: FaultMechanism::None,
            target: String::new(),
            magnitude: 0.0,
            onset: 0.0,
            time_constant: 0.0,
            ramp_minutes: 0.0,
        }
    }

    pub fn is_healthy(&self) -> bool {
        self.mechanism == FaultMechanism::None
    }

    pub fn active_at(&self, t: f64) -> bool {
        !self.is_healthy() && t >= self.onset
    }

    /// Numeric class label: `F0` -> 0, ..., `F12` -> 12.
    pub fn label(&self) -> Result<usize> {
        self.id
            .strip_prefix('F')
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                DacnError::InvalidArgument(format!("fault id {:?} is not of the form F<n>", self.id))
            })
    }

    pub fn validate(&self, duration: f64) -> Result<()> {
        if self.is_healthy() {
            return Ok(());
        }
        if !(self.onset > 0.0 && self.onset < duration) {
            return Err(DacnError::InvalidArgument(format!(
                "fault {} onset {} must lie inside (0, {duration})",
                self.id, self.onset
            )));
        }
        if self.mechanism == FaultMechanism::ExponentialDecay {
            if !(self.time_constant > 0.0) {
                return Err(DacnError::InvalidArgument(format!(
                    "fault {} needs a positive time constant",
                    self.id
                )));
            }
            if !(self.magnitude > 0.0 && self.magnitude < 1.0) {
                return Err(DacnError::InvalidArgument(format!(
                    "fault {} decay magnitude {} must lie in (0, 1)",
                    self.id, self.magnitude
                )));
            }
        }
        Ok(())
    }

    /// Plant parameters with this fault applied at time `t`. Sensor faults
    /// leave the physics untouched.
    pub fn apply_to_params(&self, params: &PlantParams, t: f64) -> Result<PlantParams> {
        if !self.active_at(t) {
            return Ok(*params);
        }
        let mut p = *params;
        let factor = match self.mechanism {
            FaultMechanism::None | FaultMechanism::SensorBias => return Ok(p),
            FaultMechanism::ParameterStep => 1.0 + self.magnitude,
            FaultMechanism::ParameterRamp => {
                let progress = ((t - self.onset) / self.ramp_minutes).clamp(0.0, 1.0);
                1.0 + self.magnitude * progress
            }
            FaultMechanism::ExponentialDecay => {
                1.0 - self.magnitude * (1.0 - (-(t - self.onset) / self.time_constant).exp())
            }
        };
        let slot = match self.target.as_str() {
            "Ci" => &mut p.ci,
            "Ti" => &mut p.ti,
            "Tci" => &mut p.tci,
            "Q" => &mut p.q,
            "k0" => &mut p.k0,
            "UA" => &mut p.ua,
            other => {
                return Err(DacnError::InvalidArgument(format!(
                    "fault {} targets unknown plant parameter {other:?}",
                    self.id
                )))
            }
        };
        *slot *= factor;
        Ok(p)
    }

    /// Additive bias on the named channel at time `t` (zero if inactive or
    /// not a sensor fault).
    pub fn sensor_bias(&self, channel: &str, t: f64) -> f64 {
        if self.mechanism == FaultMechanism::SensorBias
            && self.active_at(t)
            && self.target == channel
        {
            self.magnitude
        } else {
            0.0
        }
    }
}

/// The thirteen benchmark classes. Parameter-fault magnitudes and the decay
/// time constant follow the shipped defaults; sensor biases are twice the
/// per-channel measurement-noise standard deviation.
pub fn default_faults(onset: f64, noise_std: &[f64; 7]) -> Vec<FaultSpec> {
    let step = |id: &str, target: &str, magnitude: f64| FaultSpec {
        id: id.to_string(),
        mechanism: FaultMechanism::ParameterStep,
        target: target.to_string(),
        magnitude,
        onset,
        time_constant: 0.0,
        ramp_minutes: 0.0,
    };
    let bias = |id: &str, channel_idx: usize| FaultSpec {
        id: id.to_string(),
        mechanism: FaultMechanism::SensorBias,
        target: CHANNEL_NAMES[channel_idx].to_string(),
        magnitude: 2.0 * noise_std[channel_idx],
        onset,
        time_constant: 0.0,
        ramp_minutes: 0.0,
    };
    let decay = |id: &str, target: &str| FaultSpec {
        id: id.to_string(),
        mechanism: FaultMechanism::ExponentialDecay,
        target: target.to_string(),
        // asymptotic 20% loss: strong enough to shift the closed loop,
        // bounded enough to keep the exothermic reactor stable
        magnitude: 0.2,
        onset,
        time_constant: 500.0,
        ramp_minutes: 0.0,
    };
    vec![
        FaultSpec::healthy(),
        step("F1", "Ci", 0.10),  // reactant inlet concentration
        step("F2", "Ti", 0.05),  // reactant inlet temperature
        step("F3", "Tci", 0.05), // coolant inlet temperature
        step("F4", "Q", 0.10),   // reactant inlet flow rate
        bias("F5", 4),           // reactant inlet concentration sensor
        bias("F6", 5),           // reactant inlet temperature sensor
        bias("F7", 1),           // reactant outlet temperature sensor
        bias("F8", 3),           // coolant inlet flow rate sensor
        bias("F9", 6),           // coolant inlet temperature sensor
        bias("F10", 2),          // coolant outlet temperature sensor
        decay("F11", "k0"),      // catalyst decay
        decay("F12", "UA"),      // heat transfer fouling
    ]
}
