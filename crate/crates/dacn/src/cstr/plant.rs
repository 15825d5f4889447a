//! Closed-loop CSTR plant model: an exothermic first-order reaction with a
//! cooling jacket. Reactor temperature is regulated by the coolant flow rate.

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{DacnError, Result};

/// Physical constants of the plant. Values are loaded from a config file;
/// [`PlantParams::default`] is a documented benchmark set with a stable
/// exothermic operating point near 402 K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Feed flow rate (m³/min).
    pub q: f64,
    /// Reactor volume (m³).
    pub v: f64,
    /// Inlet concentration (kmol/m³).
    pub ci: f64,
    /// Inlet temperature (K).
    pub ti: f64,
    /// Coolant inlet temperature (K).
    pub tci: f64,
    /// Jacket volume (m³).
    pub vc: f64,
    /// Pre-exponential factor (1/min).
    pub k0: f64,
    /// Activation energy over gas constant (K).
    pub e_over_r: f64,
    /// Reaction enthalpy (J/kmol); negative for exothermic.
    pub dhr: f64,
    /// Reactant density (kg/m³).
    pub rho: f64,
    /// Reactant heat capacity (J/(kg·K)).
    pub cp: f64,
    /// Coolant density (kg/m³).
    pub rho_c: f64,
    /// Coolant heat capacity (J/(kg·K)).
    pub cp_c: f64,
    /// Heat-transfer coefficient times area (J/(min·K)).
    pub ua: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            q: 100.0,
            v: 100.0,
            ci: 1.0,
            ti: 350.0,
            tci: 290.0,
            vc: 20.0,
            k0: 7.2e10,
            e_over_r: 8750.0,
            dhr: -5.0e4,
            rho: 1000.0,
            cp: 0.239,
            rho_c: 1000.0,
            cp_c: 4.18,
            ua: 5.0e4,
        }
    }
}

impl PlantParams {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            q: cfg.f64_or("plant.q", d.q)?,
            v: cfg.f64_or("plant.v", d.v)?,
            ci: cfg.f64_or("plant.ci", d.ci)?,
            ti: cfg.f64_or("plant.ti", d.ti)?,
            tci: cfg.f64_or("plant.tci", d.tci)?,
            vc: cfg.f64_or("plant.vc", d.vc)?,
            k0: cfg.f64_or("plant.k0", d.k0)?,
            e_over_r: cfg.f64_or("plant.e_over_r", d.e_over_r)?,
            dhr: cfg.f64_or("plant.dhr", d.dhr)?,
            rho: cfg.f64_or("plant.rho", d.rho)?,
            cp: cfg.f64_or("plant.cp", d.cp)?,
            rho_c: cfg.f64_or("plant.rho_c", d.rho_c)?,
            cp_c: cfg.f64_or("plant.cp_c", d.cp_c)?,
            ua: cfg.f64_or("plant.ua", d.ua)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("q", self.q),
            ("v", self.v),
            ("ci", self.ci),
            ("ti", self.ti),
            ("tci", self.tci),
            ("vc", self.vc),
            ("e_over_r", self.e_over_r),
            ("rho", self.rho),
            ("cp", self.cp),
            ("rho_c", self.rho_c),
            ("cp_c", self.cp_c),
            ("ua", self.ua),
        ];
        for (name, val) in positive {
            if !(val > 0.0) {
                return Err(DacnError::InvalidArgument(format!(
                    "plant parameter {name} must be strictly positive, got {val}"
                )));
            }
        }
        if self.k0 < 0.0 {
            return Err(DacnError::InvalidArgument(format!(
                "plant parameter k0 must be non-negative, got {}",
                self.k0
            )));
        }
        Ok(())
    }
}

/// Instantaneous plant state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    /// Reactant concentration (kmol/m³).
    pub c: f64,
    /// Reactor temperature (K).
    pub t_reactor: f64,
    /// Coolant (jacket) temperature (K).
    pub t_coolant: f64,
    /// Simulation time (min).
    pub t: f64,
}

impl PlantState {
    pub fn is_finite(&self) -> bool {
        self.c.is_finite() && self.t_reactor.is_finite() && self.t_coolant.is_finite()
    }
}

/// Arrhenius rate constant at reactor temperature `t` (K).
pub fn rate_constant(params: &PlantParams, t: f64) -> f64 {
    params.k0 * (-params.e_over_r / t).exp()
}

/// Time derivatives (dC/dt, dT/dt, dTc/dt) of the plant at the given state
/// and coolant flow rate.
pub fn derivatives(state: &PlantState, qc: f64, params: &PlantParams) -> Result<[f64; 3]> {
    if !state.is_finite() {
        return Err(DacnError::NonFiniteState { t: state.t });
    }
    if qc < 0.0 {
        return Err(DacnError::InvalidArgument(format!(
            "coolant flow must be non-negative, got {qc}"
        )));
    }
    let k = rate_constant(params, state.t_reactor);
    let dc = params.q / params.v * (params.ci - state.c) - k * state.c;
    let dt = params.q / params.v * (params.ti - state.t_reactor)
        - params.dhr * k * state.c / (params.rho * params.cp)
        - params.ua / (params.rho * params.cp * params.v) * (state.t_reactor - state.t_coolant);
    let dtc = qc / params.vc * (params.tci - state.t_coolant)
        + params.ua / (params.rho_c * params.cp_c * params.vc)
            * (state.t_reactor - state.t_coolant);
    Ok([dc, dt, dtc])
}

/// Closed-form steady state at a pinned reactor temperature: concentration,
/// jacket temperature, and the coolant flow that holds the balance.
#[derive(Debug, Clone, Copy)]
pub struct OperatingPoint {
    pub c: f64,
    pub t_reactor: f64,
    pub t_coolant: f64,
    pub qc: f64,
}

/// Solve the steady state of the plant for a given reactor temperature
/// setpoint. The material balance gives C directly, the reactor energy
/// balance gives Tc, and the jacket balance gives Qc.
pub fn steady_state(params: &PlantParams, t_reactor: f64) -> Result<OperatingPoint> {
    let k = rate_constant(params, t_reactor);
    let qv = params.q / params.v;
    let c = qv * params.ci / (qv + k);
    let heat = qv * (params.ti - t_reactor) - params.dhr * k * c / (params.rho * params.cp);
    let t_coolant = t_reactor - params.rho * params.cp * params.v / params.ua * heat;
    if t_coolant <= params.tci {
        return Err(DacnError::InvalidArgument(format!(
            "no feasible coolant flow: jacket temperature {t_coolant:.2} K is at or below \
             the coolant inlet {:.2} K",
            params.tci
        )));
    }
    let qc = params.ua * (t_reactor - t_coolant)
        / (params.rho_c * params.cp_c * (t_coolant - params.tci));
    if qc < 0.0 {
        return Err(DacnError::InvalidArgument(format!(
            "steady-state coolant flow is negative ({qc:.4}) at T = {t_reactor} K"
        )));
    }
    Ok(OperatingPoint {
        c,
        t_reactor,
        t_coolant,
        qc,
    })
}

/// One classic 4th-order Runge–Kutta step of `y' = f(t, y)`.
pub fn rk4_step<const N: usize>(
    f: &mut impl FnMut(f64, &[f64; N]) -> [f64; N],
    t: f64,
    y: &[f64; N],
    h: f64,
) -> [f64; N] {
    let k1 = f(t, y);
    let mut y2 = *y;
    for i in 0..N {
        y2[i] = y[i] + 0.5 * h * k1[i];
    }
    let k2 = f(t + 0.5 * h, &y2);
    for i in 0..N {
        y2[i] = y[i] + 0.5 * h * k2[i];
    }
    let k3 = f(t + 0.5 * h, &y2);
    for i in 0..N {
        y2[i] = y[i] + h * k3[i];
    }
    let k4 = f(t + h, &y2);
    let mut out = *y;
    for i in 0..N {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}
