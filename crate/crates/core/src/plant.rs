//! E-bike power chain: throttle to motor current, motor current to delivered
//! power, plus the dependence of delivered power on the rider's input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::check_power;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Motor current per throttle unit (A).
    pub mu: f64,
    /// Battery voltage (V).
    pub v_motor: f64,
    pub e_motor: f64,
    pub e_crank: f64,
    pub y_max: f64,
    /// Actuation lag (s); zero means the static map applies instantly.
    pub tau_motor: f64,
    /// Coupling factor at zero pedal power; 1 disables the coupling.
    pub coupling_g0: f64,
    /// Pedal power scale of the coupling (W).
    pub coupling_p_c: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            mu: 0.5,
            v_motor: 36.0,
            e_motor: 0.8,
            e_crank: 0.95,
            y_max: 20.0,
            tau_motor: 0.0,
            coupling_g0: 0.6,
            coupling_p_c: 50.0,
        }
    }
}

impl PlantParams {
    pub fn without_coupling(self) -> Self {
        Self {
            coupling_g0: 1.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return bad(format!("plant.mu must be > 0, got {}", self.mu));
        }
        if !(self.v_motor.is_finite() && self.v_motor > 0.0) {
            return bad(format!("plant.v_motor must be > 0, got {}", self.v_motor));
        }
        if !(self.e_motor > 0.0 && self.e_motor < 1.0) {
            return bad(format!("plant.e_motor must lie in (0, 1), got {}", self.e_motor));
        }
        if !(self.e_crank > 0.0 && self.e_crank < 1.0) {
            return bad(format!("plant.e_crank must lie in (0, 1), got {}", self.e_crank));
        }
        if !(self.y_max.is_finite() && self.y_max > 0.0) {
            return bad(format!("plant.y_max must be > 0, got {}", self.y_max));
        }
        if !(self.tau_motor.is_finite() && self.tau_motor >= 0.0) {
            return bad(format!("plant.tau_motor must be >= 0, got {}", self.tau_motor));
        }
        if !(self.coupling_g0 > 0.0 && self.coupling_g0 <= 1.0) {
            return bad(format!(
                "plant.coupling_g0 must lie in (0, 1], got {}",
                self.coupling_g0
            ));
        }
        if !(self.coupling_p_c.is_finite() && self.coupling_p_c > 0.0) {
            return bad(format!("plant.coupling_p_c must be > 0, got {}", self.coupling_p_c));
        }
        Ok(())
    }

    /// Delivered watts per throttle unit at full coupling.
    pub fn gain(&self) -> f64 {
        self.e_motor * self.v_motor * self.mu
    }

    /// Largest power the motor can deliver.
    pub fn max_power(&self) -> f64 {
        self.gain() * self.y_max
    }

    /// Coupling factor `g(p)` in `[g0, 1)`.
    pub fn coupling(&self, p_human_raw: f64) -> f64 {
        let g0 = self.coupling_g0;
        g0 + (1.0 - g0) * (1.0 - (-p_human_raw / self.coupling_p_c).exp())
    }

    /// Integrator gain above which the closed throttle loop oscillates
    /// divergently at the given pedal power (instantaneous actuation).
    pub fn critical_loop_gain(&self, p_human_raw: f64) -> f64 {
        2.0 / (self.gain() * self.coupling(p_human_raw))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    /// Delivered motor output power after the actuation lag (W).
    pub p_motor_actual: f64,
    /// Power reaching the rear wheel (W).
    pub wheel_power: f64,
}

/// Static map from throttle to delivered motor power.
pub fn motor_power_from_command(y: f64, p_human_raw: f64, params: &PlantParams) -> Result<f64> {
    check_power("p_human_raw", p_human_raw)?;
    if !(y.is_finite() && (0.0..=params.y_max).contains(&y)) {
        return Err(Error::Actuation { y, y_max: params.y_max });
    }
    Ok(params.gain() * y * params.coupling(p_human_raw))
}

/// Advance the motor by `dt` under throttle `y`, clamping `y` into the actuator range.
pub fn plant_tick(state: PlantState, y: f64, p_human_raw: f64, dt: f64, params: &PlantParams) -> Result<PlantState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Config(format!("plant dt must be > 0, got {dt}")));
    }
    if !y.is_finite() {
        return Err(Error::Actuation { y, y_max: params.y_max });
    }
    let y = y.clamp(0.0, params.y_max);
    let target = motor_power_from_command(y, p_human_raw, params)?;
    let p_motor_actual = if params.tau_motor == 0.0 {
        target
    } else {
        let decay = (-dt / params.tau_motor).exp();
        target + (state.p_motor_actual - target) * decay
    };
    Ok(PlantState {
        p_motor_actual,
        wheel_power: p_motor_actual + params.e_crank * p_human_raw,
    })
}
