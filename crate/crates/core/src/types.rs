//! Shared vocabulary: power samples, the assistance reference and the
//! per-tick record written to logs and streamed to the cockpit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratio reported when both filtered powers are zero (bike at rest).
pub const IDLE_RATIO: f64 = 1.0;

/// Fraction of the total output power delivered by the cyclist.
///
/// Returns `p_human / (p_motor + p_human)`, or [`IDLE_RATIO`] when both powers are zero.
pub fn compute_ratio(p_human: f64, p_motor: f64) -> Result<f64> {
    compute_ratio_with_idle(p_human, p_motor, IDLE_RATIO)
}

/// [`compute_ratio`] with an explicit value for the 0/0 case.
pub fn compute_ratio_with_idle(p_human: f64, p_motor: f64, idle_ratio: f64) -> Result<f64> {
    check_power("p_human", p_human)?;
    check_power("p_motor", p_motor)?;
    let total = p_human + p_motor;
    if total == 0.0 {
        return Ok(idle_ratio);
    }
    Ok(p_human / total)
}

pub(crate) fn check_power(quantity: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(quantity, value, "[0, inf) W"))
    }
}

/// Instantaneous and filtered powers at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    /// Seconds since the start of the run.
    pub t: f64,
    /// Pedal power `tau_p * omega_p` (W).
    pub p_human_raw: f64,
    /// Filtered human output power (W).
    pub p_human_out: f64,
    /// Filtered motor output power (W).
    pub p_motor_out: f64,
    /// Human share of the filtered total power.
    pub ratio_m: f64,
}

impl PowerSample {
    pub fn new(t: f64, p_human_raw: f64, p_human_out: f64, p_motor_out: f64) -> Result<Self> {
        check_power("p_human_raw", p_human_raw)?;
        let ratio_m = compute_ratio(p_human_out, p_motor_out)?;
        Ok(Self {
            t,
            p_human_raw,
            p_human_out,
            p_motor_out,
            ratio_m,
        })
    }

    /// Both filtered powers are zero.
    pub fn is_idle(&self) -> bool {
        self.p_human_out == 0.0 && self.p_motor_out == 0.0
    }
}

/// Desired human share `m*`, constrained to `[eta, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub m_star: f64,
    pub eta: f64,
}

impl Reference {
    pub fn new(m_star: f64, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::domain("eta", eta, "(0, 1)"));
        }
        if !(m_star >= eta && m_star <= 1.0) {
            return Err(Error::domain("m_star", m_star, format!("[{eta}, 1]")));
        }
        Ok(Self { m_star, eta })
    }
}

/// Which side of the effort threshold the cyclist is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Cooperative,
    Competitive,
}

impl Mode {
    pub fn classify(p_human_out: f64, p_threshold: f64) -> Self {
        if p_human_out > p_threshold {
            Mode::Competitive
        } else {
            Mode::Cooperative
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Cooperative => "cooperative",
            Mode::Competitive => "competitive",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cooperative" => Ok(Mode::Cooperative),
            "competitive" => Ok(Mode::Competitive),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// Everything the loop knows after processing one sample.
///
/// `p_motor_target` is the bifurcation state after integrating over the
/// sampling period that starts at `sample.t`, i.e. the target commanded for
/// that period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub sample: PowerSample,
    pub m_star: f64,
    pub p_motor_target: f64,
    pub p_motor_actual: f64,
    pub y_control: f64,
    pub p_threshold: f64,
    pub mode: Mode,
    /// Liters per minute; 0 when ventilation is not modelled.
    pub ventilation_rate: f64,
    pub idle: bool,
}

impl TickRecord {
    pub fn t(&self) -> f64 {
        self.sample.t
    }

    /// Ratio seen by the bifurcation law: filtered human power against the
    /// target motor power rather than the delivered one.
    pub fn law_ratio(&self) -> f64 {
        compute_ratio(self.sample.p_human_out, self.p_motor_target).unwrap_or(IDLE_RATIO)
    }
}
