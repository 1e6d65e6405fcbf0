//! The gain schedule of the bifurcation law.
//!
//! `f_gain` places the stable equilibrium of the motor-power dynamics: below
//! the effort threshold `P_T(m*)` it is chosen so that the equilibrium ratio
//! equals `m*` exactly; above it, the equilibrium decays exponentially and the
//! motor is progressively switched off. `alpha_gain` normalises the local
//! convergence rate to `kappa`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Mode;

/// Tuning constants of the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleParams {
    /// Lower bound on the reference `m*`.
    pub eta: f64,
    /// Exponential decay rate of the competitive branch (1/W).
    pub gamma_decay: f64,
    /// Target local convergence rate (1/s).
    pub kappa: f64,
    /// Floor on `f` used by the rate normalisation (W^2).
    pub epsilon_t: f64,
    /// Effort threshold at `m* = eta` (W).
    pub pt_min: f64,
    /// Effort threshold at `m* = 1` (W).
    pub pt_max: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            eta: 0.2,
            gamma_decay: 0.02,
            kappa: 0.5,
            epsilon_t: 25.0,
            pt_min: 80.0,
            pt_max: 250.0,
        }
    }
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("schedule.{name} must be > 0, got {v}")))
            }
        };
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!(
                "schedule.eta must lie in (0, 1), got {}",
                self.eta
            )));
        }
        positive("gamma_decay", self.gamma_decay)?;
        positive("kappa", self.kappa)?;
        positive("epsilon_t", self.epsilon_t)?;
        positive("pt_min", self.pt_min)?;
        if !(self.pt_max.is_finite() && self.pt_max > self.pt_min) {
            return Err(Error::Config(format!(
                "schedule.pt_max ({}) must exceed pt_min ({})",
                self.pt_max, self.pt_min
            )));
        }
        Ok(())
    }

    pub(crate) fn check_m_star(&self, m_star: f64) -> Result<()> {
        if m_star >= self.eta && m_star <= 1.0 {
            Ok(())
        } else {
            Err(Error::domain("m_star", m_star, format!("[{}, 1]", self.eta)))
        }
    }

    /// Largest value `alpha_gain` can take.
    pub fn alpha_max(&self) -> f64 {
        self.kappa / (2.0 * self.epsilon_t)
    }
}

/// Everything the schedule says about one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEval {
    pub f_value: f64,
    pub alpha_value: f64,
    pub p_threshold: f64,
    pub df_dm_star: f64,
    pub df_dp_human: f64,
    pub mode: Mode,
}

/// Partial derivatives of `f_gain`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FPartials {
    pub df_dm_star: f64,
    pub df_dp_human: f64,
}

/// Effort threshold `P_T(m*)`: affine from `pt_min` at `eta` to `pt_max` at 1.
pub fn threshold(m_star: f64, params: &ScheduleParams) -> Result<f64> {
    params.check_m_star(m_star)?;
    Ok(threshold_unchecked(m_star, params))
}

/// `dP_T/dm*`, constant for the affine schedule.
pub fn threshold_slope(params: &ScheduleParams) -> f64 {
    (params.pt_max - params.pt_min) / (1.0 - params.eta)
}

fn threshold_unchecked(m_star: f64, params: &ScheduleParams) -> f64 {
    params.pt_min + threshold_slope(params) * (m_star - params.eta)
}

/// Motor-to-human power ratio that realises `m*` at equilibrium.
fn assist_ratio(m_star: f64) -> f64 {
    (1.0 - m_star) / m_star
}

/// Cooperative branch `[((1 - m*)/m*) p]^2`, evaluated for any `p`.
pub fn cooperative_f(p_human: f64, m_star: f64) -> f64 {
    let a = assist_ratio(m_star) * p_human;
    a * a
}

/// Competitive branch, evaluated for any `p` (including `p <= P_T`).
pub fn competitive_f(p_human: f64, m_star: f64, params: &ScheduleParams) -> f64 {
    let pt = threshold_unchecked(m_star, params);
    let gamma = params.gamma_decay;
    let base = assist_ratio(m_star) * pt;
    let c = 2.0 * (gamma + 1.0 / pt);
    let u = p_human - pt;
    base * base * (1.0 + c * u) * (-2.0 * gamma * u).exp()
}

/// `d/dp` of the cooperative branch.
pub fn cooperative_df_dp(p_human: f64, m_star: f64) -> f64 {
    let r = assist_ratio(m_star);
    2.0 * r * r * p_human
}

/// `d/dp` of the competitive branch.
pub fn competitive_df_dp(p_human: f64, m_star: f64, params: &ScheduleParams) -> f64 {
    let pt = threshold_unchecked(m_star, params);
    let gamma = params.gamma_decay;
    let base = assist_ratio(m_star) * pt;
    let c = 2.0 * (gamma + 1.0 / pt);
    let u = p_human - pt;
    base * base * (-2.0 * gamma * u).exp() * (c - 2.0 * gamma * (1.0 + c * u))
}

fn check_inputs(p_human: f64, m_star: f64, params: &ScheduleParams) -> Result<f64> {
    if !(p_human.is_finite() && p_human >= 0.0) {
        return Err(Error::domain("p_human", p_human, "[0, inf) W"));
    }
    threshold(m_star, params)
}

/// Squared equilibrium motor power `f_{m*}(p_human)` (W^2).
pub fn f_gain(p_human: f64, m_star: f64, params: &ScheduleParams) -> Result<f64> {
    let pt = check_inputs(p_human, m_star, params)?;
    Ok(if p_human <= pt {
        cooperative_f(p_human, m_star)
    } else {
        competitive_f(p_human, m_star, params)
    })
}

/// Rate normalisation `kappa / (2 max(f, epsilon_t))`.
pub fn alpha_gain(p_human: f64, m_star: f64, params: &ScheduleParams) -> Result<f64> {
    let f = f_gain(p_human, m_star, params)?;
    Ok(alpha_from_f(f, params))
}

pub(crate) fn alpha_from_f(f: f64, params: &ScheduleParams) -> f64 {
    params.kappa / (2.0 * f.max(params.epsilon_t))
}

/// Analytic partial derivatives of the active branch of `f_gain`.
pub fn f_partials(p_human: f64, m_star: f64, params: &ScheduleParams) -> Result<FPartials> {
    let pt = check_inputs(p_human, m_star, params)?;
    let r = assist_ratio(m_star);
    let dr = -1.0 / (m_star * m_star);
    if p_human <= pt {
        return Ok(FPartials {
            df_dm_star: 2.0 * r * dr * p_human * p_human,
            df_dp_human: cooperative_df_dp(p_human, m_star),
        });
    }

    let gamma = params.gamma_decay;
    let dpt = threshold_slope(params);
    let u = p_human - pt;
    let du = -dpt;

    let base = r * pt;
    let a = base * base;
    let da = 2.0 * base * (dr * pt + r * dpt);

    let c = 2.0 * (gamma + 1.0 / pt);
    let dc = -2.0 * dpt / (pt * pt);
    let b = 1.0 + c * u;
    let db = dc * u + c * du;

    let e = (-2.0 * gamma * u).exp();
    let de = -2.0 * gamma * du * e;

    Ok(FPartials {
        df_dm_star: da * b * e + a * db * e + a * b * de,
        df_dp_human: a * e * (c - 2.0 * gamma * b),
    })
}

/// Evaluate the whole schedule at one operating point.
pub fn evaluate(p_human: f64, m_star: f64, params: &ScheduleParams) -> Result<ScheduleEval> {
    let p_threshold = threshold(m_star, params)?;
    let f_value = f_gain(p_human, m_star, params)?;
    let partials = f_partials(p_human, m_star, params)?;
    Ok(ScheduleEval {
        f_value,
        alpha_value: alpha_from_f(f_value, params),
        p_threshold,
        df_dm_star: partials.df_dm_star,
        df_dp_human: partials.df_dp_human,
        mode: Mode::classify(p_human, p_threshold),
    })
}

/// Human power at which the competitive branch peaks: `P_T + 1/(2 gamma) - 1/c`.
pub fn competitive_peak(m_star: f64, params: &ScheduleParams) -> Result<f64> {
    let pt = threshold(m_star, params)?;
    let c = 2.0 * (params.gamma_decay + 1.0 / pt);
    Ok(pt + 1.0 / (2.0 * params.gamma_decay) - 1.0 / c)
}

/// `sup_p f_{m*}(p)`, attained at the competitive peak.
pub fn sup_over_p(m_star: f64, params: &ScheduleParams) -> Result<f64> {
    let peak = competitive_peak(m_star, params)?;
    f_gain(peak, m_star, params)
}
