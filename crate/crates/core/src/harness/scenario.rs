//! Scenario scripts: everything needed to reproduce one closed-loop run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::certificates::{CertifyOptions, POrder};
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::humans::{HumanProgram, VentilationModel};
use crate::plant::PlantParams;

/// How the reference reaches a knot from the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// Jump to the knot value at the knot time.
    #[default]
    Hold,
    /// Cubic smoothstep from the previous knot.
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceKnot {
    pub t: f64,
    pub m_star: f64,
    #[serde(default)]
    pub interp: Interpolation,
}

impl ReferenceKnot {
    pub fn hold(t: f64, m_star: f64) -> Self {
        Self {
            t,
            m_star,
            interp: Interpolation::Hold,
        }
    }

    pub fn smooth(t: f64, m_star: f64) -> Self {
        Self {
            t,
            m_star,
            interp: Interpolation::Smooth,
        }
    }
}

fn segment(knots: &[ReferenceKnot], t: f64) -> Result<(f64, f64)> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::domain("t", t, "[0, inf) s"));
    }
    let first = knots
        .first()
        .ok_or_else(|| Error::Config("reference program has no knots".into()))?;
    let idx = knots.partition_point(|k| k.t <= t);
    if idx == 0 {
        return Ok((first.m_star, 0.0));
    }
    let prev = knots[idx - 1];
    match knots.get(idx) {
        Some(next) if next.interp == Interpolation::Smooth => {
            let span = next.t - prev.t;
            let s = (t - prev.t) / span;
            let delta = next.m_star - prev.m_star;
            Ok((
                prev.m_star + delta * s * s * (3.0 - 2.0 * s),
                delta * 6.0 * s * (1.0 - s) / span,
            ))
        }
        _ => Ok((prev.m_star, 0.0)),
    }
}

/// Reference `m*(t)` defined by `knots`.
pub fn smooth_reference(knots: &[ReferenceKnot], t: f64) -> Result<f64> {
    segment(knots, t).map(|(v, _)| v)
}

/// Analytic `dm*/dt`; zero on hold segments and at the jumps.
pub fn smooth_reference_rate(knots: &[ReferenceKnot], t: f64) -> Result<f64> {
    segment(knots, t).map(|(_, r)| r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    /// Closed-loop equilibrium at the conditions of `t = 0`.
    #[default]
    Equilibrium,
    /// Values given below.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConditions {
    pub kind: InitKind,
    /// Law state; also the seed used when the equilibrium is zero (W).
    pub p_motor_target: f64,
    pub y_control: f64,
    pub p_human_filtered: f64,
    pub p_motor_filtered: f64,
    pub p_motor_actual: f64,
    /// Initial ventilation; the steady state of the first pedal power when absent.
    pub vr: Option<f64>,
}

impl Default for InitialConditions {
    fn default() -> Self {
        Self {
            kind: InitKind::Equilibrium,
            p_motor_target: 1.0,
            y_control: 0.0,
            p_human_filtered: 0.0,
            p_motor_filtered: 0.0,
            p_motor_actual: 0.0,
            vr: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertifyOrder {
    P1,
    P2,
    #[default]
    Off,
}

impl CertifyOrder {
    pub fn p_order(self) -> Option<POrder> {
        match self {
            CertifyOrder::P1 => Some(POrder::P1),
            CertifyOrder::P2 => Some(POrder::P2),
            CertifyOrder::Off => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    pub order: CertifyOrder,
    /// Certified human output power range (W).
    pub p_h_min: f64,
    pub p_h_max: f64,
    pub m_upper: f64,
    pub grid_n: usize,
}

impl Default for CertifySection {
    fn default() -> Self {
        Self {
            order: CertifyOrder::Off,
            p_h_min: 80.0,
            p_h_max: 250.0,
            m_upper: 0.95,
            grid_n: 128,
        }
    }
}

impl CertifySection {
    pub fn options(&self) -> Option<CertifyOptions> {
        self.order.p_order().map(|p_order| CertifyOptions {
            p_order,
            grid_n: self.grid_n,
            m_upper: self.m_upper,
            p_upper: None,
        })
    }
}

fn default_duration() -> f64 {
    300.0
}

fn default_reference() -> Vec<ReferenceKnot> {
    vec![ReferenceKnot::hold(0.0, 0.5)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub name: String,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_reference")]
    pub reference_program: Vec<ReferenceKnot>,
    #[serde(default)]
    pub human: HumanProgram,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub plant: PlantParams,
    #[serde(default)]
    pub ventilation: Option<VentilationModel>,
    #[serde(default)]
    pub initial: InitialConditions,
    #[serde(default)]
    pub certify: CertifySection,
}

impl ScenarioScript {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            duration: default_duration(),
            seed: 0,
            reference_program: default_reference(),
            human: HumanProgram::default(),
            controller: ControllerConfig::default(),
            plant: PlantParams::default(),
            ventilation: None,
            initial: InitialConditions::default(),
            certify: CertifySection::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let script: Self = toml::from_str(text)?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise scenario: {e}")))
    }

    /// Controller configuration with the actuator limits of the plant.
    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig {
            y_max: self.plant.y_max,
            crank_efficiency: self.plant.e_crank,
            ..self.controller
        }
    }

    pub fn human_seed(&self) -> u64 {
        self.human.seed.unwrap_or(self.seed)
    }

    /// Number of sampling periods; the log holds one more tick than this.
    pub fn n_periods(&self) -> usize {
        (self.duration / self.controller.dt_sample).round() as usize
    }

    pub fn m_star(&self, t: f64) -> Result<f64> {
        smooth_reference(&self.reference_program, t)
    }

    pub fn m_star_rate(&self, t: f64) -> Result<f64> {
        smooth_reference_rate(&self.reference_program, t)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = self.controller_config();
        cfg.validate()?;
        self.plant.validate()?;
        self.human.validate()?;
        if let Some(v) = &self.ventilation {
            v.validate()?;
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Config(format!("duration must be > 0, got {}", self.duration)));
        }
        let periods = self.duration / cfg.dt_sample;
        if (periods - periods.round()).abs() > 1e-9 * periods.max(1.0) {
            return Err(Error::Config(format!(
                "duration {} is not a multiple of dt_sample {}",
                self.duration, cfg.dt_sample
            )));
        }
        if self.reference_program.is_empty() {
            return Err(Error::Config("reference_program needs at least one knot".into()));
        }
        let eta = cfg.schedule.eta;
        for (i, k) in self.reference_program.iter().enumerate() {
            if !(k.t.is_finite() && k.t >= 0.0) {
                return Err(Error::Config(format!("reference knot {i} has invalid time {}", k.t)));
            }
            if i > 0 && k.t <= self.reference_program[i - 1].t {
                return Err(Error::Config(format!(
                    "reference knot times must increase at index {i}"
                )));
            }
            if !(k.m_star >= eta && k.m_star <= 1.0) {
                return Err(Error::Config(format!(
                    "reference knot {i}: m* = {} outside [{eta}, 1]",
                    k.m_star
                )));
            }
        }
        if self.reference_program[0].interp == Interpolation::Smooth {
            return Err(Error::Config("the first reference knot cannot be smooth".into()));
        }
        let init = &self.initial;
        for (name, v) in [
            ("p_motor_target", init.p_motor_target),
            ("y_control", init.y_control),
            ("p_human_filtered", init.p_human_filtered),
            ("p_motor_filtered", init.p_motor_filtered),
            ("p_motor_actual", init.p_motor_actual),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "initial.{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if init.y_control > self.plant.y_max {
            return Err(Error::Config(format!(
                "initial.y_control {} exceeds y_max {}",
                init.y_control, self.plant.y_max
            )));
        }
        let c = &self.certify;
        if c.order != CertifyOrder::Off {
            if !(c.p_h_min > 0.0 && c.p_h_max > c.p_h_min) {
                return Err(Error::Config(format!(
                    "certify range must satisfy 0 < p_h_min < p_h_max, got [{}, {}]",
                    c.p_h_min, c.p_h_max
                )));
            }
            if !(c.m_upper > eta && c.m_upper < 1.0) {
                return Err(Error::Config(format!(
                    "certify.m_upper must lie in ({eta}, 1), got {}",
                    c.m_upper
                )));
            }
            if c.grid_n < 64 {
                return Err(Error::Config(format!("certify.grid_n must be >= 64, got {}", c.grid_n)));
            }
        }
        Ok(())
    }
}
