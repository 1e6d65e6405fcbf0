//! Scripted cyclists and a first-order ventilation-rate proxy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::check_power;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HumanKind {
    /// First segment level forever.
    Constant,
    /// Piecewise constant levels.
    StepSequence,
    /// Piecewise linear between segment knots.
    Ramp,
    /// Piecewise constant levels with band-limited noise.
    BandNoise,
    /// Pushes harder when assisted: `level + reactivity * assist`.
    Reactive,
    /// Holds a total output demand: `level - assist`.
    Cruise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumanProgram {
    pub kind: HumanKind,
    /// `(t_start, level)` knots, times strictly increasing (s, W).
    pub segments: Vec<(f64, f64)>,
    pub reactivity: f64,
    /// Stationary standard deviation of the additive noise (W).
    pub noise_std: f64,
    /// Correlation time of the noise (s).
    pub noise_tau: f64,
    /// Noise seed; the scenario seed is used when absent.
    pub seed: Option<u64>,
    /// Physiological ceiling on pedal power (W).
    pub p_human_max: f64,
}

impl Default for HumanProgram {
    fn default() -> Self {
        Self {
            kind: HumanKind::Constant,
            segments: vec![(0.0, 100.0)],
            reactivity: 0.0,
            noise_std: 0.0,
            noise_tau: 2.0,
            seed: None,
            p_human_max: 400.0,
        }
    }
}

impl HumanProgram {
    pub fn constant(level: f64) -> Self {
        Self {
            segments: vec![(0.0, level)],
            ..Self::default()
        }
    }

    pub fn with_kind(kind: HumanKind, segments: Vec<(f64, f64)>) -> Self {
        Self {
            kind,
            segments,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.segments.is_empty() {
            return bad("human.segments must not be empty".into());
        }
        for (i, &(t, level)) in self.segments.iter().enumerate() {
            if !t.is_finite() || !(level.is_finite() && level >= 0.0) {
                return bad(format!("human.segments[{i}] = ({t}, {level}) is invalid"));
            }
            if i > 0 && t <= self.segments[i - 1].0 {
                return bad(format!("human.segments times must be strictly increasing at index {i}"));
            }
        }
        if !(self.reactivity.is_finite() && self.reactivity >= 0.0) {
            return bad(format!("human.reactivity must be >= 0, got {}", self.reactivity));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("human.noise_std must be >= 0, got {}", self.noise_std));
        }
        if !(self.noise_tau.is_finite() && self.noise_tau > 0.0) {
            return bad(format!("human.noise_tau must be > 0, got {}", self.noise_tau));
        }
        if !(self.p_human_max.is_finite() && self.p_human_max > 0.0) {
            return bad(format!("human.p_human_max must be > 0, got {}", self.p_human_max));
        }
        if self.kind == HumanKind::BandNoise && self.noise_std == 0.0 {
            return bad("band-noise cyclist needs noise_std > 0".into());
        }
        Ok(())
    }

    /// Scripted level at time `t`, before noise and reaction.
    pub fn level(&self, t: f64) -> f64 {
        let segs = &self.segments;
        if self.kind == HumanKind::Constant {
            return segs[0].1;
        }
        let idx = segs.partition_point(|&(ts, _)| ts <= t);
        if idx == 0 {
            return segs[0].1;
        }
        let (t0, l0) = segs[idx - 1];
        match (self.kind, segs.get(idx)) {
            (HumanKind::Ramp, Some(&(t1, l1))) => l0 + (l1 - l0) * (t - t0) / (t1 - t0),
            _ => l0,
        }
    }
}

impl HumanProgram {
    /// Noise-free pedal power at time `t` given the felt assistance, before clamping.
    pub fn base_response(&self, t: f64, assist_observed: f64) -> f64 {
        let level = self.level(t);
        match self.kind {
            HumanKind::Reactive => level + self.reactivity * assist_observed,
            HumanKind::Cruise => level - assist_observed,
            _ => level,
        }
    }

    /// [`Self::base_response`] clamped to the physiological range.
    pub fn response(&self, t: f64, assist_observed: f64) -> f64 {
        self.base_response(t, assist_observed).clamp(0.0, self.p_human_max)
    }
}

/// Per-run random state of a cyclist.
#[derive(Debug, Clone)]
pub struct HumanState {
    rng: ChaCha8Rng,
    noise: f64,
    last_t: Option<f64>,
}

impl HumanState {
    pub fn new(program: &HumanProgram) -> Self {
        Self::with_seed(program.seed.unwrap_or(0))
    }

    pub fn with_seed(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise: 0.0,
            last_t: None,
        }
    }

    fn advance_noise(&mut self, program: &HumanProgram, t: f64) -> f64 {
        if program.noise_std == 0.0 {
            return 0.0;
        }
        let draw: f64 = StandardNormal.sample(&mut self.rng);
        self.noise = match self.last_t {
            None => program.noise_std * draw,
            Some(prev) => {
                let phi = (-(t - prev).max(0.0) / program.noise_tau).exp();
                phi * self.noise + program.noise_std * (1.0 - phi * phi).sqrt() * draw
            }
        };
        self.last_t = Some(t);
        self.noise
    }
}

/// Pedal power requested by the cyclist at time `t`, given the motor power
/// they currently feel.
pub fn human_tick(program: &HumanProgram, state: &mut HumanState, t: f64, assist_observed: f64) -> Result<f64> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::domain("t", t, "[0, inf) s"));
    }
    check_power("assist_observed", assist_observed)?;
    let noise = state.advance_noise(program, t);
    Ok((program.base_response(t, assist_observed) + noise).clamp(0.0, program.p_human_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VentilationModel {
    /// Resting ventilation (L/min).
    pub vr_rest: f64,
    /// Ventilation per watt of pedal power (L/min/W).
    pub k_vr: f64,
    pub tau_vr: f64,
    pub vr_state: f64,
}

impl Default for VentilationModel {
    fn default() -> Self {
        Self {
            vr_rest: 12.0,
            k_vr: 0.3,
            tau_vr: 30.0,
            vr_state: 12.0,
        }
    }
}

impl VentilationModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("vr_rest", self.vr_rest), ("k_vr", self.k_vr), ("tau_vr", self.tau_vr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("ventilation.{name} must be > 0, got {v}")));
            }
        }
        if !self.vr_state.is_finite() {
            return Err(Error::Config("ventilation.vr_state must be finite".into()));
        }
        Ok(())
    }

    pub fn steady_state(&self, p_human_raw: f64) -> f64 {
        self.vr_rest + self.k_vr * p_human_raw
    }

    /// Model settled at the steady state of `p_human_raw`.
    pub fn settled_at(self, p_human_raw: f64) -> Self {
        Self {
            vr_state: self.steady_state(p_human_raw),
            ..self
        }
    }
}

pub fn ventilation_tick(model: VentilationModel, p_human_raw: f64, dt: f64) -> Result<VentilationModel> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Config(format!("ventilation dt must be > 0, got {dt}")));
    }
    check_power("p_human_raw", p_human_raw)?;
    let vr = model.vr_state + dt / model.tau_vr * (model.steady_state(p_human_raw) - model.vr_state);
    Ok(VentilationModel { vr_state: vr, ..model })
}
