//! Closed-loop control engine.
//!
//! Each tick filters the measured powers, advances the bifurcation law
//!
//! ```text
//! dP/dt = alpha(P_H, m*) * (f(P_H, m*) * P - P^3)
//! ```
//!
//! over one sampling period with the inputs held constant, then updates the
//! throttle `Y` with a clamped discrete integral loop so that the delivered
//! motor power follows the target.
//!
//! The law is integrated through the substitution `w = 1 / P^2`, under which
//! it becomes the affine equation `dw/dt = 2 alpha (1 - f w)`. Classical RK4
//! applied to `w` keeps the target inside `[0, sqrt(sup f)]` whenever
//! `kappa * dt_sub` lies inside the RK4 real stability interval, independently
//! of how far the state is from equilibrium.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{self, ScheduleParams};
use crate::types::{check_power, compute_ratio_with_idle, Mode, PowerSample, TickRecord, IDLE_RATIO};

/// Left end of the real stability interval of classical RK4: the real root
/// of `1 + z + z^2/2 + z^3/6 + z^4/24 = 1`.
pub const RK4_REAL_STABILITY_LIMIT: f64 = 2.785_293_563_405_282;

/// Which error drives the throttle integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopError {
    /// `e = P_target - P_actual`; `Y` grows while the motor under-delivers.
    #[default]
    MotorPower,
    /// `e = m* - m`; `Y_{k+1} = Y_k - k_int e`.
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Sampling period (s).
    pub dt_sample: f64,
    /// RK4 substeps per sampling period.
    pub n_substeps: u32,
    /// Gain of the throttle integrator.
    pub k_int: f64,
    /// Time constant of the power filters (s).
    pub tau_filter: f64,
    pub loop_error: LoopError,
    /// Ratio reported for a bike at rest.
    pub idle_ratio: f64,
    pub schedule: ScheduleParams,
    /// Throttle saturation, taken from the plant.
    #[serde(skip)]
    pub y_max: f64,
    /// Crankset efficiency used to turn pedal power into output power.
    #[serde(skip)]
    pub crank_efficiency: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            dt_sample: 1.0,
            n_substeps: 10,
            k_int: 0.05,
            tau_filter: 4.0,
            loop_error: LoopError::MotorPower,
            idle_ratio: IDLE_RATIO,
            schedule: ScheduleParams::default(),
            y_max: 20.0,
            crank_efficiency: 0.95,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("controller.{name} must be > 0, got {v}")))
            }
        };
        positive("dt_sample", self.dt_sample)?;
        positive("k_int", self.k_int)?;
        positive("tau_filter", self.tau_filter)?;
        positive("y_max", self.y_max)?;
        if self.n_substeps == 0 {
            return Err(Error::Config("controller.n_substeps must be >= 1".into()));
        }
        if !(self.crank_efficiency > 0.0 && self.crank_efficiency < 1.0) {
            return Err(Error::Config(format!(
                "crank efficiency must lie in (0, 1), got {}",
                self.crank_efficiency
            )));
        }
        if !(0.0..=1.0).contains(&self.idle_ratio) {
            return Err(Error::Config(format!(
                "controller.idle_ratio must lie in [0, 1], got {}",
                self.idle_ratio
            )));
        }
        // The fastest mode of the substituted law is 2 alpha f <= kappa.
        let stiffness = self.schedule.kappa * self.dt_sub();
        if stiffness >= RK4_REAL_STABILITY_LIMIT {
            return Err(Error::Config(format!(
                "kappa * dt_sample / n_substeps = {stiffness} must stay below {RK4_REAL_STABILITY_LIMIT}"
            )));
        }
        Ok(())
    }

    pub fn dt_sub(&self) -> f64 {
        self.dt_sample / self.n_substeps as f64
    }

    /// Absolute tolerance on the target motor power attributable to the integrator.
    pub fn integrator_tolerance(&self) -> f64 {
        1e-9 * (1.0 + self.schedule.pt_max * (1.0 - self.schedule.eta) / self.schedule.eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    /// State of the bifurcation law (W).
    pub p_motor_target: f64,
    /// Throttle command.
    pub y_control: f64,
    /// Filtered human output power (W).
    pub filt_human: f64,
    /// Filtered delivered motor power (W).
    pub filt_motor: f64,
}

impl ControllerState {
    /// Motor switched off, filters untouched.
    pub fn safe_off(self) -> Self {
        Self {
            p_motor_target: 0.0,
            y_control: 0.0,
            ..self
        }
    }
}

/// One step of the exponential moving average used on both power channels.
pub fn filter_power(state: f64, raw: f64, dt: f64, tau: f64) -> Result<f64> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Config(format!("filter dt must be > 0, got {dt}")));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Config(format!("filter tau must be > 0, got {tau}")));
    }
    check_power("raw power", raw)?;
    let gain = dt / (tau + dt);
    Ok(state + gain * (raw - state))
}

fn fault(t: f64, reason: impl Into<String>) -> Error {
    Error::Fault {
        t,
        reason: reason.into(),
    }
}

/// Advance the bifurcation law over one sampling period with `p_human_filtered`
/// and `m_star` held constant.
pub fn step_bifurcation(
    state: ControllerState,
    p_human_filtered: f64,
    m_star: f64,
    cfg: &ControllerConfig,
) -> Result<ControllerState> {
    let x = state.p_motor_target;
    if !x.is_finite() || x < 0.0 {
        return Err(fault(f64::NAN, format!("invalid motor target {x}")));
    }
    let f = schedule::f_gain(p_human_filtered, m_star, &cfg.schedule)?;
    let alpha = schedule::alpha_from_f(f, &cfg.schedule);
    let next = advance_target(x, alpha, f, cfg.dt_sample, cfg.n_substeps)
        .ok_or_else(|| fault(f64::NAN, "bifurcation integrator left the real line"))?;
    Ok(ControllerState {
        p_motor_target: next,
        ..state
    })
}

/// Integrate `dx/dt = alpha (f x - x^3)` from `x` over `dt` in `n` RK4 steps.
fn advance_target(x: f64, alpha: f64, f: f64, dt: f64, n: u32) -> Option<f64> {
    if x == 0.0 {
        // invariant manifold
        return Some(0.0);
    }
    let w0 = 1.0 / (x * x);
    if !w0.is_finite() {
        // x*x underflowed: the cubic term is negligible, keep the linear growth
        return Some(x * (alpha * f * dt).exp());
    }
    let rhs = |w: f64| 2.0 * alpha * (1.0 - f * w);
    let h = dt / n as f64;
    let mut w = w0;
    for _ in 0..n {
        let k1 = rhs(w);
        let k2 = rhs(w + 0.5 * h * k1);
        let k3 = rhs(w + 0.5 * h * k2);
        let k4 = rhs(w + h * k3);
        w += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if w.is_finite() && w > 0.0 {
        Some(1.0 / w.sqrt())
    } else {
        None
    }
}

fn clamp_throttle(y: f64, cfg: &ControllerConfig) -> f64 {
    y.clamp(0.0, cfg.y_max)
}

/// Throttle update driven by the motor-power error.
pub fn step_integral_loop(
    state: ControllerState,
    p_motor_actual: f64,
    cfg: &ControllerConfig,
) -> Result<ControllerState> {
    check_power("p_motor_actual", p_motor_actual)?;
    let error = state.p_motor_target - p_motor_actual;
    let y = clamp_throttle(state.y_control + cfg.k_int * error, cfg);
    if !y.is_finite() {
        return Err(fault(f64::NAN, "non-finite throttle"));
    }
    Ok(ControllerState { y_control: y, ..state })
}

/// Throttle update driven by the ratio error `e = m* - m`.
pub fn step_ratio_loop(
    state: ControllerState,
    ratio_m: f64,
    m_star: f64,
    cfg: &ControllerConfig,
) -> Result<ControllerState> {
    let error = m_star - ratio_m;
    let y = clamp_throttle(state.y_control - cfg.k_int * error, cfg);
    if !y.is_finite() {
        return Err(fault(f64::NAN, "non-finite throttle"));
    }
    Ok(ControllerState { y_control: y, ..state })
}

/// Measurements handed to the controller at one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickInput {
    pub t: f64,
    /// Pedal power `tau_p * omega_p` (W).
    pub p_human_raw: f64,
    /// Delivered motor output power (W).
    pub p_motor_actual: f64,
    pub m_star: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub state: ControllerState,
    pub record: TickRecord,
    /// Set when the tick forced the motor off.
    pub fault: Option<String>,
}

/// Filter, integrate the law, update the throttle and emit the tick record.
pub fn controller_tick(state: ControllerState, input: TickInput, cfg: &ControllerConfig) -> Result<TickOutput> {
    let p_threshold = schedule::threshold(input.m_star, &cfg.schedule)?;
    check_power("p_human_raw", input.p_human_raw)?;
    check_power("p_motor_actual", input.p_motor_actual)?;
    let dt = cfg.dt_sample;

    let filt_human = filter_power(
        state.filt_human,
        cfg.crank_efficiency * input.p_human_raw,
        dt,
        cfg.tau_filter,
    )?;
    let filt_motor = filter_power(state.filt_motor, input.p_motor_actual, dt, cfg.tau_filter)?;
    let filtered = ControllerState {
        filt_human,
        filt_motor,
        ..state
    };

    let ratio_m = compute_ratio_with_idle(filt_human, filt_motor, cfg.idle_ratio)?;
    let sample = PowerSample {
        t: input.t,
        p_human_raw: input.p_human_raw,
        p_human_out: filt_human,
        p_motor_out: filt_motor,
        ratio_m,
    };
    let idle = sample.is_idle();

    let stepped = step_bifurcation(filtered, filt_human, input.m_star, cfg).and_then(|s| {
        if idle {
            // a bike at rest must not trigger motor action: bleed the throttle
            let keep = cfg.tau_filter / (cfg.tau_filter + dt);
            Ok(ControllerState {
                y_control: s.y_control * keep,
                ..s
            })
        } else {
            match cfg.loop_error {
                LoopError::MotorPower => step_integral_loop(s, input.p_motor_actual, cfg),
                LoopError::Ratio => step_ratio_loop(s, ratio_m, input.m_star, cfg),
            }
        }
    });

    let (next, fault) = match stepped {
        Ok(s) => (s, None),
        Err(Error::Fault { reason, .. }) => (filtered.safe_off(), Some(reason)),
        Err(e) => return Err(e),
    };

    let record = TickRecord {
        sample,
        m_star: input.m_star,
        p_motor_target: next.p_motor_target,
        p_motor_actual: input.p_motor_actual,
        y_control: next.y_control,
        p_threshold,
        mode: Mode::classify(filt_human, p_threshold),
        ventilation_rate: 0.0,
        idle,
    };
    Ok(TickOutput {
        state: next,
        record,
        fault,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> ControllerConfig {
        ControllerConfig::default()
    }

    fn target(x: f64) -> ControllerState {
        ControllerState {
            p_motor_target: x,
            ..Default::default()
        }
    }

    /// Closed-form solution of the law with constant inputs: `z = x^2` obeys
    /// the logistic equation `dz/dt = 2 alpha z (f - z)`.
    fn exact(x0: f64, alpha: f64, f: f64, t: f64) -> f64 {
        let z0 = x0 * x0;
        let z = if f == 0.0 {
            z0 / (1.0 + 2.0 * alpha * z0 * t)
        } else {
            f * z0 / (z0 + (f - z0) * (-2.0 * alpha * f * t).exp())
        };
        z.sqrt()
    }

    #[test]
    fn stability_limit_is_the_rk4_root() {
        let z = -RK4_REAL_STABILITY_LIMIT;
        let r = 1.0 + z + z * z / 2.0 + z.powi(3) / 6.0 + z.powi(4) / 24.0;
        assert!((r - 1.0).abs() < 1e-12, "{r}");
    }

    #[test]
    fn filter_examples() {
        assert_eq!(filter_power(100.0, 100.0, 1.0, 4.0).unwrap(), 100.0);
        assert!((filter_power(0.0, 100.0, 1.0, 4.0).unwrap() - 20.0).abs() < 1e-12);
        assert!(filter_power(0.0, 100.0, 0.0, 4.0).is_err());
        assert!(filter_power(0.0, 100.0, 1.0, -4.0).is_err());
        assert!(filter_power(0.0, -1.0, 1.0, 4.0).is_err());
        let mut s = 0.0;
        let (dt, tau) = (0.1, 4.0);
        for _ in 0..(5.0 * tau / dt) as usize {
            s = filter_power(s, 100.0, dt, tau).unwrap();
        }
        assert!((s - 100.0).abs() < 1.0, "{s}");
    }

    #[test]
    fn bifurcation_decays_without_human_power() {
        let s = step_bifurcation(target(50.0), 0.0, 0.45, &cfg()).unwrap();
        assert!(s.p_motor_target < 50.0 && s.p_motor_target > 0.0);
    }

    #[test]
    fn bifurcation_equilibrium_and_zero_manifold() {
        let c = cfg();
        let f = schedule::f_gain(100.0, 0.45, &c.schedule).unwrap();
        let s = step_bifurcation(target(f.sqrt()), 100.0, 0.45, &c).unwrap();
        assert!((s.p_motor_target - f.sqrt()).abs() < 1e-9);
        let mut s = target(0.0);
        for _ in 0..50 {
            s = step_bifurcation(s, 120.0, 0.3, &c).unwrap();
        }
        assert_eq!(s.p_motor_target, 0.0);
    }

    #[test]
    fn bifurcation_converges_at_kappa() {
        let c = cfg();
        let eq = (0.55f64 / 0.45) * 100.0;
        let mut s = target(50.0);
        let horizon = (2.0 * 5.0 / c.schedule.kappa) as usize;
        for _ in 0..horizon {
            s = step_bifurcation(s, 100.0, 0.45, &c).unwrap();
        }
        assert!((s.p_motor_target - eq).abs() < 0.01 * eq);
    }

    #[test]
    fn bifurcation_matches_closed_form() {
        let c = cfg();
        for &(x0, ph, m) in &[
            (50.0, 100.0, 0.45),
            (300.0, 20.0, 0.3),
            (5.0, 150.0, 0.7),
            (80.0, 0.0, 0.5),
        ] {
            let f = schedule::f_gain(ph, m, &c.schedule).unwrap();
            let a = schedule::alpha_from_f(f, &c.schedule);
            let mut s = target(x0);
            for k in 1..=30 {
                s = step_bifurcation(s, ph, m, &c).unwrap();
                let reference = exact(x0, a, f, k as f64 * c.dt_sample);
                assert!(
                    (s.p_motor_target - reference).abs() <= 1e-6 * reference.max(1.0),
                    "x0={x0} ph={ph} m={m} k={k}: {} vs {reference}",
                    s.p_motor_target
                );
            }
        }
    }

    #[test]
    fn refinement_is_fourth_order() {
        let mut c = cfg();
        let (x0, ph, m) = (20.0, 110.0, 0.4);
        let f = schedule::f_gain(ph, m, &c.schedule).unwrap();
        let a = schedule::alpha_from_f(f, &c.schedule);
        let reference = exact(x0, a, f, c.dt_sample);
        let mut errors = vec![];
        for n in [1u32, 2, 4] {
            c.n_substeps = n;
            let s = step_bifurcation(target(x0), ph, m, &c).unwrap();
            errors.push((s.p_motor_target - reference).abs());
        }
        assert!(errors[1] < errors[0] / 8.0, "{errors:?}");
        assert!(errors[2] < errors[1] / 8.0, "{errors:?}");
    }

    #[test]
    fn guard_rejects_unstable_substeps() {
        let mut c = cfg();
        c.schedule.kappa = 3.0;
        c.n_substeps = 1;
        assert!(c.validate().is_err());
        c.n_substeps = 2;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn integral_loop_direction_and_clamp() {
        let c = cfg();
        let s = ControllerState {
            p_motor_target: 100.0,
            y_control: 5.0,
            ..Default::default()
        };
        assert_eq!(step_integral_loop(s, 100.0, &c).unwrap().y_control, 5.0);
        assert!(step_integral_loop(s, 60.0, &c).unwrap().y_control > 5.0);
        assert!(step_integral_loop(s, 160.0, &c).unwrap().y_control < 5.0);
        let sat = ControllerState {
            y_control: c.y_max,
            ..s
        };
        let mut st = sat;
        for _ in 0..10 {
            st = step_integral_loop(st, 0.0, &c).unwrap();
            assert_eq!(st.y_control, c.y_max);
        }
        let low = ControllerState {
            y_control: 0.0,
            p_motor_target: 0.0,
            ..s
        };
        assert_eq!(step_integral_loop(low, 50.0, &c).unwrap().y_control, 0.0);
    }

    #[test]
    fn ratio_loop_sign() {
        let c = cfg();
        let s = ControllerState {
            y_control: 5.0,
            ..Default::default()
        };
        // human share too high: more assistance
        assert!(step_ratio_loop(s, 0.8, 0.5, &c).unwrap().y_control > 5.0);
        assert!(step_ratio_loop(s, 0.3, 0.5, &c).unwrap().y_control < 5.0);
    }

    #[test]
    fn idle_tick_bleeds_throttle() {
        let c = cfg();
        let mut s = ControllerState {
            y_control: 5.0,
            ..Default::default()
        };
        let mut last = s.y_control;
        for k in 0..20 {
            let out = controller_tick(
                s,
                TickInput {
                    t: k as f64,
                    p_human_raw: 0.0,
                    p_motor_actual: 0.0,
                    m_star: 0.5,
                },
                &c,
            )
            .unwrap();
            assert!(out.record.idle);
            assert_eq!(out.record.sample.ratio_m, 1.0);
            assert!(out.state.y_control < last);
            last = out.state.y_control;
            s = out.state;
        }
    }

    #[test]
    fn non_finite_target_forces_safe_off() {
        let c = cfg();
        let s = ControllerState {
            p_motor_target: f64::NAN,
            y_control: 3.0,
            filt_human: 50.0,
            filt_motor: 20.0,
        };
        let out = controller_tick(
            s,
            TickInput {
                t: 3.0,
                p_human_raw: 100.0,
                p_motor_actual: 20.0,
                m_star: 0.5,
            },
            &c,
        )
        .unwrap();
        assert!(out.fault.is_some());
        assert_eq!(out.record.p_motor_target, 0.0);
        assert_eq!(out.state.y_control, 0.0);
    }

    #[test]
    fn tick_rejects_out_of_range_reference() {
        let r = controller_tick(
            ControllerState::default(),
            TickInput {
                t: 0.0,
                p_human_raw: 100.0,
                p_motor_actual: 0.0,
                m_star: 0.1,
            },
            &cfg(),
        );
        assert!(matches!(r, Err(Error::Domain { .. })));
    }

    proptest! {
        #[test]
        fn target_stays_non_negative(
            x0 in 0.0f64..400.0,
            inputs in proptest::collection::vec((0.0f64..500.0, 0.2f64..=1.0), 1..60),
        ) {
            let c = cfg();
            let mut s = target(x0);
            for (ph, m) in inputs {
                s = step_bifurcation(s, ph, m, &c).unwrap();
                prop_assert!(s.p_motor_target >= 0.0 && s.p_motor_target.is_finite());
            }
        }

        #[test]
        fn ticks_are_deterministic(
            inputs in proptest::collection::vec((0.0f64..300.0, 0.0f64..300.0, 0.2f64..=1.0), 1..40),
        ) {
            let c = cfg();
            let run = || {
                let mut s = ControllerState { p_motor_target: 30.0, ..Default::default() };
                let mut out = vec![];
                for (k, &(ph, pm, m)) in inputs.iter().enumerate() {
                    let o = controller_tick(s, TickInput { t: k as f64, p_human_raw: ph, p_motor_actual: pm, m_star: m }, &c).unwrap();
                    s = o.state;
                    out.push(o.record);
                }
                out
            };
            prop_assert_eq!(run(), run());
        }
    }
}
