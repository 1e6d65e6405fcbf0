//! Closed-loop execution of a scenario, tick by tick.

use serde::{Deserialize, Serialize};

use super::scenario::{InitKind, ScenarioScript};
use crate::certificates::{self, CertificateConstants, CheckOptions, TrajectoryReport};
use crate::controller::{controller_tick, ControllerConfig, ControllerState, TickInput};
use crate::error::{Error, Result};
use crate::humans::{human_tick, HumanState, VentilationModel};
use crate::plant::{plant_tick, PlantState};
use crate::schedule;
use crate::types::{Mode, TickRecord};

/// Live input applied at a tick boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    SetHumanPower {
        watts: f64,
    },
    SetMStar {
        m_star: f64,
    },
    /// Return to the scripted reference.
    ClearMStar,
    Pause,
    Resume,
    Reset,
}

/// A command together with the index of the first tick it affected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordedCommand {
    pub tick: u64,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultMarker {
    pub t: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub record: TickRecord,
    pub fault: Option<String>,
    /// The cyclist model hit its physiological ceiling.
    pub human_capped: bool,
}

/// Mutable state of one run. Only [`Simulation::step`] advances it.
#[derive(Debug, Clone)]
pub struct Simulation {
    script: ScenarioScript,
    cfg: ControllerConfig,
    live: bool,
    ctrl: ControllerState,
    plant: PlantState,
    human: HumanState,
    ventilation: Option<VentilationModel>,
    tick: u64,
    last_assist: f64,
    human_override: Option<f64>,
    m_star_override: Option<f64>,
}

impl Simulation {
    /// Scripted run starting from the configured initial conditions.
    pub fn new(script: &ScenarioScript) -> Result<Self> {
        Self::build(script, false)
    }

    /// Run whose pedal power is commanded from outside, starting at 0 W.
    pub fn live(script: &ScenarioScript) -> Result<Self> {
        Self::build(script, true)
    }

    fn build(script: &ScenarioScript, live: bool) -> Result<Self> {
        script.validate()?;
        let cfg = script.controller_config();
        let mut sim = Self {
            script: script.clone(),
            cfg,
            live,
            ctrl: ControllerState::default(),
            plant: PlantState::default(),
            human: HumanState::with_seed(script.human_seed()),
            ventilation: script.ventilation,
            tick: 0,
            last_assist: 0.0,
            human_override: live.then_some(0.0),
            m_star_override: None,
        };
        sim.initialise()?;
        Ok(sim)
    }

    fn initialise(&mut self) -> Result<()> {
        let init = self.script.initial;
        let params = self.script.plant;
        let p_in = match init.kind {
            InitKind::Explicit => {
                self.ctrl = ControllerState {
                    p_motor_target: init.p_motor_target,
                    y_control: init.y_control,
                    filt_human: init.p_human_filtered,
                    filt_motor: init.p_motor_filtered,
                };
                self.plant = PlantState {
                    p_motor_actual: init.p_motor_actual,
                    wheel_power: init.p_motor_actual,
                };
                self.last_assist = init.p_motor_actual;
                self.first_pedal_power(init.p_motor_actual)
            }
            InitKind::Equilibrium => {
                let m_star = self.m_star_at(0.0)?;
                let p_in = self.equilibrium_pedal_power(m_star)?;
                let p_out = params.e_crank * p_in;
                let mut x = schedule::f_gain(p_out, m_star, &self.cfg.schedule)?.sqrt();
                if x == 0.0 {
                    x = init.p_motor_target;
                }
                let y = (x / (params.gain() * params.coupling(p_in))).min(params.y_max);
                let delivered = params.gain() * y * params.coupling(p_in);
                self.ctrl = ControllerState {
                    p_motor_target: x,
                    y_control: y,
                    filt_human: p_out,
                    filt_motor: delivered,
                };
                self.plant = PlantState {
                    p_motor_actual: delivered,
                    wheel_power: delivered + p_out,
                };
                self.last_assist = delivered;
                p_in
            }
        };
        if let Some(v) = self.ventilation.as_mut() {
            v.vr_state = init.vr.unwrap_or_else(|| v.steady_state(p_in));
        }
        Ok(())
    }

    fn first_pedal_power(&self, assist: f64) -> f64 {
        match self.human_override {
            Some(w) => w,
            None => self.script.human.response(0.0, assist),
        }
    }

    /// Pedal power `p` with `p = response(sqrt(f(E_c p)))`, found by bisection.
    fn equilibrium_pedal_power(&self, m_star: f64) -> Result<f64> {
        if let Some(w) = self.human_override {
            return Ok(w);
        }
        let e_c = self.script.plant.e_crank;
        let human = &self.script.human;
        let gap = |p: f64| -> Result<f64> {
            let x = schedule::f_gain(e_c * p, m_star, &self.cfg.schedule)?.sqrt();
            Ok(human.response(0.0, x) - p)
        };
        let (mut lo, mut hi) = (0.0, human.p_human_max);
        if gap(lo)? <= 0.0 {
            return Ok(lo);
        }
        if gap(hi)? >= 0.0 {
            return Ok(hi);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if gap(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn m_star_at(&self, t: f64) -> Result<f64> {
        match self.m_star_override {
            Some(m) => Ok(m),
            None => self.script.m_star(t),
        }
    }

    pub fn script(&self) -> &ScenarioScript {
        &self.script
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    /// Index of the next tick to be computed.
    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    /// Time of the next tick.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.dt_sample
    }

    pub fn controller_state(&self) -> ControllerState {
        self.ctrl
    }

    pub fn human_power_override(&self) -> Option<f64> {
        self.human_override
    }

    pub fn set_human_power(&mut self, watts: f64) -> Result<()> {
        let max = self.script.human.p_human_max;
        if !(watts.is_finite() && (0.0..=max).contains(&watts)) {
            return Err(Error::domain("human power", watts, format!("[0, {max}] W")));
        }
        self.human_override = Some(watts);
        Ok(())
    }

    pub fn set_m_star(&mut self, m_star: f64) -> Result<()> {
        self.cfg.schedule.check_m_star(m_star)?;
        self.m_star_override = Some(m_star);
        Ok(())
    }

    /// Apply a command before the next tick. `Reset` rebuilds the initial state.
    pub fn apply(&mut self, command: Command) -> Result<()> {
        match command {
            Command::SetHumanPower { watts } => self.set_human_power(watts),
            Command::SetMStar { m_star } => self.set_m_star(m_star),
            Command::ClearMStar => {
                self.m_star_override = None;
                Ok(())
            }
            Command::Pause | Command::Resume => Ok(()),
            Command::Reset => {
                *self = Self::build(&self.script, self.live)?;
                Ok(())
            }
        }
    }

    /// Compute one tick: cyclist, motor, controller, ventilation.
    pub fn step(&mut self) -> Result<StepOutput> {
        let dt = self.cfg.dt_sample;
        let t = self.time();
        let m_star = self.m_star_at(t)?;
        let (p_in, human_capped) = match self.human_override {
            Some(w) => (w, false),
            None => {
                let human = &self.script.human;
                let p = human_tick(human, &mut self.human, t, self.last_assist)?;
                (p, p >= human.p_human_max)
            }
        };
        let plant = plant_tick(self.plant, self.ctrl.y_control, p_in, dt, &self.script.plant)?;
        let out = controller_tick(
            self.ctrl,
            TickInput {
                t,
                p_human_raw: p_in,
                p_motor_actual: plant.p_motor_actual,
                m_star,
            },
            &self.cfg,
        )?;
        let mut record = out.record;
        if let Some(v) = self.ventilation {
            let v = crate::humans::ventilation_tick(v, p_in, dt)?;
            record.ventilation_rate = v.vr_state;
            self.ventilation = Some(v);
        }
        self.ctrl = out.state;
        self.plant = plant;
        self.last_assist = plant.p_motor_actual;
        self.tick += 1;
        Ok(StepOutput {
            record,
            fault: out.fault,
            human_capped,
        })
    }
}

/// Tracking statistics over one stretch of constant mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub mode: Mode,
    pub t_start: f64,
    pub t_end: f64,
    pub ticks: usize,
    /// Max of `|m - m*|`.
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub ticks: usize,
    pub fault: Option<FaultMarker>,
    pub phases: Vec<PhaseStats>,
    pub cooperative_max_abs_error: f64,
    pub cooperative_mean_abs_error: f64,
    /// Ticks at which the cyclist model was capped (runaway indicator).
    pub human_cap_hits: usize,
    /// Ticks with the throttle pinned at either end of its range.
    pub throttle_saturated_ticks: usize,
    pub violations: usize,
    pub certificate: Option<TrajectoryReportCounts>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReportCounts {
    pub checked: certificates::BoundCounts,
    pub skipped: certificates::BoundCounts,
}

impl Summary {
    fn build(name: &str, log: &[TickRecord], y_max: f64) -> Self {
        let mut phases: Vec<PhaseStats> = vec![];
        let mut sums: Vec<f64> = vec![];
        for rec in log.iter().filter(|r| !r.idle) {
            let err = (rec.sample.ratio_m - rec.m_star).abs();
            match phases.last_mut() {
                Some(p) if p.mode == rec.mode => {
                    p.t_end = rec.t();
                    p.ticks += 1;
                    p.max_abs_error = p.max_abs_error.max(err);
                    *sums.last_mut().unwrap() += err;
                }
                _ => {
                    phases.push(PhaseStats {
                        mode: rec.mode,
                        t_start: rec.t(),
                        t_end: rec.t(),
                        ticks: 1,
                        max_abs_error: err,
                        mean_abs_error: 0.0,
                    });
                    sums.push(err);
                }
            }
        }
        for (p, s) in phases.iter_mut().zip(&sums) {
            p.mean_abs_error = s / p.ticks as f64;
        }
        let coop: Vec<&PhaseStats> = phases.iter().filter(|p| p.mode == Mode::Cooperative).collect();
        let coop_ticks: usize = coop.iter().map(|p| p.ticks).sum();
        let coop_sum: f64 = phases
            .iter()
            .zip(&sums)
            .filter(|(p, _)| p.mode == Mode::Cooperative)
            .map(|(_, s)| s)
            .sum();
        Self {
            name: name.to_string(),
            ticks: log.len(),
            fault: None,
            cooperative_max_abs_error: coop.iter().map(|p| p.max_abs_error).fold(0.0, f64::max),
            cooperative_mean_abs_error: if coop_ticks > 0 {
                coop_sum / coop_ticks as f64
            } else {
                0.0
            },
            phases,
            human_cap_hits: 0,
            throttle_saturated_ticks: log
                .iter()
                .filter(|r| r.y_control <= 0.0 || r.y_control >= y_max)
                .count(),
            violations: 0,
            certificate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub log: Vec<TickRecord>,
    pub constants: Option<CertificateConstants>,
    pub report: Option<TrajectoryReport>,
    pub fault: Option<FaultMarker>,
    pub summary: Summary,
}

impl RunResult {
    pub fn violations(&self) -> &[certificates::BoundViolation] {
        self.report.as_ref().map(|r| r.violations.as_slice()).unwrap_or(&[])
    }

    /// No fault and no certificate violation.
    pub fn is_clean(&self) -> bool {
        self.fault.is_none() && self.violations().is_empty()
    }
}

/// Certify `log` against the constants of `script`'s certify section, with
/// the analytic reference rate of the script.
pub fn certify_log(
    script: &ScenarioScript,
    log: &[TickRecord],
) -> Result<Option<(CertificateConstants, TrajectoryReport)>> {
    let Some(options) = script.certify.options() else {
        return Ok(None);
    };
    let cfg = script.controller_config();
    let constants =
        certificates::compute_constants(&cfg.schedule, script.certify.p_h_min, script.certify.p_h_max, options)?;
    let rates = log
        .iter()
        .map(|r| script.m_star_rate(r.t()))
        .collect::<Result<Vec<_>>>()?;
    let report = certificates::check_trajectory_with(
        log,
        &constants,
        CheckOptions {
            m_star_rate: Some(&rates),
            abs_tolerance: cfg.integrator_tolerance(),
            ..CheckOptions::default()
        },
    );
    Ok(Some((constants, report)))
}

/// Run `script` to completion, or to its first fault.
pub fn run_scenario(script: &ScenarioScript) -> Result<RunResult> {
    script.validate()?;
    if let Some(options) = script.certify.options() {
        // surface certificate configuration errors before tick 0
        certificates::compute_constants(
            &script.controller_config().schedule,
            script.certify.p_h_min,
            script.certify.p_h_max,
            options,
        )?;
    }
    let mut sim = Simulation::new(script)?;
    let mut log = Vec::with_capacity(script.n_periods() + 1);
    let mut fault = None;
    let mut cap_hits = 0;
    for _ in 0..=script.n_periods() {
        let out = sim.step()?;
        let t = out.record.t();
        log.push(out.record);
        cap_hits += usize::from(out.human_capped);
        if let Some(reason) = out.fault {
            fault = Some(FaultMarker { t, reason });
            break;
        }
    }
    let certified = certify_log(script, &log)?;
    let mut summary = Summary::build(&script.name, &log, script.plant.y_max);
    summary.fault = fault.clone();
    summary.human_cap_hits = cap_hits;
    let (constants, report) = match certified {
        Some((c, r)) => {
            summary.violations = r.violations.len();
            summary.certificate = Some(TrajectoryReportCounts {
                checked: r.checked,
                skipped: r.skipped,
            });
            (Some(c), Some(r))
        }
        None => (None, None),
    };
    Ok(RunResult {
        log,
        constants,
        report,
        fault,
        summary,
    })
}

/// Recompute a live session offline from its command record.
///
/// Commands are applied before the tick whose index they carry, in record order.
pub fn replay(script: &ScenarioScript, commands: &[RecordedCommand], n_ticks: u64) -> Result<Vec<TickRecord>> {
    let mut sim = Simulation::live(script)?;
    let mut log = Vec::with_capacity(n_ticks as usize);
    let mut pending = commands.iter().peekable();
    for k in 0..n_ticks {
        while let Some(c) = pending.next_if(|c| c.tick <= k) {
            sim.apply(c.command)?;
        }
        log.push(sim.step()?.record);
    }
    Ok(log)
}
