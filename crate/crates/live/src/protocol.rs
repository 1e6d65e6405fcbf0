//! Wire messages. Every message is one JSON object. On the socket each one
//! travels as a single text frame terminated by `\n`.

use pitchfork_assist::harness::{Command, RecordedCommand, ScenarioScript};
use pitchfork_assist::{Mode, PowerSample, TickRecord};
use serde::{Deserialize, Serialize};

/// One computed tick. Field names follow the tick-log CSV columns, plus the
/// two fields needed to rebuild a [`TickRecord`] exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickMessage {
    pub epoch: u64,
    pub index: u64,
    pub t: f64,
    pub m_star: f64,
    pub m: f64,
    pub p_human_raw: f64,
    pub p_human_filt: f64,
    pub p_motor_filt: f64,
    pub p_motor_target: f64,
    pub p_motor_actual: f64,
    pub y: f64,
    pub p_threshold: f64,
    pub mode: Mode,
    pub vr: f64,
    pub idle: bool,
}

impl TickMessage {
    pub fn new(epoch: u64, index: u64, r: &TickRecord) -> Self {
        Self {
            epoch,
            index,
            t: r.sample.t,
            m_star: r.m_star,
            m: r.sample.ratio_m,
            p_human_raw: r.sample.p_human_raw,
            p_human_filt: r.sample.p_human_out,
            p_motor_filt: r.sample.p_motor_out,
            p_motor_target: r.p_motor_target,
            p_motor_actual: r.p_motor_actual,
            y: r.y_control,
            p_threshold: r.p_threshold,
            mode: r.mode,
            vr: r.ventilation_rate,
            idle: r.idle,
        }
    }

    pub fn record(&self) -> TickRecord {
        TickRecord {
            sample: PowerSample {
                t: self.t,
                p_human_raw: self.p_human_raw,
                p_human_out: self.p_human_filt,
                p_motor_out: self.p_motor_filt,
                ratio_m: self.m,
            },
            m_star: self.m_star,
            p_motor_target: self.p_motor_target,
            p_motor_actual: self.p_motor_actual,
            y_control: self.y,
            p_threshold: self.p_threshold,
            mode: self.mode,
            ventilation_rate: self.vr,
            idle: self.idle,
        }
    }
}

/// Session status, also sent as the first socket message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub epoch: u64,
    /// Index of the next tick to be computed.
    pub next_index: u64,
    pub paused: bool,
    pub faulted: bool,
    pub dt_sample: f64,
    pub time_scale: f64,
    /// Slider bounds for the live pedal power are `[0, p_human_max]`.
    pub p_human_max: f64,
    /// Lower bound of the reference; the upper bound is 1.
    pub eta: f64,
    pub live_human_power: f64,
    pub live_m_star: Option<f64>,
}

/// A command was accepted and takes effect at the given tick boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub epoch: u64,
    pub applies_at_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_range: Option<[f64; 2]>,
}

impl ErrorBody {
    pub fn new(error: impl Into<String>) -> Self {
        Self {
            error: error.into(),
            valid_range: None,
        }
    }
}

/// Everything the server pushes on the socket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello(SessionInfo),
    Tick(TickMessage),
    /// The session restarted; ticks of the new epoch start at index 0.
    Reset {
        epoch: u64,
    },
    Paused {
        epoch: u64,
        index: u64,
    },
    Resumed {
        epoch: u64,
        index: u64,
    },
    /// The controller went safe-off; only a reset restarts the clock.
    Fault {
        epoch: u64,
        index: u64,
        t: f64,
        reason: String,
    },
    Ack(Ack),
    Error(ErrorBody),
}

impl ServerMessage {
    /// Newline-terminated JSON line.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("server messages always serialise");
        s.push('\n');
        s
    }
}

/// Body of `POST /sessions`. At most one of `builtin` and `script` may be set;
/// with neither the server's base scenario is used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub script: Option<ScenarioScript>,
    #[serde(default)]
    pub time_scale: Option<f64>,
    /// Start with the clock stopped; tick 0 is computed after `resume`.
    #[serde(default)]
    pub paused: bool,
}

/// Everything needed to recompute the current epoch offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub session_id: String,
    pub epoch: u64,
    pub ticks_computed: u64,
    pub script: ScenarioScript,
    pub commands: Vec<RecordedCommand>,
}

/// Commands accepted on the socket and by `POST /sessions/{id}/commands`.
pub type ClientMessage = Command;
