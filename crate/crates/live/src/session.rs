//! One simulation loop per session. The loop task owns the simulation;
//! everything else talks to it through the mailbox.

use std::collections::VecDeque;
use std::time::Duration;

use pitchfork_assist::harness::{Command, RecordedCommand, ScenarioScript, Simulation};
use pitchfork_assist::TickRecord;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::{interval_at, Instant, MissedTickBehavior};

use crate::protocol::{Ack, CommandRecord, ErrorBody, ServerMessage, SessionInfo, TickMessage};

/// Ticks kept for the log dump; older ones are dropped.
pub const LOG_CAPACITY: usize = 100_000;
const FANOUT_CAPACITY: usize = 1024;
const MAILBOX_CAPACITY: usize = 256;
const MAX_TIME_SCALE: f64 = 1000.0;

pub(crate) enum Envelope {
    Command(Command, oneshot::Sender<Result<Ack, ErrorBody>>),
    Info(oneshot::Sender<(SessionInfo, Option<TickMessage>)>),
    Attach(oneshot::Sender<Attachment>),
    Record(oneshot::Sender<CommandRecord>),
    Log(oneshot::Sender<Vec<TickRecord>>),
}

/// A new subscriber: current status, the latest tick and every message
/// published after both were taken.
#[derive(Debug)]
pub struct Attachment {
    pub info: SessionInfo,
    pub latest: Option<TickMessage>,
    pub messages: broadcast::Receiver<ServerMessage>,
}

/// Cloneable access to a running session. Only the loop task holds the
/// fan-out sender, so subscriptions close when the session stops.
#[derive(Debug, Clone)]
pub struct SessionHandle {
    id: String,
    mailbox: mpsc::Sender<Envelope>,
}

impl std::fmt::Debug for Envelope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Envelope")
    }
}

fn gone() -> ErrorBody {
    ErrorBody::new("session has stopped")
}

impl SessionHandle {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub async fn attach(&self) -> Result<Attachment, ErrorBody> {
        self.ask(Envelope::Attach).await
    }

    async fn ask<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Envelope) -> Result<T, ErrorBody> {
        let (tx, rx) = oneshot::channel();
        self.mailbox.send(make(tx)).await.map_err(|_| gone())?;
        rx.await.map_err(|_| gone())
    }

    /// Queue `command` for the next tick boundary.
    pub async fn command(&self, command: Command) -> Result<Ack, ErrorBody> {
        self.ask(|tx| Envelope::Command(command, tx)).await?
    }

    /// Status and the most recent tick of the current epoch.
    pub async fn info(&self) -> Result<(SessionInfo, Option<TickMessage>), ErrorBody> {
        self.ask(Envelope::Info).await
    }

    pub async fn record(&self) -> Result<CommandRecord, ErrorBody> {
        self.ask(Envelope::Record).await
    }

    pub async fn log(&self) -> Result<Vec<TickRecord>, ErrorBody> {
        self.ask(Envelope::Log).await
    }
}

/// Check a command against the session's ranges without applying it.
pub fn validate_command(command: &Command, script: &ScenarioScript) -> Result<(), ErrorBody> {
    match *command {
        Command::SetHumanPower { watts } => {
            let max = script.human.p_human_max;
            if watts.is_finite() && (0.0..=max).contains(&watts) {
                Ok(())
            } else {
                Err(ErrorBody {
                    error: format!("human power {watts} W is outside [0, {max}] W"),
                    valid_range: Some([0.0, max]),
                })
            }
        }
        Command::SetMStar { m_star } => {
            let eta = script.controller.schedule.eta;
            if m_star.is_finite() && (eta..=1.0).contains(&m_star) {
                Ok(())
            } else {
                Err(ErrorBody {
                    error: format!("m* = {m_star} is outside [{eta}, 1]"),
                    valid_range: Some([eta, 1.0]),
                })
            }
        }
        Command::ClearMStar | Command::Pause | Command::Resume | Command::Reset => Ok(()),
    }
}

pub fn validate_time_scale(time_scale: f64) -> Result<(), ErrorBody> {
    if time_scale.is_finite() && time_scale > 0.0 && time_scale <= MAX_TIME_SCALE {
        Ok(())
    } else {
        Err(ErrorBody {
            error: format!("time_scale {time_scale} is outside (0, {MAX_TIME_SCALE}]"),
            valid_range: Some([0.0, MAX_TIME_SCALE]),
        })
    }
}

struct Session {
    id: String,
    script: ScenarioScript,
    time_scale: f64,
    sim: Simulation,
    epoch: u64,
    paused: bool,
    faulted: bool,
    live_m_star: Option<f64>,
    /// Accepted commands waiting for the next boundary.
    pending: Vec<Command>,
    record: Vec<RecordedCommand>,
    log: VecDeque<TickRecord>,
    latest: Option<TickMessage>,
    fanout: broadcast::Sender<ServerMessage>,
}

impl Session {
    /// Where a command accepted now will take effect, counting queued resets.
    fn effective_position(&self) -> Ack {
        let resets = self.pending.iter().filter(|c| matches!(c, Command::Reset)).count() as u64;
        Ack {
            epoch: self.epoch + resets,
            applies_at_tick: if resets > 0 { 0 } else { self.sim.tick_index() },
        }
    }

    fn accept(&mut self, command: Command) -> Result<Ack, ErrorBody> {
        validate_command(&command, &self.script)?;
        let ack = self.effective_position();
        self.pending.push(command);
        Ok(ack)
    }

    fn info(&self) -> SessionInfo {
        SessionInfo {
            session_id: self.id.clone(),
            epoch: self.epoch,
            next_index: self.sim.tick_index(),
            paused: self.paused,
            faulted: self.faulted,
            dt_sample: self.script.controller.dt_sample,
            time_scale: self.time_scale,
            p_human_max: self.script.human.p_human_max,
            eta: self.script.controller.schedule.eta,
            live_human_power: self.sim.human_power_override().unwrap_or(0.0),
            live_m_star: self.live_m_star,
        }
    }

    fn publish(&self, msg: ServerMessage) {
        // no subscribers is fine: delivery is best effort
        let _ = self.fanout.send(msg);
    }

    fn apply(&mut self, command: Command) {
        let index = self.sim.tick_index();
        match command {
            Command::Pause => {
                self.paused = true;
                self.publish(ServerMessage::Paused {
                    epoch: self.epoch,
                    index,
                });
            }
            Command::Resume => {
                self.paused = false;
                self.publish(ServerMessage::Resumed {
                    epoch: self.epoch,
                    index,
                });
            }
            Command::Reset => {
                self.sim = Simulation::live(&self.script).expect("script was validated at creation");
                self.epoch += 1;
                self.faulted = false;
                self.live_m_star = None;
                self.record.clear();
                self.log.clear();
                self.latest = None;
                self.publish(ServerMessage::Reset { epoch: self.epoch });
                return;
            }
            Command::SetHumanPower { .. } | Command::SetMStar { .. } | Command::ClearMStar => {
                self.sim.apply(command).expect("command was validated on receipt");
                match command {
                    Command::SetMStar { m_star } => self.live_m_star = Some(m_star),
                    Command::ClearMStar => self.live_m_star = None,
                    _ => {}
                }
            }
        }
        self.record.push(RecordedCommand { tick: index, command });
    }

    /// Tick boundary: apply queued commands, then compute one tick.
    fn boundary(&mut self) {
        for command in std::mem::take(&mut self.pending) {
            self.apply(command);
        }
        if self.paused || self.faulted {
            return;
        }
        let index = self.sim.tick_index();
        let t = self.sim.time();
        let (record, fault) = match self.sim.step() {
            Ok(out) => (Some(out.record), out.fault),
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(r) = record {
            let msg = TickMessage::new(self.epoch, index, &r);
            if self.log.len() == LOG_CAPACITY {
                self.log.pop_front();
            }
            self.log.push_back(r);
            self.latest = Some(msg);
            self.publish(ServerMessage::Tick(msg));
        }
        if let Some(reason) = fault {
            self.faulted = true;
            self.publish(ServerMessage::Fault {
                epoch: self.epoch,
                index,
                t,
                reason,
            });
        }
    }

    fn handle(&mut self, envelope: Envelope) {
        match envelope {
            Envelope::Command(command, reply) => {
                let _ = reply.send(self.accept(command));
            }
            Envelope::Info(reply) => {
                let _ = reply.send((self.info(), self.latest));
            }
            Envelope::Attach(reply) => {
                let _ = reply.send(Attachment {
                    info: self.info(),
                    latest: self.latest,
                    messages: self.fanout.subscribe(),
                });
            }
            Envelope::Record(reply) => {
                let _ = reply.send(CommandRecord {
                    session_id: self.id.clone(),
                    epoch: self.epoch,
                    ticks_computed: self.sim.tick_index(),
                    script: self.script.clone(),
                    commands: self.record.clone(),
                });
            }
            Envelope::Log(reply) => {
                let _ = reply.send(self.log.iter().copied().collect());
            }
        }
    }
}

/// Build the session state and start its loop. Fails without side effects
/// when the script or time scale is invalid.
pub fn spawn(
    id: String,
    script: ScenarioScript,
    time_scale: f64,
    paused: bool,
) -> Result<(SessionHandle, JoinHandle<()>), ErrorBody> {
    validate_time_scale(time_scale)?;
    let sim = Simulation::live(&script).map_err(|e| ErrorBody::new(e.to_string()))?;
    let (mailbox, mut rx) = mpsc::channel(MAILBOX_CAPACITY);
    let (fanout, _) = broadcast::channel(FANOUT_CAPACITY);
    let period = Duration::from_secs_f64(script.controller.dt_sample / time_scale);
    let mut session = Session {
        id: id.clone(),
        script,
        time_scale,
        sim,
        epoch: 0,
        paused,
        faulted: false,
        live_m_star: None,
        pending: vec![],
        record: vec![],
        log: VecDeque::new(),
        latest: None,
        fanout,
    };
    let task = tokio::spawn(async move {
        // the first tick is computed one period after start, which leaves
        // room for a subscriber to attach before t = 0 is published
        let mut clock = interval_at(Instant::now() + period, period);
        clock.set_missed_tick_behavior(MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                biased;
                envelope = rx.recv() => match envelope {
                    Some(e) => session.handle(e),
                    None => break,
                },
                _ = clock.tick() => session.boundary(),
            }
        }
    });
    Ok((SessionHandle { id, mailbox }, task))
}
