//! Discrete-event session simulation.
//!
//! Runs both agents to completion in virtual time over the seeded channel
//! model: a priority queue of timed events (agent wakes, datagram
//! deliveries), no sleeping, no wall clock. All randomness comes from the
//! channel's seeded streams, so a setup reproduces its event log
//! byte-for-byte.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::channel::{
    ChannelConfig, DatagramKind, Direction, DirectionChannel, ScriptedFault, Verdict,
};
use crate::event_log::{
    command_emitted_subject, command_wire_subject, frame_wire_subject, status_emitted_subject,
    status_wire_subject, Actor, EventKind, SimEvent,
};
use crate::player::{PlayerAction, PlayerAgent, PlayerParams};
use crate::server::{ServerAction, ServerAgent, ServerParams};
use crate::trace::{validate_trace, CaptureTrace, PayloadStore};
use crate::wire::{
    decode_message, encode_chunk, encode_command, encode_frame, encode_status,
    read_frame_payload_header, WireMessage,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Config(String),
    #[error("virtual horizon of {horizon_us}us exceeded; server: {server_state}; player: {player_state}")]
    HorizonExceeded {
        horizon_us: u64,
        server_state: String,
        player_state: String,
        events: Vec<SimEvent>,
    },
    #[error(
        "event queue drained without completion; server: {server_state}; player: {player_state}"
    )]
    Deadlock {
        server_state: String,
        player_state: String,
        events: Vec<SimEvent>,
    },
}

/// How a session ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionOutcome {
    Done,
    Aborted(String),
}

/// A finished session: the totally ordered event log plus its outcome.
#[derive(Debug, Clone)]
pub struct SessionLog {
    pub events: Vec<SimEvent>,
    pub outcome: SessionOutcome,
}

/// Everything a simulated session needs.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub trace: CaptureTrace,
    pub payloads: PayloadStore,
    pub server: ServerParams,
    pub player: PlayerParams,
    pub channel: ChannelConfig,
    pub faults: Vec<ScriptedFault>,
    pub horizon_us: u64,
}

impl SimSetup {
    /// Lossless defaults for a trace: agents at the trace's fps, empty
    /// channel, and a horizon of 20x the nominal streaming duration.
    pub fn new(trace: CaptureTrace, payloads: PayloadStore) -> Self {
        let server = ServerParams::new(trace.fps);
        let player = PlayerParams {
            stall_timeout_us: 4 * server.frame_interval_us(),
            ..PlayerParams::new()
        };
        let nominal = trace.frames.len() as u64 * server.frame_interval_us();
        SimSetup {
            trace,
            payloads,
            server,
            player,
            channel: ChannelConfig::lossless(),
            faults: Vec::new(),
            horizon_us: 20 * nominal + 5_000_000,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let violations = validate_trace(&self.trace);
        if let Some(v) = violations.first() {
            return Err(SimError::Config(format!("trace invalid: {v}")));
        }
        if self.trace.frames.is_empty() {
            return Err(SimError::Config("trace has no frames".into()));
        }
        self.channel
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        if self.server.window_w != self.player.window_w {
            return Err(SimError::Config(format!(
                "window_w mismatch: server {} vs player {}",
                self.server.window_w, self.player.window_w
            )));
        }
        if self.server.window_w == 0 {
            return Err(SimError::Config("window_w must be >= 1".into()));
        }
        if self.horizon_us == 0 {
            return Err(SimError::Config("horizon_us must be > 0".into()));
        }
        for frame in &self.trace.frames {
            let payload = self.payloads.get(&frame.id).ok_or_else(|| {
                SimError::Config(format!("no payload bytes for frame {}", frame.id))
            })?;
            let header = read_frame_payload_header(payload)
                .map_err(|e| SimError::Config(format!("frame {}: {e}", frame.id)))?;
            if header.frame_id != frame.id {
                return Err(SimError::Config(format!(
                    "frame {} payload carries header id {}",
                    frame.id, header.frame_id
                )));
            }
        }
        Ok(())
    }
}

enum Ev {
    ServerWake,
    PlayerWake,
    ToServer { bytes: Vec<u8>, subject: String },
    ToPlayer { bytes: Vec<u8>, subject: String },
}

struct Sim {
    server: ServerAgent,
    player: PlayerAgent,
    downlink: DirectionChannel,
    uplink: DirectionChannel,
    payloads: PayloadStore,
    max_chunk: u16,
    queue: BinaryHeap<Reverse<(u64, u64, usize)>>,
    slots: Vec<Option<Ev>>,
    seq: u64,
    events: Vec<SimEvent>,
}

impl Sim {
    fn push(&mut self, time_us: u64, ev: Ev) {
        self.seq += 1;
        self.slots.push(Some(ev));
        self.queue
            .push(Reverse((time_us, self.seq, self.slots.len() - 1)));
    }

    fn log(&mut self, time_us: u64, actor: Actor, kind: EventKind, subject: String) {
        self.events
            .push(SimEvent::new(time_us, actor, kind, subject));
    }

    fn send_downlink(&mut self, bytes: Vec<u8>, kind: DatagramKind, subject: String, now: u64) {
        self.log(now, Actor::Server, EventKind::Sent, subject.clone());
        match self.downlink.process(kind, now) {
            Verdict::Drop => self.log(now, Actor::Channel, EventKind::Dropped, subject),
            Verdict::Deliver { arrival_us } => {
                self.push(arrival_us, Ev::ToPlayer { bytes, subject });
            }
        }
    }

    fn send_uplink(&mut self, bytes: Vec<u8>, kind: DatagramKind, subject: String, now: u64) {
        self.log(now, Actor::Player, EventKind::Sent, subject.clone());
        match self.uplink.process(kind, now) {
            Verdict::Drop => self.log(now, Actor::Channel, EventKind::Dropped, subject),
            Verdict::Deliver { arrival_us } => {
                self.push(arrival_us, Ev::ToServer { bytes, subject });
            }
        }
    }

    fn pump_server(&mut self, now: u64) -> Option<SessionOutcome> {
        loop {
            match self.server.next_action(now) {
                ServerAction::SendFrame {
                    frame_id,
                    retransmission,
                } => {
                    if retransmission {
                        self.log(
                            now,
                            Actor::Server,
                            EventKind::Retransmitted,
                            format!("frame_id={frame_id}"),
                        );
                    }
                    let payload = self.payloads[&frame_id].clone();
                    let chunks = encode_frame(frame_id, now, &payload, self.max_chunk)
                        .expect("payloads validated at setup");
                    for chunk in &chunks {
                        let subject =
                            frame_wire_subject(frame_id, chunk.chunk_index, chunk.total_chunks);
                        self.send_downlink(
                            encode_chunk(chunk),
                            DatagramKind::Frame { frame_id },
                            subject,
                            now,
                        );
                    }
                }
                ServerAction::Wait { until_us } => {
                    debug_assert!(until_us > now, "wait deadline must move time forward");
                    self.push(until_us, Ev::ServerWake);
                    return None;
                }
                ServerAction::Done => {
                    self.log(now, Actor::Server, EventKind::Done, String::new());
                    return Some(SessionOutcome::Done);
                }
                ServerAction::Abort { reason } => {
                    self.log(
                        now,
                        Actor::Server,
                        EventKind::Aborted,
                        format!("reason={}", sanitize(&reason)),
                    );
                    return Some(SessionOutcome::Aborted(reason));
                }
            }
        }
    }

    fn handle_player_actions(&mut self, actions: Vec<PlayerAction>, now: u64) {
        for action in actions {
            match action {
                PlayerAction::StoreFrame { frame_id, .. } => {
                    self.log(
                        now,
                        Actor::Player,
                        EventKind::FrameStored,
                        format!("frame_id={frame_id}"),
                    );
                }
                PlayerAction::SendCommand {
                    msg,
                    gate_frame_id,
                    resend,
                    lead,
                } => {
                    self.log(
                        now,
                        Actor::Player,
                        EventKind::CommandEmitted,
                        command_emitted_subject(&msg, gate_frame_id, resend, lead),
                    );
                    let bytes = encode_command(&msg).expect("agent commands are in-domain");
                    self.send_uplink(
                        bytes,
                        DatagramKind::Command {
                            command_id: msg.command_id,
                        },
                        command_wire_subject(&msg),
                        now,
                    );
                }
                PlayerAction::SendStatus { msg, flush } => {
                    self.log(
                        now,
                        Actor::Player,
                        EventKind::StatusEmitted,
                        status_emitted_subject(&msg, flush),
                    );
                    let bytes = encode_status(&msg).expect("agent statuses are in-domain");
                    self.send_uplink(bytes, DatagramKind::Status, status_wire_subject(&msg), now);
                }
            }
        }
    }

    fn schedule_player_wake(&mut self, now: u64) {
        if let Some(wake) = self.player.next_wake_us() {
            self.push(wake.max(now + 1), Ev::PlayerWake);
        }
    }

    /// Settle datagrams still in flight when the session ends: the channel
    /// delivered them, the agents just stopped listening. Keeps the log's
    /// sent/delivered/dropped accounting exact.
    fn drain_in_flight(&mut self) {
        while let Some(Reverse((time_us, _, slot))) = self.queue.pop() {
            match self.slots[slot].take() {
                Some(Ev::ToServer { subject, .. }) | Some(Ev::ToPlayer { subject, .. }) => {
                    self.log(time_us, Actor::Channel, EventKind::Delivered, subject);
                }
                _ => {}
            }
        }
    }
}

fn sanitize(reason: &str) -> String {
    reason
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Run a full session in virtual time, returning the ordered event log.
pub fn simulate_session(setup: &SimSetup) -> Result<SessionLog, SimError> {
    setup.validate()?;
    let mut sim = Sim {
        server: ServerAgent::new(&setup.trace.sync, setup.server.clone()),
        player: PlayerAgent::new(
            &setup.trace.sync,
            &setup.trace.commands,
            setup.player.clone(),
        ),
        downlink: DirectionChannel::new(
            Direction::Downlink,
            setup.channel.downlink,
            setup.channel.seed,
            &setup.faults,
        ),
        uplink: DirectionChannel::new(
            Direction::Uplink,
            setup.channel.uplink,
            setup.channel.seed,
            &setup.faults,
        ),
        payloads: setup.payloads.clone(),
        max_chunk: setup.server.max_chunk_payload,
        queue: BinaryHeap::new(),
        slots: Vec::new(),
        seq: 0,
        events: Vec::new(),
    };
    sim.push(0, Ev::ServerWake);
    sim.schedule_player_wake(0);

    while let Some(Reverse((time_us, _, slot))) = sim.queue.pop() {
        if time_us > setup.horizon_us {
            return Err(SimError::HorizonExceeded {
                horizon_us: setup.horizon_us,
                server_state: format!("{:?}", sim.server),
                player_state: format!("{:?}", sim.player),
                events: sim.events,
            });
        }
        let ev = sim.slots[slot].take().expect("each queue entry fires once");
        let outcome = match ev {
            Ev::ServerWake => sim.pump_server(time_us),
            Ev::PlayerWake => {
                let actions = sim.player.on_tick(time_us);
                sim.handle_player_actions(actions, time_us);
                sim.schedule_player_wake(time_us);
                None
            }
            Ev::ToPlayer { bytes, subject } => {
                sim.log(time_us, Actor::Channel, EventKind::Delivered, subject);
                match decode_message(&bytes) {
                    Ok(WireMessage::Frame(chunk)) => {
                        let actions = sim.player.on_chunk(chunk, time_us);
                        sim.handle_player_actions(actions, time_us);
                        sim.schedule_player_wake(time_us);
                    }
                    other => log::debug!("player ignoring non-frame downlink: {other:?}"),
                }
                None
            }
            Ev::ToServer { bytes, subject } => {
                sim.log(time_us, Actor::Channel, EventKind::Delivered, subject);
                match decode_message(&bytes) {
                    Ok(WireMessage::Command(msg)) => sim.server.on_command(&msg, time_us),
                    Ok(WireMessage::Status(msg)) => sim.server.on_status(&msg, time_us),
                    other => log::debug!("server ignoring non-uplink message: {other:?}"),
                }
                sim.pump_server(time_us)
            }
        };
        if let Some(outcome) = outcome {
            sim.drain_in_flight();
            return Ok(SessionLog {
                events: sim.events,
                outcome,
            });
        }
    }
    Err(SimError::Deadlock {
        server_state: format!("{:?}", sim.server),
        player_state: format!("{:?}", sim.player),
        events: sim.events,
    })
}
