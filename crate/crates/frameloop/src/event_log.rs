//! The session event log shared by simulation and UDP replay.
//!
//! One CSV schema for both modes so the metrics pipeline never cares how a
//! session ran: header `time_us,actor,kind,subject`, subject as `k=v` pairs
//! separated by `;`. Rows are sorted by time; equal times keep emission
//! order.

use std::fmt;

use thiserror::Error;

use crate::wire::{AckKind, StatusKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LogError {
    #[error("malformed event log: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Actor {
    Server,
    Player,
    Channel,
}

impl Actor {
    fn as_str(self) -> &'static str {
        match self {
            Actor::Server => "server",
            Actor::Player => "player",
            Actor::Channel => "channel",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "server" => Some(Actor::Server),
            "player" => Some(Actor::Player),
            "channel" => Some(Actor::Channel),
            _ => None,
        }
    }
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Sent,
    Delivered,
    Dropped,
    Retransmitted,
    StatusEmitted,
    CommandEmitted,
    FrameStored,
    Aborted,
    Done,
}

impl EventKind {
    fn as_str(self) -> &'static str {
        match self {
            EventKind::Sent => "sent",
            EventKind::Delivered => "delivered",
            EventKind::Dropped => "dropped",
            EventKind::Retransmitted => "retransmitted",
            EventKind::StatusEmitted => "status_emitted",
            EventKind::CommandEmitted => "command_emitted",
            EventKind::FrameStored => "frame_stored",
            EventKind::Aborted => "aborted",
            EventKind::Done => "done",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "sent" => Some(EventKind::Sent),
            "delivered" => Some(EventKind::Delivered),
            "dropped" => Some(EventKind::Dropped),
            "retransmitted" => Some(EventKind::Retransmitted),
            "status_emitted" => Some(EventKind::StatusEmitted),
            "command_emitted" => Some(EventKind::CommandEmitted),
            "frame_stored" => Some(EventKind::FrameStored),
            "aborted" => Some(EventKind::Aborted),
            "done" => Some(EventKind::Done),
            _ => None,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One session event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub time_us: u64,
    pub actor: Actor,
    pub kind: EventKind,
    /// `k=v` pairs separated by `;`, e.g. `frame_id=4;retx=1`.
    pub subject: String,
}

impl SimEvent {
    pub fn new(time_us: u64, actor: Actor, kind: EventKind, subject: String) -> Self {
        debug_assert!(
            !subject.contains(',') && !subject.contains('\n'),
            "subject must stay CSV-safe: {subject:?}"
        );
        SimEvent {
            time_us,
            actor,
            kind,
            subject,
        }
    }

    /// Look up one `k=v` pair of the subject.
    pub fn get(&self, key: &str) -> Option<&str> {
        subject_get(&self.subject, key)
    }
}

/// Look up `key` in a `k=v;k=v` subject string.
pub fn subject_get<'a>(subject: &'a str, key: &str) -> Option<&'a str> {
    subject.split(';').find_map(|pair| {
        let (k, v) = pair.split_once('=')?;
        (k == key).then_some(v)
    })
}

const HEADER: &str = "time_us,actor,kind,subject";

/// Serialize a log; output is byte-deterministic for a given event list.
pub fn write_event_log(events: &[SimEvent]) -> Vec<u8> {
    let mut out = String::with_capacity(events.len() * 48 + HEADER.len() + 1);
    out.push_str(HEADER);
    out.push('\n');
    for e in events {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.time_us, e.actor, e.kind, e.subject
        ));
    }
    out.into_bytes()
}

/// Parse a log written by [`write_event_log`].
pub fn parse_event_log(bytes: &[u8]) -> Result<Vec<SimEvent>, LogError> {
    let text =
        std::str::from_utf8(bytes).map_err(|_| LogError::Malformed("log is not UTF-8".into()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        Some(h) => return Err(LogError::Malformed(format!("bad header {h:?}"))),
        None => return Err(LogError::Malformed("empty file".into())),
    }
    let mut events = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(4, ',');
        let (time, actor, kind, subject) =
            match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
                _ => {
                    return Err(LogError::Malformed(format!(
                        "row {}: expected 4 fields in {line:?}",
                        ln + 2
                    )))
                }
            };
        let time_us: u64 = time
            .parse()
            .map_err(|_| LogError::Malformed(format!("row {}: bad time {time:?}", ln + 2)))?;
        let actor = Actor::parse(actor)
            .ok_or_else(|| LogError::Malformed(format!("row {}: bad actor {actor:?}", ln + 2)))?;
        let kind = EventKind::parse(kind)
            .ok_or_else(|| LogError::Malformed(format!("row {}: bad kind {kind:?}", ln + 2)))?;
        events.push(SimEvent {
            time_us,
            actor,
            kind,
            subject: subject.to_string(),
        });
    }
    Ok(events)
}

// ── subject builders shared by the sim and UDP harnesses ────────

pub(crate) fn ack_kind_str(kind: AckKind) -> &'static str {
    match kind {
        AckKind::None => "none",
        AckKind::Ack => "ack",
        AckKind::Nack => "nack",
    }
}

pub(crate) fn status_kind_str(kind: StatusKind) -> &'static str {
    match kind {
        StatusKind::Ack => "ack",
        StatusKind::Nack => "nack",
    }
}

// Wire-level subjects carry only what the datagram bytes say, so sender and
// receiver logs describe a datagram identically. Sender-side context
// (retransmission, re-send) lives in the Retransmitted and CommandEmitted
// events instead.

/// Wire-level subject for a frame chunk datagram.
pub(crate) fn frame_wire_subject(frame_id: u32, chunk: u16, total: u16) -> String {
    format!("msg=frame;frame_id={frame_id};chunk={chunk};total={total}")
}

/// Wire-level subject for a command datagram.
pub(crate) fn command_wire_subject(msg: &crate::wire::CommandMsg) -> String {
    format!(
        "msg=command;command_id={};ack={};acked={}",
        msg.command_id,
        ack_kind_str(msg.ack_kind),
        msg.acked_frame_id
    )
}

/// Wire-level subject for a status datagram.
pub(crate) fn status_wire_subject(msg: &crate::wire::StatusMsg) -> String {
    format!(
        "msg=status;status={};window_end={};next_expected={}",
        status_kind_str(msg.kind),
        msg.window_end_frame_id,
        msg.next_expected_frame_id
    )
}

/// Agent-level subject for a command emission.
pub(crate) fn command_emitted_subject(
    msg: &crate::wire::CommandMsg,
    gate_frame_id: u32,
    resend: bool,
    lead: bool,
) -> String {
    format!(
        "command_id={};group={gate_frame_id};resend={};lead={};ack={};acked={}",
        msg.command_id,
        resend as u8,
        lead as u8,
        ack_kind_str(msg.ack_kind),
        msg.acked_frame_id
    )
}

/// Agent-level subject for a status emission.
pub(crate) fn status_emitted_subject(msg: &crate::wire::StatusMsg, flush: bool) -> String {
    format!(
        "status={};window_end={};next_expected={};flush={}",
        status_kind_str(msg.kind),
        msg.window_end_frame_id,
        msg.next_expected_frame_id,
        flush as u8
    )
}
