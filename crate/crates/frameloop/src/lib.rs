//! Deterministic replay of captured cloud-gaming sessions.
//!
//! A captured session is a trace of video frames (downlink) and joystick
//! commands (uplink) plus a shared *sync order* interleaving their ids.
//! Two agents replay it against each other: the [`server`] streams frames
//! at a paced rate and pauses at command dependency points; the [`player`]
//! verifies incoming frame ids against the sync order, emits the captured
//! command groups as reactions, and reports windowed ACK/NACK status. Both
//! sides carry recovery loops for command loss (previous-frame
//! retransmission answered by a duplicate-triggered command re-send) and
//! frame loss (windowed NACK with `w`-frame rollback).
//!
//! Sessions run either in virtual time over a seeded channel model
//! ([`sim::simulate_session`]) or over real UDP sockets ([`udp`]). Both
//! produce the same event-log schema, from which [`metrics`] derives frame
//! and command rates, loss reports, and action/reaction response times.
//!
//! The `examples/` directory has one runnable walkthrough per capability;
//! start with `lossless_replay`.

pub mod channel;
pub mod config;
pub mod event_log;
pub mod metrics;
pub mod player;
pub mod server;
pub mod sim;
pub mod trace;
pub mod tracegen;
pub mod udp;
pub mod wire;

pub use channel::{ChannelConfig, DirectionConfig, FaultAction, FaultMatch, ScriptedFault};
pub use event_log::{Actor, EventKind, SimEvent};
pub use player::{PlayerAction, PlayerAgent, PlayerParams};
pub use server::{ServerAction, ServerAgent, ServerParams};
pub use sim::{simulate_session, SessionLog, SessionOutcome, SimError, SimSetup};
pub use trace::{
    CaptureTrace, CommandRecord, FrameRecord, PayloadStore, SyncOrder, SyncToken, TokenKind,
    TraceError,
};
pub use wire::{CommandMsg, FrameChunk, FramePayloadHeader, StatusMsg, WireError, WireMessage};
