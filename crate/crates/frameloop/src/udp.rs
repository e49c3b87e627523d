//! Real-transport replay: the same agents driven by wall-clock timers and
//! UDP sockets.
//!
//! The server binds its command port and streams frames to the player's
//! frame port; commands and status reports come back the other way. Each
//! agent runs one receive loop feeding its single-threaded state machine,
//! and writes the same event-log schema as the simulator, so the metrics
//! pipeline is transport-agnostic. Delivery events carry the receiver's
//! clock; across real hosts the two clock domains are reported uncorrected.
//!
//! [`run_udp_pair`] wires both agents through loopback sockets in one
//! process with a shared clock, which is how the integration tests compare
//! UDP behaviour against simulation.

use std::fs;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::config::{
    load_commands, load_frames, load_sync, ConfigError, PlayerConfigFile, ServerConfigFile,
};
use crate::event_log::{
    command_emitted_subject, command_wire_subject, frame_wire_subject, status_emitted_subject,
    status_wire_subject, Actor, EventKind, SimEvent,
};
use crate::player::{PlayerAction, PlayerAgent, PlayerParams};
use crate::server::{ServerAction, ServerAgent, ServerParams};
use crate::sim::{SessionLog, SessionOutcome};
use crate::trace::{CaptureTrace, PayloadStore};
use crate::wire::{
    decode_message, encode_chunk, encode_command, encode_frame, encode_status, WireMessage,
};

#[derive(Debug, Error)]
pub enum UdpError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot resolve peer address {0}")]
    BadPeer(String),
    #[error("socket error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid setup: {0}")]
    Invalid(String),
}

/// How a UDP agent run ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UdpOutcome {
    Done,
    Aborted(String),
    /// Nothing heard from the peer within the configured window.
    PeerTimeout,
}

/// An agent run: its event log plus the outcome.
#[derive(Debug)]
pub struct UdpRun {
    pub events: Vec<SimEvent>,
    pub outcome: UdpOutcome,
}

/// Microsecond clock anchored at session start; shared between the two
/// agents of an in-process pair so their logs live in one time domain.
#[derive(Debug, Clone, Copy)]
pub struct Clock {
    t0: Instant,
}

impl Clock {
    pub fn new() -> Self {
        Clock { t0: Instant::now() }
    }

    pub fn now_us(&self) -> u64 {
        self.t0.elapsed().as_micros() as u64
    }
}

impl Default for Clock {
    fn default() -> Self {
        Self::new()
    }
}

const MAX_POLL_US: u64 = 50_000;

fn resolve(host: &str, port: u16) -> Result<SocketAddr, UdpError> {
    (host, port)
        .to_socket_addrs()
        .map_err(|_| UdpError::BadPeer(format!("{host}:{port}")))?
        .next()
        .ok_or_else(|| UdpError::BadPeer(format!("{host}:{port}")))
}

fn recv_ready(socket: &UdpSocket, buf: &mut [u8], wait_us: u64) -> Result<Option<usize>, UdpError> {
    socket.set_read_timeout(Some(Duration::from_micros(wait_us.clamp(1, MAX_POLL_US))))?;
    match socket.recv_from(buf) {
        Ok((n, _)) => Ok(Some(n)),
        Err(e)
            if e.kind() == std::io::ErrorKind::WouldBlock
                || e.kind() == std::io::ErrorKind::TimedOut =>
        {
            Ok(None)
        }
        Err(e) => Err(UdpError::Io(e)),
    }
}

/// Drive a server agent over a socket until it finishes.
pub fn server_loop(
    mut agent: ServerAgent,
    payloads: &PayloadStore,
    socket: &UdpSocket,
    player_addr: SocketAddr,
    clock: Clock,
    events: &mut Vec<SimEvent>,
) -> Result<UdpOutcome, UdpError> {
    let max_chunk = agent.params().max_chunk_payload;
    let mut buf = [0u8; 65_536];
    loop {
        let deadline = loop {
            let now = clock.now_us();
            match agent.next_action(now) {
                ServerAction::SendFrame {
                    frame_id,
                    retransmission,
                } => {
                    if retransmission {
                        events.push(SimEvent::new(
                            now,
                            Actor::Server,
                            EventKind::Retransmitted,
                            format!("frame_id={frame_id}"),
                        ));
                    }
                    let payload = payloads.get(&frame_id).ok_or_else(|| {
                        UdpError::Invalid(format!("no payload for frame {frame_id}"))
                    })?;
                    let chunks = encode_frame(frame_id, now, payload, max_chunk)
                        .map_err(|e| UdpError::Invalid(e.to_string()))?;
                    for chunk in &chunks {
                        events.push(SimEvent::new(
                            now,
                            Actor::Server,
                            EventKind::Sent,
                            frame_wire_subject(frame_id, chunk.chunk_index, chunk.total_chunks),
                        ));
                        socket.send_to(&encode_chunk(chunk), player_addr)?;
                    }
                }
                ServerAction::Wait { until_us } => break until_us,
                ServerAction::Done => {
                    events.push(SimEvent::new(
                        now,
                        Actor::Server,
                        EventKind::Done,
                        String::new(),
                    ));
                    return Ok(UdpOutcome::Done);
                }
                ServerAction::Abort { reason } => {
                    events.push(SimEvent::new(
                        now,
                        Actor::Server,
                        EventKind::Aborted,
                        format!("reason={}", reason.replace([',', '\n'], " ")),
                    ));
                    return Ok(UdpOutcome::Aborted(reason));
                }
            }
        };
        let wait = deadline.saturating_sub(clock.now_us());
        if let Some(n) = recv_ready(socket, &mut buf, wait)? {
            let now = clock.now_us();
            match decode_message(&buf[..n]) {
                Ok(WireMessage::Command(msg)) => {
                    events.push(SimEvent::new(
                        now,
                        Actor::Channel,
                        EventKind::Delivered,
                        command_wire_subject(&msg),
                    ));
                    agent.on_command(&msg, now);
                }
                Ok(WireMessage::Status(msg)) => {
                    events.push(SimEvent::new(
                        now,
                        Actor::Channel,
                        EventKind::Delivered,
                        status_wire_subject(&msg),
                    ));
                    agent.on_status(&msg, now);
                }
                other => log::debug!("server ignoring uplink datagram: {other:?}"),
            }
        }
    }
}

/// Drive a player agent over a socket until the session completes or the
/// peer goes quiet.
pub fn player_loop(
    mut agent: PlayerAgent,
    frames_out: Option<&Path>,
    socket: &UdpSocket,
    server_addr: SocketAddr,
    peer_timeout_us: u64,
    clock: Clock,
    events: &mut Vec<SimEvent>,
) -> Result<UdpOutcome, UdpError> {
    if let Some(dir) = frames_out {
        fs::create_dir_all(dir)?;
    }
    // after completion, hang around long enough to re-ack if the final
    // status was lost and the server retransmits
    let linger_us = agent.params().stall_timeout_us;
    let mut buf = [0u8; 65_536];
    let mut last_rx: Option<u64> = None;
    let mut complete_at: Option<u64> = None;
    loop {
        let now = clock.now_us();
        if let Some(t) = complete_at {
            if now >= t + linger_us {
                events.push(SimEvent::new(
                    now,
                    Actor::Player,
                    EventKind::Done,
                    String::new(),
                ));
                return Ok(UdpOutcome::Done);
            }
        } else if now.saturating_sub(last_rx.unwrap_or(0)) >= peer_timeout_us {
            events.push(SimEvent::new(
                now,
                Actor::Player,
                EventKind::Aborted,
                "reason=peer_timeout".into(),
            ));
            return Ok(UdpOutcome::PeerTimeout);
        }

        let mut deadline = now + MAX_POLL_US;
        if let Some(w) = agent.next_wake_us() {
            deadline = deadline.min(w);
        }
        match complete_at {
            Some(t) => deadline = deadline.min(t + linger_us),
            None => deadline = deadline.min(last_rx.unwrap_or(0) + peer_timeout_us),
        }

        let wait = deadline.saturating_sub(now);
        match recv_ready(socket, &mut buf, wait)? {
            Some(n) => {
                let now = clock.now_us();
                last_rx = Some(now);
                match decode_message(&buf[..n]) {
                    Ok(WireMessage::Frame(chunk)) => {
                        events.push(SimEvent::new(
                            now,
                            Actor::Channel,
                            EventKind::Delivered,
                            frame_wire_subject(
                                chunk.frame_id,
                                chunk.chunk_index,
                                chunk.total_chunks,
                            ),
                        ));
                        let actions = agent.on_chunk(chunk, now);
                        dispatch_player_actions(
                            actions,
                            frames_out,
                            socket,
                            server_addr,
                            now,
                            events,
                        )?;
                        if complete_at.is_none() && agent.is_complete() {
                            complete_at = Some(now);
                        }
                    }
                    other => log::debug!("player ignoring downlink datagram: {other:?}"),
                }
            }
            None => {
                let now = clock.now_us();
                let actions = agent.on_tick(now);
                dispatch_player_actions(actions, frames_out, socket, server_addr, now, events)?;
            }
        }
    }
}

fn dispatch_player_actions(
    actions: Vec<PlayerAction>,
    frames_out: Option<&Path>,
    socket: &UdpSocket,
    server_addr: SocketAddr,
    now: u64,
    events: &mut Vec<SimEvent>,
) -> Result<(), UdpError> {
    for action in actions {
        match action {
            PlayerAction::StoreFrame { frame_id, payload } => {
                if let Some(dir) = frames_out {
                    fs::write(dir.join(format!("f_{frame_id}.bin")), &payload)?;
                }
                events.push(SimEvent::new(
                    now,
                    Actor::Player,
                    EventKind::FrameStored,
                    format!("frame_id={frame_id}"),
                ));
            }
            PlayerAction::SendCommand {
                msg,
                gate_frame_id,
                resend,
                lead,
            } => {
                events.push(SimEvent::new(
                    now,
                    Actor::Player,
                    EventKind::CommandEmitted,
                    command_emitted_subject(&msg, gate_frame_id, resend, lead),
                ));
                events.push(SimEvent::new(
                    now,
                    Actor::Player,
                    EventKind::Sent,
                    command_wire_subject(&msg),
                ));
                let bytes = encode_command(&msg).map_err(|e| UdpError::Invalid(e.to_string()))?;
                socket.send_to(&bytes, server_addr)?;
            }
            PlayerAction::SendStatus { msg, flush } => {
                events.push(SimEvent::new(
                    now,
                    Actor::Player,
                    EventKind::StatusEmitted,
                    status_emitted_subject(&msg, flush),
                ));
                events.push(SimEvent::new(
                    now,
                    Actor::Player,
                    EventKind::Sent,
                    status_wire_subject(&msg),
                ));
                let bytes = encode_status(&msg).map_err(|e| UdpError::Invalid(e.to_string()))?;
                socket.send_to(&bytes, server_addr)?;
            }
        }
    }
    Ok(())
}

/// Run the server agent described by a config file. Blocks until done.
pub fn run_udp_server(cfg: &ServerConfigFile) -> Result<UdpRun, UdpError> {
    let sync = load_sync(&cfg.sync_file)?;
    let (frames, payloads) = load_frames(&cfg.trace_dir)?;
    if sync.frame_count() != frames.len() as u32 {
        return Err(UdpError::Invalid(format!(
            "sync order names {} frames but the trace has {}",
            sync.frame_count(),
            frames.len()
        )));
    }
    let agent = ServerAgent::new(&sync, cfg.server_params());
    let bind = format!("{}:{}", cfg.bind_addr, cfg.command_port);
    let socket = UdpSocket::bind(&bind).map_err(|source| UdpError::Bind { addr: bind, source })?;
    let player_addr = resolve(&cfg.player_addr, cfg.frame_port)?;
    let mut events = Vec::new();
    let outcome = server_loop(
        agent,
        &payloads,
        &socket,
        player_addr,
        Clock::new(),
        &mut events,
    )?;
    Ok(UdpRun { events, outcome })
}

/// Run the player agent described by a config file. Blocks until done.
pub fn run_udp_player(cfg: &PlayerConfigFile) -> Result<UdpRun, UdpError> {
    let sync = load_sync(&cfg.sync_file)?;
    let commands = load_commands(&cfg.command_log)?;
    let agent = PlayerAgent::new(&sync, &commands, cfg.player_params());
    let bind = format!("{}:{}", cfg.bind_addr, cfg.frame_port);
    let socket = UdpSocket::bind(&bind).map_err(|source| UdpError::Bind { addr: bind, source })?;
    let server_addr = resolve(&cfg.server_addr, cfg.command_port)?;
    let mut events = Vec::new();
    let outcome = player_loop(
        agent,
        cfg.frames_out_dir.as_deref(),
        &socket,
        server_addr,
        cfg.peer_timeout_us,
        Clock::new(),
        &mut events,
    )?;
    Ok(UdpRun { events, outcome })
}

/// Run both agents in one process over loopback sockets with a shared
/// clock, returning the merged, time-ordered event log. This exists so
/// tests and examples can compare real-socket behaviour with simulation.
pub fn run_udp_pair(
    trace: &CaptureTrace,
    payloads: &PayloadStore,
    server_params: ServerParams,
    player_params: PlayerParams,
    frames_out: Option<PathBuf>,
) -> Result<SessionLog, UdpError> {
    let server_sock = UdpSocket::bind("127.0.0.1:0").map_err(|source| UdpError::Bind {
        addr: "127.0.0.1:0".into(),
        source,
    })?;
    let player_sock = UdpSocket::bind("127.0.0.1:0").map_err(|source| UdpError::Bind {
        addr: "127.0.0.1:0".into(),
        source,
    })?;
    let server_addr = server_sock.local_addr()?;
    let player_addr = player_sock.local_addr()?;
    let clock = Clock::new();

    let server_agent = ServerAgent::new(&trace.sync, server_params);
    let player_agent = PlayerAgent::new(&trace.sync, &trace.commands, player_params);

    let (server_result, player_result) = std::thread::scope(|scope| {
        let server = scope.spawn(|| {
            let mut events = Vec::new();
            let outcome = server_loop(
                server_agent,
                payloads,
                &server_sock,
                player_addr,
                clock,
                &mut events,
            );
            (events, outcome)
        });
        let player = scope.spawn(|| {
            let mut events = Vec::new();
            let outcome = player_loop(
                player_agent,
                frames_out.as_deref(),
                &player_sock,
                server_addr,
                5_000_000,
                clock,
                &mut events,
            );
            (events, outcome)
        });
        (
            server.join().expect("server thread"),
            player.join().expect("player thread"),
        )
    });

    let (mut events, server_outcome) = server_result;
    let (player_events, player_outcome) = player_result;
    events.extend(player_events);
    events.sort_by_key(|e| e.time_us);
    let outcome = match (server_outcome?, player_outcome?) {
        (UdpOutcome::Aborted(reason), _) => SessionOutcome::Aborted(reason),
        (_, UdpOutcome::Aborted(reason)) => SessionOutcome::Aborted(reason),
        (_, UdpOutcome::PeerTimeout) => SessionOutcome::Aborted("player peer timeout".into()),
        (UdpOutcome::PeerTimeout, _) => SessionOutcome::Aborted("server peer timeout".into()),
        (UdpOutcome::Done, UdpOutcome::Done) => SessionOutcome::Done,
    };
    Ok(SessionLog { events, outcome })
}
