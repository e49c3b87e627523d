//! Capture-trace artifacts: the command log, the frame manifest, and the
//! sync order both agents replay against.
//!
//! File formats:
//! - command log: JSON array of
//!   `{"id":u32,"ts_us":u64,"axes":{name:int},"buttons":{name:0|1}}`, UTF-8;
//! - frame manifest: CSV with header `id,ts_us,file`, one row per frame;
//! - sync order: UTF-8 text, one `F<id>` or `C<id>` token per line,
//!   LF-terminated.
//!
//! IDs are 1-based, strictly increasing and gap-free; a trace that was
//! captured with holes is rejected rather than renumbered, since replay
//! fidelity depends on the captured numbering. Timestamps are microseconds
//! relative to session start.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("malformed command log: {0}")]
    MalformedLog(String),
    #[error("malformed frame manifest: {0}")]
    MalformedManifest(String),
    #[error("malformed sync order file: {0}")]
    MalformedSyncFile(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("sequence error: {0}")]
    SequenceError(String),
    #[error("non-monotonic timestamp: {0}")]
    NonMonotonicTimestamp(String),
    #[error("trace has no frames")]
    EmptyTrace,
    #[error("command {id} at {ts_us}us precedes the first frame at {first_frame_ts_us}us")]
    OrphanCommand {
        id: u32,
        ts_us: u64,
        first_frame_ts_us: u64,
    },
}

/// One captured joystick command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub id: u32,
    pub ts_us: u64,
    #[serde(default)]
    pub axes: BTreeMap<String, i32>,
    #[serde(default)]
    pub buttons: BTreeMap<String, u8>,
}

/// One captured video frame: the payload bytes live in `payload_ref`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRecord {
    pub id: u32,
    pub ts_us: u64,
    pub payload_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TokenKind {
    Frame,
    Command,
}

/// One entry of the sync order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncToken {
    pub kind: TokenKind,
    pub id: u32,
}

impl SyncToken {
    pub fn frame(id: u32) -> Self {
        SyncToken {
            kind: TokenKind::Frame,
            id,
        }
    }

    pub fn command(id: u32) -> Self {
        SyncToken {
            kind: TokenKind::Command,
            id,
        }
    }
}

impl fmt::Display for SyncToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TokenKind::Frame => write!(f, "F{}", self.id),
            TokenKind::Command => write!(f, "C{}", self.id),
        }
    }
}

/// The shared interleaving of frame and command ids (the captured
/// action/reaction pattern). Both id families run 1..=N gap-free, each id
/// appears exactly once, and the first token is always a frame: a command
/// cannot react to nothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncOrder {
    tokens: Vec<SyncToken>,
}

impl SyncOrder {
    /// Build a sync order, checking every structural invariant.
    pub fn from_tokens(tokens: Vec<SyncToken>) -> Result<Self, TraceError> {
        if let Some(first) = tokens.first() {
            if first.kind != TokenKind::Frame {
                return Err(TraceError::SequenceError(
                    "first sync token must be a frame".into(),
                ));
            }
        }
        let mut next_frame = 1u32;
        let mut next_command = 1u32;
        for t in &tokens {
            let next = match t.kind {
                TokenKind::Frame => &mut next_frame,
                TokenKind::Command => &mut next_command,
            };
            if t.id != *next {
                return Err(TraceError::SequenceError(format!(
                    "sync token {t} out of sequence, expected id {next}"
                )));
            }
            *next += 1;
        }
        Ok(SyncOrder { tokens })
    }

    pub fn tokens(&self) -> &[SyncToken] {
        &self.tokens
    }

    pub fn frame_count(&self) -> u32 {
        self.tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Frame)
            .count() as u32
    }

    pub fn command_count(&self) -> u32 {
        self.tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Command)
            .count() as u32
    }

    /// Command ids whose tokens appear strictly before frame `frame_id`.
    /// Because command ids are gap-free this is always the prefix `1..=k`;
    /// the returned value is that `k`.
    pub fn commands_before_frame(&self, frame_id: u32) -> u32 {
        let mut k = 0;
        for t in &self.tokens {
            match t.kind {
                TokenKind::Frame if t.id == frame_id => return k,
                TokenKind::Frame => {}
                TokenKind::Command => k += 1,
            }
        }
        k
    }

    /// The maximal run of command ids immediately following frame
    /// `frame_id` in the order (the reaction point it gates).
    pub fn commands_after_frame(&self, frame_id: u32) -> Vec<u32> {
        let mut out = Vec::new();
        let mut seen = false;
        for t in &self.tokens {
            match (seen, t.kind) {
                (false, TokenKind::Frame) if t.id == frame_id => seen = true,
                (true, TokenKind::Command) => out.push(t.id),
                (true, TokenKind::Frame) => break,
                _ => {}
            }
        }
        out
    }
}

/// Frame payload bytes keyed by frame id.
pub type PayloadStore = BTreeMap<u32, Vec<u8>>;

/// A full replayable session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureTrace {
    pub game_name: String,
    /// Nominal pacing rate in frames per second.
    pub fps: u32,
    pub frames: Vec<FrameRecord>,
    pub commands: Vec<CommandRecord>,
    pub sync: SyncOrder,
}

/// One failed trace invariant, named, with the offending id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub invariant: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.invariant, self.detail)
    }
}

// ── command log ─────────────────────────────────────────────────

/// Parse a JSON command log into validated records, in id order.
pub fn parse_command_log(bytes: &[u8]) -> Result<Vec<CommandRecord>, TraceError> {
    let records: Vec<CommandRecord> =
        serde_json::from_slice(bytes).map_err(|e| TraceError::MalformedLog(e.to_string()))?;
    for (i, r) in records.iter().enumerate() {
        let expect = i as u32 + 1;
        if r.id != expect {
            return Err(TraceError::SequenceError(format!(
                "command id {} at position {}, expected {}",
                r.id,
                i + 1,
                expect
            )));
        }
        for (name, &v) in &r.axes {
            if !(-32767..=32767).contains(&v) {
                return Err(TraceError::DomainError(format!(
                    "command {}: axis {name} value {v} outside [-32767, 32767]",
                    r.id
                )));
            }
        }
        for (name, &b) in &r.buttons {
            if b > 1 {
                return Err(TraceError::DomainError(format!(
                    "command {}: button {name} value {b} not 0|1",
                    r.id
                )));
            }
        }
    }
    Ok(records)
}

/// Serialize a command log; `parse_command_log` inverts this exactly.
pub fn serialize_command_log(records: &[CommandRecord]) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(records).expect("command records serialize");
    out.push(b'\n');
    out
}

// ── frame manifest ──────────────────────────────────────────────

const MANIFEST_HEADER: &str = "id,ts_us,file";

/// Parse the CSV frame manifest into validated records, in id order.
pub fn parse_frame_manifest(bytes: &[u8]) -> Result<Vec<FrameRecord>, TraceError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| TraceError::MalformedManifest("manifest is not UTF-8".into()))?;
    let mut lines = text.lines();
    match lines.next() {
        None | Some("") => return Ok(Vec::new()),
        Some(h) if h == MANIFEST_HEADER => {}
        Some(h) => {
            return Err(TraceError::MalformedManifest(format!(
                "bad header {h:?}, expected {MANIFEST_HEADER:?}"
            )))
        }
    }
    let mut records = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let (id, ts, file) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(TraceError::MalformedManifest(format!(
                    "row {}: expected 3 fields, got {line:?}",
                    ln + 2
                )))
            }
        };
        let id: u32 = id
            .parse()
            .map_err(|_| TraceError::MalformedManifest(format!("row {}: bad id {id:?}", ln + 2)))?;
        let ts_us: u64 = ts.parse().map_err(|_| {
            TraceError::MalformedManifest(format!("row {}: bad ts_us {ts:?}", ln + 2))
        })?;
        let expect = records.len() as u32 + 1;
        if id != expect {
            return Err(TraceError::SequenceError(format!(
                "frame id {id} at row {}, expected {expect}",
                ln + 2
            )));
        }
        if let Some(prev) = records.last().map(|r: &FrameRecord| r.ts_us) {
            if ts_us < prev {
                return Err(TraceError::NonMonotonicTimestamp(format!(
                    "frame {id} at {ts_us}us precedes frame {} at {prev}us",
                    id - 1
                )));
            }
        }
        records.push(FrameRecord {
            id,
            ts_us,
            payload_ref: file.to_string(),
        });
    }
    Ok(records)
}

/// Serialize a frame manifest; `parse_frame_manifest` inverts this exactly.
pub fn serialize_frame_manifest(records: &[FrameRecord]) -> Vec<u8> {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.id, r.ts_us, r.payload_ref));
    }
    out.into_bytes()
}

// ── sync order ──────────────────────────────────────────────────

/// Merge frames and commands into the shared sync order.
///
/// Tokens come out in timestamp order; where a frame and a command share a
/// timestamp the frame goes first, since a command is a reaction to a frame
/// already displayed. The merge is stable: it never reorders within either
/// input list.
pub fn extract_sync_order(
    frames: &[FrameRecord],
    commands: &[CommandRecord],
) -> Result<SyncOrder, TraceError> {
    let first_frame_ts = frames
        .first()
        .map(|f| f.ts_us)
        .ok_or(TraceError::EmptyTrace)?;
    for c in commands {
        if c.ts_us < first_frame_ts {
            return Err(TraceError::OrphanCommand {
                id: c.id,
                ts_us: c.ts_us,
                first_frame_ts_us: first_frame_ts,
            });
        }
    }
    let mut tokens = Vec::with_capacity(frames.len() + commands.len());
    let mut fi = 0;
    let mut ci = 0;
    while fi < frames.len() || ci < commands.len() {
        let take_frame = match (frames.get(fi), commands.get(ci)) {
            (Some(f), Some(c)) => f.ts_us <= c.ts_us,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => unreachable!(),
        };
        if take_frame {
            tokens.push(SyncToken::frame(frames[fi].id));
            fi += 1;
        } else {
            tokens.push(SyncToken::command(commands[ci].id));
            ci += 1;
        }
    }
    SyncOrder::from_tokens(tokens)
}

/// Write the sync order as one `F<id>`/`C<id>` token per line.
pub fn serialize_sync_order(sync: &SyncOrder) -> Vec<u8> {
    let mut out = String::new();
    for t in sync.tokens() {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    out.into_bytes()
}

/// Parse a sync order file, checking all structural invariants.
pub fn parse_sync_order(bytes: &[u8]) -> Result<SyncOrder, TraceError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| TraceError::MalformedSyncFile("file is not UTF-8".into()))?;
    let mut tokens = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (kind, id) = line.split_at(1);
        let kind = match kind {
            "F" => TokenKind::Frame,
            "C" => TokenKind::Command,
            _ => {
                return Err(TraceError::MalformedSyncFile(format!(
                    "line {}: bad token {line:?}",
                    ln + 1
                )))
            }
        };
        let id: u32 = id.parse().map_err(|_| {
            TraceError::MalformedSyncFile(format!("line {}: bad id in {line:?}", ln + 1))
        })?;
        if id == 0 {
            return Err(TraceError::MalformedSyncFile(format!(
                "line {}: ids are 1-based",
                ln + 1
            )));
        }
        tokens.push(SyncToken { kind, id });
    }
    SyncOrder::from_tokens(tokens)
}

// ── whole-trace validation ──────────────────────────────────────

/// Check every `CaptureTrace` invariant; empty result means the trace is
/// internally consistent and replayable.
pub fn validate_trace(trace: &CaptureTrace) -> Vec<Violation> {
    let mut v = Vec::new();
    if trace.fps == 0 {
        v.push(Violation {
            invariant: "fps_positive",
            detail: "fps is 0".into(),
        });
    }
    for (i, f) in trace.frames.iter().enumerate() {
        let expect = i as u32 + 1;
        if f.id != expect {
            v.push(Violation {
                invariant: "frame_ids_gap_free",
                detail: format!("frame id {} at position {}, expected {expect}", f.id, i + 1),
            });
        }
        if i > 0 && f.ts_us < trace.frames[i - 1].ts_us {
            v.push(Violation {
                invariant: "frame_timestamps_non_decreasing",
                detail: format!("frame {} at {}us precedes its predecessor", f.id, f.ts_us),
            });
        }
    }
    for (i, c) in trace.commands.iter().enumerate() {
        let expect = i as u32 + 1;
        if c.id != expect {
            v.push(Violation {
                invariant: "command_ids_gap_free",
                detail: format!(
                    "command id {} at position {}, expected {expect}",
                    c.id,
                    i + 1
                ),
            });
        }
        for (name, &val) in &c.axes {
            if !(-32767..=32767).contains(&val) {
                v.push(Violation {
                    invariant: "axis_value_domain",
                    detail: format!("command {}: axis {name} = {val}", c.id),
                });
            }
        }
        for (name, &val) in &c.buttons {
            if val > 1 {
                v.push(Violation {
                    invariant: "button_value_domain",
                    detail: format!("command {}: button {name} = {val}", c.id),
                });
            }
        }
    }
    if trace.sync.frame_count() != trace.frames.len() as u32 {
        v.push(Violation {
            invariant: "sync_frame_ids_match_trace",
            detail: format!(
                "sync has {} frame tokens, trace has {} frames",
                trace.sync.frame_count(),
                trace.frames.len()
            ),
        });
    }
    if trace.sync.command_count() != trace.commands.len() as u32 {
        v.push(Violation {
            invariant: "sync_command_ids_match_trace",
            detail: format!(
                "sync has {} command tokens, trace has {} commands",
                trace.sync.command_count(),
                trace.commands.len()
            ),
        });
    }
    v
}

// ── wire id codebook ────────────────────────────────────────────

/// Deterministic mapping between captured axis/button names and the compact
/// numeric ids used on the wire. Derived by sorting the names that occur in
/// the command log, so both ends of a replay agree without shipping a table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommandCodebook {
    axes: Vec<String>,
    buttons: Vec<String>,
}

impl CommandCodebook {
    pub fn from_commands(commands: &[CommandRecord]) -> Self {
        let mut axes: Vec<String> = commands
            .iter()
            .flat_map(|c| c.axes.keys().cloned())
            .collect();
        axes.sort();
        axes.dedup();
        let mut buttons: Vec<String> = commands
            .iter()
            .flat_map(|c| c.buttons.keys().cloned())
            .collect();
        buttons.sort();
        buttons.dedup();
        CommandCodebook { axes, buttons }
    }

    pub fn axis_id(&self, name: &str) -> Option<u8> {
        self.axes.iter().position(|a| a == name).map(|i| i as u8)
    }

    pub fn button_id(&self, name: &str) -> Option<u8> {
        self.buttons.iter().position(|b| b == name).map(|i| i as u8)
    }

    pub fn axis_name(&self, id: u8) -> Option<&str> {
        self.axes.get(id as usize).map(|s| s.as_str())
    }

    pub fn button_name(&self, id: u8) -> Option<&str> {
        self.buttons.get(id as usize).map(|s| s.as_str())
    }

    /// Wire-encode a record's values: sorted (axis_id, value) and
    /// (button_id, state) pairs.
    #[allow(clippy::type_complexity)]
    pub fn encode_values(&self, record: &CommandRecord) -> (Vec<(u8, i16)>, Vec<(u8, u8)>) {
        let axes = record
            .axes
            .iter()
            .filter_map(|(name, &v)| self.axis_id(name).map(|id| (id, v as i16)))
            .collect();
        let buttons = record
            .buttons
            .iter()
            .filter_map(|(name, &s)| self.button_id(name).map(|id| (id, s)))
            .collect();
        (axes, buttons)
    }
}
