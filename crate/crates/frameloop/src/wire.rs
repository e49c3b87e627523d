//! Binary codecs for the three UDP message kinds and the in-payload frame
//! identity header.
//!
//! All integers are big-endian. Every datagram starts with a 1-octet type
//! tag:
//!
//! ```text
//! FrameChunk:  0x01 | frame_id u32 | send_ts_us u64 | total_chunks u16
//!              | chunk_index u16 | payload_len u16 | payload
//! CommandMsg:  0x02 | command_id u32 | send_ts_us u64 | ack_kind u8
//!              | acked_frame_id u32 | n_axes u8 | n_axes x (axis_id u8, value i16)
//!              | n_buttons u8 | n_buttons x (button_id u8, state u8)
//! StatusMsg:   0x03 | kind u8 (1 ack, 2 nack) | window_end_frame_id u32
//!              | next_expected_frame_id u32 | send_ts_us u64
//! ```
//!
//! Frame payloads themselves carry a 16-octet identity header so the player
//! can verify what it reassembled:
//!
//! ```text
//! "CGRF" | frame_id u32 | capture_ts_us u64
//! ```

use std::collections::BTreeMap;

use thiserror::Error;

/// Magic prefix of every frame payload.
pub const PAYLOAD_MAGIC: [u8; 4] = *b"CGRF";
/// Size of the frame payload identity header in octets.
pub const PAYLOAD_HEADER_LEN: usize = 16;
/// Default chunk payload bound, below common path MTU.
pub const DEFAULT_MAX_CHUNK_PAYLOAD: u16 = 1200;

const TAG_FRAME: u8 = 0x01;
const TAG_COMMAND: u8 = 0x02;
const TAG_STATUS: u8 = 0x03;

/// Joystick axis values stay inside the captured controller range.
pub const AXIS_MIN: i16 = -32767;
/// See [`AXIS_MIN`].
pub const AXIS_MAX: i16 = 32767;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("unknown message type tag 0x{0:02x}")]
    UnknownMessageType(u8),
    #[error("truncated message: needed {needed} more octets")]
    TruncatedMessage { needed: usize },
    #[error("{0} octets of trailing garbage after message")]
    TrailingBytes(usize),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("payload of {len} octets needs more than 65535 chunks of {max_chunk_payload}")]
    PayloadTooLarge { len: usize, max_chunk_payload: u16 },
    #[error("frame payload does not start with the CGRF magic")]
    BadMagic,
    #[error("frame payload shorter than the {PAYLOAD_HEADER_LEN}-octet header")]
    TruncatedHeader,
}

/// One UDP-sized slice of a frame payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameChunk {
    pub frame_id: u32,
    pub send_ts_us: u64,
    pub total_chunks: u16,
    pub chunk_index: u16,
    pub payload: Vec<u8>,
}

/// Acknowledgement metadata piggybacked on a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckKind {
    None,
    Ack,
    Nack,
}

impl AckKind {
    fn to_wire(self) -> u8 {
        match self {
            AckKind::None => 0,
            AckKind::Ack => 1,
            AckKind::Nack => 2,
        }
    }

    fn from_wire(b: u8) -> Result<Self, WireError> {
        match b {
            0 => Ok(AckKind::None),
            1 => Ok(AckKind::Ack),
            2 => Ok(AckKind::Nack),
            _ => Err(WireError::DomainError(format!("ack_kind {b} not in 0..=2"))),
        }
    }
}

/// A replayed input command, uplink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandMsg {
    pub command_id: u32,
    pub send_ts_us: u64,
    pub ack_kind: AckKind,
    /// Last in-order frame id seen by the player; 0 when `ack_kind` is `None`.
    pub acked_frame_id: u32,
    pub axes: Vec<(u8, i16)>,
    pub buttons: Vec<(u8, u8)>,
}

/// Periodic window verdict, uplink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatusKind {
    Ack,
    Nack,
}

impl StatusKind {
    fn to_wire(self) -> u8 {
        match self {
            StatusKind::Ack => 1,
            StatusKind::Nack => 2,
        }
    }

    fn from_wire(b: u8) -> Result<Self, WireError> {
        match b {
            1 => Ok(StatusKind::Ack),
            2 => Ok(StatusKind::Nack),
            _ => Err(WireError::DomainError(format!("status kind {b} not 1|2"))),
        }
    }
}

/// Standalone ACK/NACK report for a closed frame window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatusMsg {
    pub kind: StatusKind,
    /// Highest frame id covered by this window report.
    pub window_end_frame_id: u32,
    pub next_expected_frame_id: u32,
    pub send_ts_us: u64,
}

/// Identity header prepended to every frame payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramePayloadHeader {
    pub frame_id: u32,
    pub capture_ts_us: u64,
}

/// Any decoded datagram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    Frame(FrameChunk),
    Command(CommandMsg),
    Status(StatusMsg),
}

// ── encoding ────────────────────────────────────────────────────

/// Split a frame payload into wire chunks of at most `max_chunk_payload`
/// octets each. The payload must begin with a valid [`FramePayloadHeader`].
pub fn encode_frame(
    frame_id: u32,
    send_ts_us: u64,
    payload: &[u8],
    max_chunk_payload: u16,
) -> Result<Vec<FrameChunk>, WireError> {
    if max_chunk_payload == 0 {
        return Err(WireError::DomainError(
            "max_chunk_payload must be > 0".into(),
        ));
    }
    read_frame_payload_header(payload)?;
    let max = max_chunk_payload as usize;
    let n = payload.len().div_ceil(max);
    if n > u16::MAX as usize {
        return Err(WireError::PayloadTooLarge {
            len: payload.len(),
            max_chunk_payload,
        });
    }
    Ok(payload
        .chunks(max)
        .enumerate()
        .map(|(i, slice)| FrameChunk {
            frame_id,
            send_ts_us,
            total_chunks: n as u16,
            chunk_index: i as u16,
            payload: slice.to_vec(),
        })
        .collect())
}

/// Serialize one chunk into a datagram.
pub fn encode_chunk(chunk: &FrameChunk) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + chunk.payload.len());
    out.push(TAG_FRAME);
    out.extend_from_slice(&chunk.frame_id.to_be_bytes());
    out.extend_from_slice(&chunk.send_ts_us.to_be_bytes());
    out.extend_from_slice(&chunk.total_chunks.to_be_bytes());
    out.extend_from_slice(&chunk.chunk_index.to_be_bytes());
    out.extend_from_slice(&(chunk.payload.len() as u16).to_be_bytes());
    out.extend_from_slice(&chunk.payload);
    out
}

/// Serialize a command into a datagram.
pub fn encode_command(msg: &CommandMsg) -> Result<Vec<u8>, WireError> {
    if msg.axes.len() > u8::MAX as usize || msg.buttons.len() > u8::MAX as usize {
        return Err(WireError::DomainError(
            "more than 255 axes or buttons".into(),
        ));
    }
    for &(id, v) in &msg.axes {
        if v < AXIS_MIN {
            return Err(WireError::DomainError(format!(
                "axis {id} value {v} out of range"
            )));
        }
    }
    for &(id, s) in &msg.buttons {
        if s > 1 {
            return Err(WireError::DomainError(format!(
                "button {id} state {s} not 0|1"
            )));
        }
    }
    let mut out = Vec::with_capacity(20 + 3 * msg.axes.len() + 2 * msg.buttons.len());
    out.push(TAG_COMMAND);
    out.extend_from_slice(&msg.command_id.to_be_bytes());
    out.extend_from_slice(&msg.send_ts_us.to_be_bytes());
    out.push(msg.ack_kind.to_wire());
    out.extend_from_slice(&msg.acked_frame_id.to_be_bytes());
    out.push(msg.axes.len() as u8);
    for &(id, v) in &msg.axes {
        out.push(id);
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.push(msg.buttons.len() as u8);
    for &(id, s) in &msg.buttons {
        out.push(id);
        out.push(s);
    }
    Ok(out)
}

/// Serialize a status report into a datagram.
pub fn encode_status(msg: &StatusMsg) -> Result<Vec<u8>, WireError> {
    if msg.next_expected_frame_id == 0 {
        return Err(WireError::DomainError(
            "next_expected_frame_id must be >= 1".into(),
        ));
    }
    let mut out = Vec::with_capacity(18);
    out.push(TAG_STATUS);
    out.push(msg.kind.to_wire());
    out.extend_from_slice(&msg.window_end_frame_id.to_be_bytes());
    out.extend_from_slice(&msg.next_expected_frame_id.to_be_bytes());
    out.extend_from_slice(&msg.send_ts_us.to_be_bytes());
    Ok(out)
}

/// Build a frame payload: identity header followed by the opaque body.
pub fn make_frame_payload(frame_id: u32, capture_ts_us: u64, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(PAYLOAD_HEADER_LEN + body.len());
    out.extend_from_slice(&PAYLOAD_MAGIC);
    out.extend_from_slice(&frame_id.to_be_bytes());
    out.extend_from_slice(&capture_ts_us.to_be_bytes());
    out.extend_from_slice(body);
    out
}

/// Read back the identity header of a frame payload.
pub fn read_frame_payload_header(payload: &[u8]) -> Result<FramePayloadHeader, WireError> {
    if payload.len() < PAYLOAD_HEADER_LEN {
        return Err(WireError::TruncatedHeader);
    }
    if payload[0..4] != PAYLOAD_MAGIC {
        return Err(WireError::BadMagic);
    }
    Ok(FramePayloadHeader {
        frame_id: u32::from_be_bytes(payload[4..8].try_into().unwrap()),
        capture_ts_us: u64::from_be_bytes(payload[8..16].try_into().unwrap()),
    })
}

// ── decoding ────────────────────────────────────────────────────

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Self {
        Cursor { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.data.len() {
            return Err(WireError::TruncatedMessage {
                needed: self.pos + n - self.data.len(),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn i16(&mut self) -> Result<i16, WireError> {
        Ok(i16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<(), WireError> {
        let left = self.data.len() - self.pos;
        if left > 0 {
            return Err(WireError::TrailingBytes(left));
        }
        Ok(())
    }
}

/// Decode one datagram into whichever message kind its tag names.
pub fn decode_message(datagram: &[u8]) -> Result<WireMessage, WireError> {
    let mut c = Cursor::new(datagram);
    let tag = c.u8()?;
    let msg = match tag {
        TAG_FRAME => {
            let frame_id = c.u32()?;
            let send_ts_us = c.u64()?;
            let total_chunks = c.u16()?;
            let chunk_index = c.u16()?;
            if total_chunks == 0 {
                return Err(WireError::DomainError("total_chunks must be >= 1".into()));
            }
            if chunk_index >= total_chunks {
                return Err(WireError::DomainError(format!(
                    "chunk_index {chunk_index} not below total_chunks {total_chunks}"
                )));
            }
            let len = c.u16()? as usize;
            let payload = c.take(len)?.to_vec();
            WireMessage::Frame(FrameChunk {
                frame_id,
                send_ts_us,
                total_chunks,
                chunk_index,
                payload,
            })
        }
        TAG_COMMAND => {
            let command_id = c.u32()?;
            let send_ts_us = c.u64()?;
            let ack_kind = AckKind::from_wire(c.u8()?)?;
            let acked_frame_id = c.u32()?;
            let n_axes = c.u8()? as usize;
            let mut axes = Vec::with_capacity(n_axes);
            for _ in 0..n_axes {
                let id = c.u8()?;
                let v = c.i16()?;
                if v < AXIS_MIN {
                    return Err(WireError::DomainError(format!(
                        "axis {id} value {v} out of range"
                    )));
                }
                axes.push((id, v));
            }
            let n_buttons = c.u8()? as usize;
            let mut buttons = Vec::with_capacity(n_buttons);
            for _ in 0..n_buttons {
                let id = c.u8()?;
                let s = c.u8()?;
                if s > 1 {
                    return Err(WireError::DomainError(format!(
                        "button {id} state {s} not 0|1"
                    )));
                }
                buttons.push((id, s));
            }
            WireMessage::Command(CommandMsg {
                command_id,
                send_ts_us,
                ack_kind,
                acked_frame_id,
                axes,
                buttons,
            })
        }
        TAG_STATUS => {
            let kind = StatusKind::from_wire(c.u8()?)?;
            let window_end_frame_id = c.u32()?;
            let next_expected_frame_id = c.u32()?;
            if next_expected_frame_id == 0 {
                return Err(WireError::DomainError(
                    "next_expected_frame_id must be >= 1".into(),
                ));
            }
            let send_ts_us = c.u64()?;
            WireMessage::Status(StatusMsg {
                kind,
                window_end_frame_id,
                next_expected_frame_id,
                send_ts_us,
            })
        }
        other => return Err(WireError::UnknownMessageType(other)),
    };
    c.finish()?;
    Ok(msg)
}

// ── chunk reassembly ────────────────────────────────────────────

/// Collects chunks per frame id until a full payload can be rebuilt.
///
/// Chunks may arrive in any order; duplicates are ignored. Frames complete
/// independently, so interleaved chunk streams are fine.
#[derive(Debug, Default)]
pub struct ChunkAssembler {
    slots: BTreeMap<u32, Slot>,
}

#[derive(Debug)]
struct Slot {
    total: u16,
    parts: BTreeMap<u16, Vec<u8>>,
}

impl ChunkAssembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed one chunk. Returns the reassembled payload once every chunk of
    /// that frame has arrived, clearing the slot.
    pub fn push(&mut self, chunk: FrameChunk) -> Option<Vec<u8>> {
        let slot = self.slots.entry(chunk.frame_id).or_insert_with(|| Slot {
            total: chunk.total_chunks,
            parts: BTreeMap::new(),
        });
        if slot.total != chunk.total_chunks {
            log::debug!(
                "frame {}: chunk claims total {} but slot has {}; keeping first",
                chunk.frame_id,
                chunk.total_chunks,
                slot.total
            );
        }
        slot.parts.entry(chunk.chunk_index).or_insert(chunk.payload);
        if slot.parts.len() == slot.total as usize {
            let slot = self.slots.remove(&chunk.frame_id).unwrap();
            let mut payload = Vec::new();
            for (_, part) in slot.parts {
                payload.extend_from_slice(&part);
            }
            Some(payload)
        } else {
            None
        }
    }

    /// Number of frames with partial chunk buffers.
    pub fn pending(&self) -> usize {
        self.slots.len()
    }
}
