//! The streaming-side state machine.
//!
//! The server walks the sync order, emitting frames at the paced rate and
//! pausing wherever the order says a command must arrive first. Three
//! recovery behaviours hang off that loop:
//!
//! - while blocked on commands (or on the final acknowledgement) past the
//!   command timeout, it retransmits the previous frame to signal the player
//!   that something went missing;
//! - on a NACK it rewinds the stream cursor to `next_expected - window_w`
//!   (floor 1) and re-streams from there; gates whose commands were already
//!   received stay satisfied;
//! - optional window sliding lets it stream up to `slide_w` frames past an
//!   unsatisfied gate before pausing, trading strict interactivity for
//!   latency tolerance. Sliding is off by default: the captured
//!   action/reaction timing is the point of a replay.
//!
//! The machine consumes a totally ordered event stream (timer polls and
//! decoded messages) and is deterministic: identical inputs produce
//! identical actions.

use std::collections::BTreeSet;

use crate::trace::SyncOrder;
use crate::wire::{AckKind, CommandMsg, StatusMsg, DEFAULT_MAX_CHUNK_PAYLOAD};

/// Tuning for the streaming loop.
#[derive(Debug, Clone)]
pub struct ServerParams {
    /// Nominal frame pacing rate.
    pub fps: u32,
    /// Status window and rollback distance, the protocol's `w`.
    pub window_w: u32,
    /// Frames the server may stream past an unsatisfied command gate.
    /// 0 pauses exactly at the gate.
    pub slide_w: u32,
    /// Blocked for this long -> retransmit the previous frame.
    pub command_timeout_us: u64,
    /// Abort once this many timeout retransmissions have fired.
    pub max_retransmits: u32,
    pub max_chunk_payload: u16,
}

impl ServerParams {
    pub fn new(fps: u32) -> Self {
        let interval = 1_000_000u64 / fps.max(1) as u64;
        ServerParams {
            fps,
            window_w: 3,
            slide_w: 0,
            // two frame intervals: one lost reaction plus slack
            command_timeout_us: 2 * interval,
            max_retransmits: 50,
            max_chunk_payload: DEFAULT_MAX_CHUNK_PAYLOAD,
        }
    }

    pub fn frame_interval_us(&self) -> u64 {
        1_000_000u64 / self.fps.max(1) as u64
    }
}

/// What the server wants the transport to do next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerAction {
    SendFrame { frame_id: u32, retransmission: bool },
    Wait { until_us: u64 },
    Abort { reason: String },
    Done,
}

/// Rollback arithmetic: resume point after a NACK naming `next_expected`.
pub fn rollback_target(next_expected: u32, window_w: u32) -> u32 {
    next_expected.saturating_sub(window_w).max(1)
}

/// The CG-server agent.
#[derive(Debug)]
pub struct ServerAgent {
    params: ServerParams,
    frames_total: u32,
    commands_total: u32,
    /// Index f-1: command tokens appearing before frame f in sync order.
    /// Non-decreasing; command ids are gap-free so a count is a gate.
    gate_counts: Vec<u32>,
    /// Next frame id to stream (rewinds on rollback).
    next_frame: u32,
    /// Highest frame id sent at least once; anything at or below it goes
    /// out flagged as a retransmission.
    max_streamed: u32,
    received_commands: BTreeSet<u32>,
    /// Smallest command id not yet received.
    lowest_missing: u32,
    highest_acked: u32,
    last_sent_frame: u32,
    retransmit_count: u32,
    next_send_at_us: u64,
    last_activity_us: u64,
    done: bool,
    abort_reason: Option<String>,
}

impl ServerAgent {
    pub fn new(sync: &SyncOrder, params: ServerParams) -> Self {
        let frames_total = sync.frame_count();
        let gate_counts = (1..=frames_total)
            .map(|f| sync.commands_before_frame(f))
            .collect();
        ServerAgent {
            params,
            frames_total,
            commands_total: sync.command_count(),
            gate_counts,
            next_frame: 1,
            max_streamed: 0,
            received_commands: BTreeSet::new(),
            lowest_missing: 1,
            highest_acked: 0,
            last_sent_frame: 0,
            retransmit_count: 0,
            next_send_at_us: 0,
            last_activity_us: 0,
            done: false,
            abort_reason: None,
        }
    }

    pub fn params(&self) -> &ServerParams {
        &self.params
    }

    /// Command ids required before the next frame and still missing.
    pub fn pending_commands(&self) -> Vec<u32> {
        if self.next_frame > self.frames_total {
            return Vec::new();
        }
        let gate = self.gate_counts[self.next_frame as usize - 1];
        (self.lowest_missing..=gate)
            .filter(|id| !self.received_commands.contains(id))
            .collect()
    }

    /// Frames already streamed past the earliest unsatisfied gate.
    pub fn slide_credit(&self) -> u32 {
        match self.earliest_gated_frame() {
            Some(g) => self.next_frame.saturating_sub(g),
            None => 0,
        }
    }

    pub fn highest_acked_frame_id(&self) -> u32 {
        self.highest_acked
    }

    pub fn retransmit_count(&self) -> u32 {
        self.retransmit_count
    }

    pub fn last_sent_frame_id(&self) -> u32 {
        self.last_sent_frame
    }

    /// Smallest frame id whose gate is not yet satisfied, if any.
    fn earliest_gated_frame(&self) -> Option<u32> {
        if self.lowest_missing > self.commands_total {
            return None;
        }
        let idx = self
            .gate_counts
            .partition_point(|&k| k < self.lowest_missing);
        if idx < self.gate_counts.len() {
            Some(idx as u32 + 1)
        } else {
            None
        }
    }

    fn gate_open(&self, frame_id: u32) -> bool {
        let gate = self.gate_counts[frame_id as usize - 1];
        if gate < self.lowest_missing {
            return true;
        }
        match self.earliest_gated_frame() {
            Some(g) => frame_id.saturating_sub(g) < self.params.slide_w,
            None => true,
        }
    }

    /// Drive the machine. Returns one action; callers loop until they see
    /// `Wait`, `Done` or `Abort`. A `Wait` deadline is always in the future.
    pub fn next_action(&mut self, now_us: u64) -> ServerAction {
        if let Some(reason) = &self.abort_reason {
            return ServerAction::Abort {
                reason: reason.clone(),
            };
        }
        if self.done {
            return ServerAction::Done;
        }
        if self.next_frame > self.frames_total {
            if self.highest_acked >= self.frames_total {
                self.done = true;
                return ServerAction::Done;
            }
            // streamed everything, waiting for the final acknowledgement
            return self.blocked(now_us);
        }
        if !self.gate_open(self.next_frame) {
            return self.blocked(now_us);
        }
        if now_us < self.next_send_at_us {
            return ServerAction::Wait {
                until_us: self.next_send_at_us,
            };
        }
        let frame_id = self.next_frame;
        let retransmission = frame_id <= self.max_streamed;
        self.next_frame += 1;
        self.max_streamed = self.max_streamed.max(frame_id);
        self.last_sent_frame = frame_id;
        self.next_send_at_us = now_us + self.params.frame_interval_us();
        self.last_activity_us = now_us;
        ServerAction::SendFrame {
            frame_id,
            retransmission,
        }
    }

    fn blocked(&mut self, now_us: u64) -> ServerAction {
        let deadline = self.last_activity_us + self.params.command_timeout_us;
        if now_us < deadline {
            return ServerAction::Wait { until_us: deadline };
        }
        if self.retransmit_count >= self.params.max_retransmits {
            let reason = format!(
                "retransmit budget exhausted ({}) waiting at frame {} for commands {:?}",
                self.params.max_retransmits,
                self.next_frame,
                self.pending_commands()
            );
            self.abort_reason = Some(reason.clone());
            return ServerAction::Abort { reason };
        }
        self.retransmit_count += 1;
        self.last_activity_us = now_us;
        self.next_send_at_us = now_us + self.params.frame_interval_us();
        ServerAction::SendFrame {
            frame_id: self.last_sent_frame,
            retransmission: true,
        }
    }

    /// A command arrived: satisfy its gate and apply any piggybacked
    /// acknowledgement. Duplicates and unknown ids are ignored.
    pub fn on_command(&mut self, msg: &CommandMsg, now_us: u64) {
        self.last_activity_us = now_us;
        if msg.command_id == 0 || msg.command_id > self.commands_total {
            log::debug!("ignoring unknown command id {}", msg.command_id);
            return;
        }
        if !self.received_commands.insert(msg.command_id) {
            log::debug!("duplicate command {}", msg.command_id);
        }
        while self.received_commands.contains(&self.lowest_missing) {
            self.lowest_missing += 1;
        }
        match msg.ack_kind {
            AckKind::None => {}
            AckKind::Ack => self.apply_ack(msg.acked_frame_id),
            AckKind::Nack => self.apply_nack(msg.acked_frame_id + 1),
        }
    }

    /// A standalone window report arrived.
    pub fn on_status(&mut self, msg: &StatusMsg, now_us: u64) {
        self.last_activity_us = now_us;
        match msg.kind {
            crate::wire::StatusKind::Ack => self.apply_ack(msg.window_end_frame_id),
            crate::wire::StatusKind::Nack => self.apply_nack(msg.next_expected_frame_id),
        }
    }

    fn apply_ack(&mut self, window_end: u32) {
        self.highest_acked = self.highest_acked.max(window_end);
    }

    fn apply_nack(&mut self, next_expected: u32) {
        let target = rollback_target(next_expected, self.params.window_w);
        if target < self.next_frame {
            log::debug!(
                "nack(next_expected={next_expected}): rolling back from frame {} to {target}",
                self.next_frame
            );
            self.next_frame = target;
        } else {
            log::debug!("stale nack(next_expected={next_expected}) ignored");
        }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::parse_sync_order;
    use crate::wire::StatusKind;

    const INTERVAL: u64 = 33333;

    fn interleaved_sync() -> SyncOrder {
        parse_sync_order(b"F1\nF2\nF3\nC1\nC2\nF4\nF5\nC3\nF6\nF7\n").unwrap()
    }

    fn command(id: u32) -> CommandMsg {
        CommandMsg {
            command_id: id,
            send_ts_us: 0,
            ack_kind: AckKind::None,
            acked_frame_id: 0,
            axes: vec![],
            buttons: vec![],
        }
    }

    fn send(agent: &mut ServerAgent, now: u64) -> u32 {
        match agent.next_action(now) {
            ServerAction::SendFrame {
                frame_id,
                retransmission: false,
            } => frame_id,
            other => panic!("expected first send at {now}, got {other:?}"),
        }
    }

    #[test]
    fn streams_until_gate_then_resumes() {
        let mut srv = ServerAgent::new(&interleaved_sync(), ServerParams::new(30));
        assert_eq!(send(&mut srv, 0), 1);
        // pacing: too early for frame 2
        assert_eq!(
            srv.next_action(10),
            ServerAction::Wait { until_us: INTERVAL }
        );
        assert_eq!(send(&mut srv, INTERVAL), 2);
        assert_eq!(send(&mut srv, 2 * INTERVAL), 3);
        // gate {C1, C2} before frame 4
        assert_eq!(srv.pending_commands(), vec![1, 2]);
        assert!(matches!(
            srv.next_action(3 * INTERVAL),
            ServerAction::Wait { .. }
        ));
        srv.on_command(&command(1), 3 * INTERVAL);
        assert_eq!(srv.pending_commands(), vec![2]);
        assert!(matches!(
            srv.next_action(3 * INTERVAL),
            ServerAction::Wait { .. }
        ));
        srv.on_command(&command(2), 3 * INTERVAL);
        assert_eq!(srv.pending_commands(), Vec::<u32>::new());
        assert_eq!(send(&mut srv, 3 * INTERVAL), 4);
    }

    #[test]
    fn duplicate_command_is_idempotent() {
        let mut srv = ServerAgent::new(&interleaved_sync(), ServerParams::new(30));
        for now in [0, INTERVAL, 2 * INTERVAL] {
            send(&mut srv, now);
        }
        srv.on_command(&command(1), 100_000);
        srv.on_command(&command(2), 100_000);
        let pending = srv.pending_commands();
        srv.on_command(&command(1), 110_000);
        assert_eq!(srv.pending_commands(), pending);
    }

    #[test]
    fn blocked_timeout_retransmits_previous_frame() {
        let mut srv = ServerAgent::new(&interleaved_sync(), ServerParams::new(30));
        for now in [0, INTERVAL, 2 * INTERVAL] {
            send(&mut srv, now);
        }
        let deadline = 2 * INTERVAL + srv.params().command_timeout_us;
        assert_eq!(
            srv.next_action(3 * INTERVAL),
            ServerAction::Wait { until_us: deadline }
        );
        assert_eq!(
            srv.next_action(deadline),
            ServerAction::SendFrame {
                frame_id: 3,
                retransmission: true
            }
        );
        assert_eq!(srv.retransmit_count(), 1);
        // still blocked afterwards, next deadline one timeout later
        assert_eq!(
            srv.next_action(deadline + 1),
            ServerAction::Wait {
                until_us: deadline + srv.params().command_timeout_us
            }
        );
    }

    #[test]
    fn aborts_after_retransmit_budget() {
        let mut params = ServerParams::new(30);
        params.max_retransmits = 2;
        let mut srv = ServerAgent::new(&interleaved_sync(), params);
        let mut now = 0;
        for _ in 0..3 {
            send(&mut srv, now);
            now += INTERVAL;
        }
        for _ in 0..2 {
            now += srv.params().command_timeout_us;
            assert!(matches!(
                srv.next_action(now),
                ServerAction::SendFrame {
                    retransmission: true,
                    ..
                }
            ));
        }
        now += srv.params().command_timeout_us;
        assert!(matches!(srv.next_action(now), ServerAction::Abort { .. }));
        // abort is sticky
        assert!(matches!(
            srv.next_action(now + 1),
            ServerAction::Abort { .. }
        ));
    }

    #[test]
    fn frames_only_trace_runs_to_done_after_final_ack() {
        let sync = parse_sync_order(b"F1\nF2\nF3\n").unwrap();
        let mut srv = ServerAgent::new(&sync, ServerParams::new(30));
        for (i, now) in [0, INTERVAL, 2 * INTERVAL].into_iter().enumerate() {
            assert_eq!(send(&mut srv, now), i as u32 + 1);
        }
        // everything streamed; waits for the player's closing acknowledgement
        assert!(matches!(
            srv.next_action(2 * INTERVAL + 1),
            ServerAction::Wait { .. }
        ));
        srv.on_status(
            &StatusMsg {
                kind: StatusKind::Ack,
                window_end_frame_id: 3,
                next_expected_frame_id: 4,
                send_ts_us: 0,
            },
            70_000,
        );
        assert_eq!(srv.next_action(70_000), ServerAction::Done);
        assert_eq!(srv.retransmit_count(), 0);
    }

    // the published rollback example: next expected 7, w = 3, resume from 4
    #[test]
    fn rollback_arithmetic() {
        assert_eq!(rollback_target(7, 3), 4);
        assert_eq!(rollback_target(4, 3), 1);
        assert_eq!(rollback_target(3, 3), 1);
        assert_eq!(rollback_target(2, 3), 1);
        assert_eq!(rollback_target(1, 3), 1);
        assert_eq!(rollback_target(10, 1), 9);
    }

    #[test]
    fn nack_rewinds_and_resends_as_retransmissions() {
        let sync = parse_sync_order(b"F1\nF2\nF3\nF4\nF5\nF6\nF7\n").unwrap();
        let mut srv = ServerAgent::new(&sync, ServerParams::new(30));
        let mut now = 0;
        for _ in 0..6 {
            send(&mut srv, now);
            now += INTERVAL;
        }
        // ack through 6, then a nack for next_expected 7: the nack wins and
        // frames 4..=6 go out again as retransmissions
        srv.on_status(
            &StatusMsg {
                kind: StatusKind::Ack,
                window_end_frame_id: 6,
                next_expected_frame_id: 7,
                send_ts_us: 0,
            },
            now,
        );
        srv.on_status(
            &StatusMsg {
                kind: StatusKind::Nack,
                window_end_frame_id: 6,
                next_expected_frame_id: 7,
                send_ts_us: 0,
            },
            now,
        );
        for expect in [4u32, 5, 6] {
            assert_eq!(
                srv.next_action(now),
                ServerAction::SendFrame {
                    frame_id: expect,
                    retransmission: true
                }
            );
            now += INTERVAL;
        }
        assert_eq!(
            srv.next_action(now),
            ServerAction::SendFrame {
                frame_id: 7,
                retransmission: false
            }
        );
    }

    #[test]
    fn stale_nack_does_not_move_cursor_forward() {
        let sync = parse_sync_order(b"F1\nF2\nF3\nF4\nF5\n").unwrap();
        let mut srv = ServerAgent::new(&sync, ServerParams::new(30));
        send(&mut srv, 0);
        srv.on_status(
            &StatusMsg {
                kind: StatusKind::Nack,
                window_end_frame_id: 5,
                next_expected_frame_id: 6,
                send_ts_us: 0,
            },
            10,
        );
        assert_eq!(send(&mut srv, INTERVAL), 2);
    }

    #[test]
    fn sliding_streams_past_gate_up_to_credit() {
        let mut params = ServerParams::new(30);
        params.slide_w = 2;
        let mut srv = ServerAgent::new(&interleaved_sync(), params);
        let mut now = 0;
        for expect in 1..=3u32 {
            assert_eq!(send(&mut srv, now), expect);
            now += INTERVAL;
        }
        // gate before frame 4 unsatisfied: slide through 4 and 5
        assert_eq!(send(&mut srv, now), 4);
        assert_eq!(srv.slide_credit(), 1);
        now += INTERVAL;
        assert_eq!(send(&mut srv, now), 5);
        assert_eq!(srv.slide_credit(), 2);
        now += INTERVAL;
        // frame 6 would be 3 past the gate (and needs C3 anyway): blocked
        assert!(matches!(srv.next_action(now), ServerAction::Wait { .. }));
        // commands arrive: credit resets, stream continues at frame 6
        srv.on_command(&command(1), now);
        srv.on_command(&command(2), now);
        srv.on_command(&command(3), now);
        assert_eq!(srv.slide_credit(), 0);
        assert_eq!(send(&mut srv, now), 6);
    }

    #[test]
    fn piggybacked_nack_rolls_back() {
        let sync = parse_sync_order(b"F1\nF2\nF3\nC1\nF4\nF5\n").unwrap();
        let mut srv = ServerAgent::new(&sync, ServerParams::new(30));
        let mut now = 0;
        for _ in 0..3 {
            send(&mut srv, now);
            now += INTERVAL;
        }
        // player saw frame 1 in order but then a gap: nack rides on C1
        srv.on_command(
            &CommandMsg {
                command_id: 1,
                send_ts_us: now,
                ack_kind: AckKind::Nack,
                acked_frame_id: 1,
                axes: vec![],
                buttons: vec![],
            },
            now,
        );
        // rollback target: (1 + 1) - 3 clamped to 1
        assert_eq!(
            srv.next_action(now),
            ServerAction::SendFrame {
                frame_id: 1,
                retransmission: true
            }
        );
    }
}
