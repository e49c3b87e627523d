//! The receiving-side state machine.
//!
//! The player reassembles chunks into frames, verifies each payload's
//! identity header, and checks arriving frame ids against the sync order.
//! An in-order frame is stored and, when the order says commands react to
//! it, the captured command group goes out with acknowledgement metadata
//! piggybacked. Every `window_w` distinct frames it reports a standalone
//! ACK (ids matched the expected run) or NACK (missing or out of order),
//! which drives the server's rollback.
//!
//! Loss handling mirrors the server: two consecutive frames with the same
//! id mean the server never got our commands, so the previous group is
//! re-sent; a stall past `stall_timeout_us` re-sends it too, covering the
//! case where the server's retransmitted frame was itself lost.
//!
//! Frames newer than expected are counted (they make the window close and
//! NACK) but never stored out of order: correction is rollback-driven, the
//! server re-streams and the gap fills in order. Storing the final frame
//! emits a closing ACK even on a partial window so the server can finish.

use std::collections::{BTreeMap, BTreeSet};

use crate::trace::{CommandCodebook, CommandRecord, SyncOrder};
use crate::wire::{
    read_frame_payload_header, AckKind, ChunkAssembler, CommandMsg, FrameChunk, StatusKind,
    StatusMsg,
};

#[derive(Debug, Clone)]
pub struct PlayerParams {
    /// Status window size; must equal the server's `window_w`.
    pub window_w: u32,
    /// No frame for this long -> re-send the previous command group.
    pub stall_timeout_us: u64,
    /// Attach ack metadata to outgoing commands.
    pub status_piggyback: bool,
}

impl PlayerParams {
    pub fn new() -> Self {
        PlayerParams {
            window_w: 3,
            // four nominal 30fps intervals; must exceed the server's command
            // timeout or both sides retry at once and storm
            stall_timeout_us: 4 * 33_333,
            status_piggyback: true,
        }
    }
}

impl Default for PlayerParams {
    fn default() -> Self {
        Self::new()
    }
}

/// What the player wants the transport to do.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlayerAction {
    SendCommand {
        msg: CommandMsg,
        /// Frame id this reaction point follows in the sync order.
        gate_frame_id: u32,
        /// True when this is a loss-triggered re-send of the group.
        resend: bool,
        /// True on the first command of a burst.
        lead: bool,
    },
    SendStatus {
        msg: StatusMsg,
        /// True for the end-of-session report on a partial window.
        flush: bool,
    },
    StoreFrame {
        frame_id: u32,
        payload: Vec<u8>,
    },
}

/// The CG-player agent.
#[derive(Debug)]
pub struct PlayerAgent {
    params: PlayerParams,
    frames_total: u32,
    /// Reaction points: gate frame id -> command ids fired after it.
    groups: BTreeMap<u32, Vec<u32>>,
    records: BTreeMap<u32, CommandRecord>,
    codebook: CommandCodebook,
    assembler: ChunkAssembler,
    next_expected: u32,
    /// Last fully reassembled frame id; repeats signal command loss.
    last_seen: u32,
    /// Highest frame id ever completed; anything at or past `next_expected`
    /// proves a gap the server must refill.
    max_completed: u32,
    /// Distinct frame ids since the last status, in arrival order.
    window: Vec<u32>,
    /// `next_expected` at the time the window last cleared.
    window_base: u32,
    /// Gate frame ids whose group already fired once.
    fired: BTreeSet<u32>,
    last_group: Vec<CommandMsg>,
    last_gate: u32,
    last_rx_us: u64,
    /// Highest frame id reported to the server via an ACK.
    last_acked_end: u32,
    frames_stored: u32,
    integrity_losses: u32,
    redundant_frames: u32,
}

impl PlayerAgent {
    pub fn new(sync: &SyncOrder, commands: &[CommandRecord], params: PlayerParams) -> Self {
        let frames_total = sync.frame_count();
        let mut groups = BTreeMap::new();
        for f in 1..=frames_total {
            let ids = sync.commands_after_frame(f);
            if !ids.is_empty() {
                groups.insert(f, ids);
            }
        }
        PlayerAgent {
            params,
            frames_total,
            groups,
            records: commands.iter().map(|c| (c.id, c.clone())).collect(),
            codebook: CommandCodebook::from_commands(commands),
            assembler: ChunkAssembler::new(),
            next_expected: 1,
            last_seen: 0,
            max_completed: 0,
            window: Vec::new(),
            window_base: 1,
            fired: BTreeSet::new(),
            last_group: Vec::new(),
            last_gate: 0,
            last_rx_us: 0,
            last_acked_end: 0,
            frames_stored: 0,
            integrity_losses: 0,
            redundant_frames: 0,
        }
    }

    pub fn params(&self) -> &PlayerParams {
        &self.params
    }

    pub fn next_expected_frame_id(&self) -> u32 {
        self.next_expected
    }

    pub fn frames_stored(&self) -> u32 {
        self.frames_stored
    }

    pub fn integrity_losses(&self) -> u32 {
        self.integrity_losses
    }

    pub fn redundant_frames(&self) -> u32 {
        self.redundant_frames
    }

    /// All frames of the sync order stored in order.
    pub fn is_complete(&self) -> bool {
        self.next_expected > self.frames_total
    }

    /// Deadline for the next stall check, if one is still meaningful.
    pub fn next_wake_us(&self) -> Option<u64> {
        if self.is_complete() {
            None
        } else {
            Some(self.last_rx_us + self.params.stall_timeout_us)
        }
    }

    /// Feed one decoded chunk.
    pub fn on_chunk(&mut self, chunk: FrameChunk, now_us: u64) -> Vec<PlayerAction> {
        self.last_rx_us = now_us;
        let frame_id = chunk.frame_id;
        let Some(payload) = self.assembler.push(chunk) else {
            return Vec::new();
        };
        match read_frame_payload_header(&payload) {
            Ok(h) if h.frame_id == frame_id => {}
            bad => {
                self.integrity_losses += 1;
                log::debug!("frame {frame_id} failed payload verification ({bad:?}), discarded");
                return Vec::new();
            }
        }

        self.max_completed = self.max_completed.max(frame_id);
        let mut actions = Vec::new();
        if frame_id == self.last_seen {
            // same id twice in a row: our command group never made it
            actions.extend(self.resend_last_group(now_us));
            if self.is_complete() {
                // the server is evidently still waiting for the closing ack
                actions.push(self.final_status(now_us));
            } else if self.gap_known() {
                // the server is timeout-looping on its last frame while we
                // sit on a gap; a lost window nack would otherwise leave
                // nobody to say so (the duplicate never refills the window)
                actions.push(PlayerAction::SendStatus {
                    msg: StatusMsg {
                        kind: StatusKind::Nack,
                        window_end_frame_id: self.max_completed,
                        next_expected_frame_id: self.next_expected,
                        send_ts_us: now_us,
                    },
                    flush: false,
                });
            }
            return actions;
        }
        self.last_seen = frame_id;

        if frame_id == self.next_expected {
            self.next_expected += 1;
            self.frames_stored += 1;
            actions.push(PlayerAction::StoreFrame { frame_id, payload });
            self.window_add(frame_id);
            actions.extend(self.fire_group(frame_id, now_us));
            if let Some(status) = self.close_window(now_us) {
                actions.push(status);
            }
            if self.is_complete() && self.last_acked_end < self.frames_total {
                actions.push(self.final_status(now_us));
            }
        } else if frame_id > self.next_expected {
            // ahead of the gap: counted so the window can NACK, not stored
            self.window_add(frame_id);
            actions.extend(self.fire_group(frame_id, now_us));
            if let Some(status) = self.close_window(now_us) {
                actions.push(status);
            }
        } else {
            self.redundant_frames += 1;
            log::debug!("redundant frame {frame_id}, already stored");
        }
        actions
    }

    /// Periodic poll for the stall timer.
    pub fn on_tick(&mut self, now_us: u64) -> Vec<PlayerAction> {
        if self.is_complete() {
            return Vec::new();
        }
        if now_us.saturating_sub(self.last_rx_us) < self.params.stall_timeout_us {
            return Vec::new();
        }
        self.last_rx_us = now_us;
        self.resend_last_group(now_us)
    }

    /// The command group reacting to `frame_id`, if the sync order names one
    /// and it has not fired yet.
    pub fn due_commands(&self, frame_id: u32) -> Vec<u32> {
        if self.fired.contains(&frame_id) {
            return Vec::new();
        }
        self.groups.get(&frame_id).cloned().unwrap_or_default()
    }

    fn fire_group(&mut self, frame_id: u32, now_us: u64) -> Vec<PlayerAction> {
        let ids = self.due_commands(frame_id);
        if ids.is_empty() {
            return Vec::new();
        }
        self.fired.insert(frame_id);
        let (ack_kind, acked) = self.piggyback();
        let mut group = Vec::new();
        let mut actions = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            let msg = self.materialize(*id, now_us, ack_kind, acked);
            group.push(msg.clone());
            actions.push(PlayerAction::SendCommand {
                msg,
                gate_frame_id: frame_id,
                resend: false,
                lead: i == 0,
            });
        }
        self.last_group = group;
        self.last_gate = frame_id;
        actions
    }

    fn resend_last_group(&mut self, now_us: u64) -> Vec<PlayerAction> {
        if self.last_group.is_empty() {
            return Vec::new();
        }
        let (ack_kind, acked) = self.piggyback();
        let gate = self.last_gate;
        self.last_group
            .clone()
            .into_iter()
            .enumerate()
            .map(|(i, mut msg)| {
                msg.send_ts_us = now_us;
                msg.ack_kind = ack_kind;
                msg.acked_frame_id = acked;
                PlayerAction::SendCommand {
                    msg,
                    gate_frame_id: gate,
                    resend: true,
                    lead: i == 0,
                }
            })
            .collect()
    }

    fn materialize(
        &self,
        command_id: u32,
        now_us: u64,
        ack_kind: AckKind,
        acked: u32,
    ) -> CommandMsg {
        let (axes, buttons) = match self.records.get(&command_id) {
            Some(record) => self.codebook.encode_values(record),
            None => (Vec::new(), Vec::new()),
        };
        CommandMsg {
            command_id,
            send_ts_us: now_us,
            ack_kind,
            acked_frame_id: acked,
            axes,
            buttons,
        }
    }

    fn piggyback(&self) -> (AckKind, u32) {
        if !self.params.status_piggyback {
            return (AckKind::None, 0);
        }
        let kind = if self.window_consistent() && !self.gap_known() {
            AckKind::Ack
        } else {
            AckKind::Nack
        };
        (kind, self.next_expected - 1)
    }

    /// A frame at or past the expected one has completed while the expected
    /// one is still missing.
    fn gap_known(&self) -> bool {
        self.max_completed >= self.next_expected
    }

    fn window_consistent(&self) -> bool {
        self.window
            .iter()
            .enumerate()
            .all(|(i, &id)| id == self.window_base + i as u32)
    }

    fn window_add(&mut self, frame_id: u32) {
        if !self.window.contains(&frame_id) {
            self.window.push(frame_id);
        }
    }

    fn close_window(&mut self, now_us: u64) -> Option<PlayerAction> {
        if (self.window.len() as u32) < self.params.window_w {
            return None;
        }
        let kind = if self.window_consistent() {
            StatusKind::Ack
        } else {
            StatusKind::Nack
        };
        let window_end = *self.window.iter().max().unwrap();
        self.window.clear();
        self.window_base = self.next_expected;
        if kind == StatusKind::Ack {
            self.last_acked_end = self.last_acked_end.max(window_end);
        }
        Some(PlayerAction::SendStatus {
            msg: StatusMsg {
                kind,
                window_end_frame_id: window_end,
                next_expected_frame_id: self.next_expected,
                send_ts_us: now_us,
            },
            flush: false,
        })
    }

    fn final_status(&mut self, now_us: u64) -> PlayerAction {
        self.last_acked_end = self.frames_total;
        PlayerAction::SendStatus {
            msg: StatusMsg {
                kind: StatusKind::Ack,
                window_end_frame_id: self.frames_total,
                next_expected_frame_id: self.frames_total + 1,
                send_ts_us: now_us,
            },
            flush: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::CaptureTrace;
    use crate::tracegen::{generate_trace, GenSpec};
    use crate::wire::encode_frame;
    use std::collections::BTreeMap as Map;

    fn fixture() -> (CaptureTrace, Map<u32, Vec<u8>>) {
        let spec = GenSpec {
            command_points: vec![(3, 2), (5, 1)],
            frame_body_size: 64,
            ..GenSpec::new(7, 30)
        };
        generate_trace(&spec).unwrap()
    }

    fn agent(trace: &CaptureTrace) -> PlayerAgent {
        PlayerAgent::new(&trace.sync, &trace.commands, PlayerParams::new())
    }

    fn chunk_of(payloads: &Map<u32, Vec<u8>>, id: u32) -> FrameChunk {
        encode_frame(id, 0, &payloads[&id], 1200).unwrap().remove(0)
    }

    fn command_ids(actions: &[PlayerAction]) -> Vec<u32> {
        actions
            .iter()
            .filter_map(|a| match a {
                PlayerAction::SendCommand { msg, .. } => Some(msg.command_id),
                _ => None,
            })
            .collect()
    }

    fn statuses(actions: &[PlayerAction]) -> Vec<&StatusMsg> {
        actions
            .iter()
            .filter_map(|a| match a {
                PlayerAction::SendStatus { msg, .. } => Some(msg),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn lossless_walk_stores_fires_and_acks() {
        let (trace, payloads) = fixture();
        let mut player = agent(&trace);
        let mut stored = Vec::new();
        let mut all_statuses = Vec::new();
        for id in 1..=7u32 {
            let actions = player.on_chunk(chunk_of(&payloads, id), id as u64 * 33_333);
            for a in &actions {
                if let PlayerAction::StoreFrame { frame_id, .. } = a {
                    stored.push(*frame_id);
                }
            }
            match id {
                3 => assert_eq!(command_ids(&actions), vec![1, 2]),
                5 => assert_eq!(command_ids(&actions), vec![3]),
                _ => assert_eq!(command_ids(&actions), Vec::<u32>::new()),
            }
            all_statuses.extend(statuses(&actions).into_iter().cloned());
        }
        assert_eq!(stored, vec![1, 2, 3, 4, 5, 6, 7]);
        assert!(player.is_complete());
        // Ack at each closed window of 3, plus the closing report for frame 7
        let ends: Vec<u32> = all_statuses.iter().map(|s| s.window_end_frame_id).collect();
        assert_eq!(ends, vec![3, 6, 7]);
        assert!(all_statuses.iter().all(|s| s.kind == StatusKind::Ack));
    }

    #[test]
    fn gap_nacks_on_window_close() {
        let (trace, payloads) = fixture();
        let mut player = agent(&trace);
        player.on_chunk(chunk_of(&payloads, 1), 0);
        // frame 2 lost; frame 3 arrives ahead of the gap
        let at3 = player.on_chunk(chunk_of(&payloads, 3), 70_000);
        // the reaction group still fires, carrying the nack
        let cmds: Vec<&CommandMsg> = at3
            .iter()
            .filter_map(|a| match a {
                PlayerAction::SendCommand { msg, .. } => Some(msg),
                _ => None,
            })
            .collect();
        assert_eq!(cmds.len(), 2);
        assert!(cmds.iter().all(|m| m.ack_kind == AckKind::Nack));
        assert!(cmds.iter().all(|m| m.acked_frame_id == 1));
        // frame 3 is not stored: correction is rollback-driven
        assert!(at3
            .iter()
            .all(|a| !matches!(a, PlayerAction::StoreFrame { .. })));
        // third distinct frame closes the window: nack naming next_expected 2
        let at4 = player.on_chunk(chunk_of(&payloads, 4), 100_000);
        let st = statuses(&at4);
        assert_eq!(st.len(), 1);
        assert_eq!(st[0].kind, StatusKind::Nack);
        assert_eq!(st[0].next_expected_frame_id, 2);
        assert_eq!(st[0].window_end_frame_id, 4);
    }

    #[test]
    fn duplicate_frame_resends_previous_group() {
        let (trace, payloads) = fixture();
        let mut player = agent(&trace);
        for id in 1..=3u32 {
            player.on_chunk(chunk_of(&payloads, id), id as u64 * 33_333);
        }
        // server retransmits frame 3 because {C1, C2} were lost
        let actions = player.on_chunk(chunk_of(&payloads, 3), 200_000);
        assert_eq!(command_ids(&actions), vec![1, 2]);
        for a in &actions {
            if let PlayerAction::SendCommand { msg, resend, .. } = a {
                assert!(resend);
                assert_eq!(msg.send_ts_us, 200_000);
                // values replay verbatim from the capture
                let record = &trace.commands[msg.command_id as usize - 1];
                let (axes, buttons) =
                    CommandCodebook::from_commands(&trace.commands).encode_values(record);
                assert_eq!(msg.axes, axes);
                assert_eq!(msg.buttons, buttons);
            }
        }
        // duplicates do not enter the window: no status until frame 6
        assert!(statuses(&actions).is_empty());
    }

    #[test]
    fn single_frame_trace_closes_with_ack() {
        let (trace, payloads) = generate_trace(&GenSpec::new(1, 30)).unwrap();
        let mut player = agent(&trace);
        let actions = player.on_chunk(chunk_of(&payloads, 1), 10);
        assert!(matches!(
            actions[0],
            PlayerAction::StoreFrame { frame_id: 1, .. }
        ));
        assert_eq!(command_ids(&actions), Vec::<u32>::new());
        let st = statuses(&actions);
        assert_eq!(st.len(), 1);
        assert_eq!(st[0].kind, StatusKind::Ack);
        assert_eq!(st[0].window_end_frame_id, 1);
        assert_eq!(st[0].next_expected_frame_id, 2);
    }

    #[test]
    fn mismatched_header_discards_frame() {
        let (trace, payloads) = fixture();
        let mut player = agent(&trace);
        // payload claims frame 2 but travels under frame id 1
        let chunks = encode_frame(2, 0, &payloads[&2], 1200).unwrap();
        let forged = FrameChunk {
            frame_id: 1,
            ..chunks[0].clone()
        };
        let actions = player.on_chunk(forged, 5);
        assert!(actions.is_empty());
        assert_eq!(player.integrity_losses(), 1);
        assert_eq!(player.frames_stored(), 0);
        // the real frame 1 still goes through afterwards
        let actions = player.on_chunk(chunk_of(&payloads, 1), 10);
        assert!(matches!(
            actions[0],
            PlayerAction::StoreFrame { frame_id: 1, .. }
        ));
    }

    #[test]
    fn chunked_frame_stores_once_complete() {
        let spec = GenSpec {
            frame_body_size: 3000,
            ..GenSpec::new(2, 30)
        };
        let (trace, payloads) = generate_trace(&spec).unwrap();
        let mut player = agent(&trace);
        let mut chunks = encode_frame(1, 0, &payloads[&1], 1200).unwrap();
        assert_eq!(chunks.len(), 3);
        chunks.swap(0, 2);
        assert!(player.on_chunk(chunks[0].clone(), 1).is_empty());
        assert!(player.on_chunk(chunks[1].clone(), 2).is_empty());
        let actions = player.on_chunk(chunks[2].clone(), 3);
        match &actions[0] {
            PlayerAction::StoreFrame { frame_id, payload } => {
                assert_eq!(*frame_id, 1);
                assert_eq!(payload, &payloads[&1]);
            }
            other => panic!("expected store, got {other:?}"),
        }
    }

    #[test]
    fn stall_resends_group_once_per_timeout() {
        let (trace, payloads) = fixture();
        let mut player = agent(&trace);
        // no group yet: stall does nothing
        assert!(player.on_tick(1_000_000).is_empty());
        for id in 1..=3u32 {
            player.on_chunk(chunk_of(&payloads, id), id as u64 * 33_333);
        }
        let stall = player.params().stall_timeout_us;
        let t0 = 3 * 33_333;
        assert!(player.on_tick(t0 + stall - 1).is_empty());
        let actions = player.on_tick(t0 + stall);
        assert_eq!(command_ids(&actions), vec![1, 2]);
        // timer re-armed
        assert!(player.on_tick(t0 + stall + 1).is_empty());
    }

    #[test]
    fn old_frames_are_ignored() {
        let (trace, payloads) = fixture();
        let mut player = agent(&trace);
        player.on_chunk(chunk_of(&payloads, 1), 0);
        player.on_chunk(chunk_of(&payloads, 2), 1);
        let actions = player.on_chunk(chunk_of(&payloads, 1), 2);
        assert!(actions.is_empty());
        assert_eq!(player.redundant_frames(), 1);
        assert_eq!(player.next_expected_frame_id(), 3);
    }

    // A duplicate while sitting on a gap means the server's view is stale
    // (a window nack got lost): the re-sent group must carry a nack and a
    // direct gap report must go out even when no group exists.
    #[test]
    fn duplicate_with_known_gap_reports_nack() {
        let (trace, payloads) = fixture();
        let mut player = agent(&trace);
        player.on_chunk(chunk_of(&payloads, 1), 0);
        player.on_chunk(chunk_of(&payloads, 3), 1); // frame 2 missing
        let actions = player.on_chunk(chunk_of(&payloads, 3), 2); // duplicate
        let cmds: Vec<&CommandMsg> = actions
            .iter()
            .filter_map(|a| match a {
                PlayerAction::SendCommand {
                    msg, resend: true, ..
                } => Some(msg),
                _ => None,
            })
            .collect();
        assert_eq!(cmds.len(), 2);
        assert!(cmds.iter().all(|m| m.ack_kind == AckKind::Nack));
        let st = statuses(&actions);
        assert_eq!(st.len(), 1);
        assert_eq!(st[0].kind, StatusKind::Nack);
        assert_eq!(st[0].next_expected_frame_id, 2);
        assert_eq!(st[0].window_end_frame_id, 3);
    }

    #[test]
    fn rollback_redelivery_fills_gap_in_order() {
        let (trace, payloads) = fixture();
        let mut player = agent(&trace);
        player.on_chunk(chunk_of(&payloads, 1), 0);
        player.on_chunk(chunk_of(&payloads, 3), 1); // buffered, not stored
        assert_eq!(player.frames_stored(), 1);
        // rollback re-streams from frame 1
        let a1 = player.on_chunk(chunk_of(&payloads, 1), 2);
        assert!(a1.is_empty());
        let a2 = player.on_chunk(chunk_of(&payloads, 2), 3);
        assert!(matches!(
            a2[0],
            PlayerAction::StoreFrame { frame_id: 2, .. }
        ));
        let a3 = player.on_chunk(chunk_of(&payloads, 3), 4);
        assert!(matches!(
            a3[0],
            PlayerAction::StoreFrame { frame_id: 3, .. }
        ));
        // the reaction group after frame 3 fired at the buffered arrival,
        // not again at storage
        assert_eq!(command_ids(&a3), Vec::<u32>::new());
        assert_eq!(player.next_expected_frame_id(), 4);
    }
}
