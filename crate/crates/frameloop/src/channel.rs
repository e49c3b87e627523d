//! Seeded channel impairment model and scripted faults.
//!
//! Each direction draws loss, jitter and reorder decisions from its own
//! ChaCha stream derived from the session seed, so a run is reproducible
//! bit-for-bit across platforms. Scripted faults target specific datagrams
//! (a frame id, a command id, or the nth datagram of a direction) and fire
//! at most once each; they bypass the random draws entirely so figure
//! scenarios replay exactly regardless of the seed.
//!
//! Reordering is modelled as an extra deterministic delay on the selected
//! datagram: enough to let a later send overtake it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChannelError {
    #[error("invalid channel config: {0}")]
    Invalid(String),
}

/// Impairments for one direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionConfig {
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default)]
    pub base_delay_us: u64,
    /// Uniform extra delay in [-jitter_us, +jitter_us], floored at zero
    /// total delay.
    #[serde(default)]
    pub jitter_us: u64,
    #[serde(default)]
    pub reorder_prob: f64,
}

impl Default for DirectionConfig {
    fn default() -> Self {
        DirectionConfig {
            loss_prob: 0.0,
            base_delay_us: 0,
            jitter_us: 0,
            reorder_prob: 0.0,
        }
    }
}

impl DirectionConfig {
    fn validate(&self, name: &str) -> Result<(), ChannelError> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(ChannelError::Invalid(format!(
                "{name}.loss_prob {} outside [0, 1]",
                self.loss_prob
            )));
        }
        if !(0.0..=1.0).contains(&self.reorder_prob) {
            return Err(ChannelError::Invalid(format!(
                "{name}.reorder_prob {} outside [0, 1]",
                self.reorder_prob
            )));
        }
        Ok(())
    }
}

/// Both directions plus the session seed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub uplink: DirectionConfig,
    #[serde(default)]
    pub downlink: DirectionConfig,
}

impl ChannelConfig {
    /// A perfect channel: no loss, no delay.
    pub fn lossless() -> Self {
        ChannelConfig::default()
    }

    /// Symmetric fixed one-way delay, no loss.
    pub fn symmetric_delay(delay_us: u64) -> Self {
        let dir = DirectionConfig {
            base_delay_us: delay_us,
            ..Default::default()
        };
        ChannelConfig {
            seed: 0,
            uplink: dir,
            downlink: dir,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        self.uplink.validate("uplink")?;
        self.downlink.validate("downlink")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Uplink,
    Downlink,
}

/// Which datagram a scripted fault targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultMatch {
    FrameId(u32),
    CommandId(u32),
    /// 1-based position among the direction's datagrams.
    NthDatagram(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultAction {
    Drop,
    Delay(u64),
}

/// A deterministic, single-shot impairment. Add the same fault twice to hit
/// the first two matching datagrams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptedFault {
    pub direction: Direction,
    pub matcher: FaultMatch,
    pub action: FaultAction,
}

impl ScriptedFault {
    pub fn drop_frame(id: u32) -> Self {
        ScriptedFault {
            direction: Direction::Downlink,
            matcher: FaultMatch::FrameId(id),
            action: FaultAction::Drop,
        }
    }

    pub fn drop_command(id: u32) -> Self {
        ScriptedFault {
            direction: Direction::Uplink,
            matcher: FaultMatch::CommandId(id),
            action: FaultAction::Drop,
        }
    }
}

/// What the channel sees of a datagram, for fault matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatagramKind {
    Frame { frame_id: u32 },
    Command { command_id: u32 },
    Status,
}

/// Channel decision for one datagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Deliver { arrival_us: u64 },
    Drop,
}

/// One direction's live state: its RNG stream, datagram counter, and the
/// unconsumed faults aimed at it.
#[derive(Debug)]
pub struct DirectionChannel {
    cfg: DirectionConfig,
    rng: ChaCha8Rng,
    sent: u64,
    faults: Vec<(ScriptedFault, bool)>,
}

const UPLINK_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

impl DirectionChannel {
    pub fn new(
        direction: Direction,
        cfg: DirectionConfig,
        seed: u64,
        faults: &[ScriptedFault],
    ) -> Self {
        let stream_seed = match direction {
            Direction::Downlink => seed,
            Direction::Uplink => seed ^ UPLINK_SALT,
        };
        DirectionChannel {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(stream_seed),
            sent: 0,
            faults: faults
                .iter()
                .filter(|f| f.direction == direction)
                .map(|f| (*f, false))
                .collect(),
        }
    }

    /// Decide one datagram's fate. Scripted faults short-circuit the random
    /// draws so their outcomes never depend on the seed.
    pub fn process(&mut self, kind: DatagramKind, now_us: u64) -> Verdict {
        self.sent += 1;
        if let Some(action) = self.take_fault(kind) {
            return match action {
                FaultAction::Drop => Verdict::Drop,
                FaultAction::Delay(extra_us) => Verdict::Deliver {
                    arrival_us: now_us + self.cfg.base_delay_us + extra_us,
                },
            };
        }
        if self.rng.gen::<f64>() < self.cfg.loss_prob {
            return Verdict::Drop;
        }
        let jitter = self
            .rng
            .gen_range(-(self.cfg.jitter_us as i64)..=self.cfg.jitter_us as i64);
        let mut delay = (self.cfg.base_delay_us as i64 + jitter).max(0) as u64;
        if self.rng.gen::<f64>() < self.cfg.reorder_prob {
            delay += self.reorder_extra();
        }
        Verdict::Deliver {
            arrival_us: now_us + delay,
        }
    }

    /// Extra delay a reordered datagram picks up: one base delay plus the
    /// jitter span, so a subsequent datagram can overtake it.
    fn reorder_extra(&self) -> u64 {
        (self.cfg.base_delay_us + self.cfg.jitter_us).max(1_000)
    }

    fn take_fault(&mut self, kind: DatagramKind) -> Option<FaultAction> {
        let sent = self.sent;
        for (fault, consumed) in self.faults.iter_mut() {
            if *consumed {
                continue;
            }
            let hit = match (fault.matcher, kind) {
                (FaultMatch::FrameId(want), DatagramKind::Frame { frame_id }) => want == frame_id,
                (FaultMatch::CommandId(want), DatagramKind::Command { command_id }) => {
                    want == command_id
                }
                (FaultMatch::NthDatagram(n), _) => n == sent,
                _ => false,
            };
            if hit {
                *consumed = true;
                return Some(fault.action);
            }
        }
        None
    }

    /// Total datagrams offered to this direction so far.
    pub fn datagrams_seen(&self) -> u64 {
        self.sent
    }

    /// Faults that never matched anything (a scripting mistake worth
    /// surfacing in diagnostics).
    pub fn unconsumed_faults(&self) -> Vec<ScriptedFault> {
        self.faults
            .iter()
            .filter(|(_, consumed)| !consumed)
            .map(|(f, _)| *f)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(id: u32) -> DatagramKind {
        DatagramKind::Frame { frame_id: id }
    }

    #[test]
    fn lossless_zero_delay_is_identity() {
        let mut ch = DirectionChannel::new(Direction::Downlink, DirectionConfig::default(), 7, &[]);
        for i in 0..100 {
            assert_eq!(
                ch.process(frame(i), i as u64 * 10),
                Verdict::Deliver {
                    arrival_us: i as u64 * 10,
                }
            );
        }
    }

    #[test]
    fn scripted_drop_fires_once() {
        let faults = [ScriptedFault::drop_frame(2)];
        let mut ch =
            DirectionChannel::new(Direction::Downlink, DirectionConfig::default(), 7, &faults);
        assert!(matches!(ch.process(frame(1), 0), Verdict::Deliver { .. }));
        assert_eq!(ch.process(frame(2), 10), Verdict::Drop);
        // retransmission of the same id goes through
        assert!(matches!(ch.process(frame(2), 20), Verdict::Deliver { .. }));
        assert!(ch.unconsumed_faults().is_empty());
    }

    #[test]
    fn repeated_fault_hits_first_two_matches() {
        let faults = [ScriptedFault::drop_frame(2), ScriptedFault::drop_frame(2)];
        let mut ch =
            DirectionChannel::new(Direction::Downlink, DirectionConfig::default(), 7, &faults);
        assert_eq!(ch.process(frame(2), 0), Verdict::Drop);
        assert_eq!(ch.process(frame(2), 1), Verdict::Drop);
        assert!(matches!(ch.process(frame(2), 2), Verdict::Deliver { .. }));
    }

    #[test]
    fn nth_datagram_counts_per_direction() {
        let faults = [ScriptedFault {
            direction: Direction::Uplink,
            matcher: FaultMatch::NthDatagram(2),
            action: FaultAction::Drop,
        }];
        let mut ch =
            DirectionChannel::new(Direction::Uplink, DirectionConfig::default(), 7, &faults);
        assert!(matches!(
            ch.process(DatagramKind::Status, 0),
            Verdict::Deliver { .. }
        ));
        assert_eq!(
            ch.process(DatagramKind::Command { command_id: 9 }, 0),
            Verdict::Drop
        );
    }

    #[test]
    fn delay_fault_is_deterministic() {
        let faults = [ScriptedFault {
            direction: Direction::Downlink,
            matcher: FaultMatch::FrameId(1),
            action: FaultAction::Delay(5_000),
        }];
        let cfg = DirectionConfig {
            base_delay_us: 100,
            jitter_us: 50,
            ..Default::default()
        };
        let mut ch = DirectionChannel::new(Direction::Downlink, cfg, 7, &faults);
        assert_eq!(
            ch.process(frame(1), 10),
            Verdict::Deliver { arrival_us: 5_110 }
        );
    }

    #[test]
    fn same_seed_same_stream() {
        let cfg = DirectionConfig {
            loss_prob: 0.3,
            base_delay_us: 1_000,
            jitter_us: 500,
            reorder_prob: 0.1,
        };
        let run = |seed| {
            let mut ch = DirectionChannel::new(Direction::Downlink, cfg, seed, &[]);
            (0..200)
                .map(|i| ch.process(frame(i), 0))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    // Seeded binomial check: empirical loss within 3 sigma of p.
    #[test]
    fn empirical_loss_tracks_probability() {
        let n = 100_000u64;
        let p = 0.1;
        let cfg = DirectionConfig {
            loss_prob: p,
            ..Default::default()
        };
        let mut ch = DirectionChannel::new(Direction::Downlink, cfg, 42, &[]);
        let dropped = (0..n)
            .filter(|&i| ch.process(frame(i as u32), 0) == Verdict::Drop)
            .count() as f64;
        let rate = dropped / n as f64;
        let tolerance = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            (rate - p).abs() <= tolerance,
            "rate {rate} outside {p} +- {tolerance}"
        );
    }

    #[test]
    fn invalid_probability_rejected() {
        let cfg = ChannelConfig {
            seed: 0,
            uplink: DirectionConfig {
                loss_prob: 1.5,
                ..Default::default()
            },
            downlink: DirectionConfig::default(),
        };
        assert!(cfg.validate().is_err());
    }
}
