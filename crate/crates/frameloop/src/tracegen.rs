//! Deterministic synthetic capture traces.
//!
//! Real sessions are captured from live play; for tests, benchmarks and
//! demos we synthesize traces with the same file formats: paced frame
//! timestamps, command groups pinned 1us after the frame they react to, and
//! frame payload files that carry a valid identity header followed by
//! seed-deterministic pseudo-random bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::trace::{
    extract_sync_order, serialize_command_log, serialize_frame_manifest, serialize_sync_order,
    CaptureTrace, CommandRecord, FrameRecord, PayloadStore,
};
use crate::wire::make_frame_payload;

const AXIS_NAMES: [&str; 6] = ["LX", "LY", "RX", "RY", "LT", "RT"];
const BUTTON_NAMES: [&str; 6] = ["A", "B", "X", "Y", "LB", "RB"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenError {
    #[error("invalid generator spec: {0}")]
    SpecError(String),
}

/// What to synthesize.
#[derive(Debug, Clone)]
pub struct GenSpec {
    pub game_name: String,
    pub n_frames: u32,
    pub fps: u32,
    /// `(after_frame_id, n_commands)`: a reaction point of `n_commands`
    /// commands right after that frame. Must be strictly increasing by
    /// frame id.
    pub command_points: Vec<(u32, u32)>,
    /// Octets of opaque body per frame, before the 16-octet header.
    pub frame_body_size: usize,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(n_frames: u32, fps: u32) -> Self {
        GenSpec {
            game_name: "synthetic".into(),
            n_frames,
            fps,
            command_points: Vec::new(),
            frame_body_size: 256,
            seed: 1,
        }
    }

    fn validate(&self) -> Result<(), GenError> {
        if self.n_frames == 0 {
            return Err(GenError::SpecError("n_frames must be >= 1".into()));
        }
        if self.fps == 0 || self.fps > 100_000 {
            return Err(GenError::SpecError(format!(
                "fps {} out of range",
                self.fps
            )));
        }
        let mut prev = 0u32;
        for &(after, count) in &self.command_points {
            if after == 0 || after > self.n_frames {
                return Err(GenError::SpecError(format!(
                    "command point after frame {after} outside 1..={}",
                    self.n_frames
                )));
            }
            if after <= prev && prev != 0 {
                return Err(GenError::SpecError(
                    "command points must be strictly increasing by frame id".into(),
                ));
            }
            if count == 0 {
                return Err(GenError::SpecError("n_commands must be >= 1".into()));
            }
            prev = after;
        }
        Ok(())
    }
}

/// Generate a trace plus the frame payload bytes, keyed by frame id.
pub fn generate_trace(spec: &GenSpec) -> Result<(CaptureTrace, PayloadStore), GenError> {
    spec.validate()?;
    let interval_us = 1_000_000u64 / spec.fps as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut frames = Vec::with_capacity(spec.n_frames as usize);
    let mut payloads = BTreeMap::new();
    for id in 1..=spec.n_frames {
        let ts_us = (id as u64 - 1) * interval_us;
        let mut body = vec![0u8; spec.frame_body_size];
        rng.fill_bytes(&mut body);
        payloads.insert(id, make_frame_payload(id, ts_us, &body));
        frames.push(FrameRecord {
            id,
            ts_us,
            payload_ref: format!("f_{id}.bin"),
        });
    }

    let mut commands = Vec::new();
    for &(after, count) in &spec.command_points {
        let gate_ts = frames[after as usize - 1].ts_us;
        for _ in 0..count {
            let id = commands.len() as u32 + 1;
            let mut axes = BTreeMap::new();
            for _ in 0..rng.gen_range(1..=2usize) {
                let name = AXIS_NAMES[rng.gen_range(0..AXIS_NAMES.len())];
                axes.insert(name.to_string(), rng.gen_range(-32767..=32767));
            }
            let mut buttons = BTreeMap::new();
            for _ in 0..rng.gen_range(0..=2usize) {
                let name = BUTTON_NAMES[rng.gen_range(0..BUTTON_NAMES.len())];
                buttons.insert(name.to_string(), rng.gen_range(0..=1u8));
            }
            commands.push(CommandRecord {
                id,
                ts_us: gate_ts + 1,
                axes,
                buttons,
            });
        }
    }

    let sync = extract_sync_order(&frames, &commands)
        .expect("generated records always merge into a valid sync order");
    Ok((
        CaptureTrace {
            game_name: spec.game_name.clone(),
            fps: spec.fps,
            frames,
            commands,
            sync,
        },
        payloads,
    ))
}

/// Write a trace and its payload files in the standard on-disk layout:
/// `commands.json`, `frames.csv`, `sync.txt`, `trace.yaml`, and one
/// `f_<id>.bin` per frame.
pub fn write_trace_dir(
    trace: &CaptureTrace,
    payloads: &PayloadStore,
    dir: &Path,
) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("commands.json"),
        serialize_command_log(&trace.commands),
    )?;
    fs::write(
        dir.join("frames.csv"),
        serialize_frame_manifest(&trace.frames),
    )?;
    fs::write(dir.join("sync.txt"), serialize_sync_order(&trace.sync))?;
    let mut meta = fs::File::create(dir.join("trace.yaml"))?;
    writeln!(meta, "game_name: {}", trace.game_name)?;
    writeln!(meta, "fps: {}", trace.fps)?;
    for frame in &trace.frames {
        let payload = payloads
            .get(&frame.id)
            .ok_or_else(|| std::io::Error::other(format!("no payload for frame {}", frame.id)))?;
        fs::write(dir.join(&frame.payload_ref), payload)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{validate_trace, SyncToken};
    use crate::wire::read_frame_payload_header;
    use proptest::prelude::*;

    fn interleaved_spec() -> GenSpec {
        GenSpec {
            command_points: vec![(3, 2), (5, 1)],
            ..GenSpec::new(7, 30)
        }
    }

    #[test]
    fn interleaved_points_give_expected_sync_order() {
        let (trace, _) = generate_trace(&interleaved_spec()).unwrap();
        let expect = vec![
            SyncToken::frame(1),
            SyncToken::frame(2),
            SyncToken::frame(3),
            SyncToken::command(1),
            SyncToken::command(2),
            SyncToken::frame(4),
            SyncToken::frame(5),
            SyncToken::command(3),
            SyncToken::frame(6),
            SyncToken::frame(7),
        ];
        assert_eq!(trace.sync.tokens(), expect);
    }

    #[test]
    fn single_frame_no_commands() {
        let (trace, payloads) = generate_trace(&GenSpec::new(1, 30)).unwrap();
        assert_eq!(trace.sync.tokens(), vec![SyncToken::frame(1)]);
        assert_eq!(payloads.len(), 1);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_trace(&interleaved_spec()).unwrap();
        let b = generate_trace(&interleaved_spec()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = generate_trace(&GenSpec {
            seed: 2,
            ..interleaved_spec()
        })
        .unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn payloads_carry_matching_headers() {
        let (trace, payloads) = generate_trace(&interleaved_spec()).unwrap();
        for frame in &trace.frames {
            let header = read_frame_payload_header(&payloads[&frame.id]).unwrap();
            assert_eq!(header.frame_id, frame.id);
            assert_eq!(header.capture_ts_us, frame.ts_us);
        }
    }

    #[test]
    fn frame_spacing_is_exact() {
        let (trace, _) = generate_trace(&GenSpec::new(4, 30)).unwrap();
        let ts: Vec<u64> = trace.frames.iter().map(|f| f.ts_us).collect();
        assert_eq!(ts, vec![0, 33333, 66666, 99999]);
        // commands sit 1us after their gating frame
        let (trace, _) = generate_trace(&interleaved_spec()).unwrap();
        assert_eq!(trace.commands[0].ts_us, 66667);
        assert_eq!(trace.commands[2].ts_us, 4 * 33333 + 1);
    }

    #[test]
    fn bad_specs_rejected() {
        assert!(generate_trace(&GenSpec::new(0, 30)).is_err());
        let mut s = GenSpec::new(5, 30);
        s.command_points = vec![(6, 1)];
        assert!(generate_trace(&s).is_err());
        s.command_points = vec![(2, 0)];
        assert!(generate_trace(&s).is_err());
        s.command_points = vec![(3, 1), (2, 1)];
        assert!(generate_trace(&s).is_err());
    }

    proptest! {
        #[test]
        fn generated_traces_validate_clean(
            n_frames in 1u32..40,
            fps in 1u32..120,
            seed in any::<u64>(),
            points in prop::collection::btree_map(1u32..40, 1u32..4, 0..6),
        ) {
            let spec = GenSpec {
                command_points: points.into_iter().filter(|&(a, _)| a <= n_frames).collect(),
                seed,
                frame_body_size: 32,
                ..GenSpec::new(n_frames, fps)
            };
            let (trace, payloads) = generate_trace(&spec).unwrap();
            prop_assert!(validate_trace(&trace).is_empty());
            prop_assert_eq!(payloads.len(), n_frames as usize);
            for c in &trace.commands {
                for &v in c.axes.values() {
                    prop_assert!((-32767..=32767).contains(&v));
                }
                for &b in c.buttons.values() {
                    prop_assert!(b <= 1);
                }
            }
        }
    }
}
