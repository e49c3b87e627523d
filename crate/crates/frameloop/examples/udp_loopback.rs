//! Both agents over real UDP sockets on loopback, in one process.
//!
//! The same state machines that drive the simulator run here against the
//! operating system's clock and sockets: the server binds a command port
//! and streams to the player's frame port, the player stores frames to a
//! directory and answers with commands and window reports. The merged
//! event log feeds the same metrics pipeline as simulated runs.
//!
//! ```bash
//! cargo run --example udp_loopback
//! ```

use frameloop::event_log::EventKind;
use frameloop::metrics::compute_metrics;
use frameloop::player::PlayerParams;
use frameloop::server::ServerParams;
use frameloop::tracegen::{generate_trace, GenSpec};
use frameloop::udp::run_udp_pair;

fn main() {
    let spec = GenSpec {
        command_points: vec![(3, 2), (6, 1), (9, 1)],
        frame_body_size: 8_192, // several chunks per frame
        ..GenSpec::new(12, 30)
    };
    let (trace, payloads) = generate_trace(&spec).expect("valid spec");
    let frames_dir = std::path::PathBuf::from("target/example-frames");

    println!(
        "replaying {} frames over loopback UDP at 30fps...",
        trace.frames.len()
    );
    let log = run_udp_pair(
        &trace,
        &payloads,
        ServerParams::new(30),
        PlayerParams::new(),
        Some(frames_dir.clone()),
    )
    .expect("loopback replay runs");

    println!("outcome: {:?}", log.outcome);
    let stored: Vec<String> = log
        .events
        .iter()
        .filter(|e| e.kind == EventKind::FrameStored)
        .map(|e| e.get("frame_id").unwrap().to_string())
        .collect();
    println!("stored frames ({}): {}", stored.len(), stored.join(", "));
    println!("payload files in {}", frames_dir.display());

    let m = compute_metrics(&log.events).unwrap();
    println!(
        "player fps {:.2}, fps ratio {:.3}",
        m.player_fps, m.fps_ratio
    );
    println!(
        "response times: min {:.1}ms mean {:.1}ms max {:.1}ms",
        m.summary.min_us as f64 / 1_000.0,
        m.summary.mean_us / 1_000.0,
        m.summary.max_us as f64 / 1_000.0,
    );
}
