//! The basic action/reaction loop on a perfect channel.
//!
//! Builds a 7-frame trace whose sync order interleaves two reaction points
//! ({C1,C2} after F3, {C3} after F5), replays it in virtual time, and walks
//! through the event log: frames paced at 30fps, the server pausing at each
//! dependency point until the player's commands arrive, and windowed ACKs
//! flowing back.
//!
//! ```bash
//! cargo run --example lossless_replay
//! ```

use frameloop::event_log::EventKind;
use frameloop::metrics::compute_metrics;
use frameloop::sim::{simulate_session, SimSetup};
use frameloop::tracegen::{generate_trace, GenSpec};

fn main() {
    let spec = GenSpec {
        command_points: vec![(3, 2), (5, 1)],
        frame_body_size: 2_000,
        ..GenSpec::new(7, 30)
    };
    let (trace, payloads) = generate_trace(&spec).expect("valid spec");

    println!("sync order:");
    let tokens: Vec<String> = trace.sync.tokens().iter().map(|t| t.to_string()).collect();
    println!("  {{{}}}", tokens.join(", "));

    let setup = SimSetup::new(trace, payloads);
    let log = simulate_session(&setup).expect("lossless session runs");

    println!("\nreplay timeline:");
    for e in &log.events {
        match e.kind {
            EventKind::FrameStored => {
                println!(
                    "  {:>7}us  player stored frame {}",
                    e.time_us,
                    e.get("frame_id").unwrap()
                );
            }
            EventKind::CommandEmitted => {
                println!(
                    "  {:>7}us  player sent command {} (ack={} through frame {})",
                    e.time_us,
                    e.get("command_id").unwrap(),
                    e.get("ack").unwrap(),
                    e.get("acked").unwrap(),
                );
            }
            EventKind::StatusEmitted => {
                println!(
                    "  {:>7}us  player window report: {} through frame {}",
                    e.time_us,
                    e.get("status").unwrap(),
                    e.get("window_end").unwrap(),
                );
            }
            EventKind::Done => println!("  {:>7}us  server done", e.time_us),
            _ => {}
        }
    }

    let m = compute_metrics(&log.events).expect("log is well-formed");
    println!("\nmetrics:");
    println!("  server fps     {:.2}", m.server_fps);
    println!("  player fps     {:.2}", m.player_fps);
    println!("  fps ratio      {:.3}", m.fps_ratio);
    println!("  command ratio  {:.3}", m.command_ratio);
    println!(
        "  response time  min {}us  mean {:.0}us  max {}us ({} samples)",
        m.summary.min_us, m.summary.mean_us, m.summary.max_us, m.summary.count
    );
}
