//! Frame-loss recovery: windowed NACK and rollback.
//!
//! Drops frame 2 (and later frame 4) on the downlink with window w=3. The
//! player counts distinct incoming frames; frame 3 arrives ahead of the
//! gap, so the {C1, C2} reaction goes out carrying a NACK, and each closed
//! window that does not match the expected run emits a standalone NACK.
//! On every NACK the server rewinds its cursor to
//! `next_expected - w` (floor 1) and re-streams from there; already
//! received commands stay satisfied.
//!
//! ```bash
//! cargo run --example frame_loss_rollback
//! ```

use frameloop::channel::ScriptedFault;
use frameloop::event_log::EventKind;
use frameloop::metrics::compute_metrics;
use frameloop::sim::{simulate_session, SimSetup};
use frameloop::tracegen::{generate_trace, GenSpec};

fn main() {
    let spec = GenSpec {
        command_points: vec![(3, 2), (5, 1)],
        frame_body_size: 1_000,
        ..GenSpec::new(7, 30)
    };
    let (trace, payloads) = generate_trace(&spec).expect("valid spec");

    let mut setup = SimSetup::new(trace, payloads);
    setup.faults = vec![ScriptedFault::drop_frame(2), ScriptedFault::drop_frame(4)];

    let log = simulate_session(&setup).expect("session recovers");
    println!("window w = {}", setup.server.window_w);
    println!("\nrecovery timeline:");
    let mut last_retx: Option<u64> = None;
    for e in &log.events {
        match e.kind {
            EventKind::Dropped if e.get("msg") == Some("frame") => {
                println!(
                    "  {:>7}us  channel dropped frame {}",
                    e.time_us,
                    e.get("frame_id").unwrap()
                );
            }
            EventKind::CommandEmitted if e.get("ack") == Some("nack") => {
                let acked: u32 = e.get("acked").unwrap().parse().unwrap();
                println!(
                    "  {:>7}us  command {} carries NACK (next expected frame {})",
                    e.time_us,
                    e.get("command_id").unwrap(),
                    acked + 1,
                );
            }
            EventKind::StatusEmitted if e.get("status") == Some("nack") => {
                println!(
                    "  {:>7}us  window NACK: got through {}, next expected {}",
                    e.time_us,
                    e.get("window_end").unwrap(),
                    e.get("next_expected").unwrap(),
                );
            }
            EventKind::Retransmitted => {
                // a retransmission burst after a nack is the rollback
                let id: u64 = e.get("frame_id").unwrap().parse().unwrap();
                if last_retx.is_none_or(|t| e.time_us > t + 50_000) {
                    println!(
                        "  {:>7}us  rollback: server re-streams from frame {id}",
                        e.time_us
                    );
                }
                last_retx = Some(e.time_us);
            }
            EventKind::FrameStored => {
                println!(
                    "  {:>7}us  player stored frame {}",
                    e.time_us,
                    e.get("frame_id").unwrap()
                );
            }
            EventKind::Done => println!("  {:>7}us  server done", e.time_us),
            _ => {}
        }
    }

    let m = compute_metrics(&log.events).unwrap();
    println!("\nloss report:");
    println!(
        "  frames lost then recovered  {}",
        m.frames_lost_then_recovered
    );
    println!("  rollbacks (window NACKs)    {}", m.rollbacks);
    println!("  frame retransmissions       {}", m.frame_retransmissions);
}
