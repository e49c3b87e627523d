//! Command-loss recovery, step by step.
//!
//! Drops the {C1, C2} group on the uplink. While the server waits at the
//! dependency point before frame 4, its command timeout fires and it
//! retransmits frame 3. The player sees the same frame id twice in a row,
//! concludes its commands were lost, and re-sends the group; streaming then
//! resumes where it paused.
//!
//! ```bash
//! cargo run --example command_loss
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
    setup.faults = vec![
        ScriptedFault::drop_command(1),
        ScriptedFault::drop_command(2),
    ];

    let log = simulate_session(&setup).expect("session recovers");
    println!("recovery timeline:");
    for e in &log.events {
        let line = match e.kind {
            EventKind::Dropped => Some(format!(
                "channel dropped {} {}",
                e.get("msg").unwrap(),
                e.get("command_id").or(e.get("frame_id")).unwrap()
            )),
            EventKind::Retransmitted => Some(format!(
                "server retransmitted frame {} (command timeout)",
                e.get("frame_id").unwrap()
            )),
            EventKind::CommandEmitted if e.get("resend") == Some("1") => Some(format!(
                "player re-sent command {} after the duplicate frame",
                e.get("command_id").unwrap()
            )),
            EventKind::FrameStored => Some(format!(
                "player stored frame {}",
                e.get("frame_id").unwrap()
            )),
            EventKind::Done => Some("server done".into()),
            _ => None,
        };
        if let Some(line) = line {
            println!("  {:>7}us  {line}", e.time_us);
        }
    }

    let m = compute_metrics(&log.events).unwrap();
    println!("\nloss report:");
    println!("  frame retransmissions  {}", m.frame_retransmissions);
    println!("  command group re-sends {}", m.command_resends);
    println!(
        "  commands sent/received {}/{}",
        m.commands_sent, m.commands_received_at_server
    );
}
