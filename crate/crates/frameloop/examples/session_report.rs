//! The metrics pipeline end to end: event log file in, CSV reports out.
//!
//! Simulates a mildly lossy session, writes its event log the way the
//! replay tools do, then reads the file back and derives `report.csv` and
//! `response_times.csv` from it. Demonstrates that metrics are a pure
//! function of the log: no access to the agents is needed.
//!
//! ```bash
//! cargo run --example session_report
//! ```

use std::fs;
use std::path::PathBuf;

use frameloop::channel::{DirectionConfig, ScriptedFault};
use frameloop::event_log::{parse_event_log, write_event_log};
use frameloop::metrics::{compute_metrics, write_report};
use frameloop::sim::{simulate_session, SimSetup};
use frameloop::tracegen::{generate_trace, GenSpec};

fn main() {
    let spec = GenSpec {
        command_points: vec![(4, 1), (9, 2), (14, 1), (19, 1)],
        frame_body_size: 1_200,
        ..GenSpec::new(24, 30)
    };
    let (trace, payloads) = generate_trace(&spec).expect("valid spec");

    let mut setup = SimSetup::new(trace, payloads);
    setup.channel.seed = 3;
    setup.channel.downlink = DirectionConfig {
        loss_prob: 0.03,
        base_delay_us: 5_000,
        jitter_us: 1_500,
        reorder_prob: 0.0,
    };
    setup.faults = vec![ScriptedFault::drop_frame(7)];
    let session = simulate_session(&setup).expect("session runs");

    let out = PathBuf::from("target/example-report");
    fs::create_dir_all(&out).unwrap();
    let log_path = out.join("session.csv");
    fs::write(&log_path, write_event_log(&session.events)).unwrap();
    println!(
        "event log: {} ({} events)",
        log_path.display(),
        session.events.len()
    );

    // from here on, only the file matters
    let events = parse_event_log(&fs::read(&log_path).unwrap()).expect("log parses");
    let metrics = compute_metrics(&events).expect("metrics derive");
    write_report(&metrics, &out).expect("reports written");

    println!("reports written to {}/", out.display());
    println!("\nreport.csv:");
    print!("{}", fs::read_to_string(out.join("report.csv")).unwrap());
    println!("\nresponse_times.csv:");
    print!(
        "{}",
        fs::read_to_string(out.join("response_times.csv")).unwrap()
    );
}
