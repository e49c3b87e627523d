//! Synthesize a capture trace and write it in the standard on-disk layout.
//!
//! Produces `commands.json` (the joystick log), `frames.csv` (the frame
//! manifest), `sync.txt` (the shared sync order), `trace.yaml` (metadata)
//! and one `f_<id>.bin` payload per frame, then loads everything back to
//! show the round trip.
//!
//! ```bash
//! cargo run --example generate_trace -- /tmp/my-trace
//! ```

use std::path::PathBuf;

use frameloop::config::load_trace;
use frameloop::trace::validate_trace;
use frameloop::tracegen::{generate_trace, write_trace_dir, GenSpec};

fn main() {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/example-trace".into())
        .into();

    let spec = GenSpec {
        game_name: "kart-demo".into(),
        n_frames: 30,
        fps: 30,
        command_points: vec![(3, 2), (9, 1), (15, 2), (21, 1), (27, 1)],
        frame_body_size: 4_096,
        seed: 42,
    };
    let (trace, payloads) = generate_trace(&spec).expect("valid spec");
    write_trace_dir(&trace, &payloads, &dir).expect("trace dir written");

    println!("wrote {} -> ", dir.display());
    println!("  frames    {}", trace.frames.len());
    println!("  commands  {}", trace.commands.len());
    println!(
        "  payloads  {} x {} octets (16-octet identity header + body)",
        payloads.len(),
        spec.frame_body_size + 16
    );
    let tokens: Vec<String> = trace
        .sync
        .tokens()
        .iter()
        .take(12)
        .map(|t| t.to_string())
        .collect();
    println!("  sync      {} ...", tokens.join(" "));

    let sample = &trace.commands[0];
    println!(
        "  command 1 at {}us: axes {:?}, buttons {:?}",
        sample.ts_us, sample.axes, sample.buttons
    );

    let (loaded, loaded_payloads) =
        load_trace(&dir, &dir.join("sync.txt"), &dir.join("commands.json"))
            .expect("trace loads back");
    assert_eq!(loaded, trace);
    assert_eq!(loaded_payloads, payloads);
    assert!(validate_trace(&loaded).is_empty());
    println!("\nround trip verified: parsed files equal the generated trace");
}
