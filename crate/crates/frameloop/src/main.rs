//! Command-line front end: trace generation, sync extraction, simulated and
//! UDP replay, and report generation. All heavy lifting lives in the
//! library; this binary parses flags, wires files together, and maps
//! outcomes to exit codes (0 ok, 1 usage, 2 config, 3 runtime).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use frameloop::config::{
    load_sync, load_trace, parse_fault_arg, PlayerConfigFile, ServerConfigFile, SimConfigFile,
};
use frameloop::event_log::{parse_event_log, write_event_log, SimEvent};
use frameloop::metrics::{compute_metrics, render_report, write_report};
use frameloop::sim::{simulate_session, SessionOutcome, SimError, SimSetup};
use frameloop::trace::{
    extract_sync_order, parse_command_log, parse_frame_manifest, serialize_sync_order,
};
use frameloop::tracegen::{generate_trace, write_trace_dir, GenSpec};
use frameloop::udp::{run_udp_player, run_udp_server, UdpError, UdpOutcome, UdpRun};

#[derive(Parser)]
#[command(
    name = "frameloop",
    version,
    about = "Replay captured cloud-gaming sessions: frames down, commands up, metrics out"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic capture trace into a directory
    GenTrace {
        /// Number of frames
        #[arg(long)]
        frames: u32,
        /// Nominal pacing rate
        #[arg(long, default_value_t = 30)]
        fps: u32,
        /// Reaction point AFTER:COUNT (repeatable), e.g. --cmd-point 3:2
        #[arg(long = "cmd-point", value_name = "AFTER:COUNT")]
        cmd_points: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Opaque body octets per frame payload
        #[arg(long, default_value_t = 1024)]
        body_size: usize,
        #[arg(long, default_value = "synthetic")]
        game: String,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive the sync order from a command log and a frame manifest
    ExtractSync {
        #[arg(long)]
        commands: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a session over the seeded simulated channel
    Sim {
        #[arg(long)]
        server_config: PathBuf,
        #[arg(long)]
        player_config: PathBuf,
        /// Channel, faults and horizon (YAML)
        #[arg(long)]
        channel_config: PathBuf,
        /// Extra scripted fault DIRECTION:MATCH:ACTION (repeatable),
        /// e.g. --fault downlink:frame_id:2:drop
        #[arg(long = "fault", value_name = "SPEC")]
        faults: Vec<String>,
        /// Override the channel seed from the config file
        #[arg(long)]
        seed: Option<u64>,
        /// Event log output file
        #[arg(long)]
        log: PathBuf,
    },
    /// Run the streaming server agent over UDP
    Server {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        log: PathBuf,
    },
    /// Run the player agent over UDP
    Player {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        log: PathBuf,
    },
    /// Compute QoE/QoS reports from an event log
    Report {
        #[arg(long)]
        log: PathBuf,
        /// Output directory for report.csv and response_times.csv
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Usage(String),
    Config(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenTrace {
            frames,
            fps,
            cmd_points,
            seed,
            body_size,
            game,
            out,
        } => {
            let mut points = Vec::new();
            for spec in &cmd_points {
                let (after, count) = spec.split_once(':').ok_or_else(|| {
                    CliError::Usage(format!("--cmd-point {spec:?} must be AFTER:COUNT"))
                })?;
                let after = after.parse().map_err(|_| {
                    CliError::Usage(format!("bad frame id in --cmd-point {spec:?}"))
                })?;
                let count = count
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad count in --cmd-point {spec:?}")))?;
                points.push((after, count));
            }
            let spec = GenSpec {
                game_name: game,
                n_frames: frames,
                fps,
                command_points: points,
                frame_body_size: body_size,
                seed,
            };
            let (trace, payloads) = generate_trace(&spec).map_err(config_err)?;
            write_trace_dir(&trace, &payloads, &out).map_err(runtime_err)?;
            println!(
                "wrote trace: {} frames, {} commands, {} sync tokens -> {}",
                trace.frames.len(),
                trace.commands.len(),
                trace.sync.tokens().len(),
                out.display()
            );
            Ok(())
        }
        Command::ExtractSync {
            commands,
            manifest,
            out,
        } => {
            let cmd_bytes = std::fs::read(&commands)
                .map_err(|e| config_err(format!("{}: {e}", commands.display())))?;
            let man_bytes = std::fs::read(&manifest)
                .map_err(|e| config_err(format!("{}: {e}", manifest.display())))?;
            let cmds = parse_command_log(&cmd_bytes).map_err(config_err)?;
            let frames = parse_frame_manifest(&man_bytes).map_err(config_err)?;
            let sync = extract_sync_order(&frames, &cmds).map_err(config_err)?;
            std::fs::write(&out, serialize_sync_order(&sync)).map_err(runtime_err)?;
            println!(
                "wrote sync order: {} tokens -> {}",
                sync.tokens().len(),
                out.display()
            );
            Ok(())
        }
        Command::Sim {
            server_config,
            player_config,
            channel_config,
            faults,
            seed,
            log,
        } => {
            let server_cfg = ServerConfigFile::load(&server_config).map_err(config_err)?;
            let player_cfg = PlayerConfigFile::load(&player_config).map_err(config_err)?;
            let sim_cfg = SimConfigFile::load(&channel_config).map_err(config_err)?;
            if server_cfg.window_w != player_cfg.window_w {
                return Err(CliError::Config(format!(
                    "window_w mismatch: server {} vs player {}",
                    server_cfg.window_w, player_cfg.window_w
                )));
            }
            let (mut trace, payloads) = load_trace(
                &server_cfg.trace_dir,
                &server_cfg.sync_file,
                &player_cfg.command_log,
            )
            .map_err(config_err)?;
            if player_cfg.sync_file != server_cfg.sync_file {
                let player_sync = load_sync(&player_cfg.sync_file).map_err(config_err)?;
                if player_sync != trace.sync {
                    return Err(CliError::Config(
                        "server and player sync order files disagree".into(),
                    ));
                }
            }
            trace.fps = server_cfg.fps;
            let mut all_faults = sim_cfg.faults().map_err(config_err)?;
            for spec in &faults {
                all_faults.push(parse_fault_arg(spec).map_err(config_err)?);
            }
            let mut setup = SimSetup::new(trace, payloads);
            setup.server = server_cfg.server_params();
            setup.player = player_cfg.player_params();
            setup.channel = sim_cfg.channel;
            if let Some(seed) = seed {
                setup.channel.seed = seed;
            }
            setup.faults = all_faults;
            if let Some(h) = sim_cfg.horizon_us {
                setup.horizon_us = h;
            }
            match simulate_session(&setup) {
                Ok(session) => {
                    write_log(&session.events, &log)?;
                    match session.outcome {
                        SessionOutcome::Done => {
                            println!(
                                "session done: {} events -> {}",
                                session.events.len(),
                                log.display()
                            );
                            Ok(())
                        }
                        SessionOutcome::Aborted(reason) => {
                            Err(CliError::Runtime(format!("session aborted: {reason}")))
                        }
                    }
                }
                Err(SimError::Config(m)) => Err(CliError::Config(m)),
                Err(SimError::HorizonExceeded {
                    horizon_us,
                    server_state,
                    player_state,
                    events,
                }) => {
                    write_log(&events, &log)?;
                    eprintln!("server state: {server_state}");
                    eprintln!("player state: {player_state}");
                    Err(CliError::Runtime(format!(
                        "virtual horizon of {horizon_us}us exceeded; partial log written to {}",
                        log.display()
                    )))
                }
                Err(SimError::Deadlock {
                    server_state,
                    player_state,
                    events,
                }) => {
                    write_log(&events, &log)?;
                    eprintln!("server state: {server_state}");
                    eprintln!("player state: {player_state}");
                    Err(CliError::Runtime(
                        "event queue drained without completion".into(),
                    ))
                }
            }
        }
        Command::Server { config, log } => {
            let cfg = ServerConfigFile::load(&config).map_err(config_err)?;
            let run = run_udp_server(&cfg).map_err(map_udp_err)?;
            finish_udp(run, &log)
        }
        Command::Player { config, log } => {
            let cfg = PlayerConfigFile::load(&config).map_err(config_err)?;
            let run = run_udp_player(&cfg).map_err(map_udp_err)?;
            finish_udp(run, &log)
        }
        Command::Report { log, out } => {
            let bytes =
                std::fs::read(&log).map_err(|e| config_err(format!("{}: {e}", log.display())))?;
            let events = parse_event_log(&bytes).map_err(config_err)?;
            let metrics = compute_metrics(&events).map_err(config_err)?;
            write_report(&metrics, &out).map_err(runtime_err)?;
            print!("{}", String::from_utf8_lossy(&render_report(&metrics)));
            Ok(())
        }
    }
}

fn write_log(events: &[SimEvent], path: &PathBuf) -> Result<(), CliError> {
    std::fs::write(path, write_event_log(events))
        .map_err(|e| runtime_err(format!("cannot write {}: {e}", path.display())))
}

fn map_udp_err(e: UdpError) -> CliError {
    match e {
        UdpError::Config(c) => CliError::Config(c.to_string()),
        UdpError::Invalid(m) => CliError::Config(m),
        other => CliError::Runtime(other.to_string()),
    }
}

fn finish_udp(run: UdpRun, log: &PathBuf) -> Result<(), CliError> {
    write_log(&run.events, log)?;
    match run.outcome {
        UdpOutcome::Done => {
            println!(
                "session done: {} events -> {}",
                run.events.len(),
                log.display()
            );
            Ok(())
        }
        UdpOutcome::Aborted(reason) => Err(CliError::Runtime(format!("session aborted: {reason}"))),
        UdpOutcome::PeerTimeout => Err(CliError::Runtime("peer timeout".into())),
    }
}
