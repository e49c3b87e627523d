//! YAML configuration files for the two agents and the simulator, plus
//! loading of trace directories.
//!
//! Server config keys: `fps`, `window_w`, `slide_w`, `command_timeout_us`,
//! `max_retransmits`, `max_chunk_payload`, `bind_addr`, `player_addr`,
//! `frame_port`, `command_port`, `trace_dir`, `sync_file`.
//!
//! Player config keys: `window_w`, `stall_timeout_us`, `status_piggyback`,
//! `peer_timeout_us`, `bind_addr`, `server_addr`, `frame_port`,
//! `command_port`, `sync_file`, `command_log`, `frames_out_dir`.
//!
//! Sim config: a `channel` block (seed plus per-direction `loss_prob`,
//! `base_delay_us`, `jitter_us`, `reorder_prob`), a `faults` list
//! (`{direction, match, action}` with `match: "frame_id:2"` style selectors)
//! and `horizon_us`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::channel::{ChannelConfig, Direction, FaultAction, FaultMatch, ScriptedFault};
use crate::player::PlayerParams;
use crate::server::ServerParams;
use crate::trace::{
    parse_command_log, parse_frame_manifest, parse_sync_order, CaptureTrace, CommandRecord,
    FrameRecord, PayloadStore, SyncOrder, TraceError,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("trace error in {path}: {source}")]
    Trace {
        path: PathBuf,
        #[source]
        source: TraceError,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn read(path: &Path) -> Result<Vec<u8>, ConfigError> {
    fs::read(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_yaml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let bytes = read(path)?;
    serde_yaml::from_slice(&bytes).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn default_fps() -> u32 {
    30
}
fn default_window() -> u32 {
    3
}
fn default_max_retransmits() -> u32 {
    50
}
fn default_chunk() -> u16 {
    crate::wire::DEFAULT_MAX_CHUNK_PAYLOAD
}
fn default_localhost() -> String {
    "127.0.0.1".into()
}
fn default_frame_port() -> u16 {
    9000
}
fn default_command_port() -> u16 {
    9001
}
fn default_true() -> bool {
    true
}
fn default_peer_timeout() -> u64 {
    5_000_000
}

/// `config.yaml` of the CG server.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfigFile {
    #[serde(default = "default_fps")]
    pub fps: u32,
    #[serde(default = "default_window")]
    pub window_w: u32,
    #[serde(default)]
    pub slide_w: u32,
    /// Defaults to two frame intervals.
    #[serde(default)]
    pub command_timeout_us: Option<u64>,
    #[serde(default = "default_max_retransmits")]
    pub max_retransmits: u32,
    #[serde(default = "default_chunk")]
    pub max_chunk_payload: u16,
    #[serde(default = "default_localhost")]
    pub bind_addr: String,
    #[serde(default = "default_localhost")]
    pub player_addr: String,
    #[serde(default = "default_frame_port")]
    pub frame_port: u16,
    #[serde(default = "default_command_port")]
    pub command_port: u16,
    pub trace_dir: PathBuf,
    pub sync_file: PathBuf,
}

impl ServerConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = read_yaml(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.fps == 0 {
            return Err(ConfigError::Invalid("fps must be > 0".into()));
        }
        if self.window_w == 0 {
            return Err(ConfigError::Invalid("window_w must be >= 1".into()));
        }
        if self.command_timeout_us == Some(0) {
            return Err(ConfigError::Invalid(
                "command_timeout_us must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn server_params(&self) -> ServerParams {
        let mut params = ServerParams::new(self.fps);
        params.window_w = self.window_w;
        params.slide_w = self.slide_w;
        if let Some(t) = self.command_timeout_us {
            params.command_timeout_us = t;
        }
        params.max_retransmits = self.max_retransmits;
        params.max_chunk_payload = self.max_chunk_payload;
        params
    }
}

/// `config.yaml` of the CG player.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerConfigFile {
    #[serde(default = "default_window")]
    pub window_w: u32,
    /// Defaults to four nominal 30fps intervals.
    #[serde(default)]
    pub stall_timeout_us: Option<u64>,
    #[serde(default = "default_true")]
    pub status_piggyback: bool,
    #[serde(default = "default_peer_timeout")]
    pub peer_timeout_us: u64,
    #[serde(default = "default_localhost")]
    pub bind_addr: String,
    #[serde(default = "default_localhost")]
    pub server_addr: String,
    #[serde(default = "default_frame_port")]
    pub frame_port: u16,
    #[serde(default = "default_command_port")]
    pub command_port: u16,
    pub sync_file: PathBuf,
    pub command_log: PathBuf,
    /// Received frames are stored here as `f_<id>.bin` when set.
    #[serde(default)]
    pub frames_out_dir: Option<PathBuf>,
}

impl PlayerConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = read_yaml(path)?;
        if cfg.window_w == 0 {
            return Err(ConfigError::Invalid("window_w must be >= 1".into()));
        }
        Ok(cfg)
    }

    pub fn player_params(&self) -> PlayerParams {
        let mut params = PlayerParams::new();
        params.window_w = self.window_w;
        if let Some(t) = self.stall_timeout_us {
            params.stall_timeout_us = t;
        }
        params.status_piggyback = self.status_piggyback;
        params
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultSpec {
    direction: String,
    #[serde(rename = "match")]
    matcher: String,
    action: String,
}

/// Simulation config: channel, scripted faults, horizon.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfigFile {
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    faults: Vec<FaultSpec>,
    #[serde(default)]
    pub horizon_us: Option<u64>,
}

impl SimConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = read_yaml(path)?;
        cfg.channel
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn faults(&self) -> Result<Vec<ScriptedFault>, ConfigError> {
        self.faults
            .iter()
            .map(|f| parse_fault(&f.direction, &f.matcher, &f.action))
            .collect()
    }
}

/// Parse one fault from its textual pieces, e.g.
/// (`downlink`, `frame_id:2`, `drop`) or (`uplink`, `nth:5`, `delay:3000`).
pub fn parse_fault(
    direction: &str,
    matcher: &str,
    action: &str,
) -> Result<ScriptedFault, ConfigError> {
    let direction = match direction {
        "downlink" | "down" => Direction::Downlink,
        "uplink" | "up" => Direction::Uplink,
        other => {
            return Err(ConfigError::Invalid(format!(
                "fault direction {other:?} must be uplink or downlink"
            )))
        }
    };
    let matcher = match matcher.split_once(':') {
        Some(("frame_id", n)) => FaultMatch::FrameId(parse_num(n, "frame_id")?),
        Some(("command_id", n)) => FaultMatch::CommandId(parse_num(n, "command_id")?),
        Some(("nth", n)) => FaultMatch::NthDatagram(parse_num(n, "nth")?),
        _ => {
            return Err(ConfigError::Invalid(format!(
                "fault match {matcher:?} must be frame_id:N, command_id:N or nth:N"
            )))
        }
    };
    let action = match (action, action.split_once(':')) {
        ("drop", _) => FaultAction::Drop,
        (_, Some(("delay", us))) => FaultAction::Delay(parse_num(us, "delay")?),
        _ => {
            return Err(ConfigError::Invalid(format!(
                "fault action {action:?} must be drop or delay:MICROS"
            )))
        }
    };
    Ok(ScriptedFault {
        direction,
        matcher,
        action,
    })
}

/// Parse a command-line fault of the form `DIRECTION:MATCH:ACTION`, e.g.
/// `downlink:frame_id:2:drop` or `uplink:nth:5:delay:3000`.
pub fn parse_fault_arg(spec: &str) -> Result<ScriptedFault, ConfigError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() < 4 {
        return Err(ConfigError::Invalid(format!(
            "fault {spec:?} must look like downlink:frame_id:2:drop"
        )));
    }
    parse_fault(
        parts[0],
        &format!("{}:{}", parts[1], parts[2]),
        &parts[3..].join(":"),
    )
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, ConfigError> {
    s.parse()
        .map_err(|_| ConfigError::Invalid(format!("bad {what} value {s:?}")))
}

/// Optional `trace.yaml` metadata inside a trace directory.
#[derive(Debug, Clone, Deserialize)]
struct TraceMeta {
    #[serde(default)]
    game_name: Option<String>,
    #[serde(default = "default_fps")]
    fps: u32,
}

/// Load a sync order file.
pub fn load_sync(path: &Path) -> Result<SyncOrder, ConfigError> {
    parse_sync_order(&read(path)?).map_err(|source| ConfigError::Trace {
        path: path.to_path_buf(),
        source,
    })
}

/// Load a command log file.
pub fn load_commands(path: &Path) -> Result<Vec<CommandRecord>, ConfigError> {
    parse_command_log(&read(path)?).map_err(|source| ConfigError::Trace {
        path: path.to_path_buf(),
        source,
    })
}

/// Load the manifest and every referenced frame payload from a trace
/// directory.
pub fn load_frames(trace_dir: &Path) -> Result<(Vec<FrameRecord>, PayloadStore), ConfigError> {
    let manifest_path = trace_dir.join("frames.csv");
    let frames =
        parse_frame_manifest(&read(&manifest_path)?).map_err(|source| ConfigError::Trace {
            path: manifest_path,
            source,
        })?;
    let mut payloads = PayloadStore::new();
    for frame in &frames {
        let path = trace_dir.join(&frame.payload_ref);
        payloads.insert(frame.id, read(&path)?);
    }
    Ok((frames, payloads))
}

/// Assemble a full trace from its parts on disk. `game_name`/`fps` come
/// from `trace.yaml` when present.
pub fn load_trace(
    trace_dir: &Path,
    sync_file: &Path,
    command_log: &Path,
) -> Result<(CaptureTrace, PayloadStore), ConfigError> {
    let (frames, payloads) = load_frames(trace_dir)?;
    let commands = load_commands(command_log)?;
    let sync = load_sync(sync_file)?;
    let meta_path = trace_dir.join("trace.yaml");
    let meta: TraceMeta = if meta_path.exists() {
        read_yaml(&meta_path)?
    } else {
        TraceMeta {
            game_name: None,
            fps: default_fps(),
        }
    };
    let game_name = meta.game_name.unwrap_or_else(|| {
        trace_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "unnamed".into())
    });
    Ok((
        CaptureTrace {
            game_name,
            fps: meta.fps,
            frames,
            commands,
            sync,
        },
        payloads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracegen::{generate_trace, write_trace_dir, GenSpec};

    #[test]
    fn server_config_defaults_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("server.yaml");
        fs::write(
            &path,
            "trace_dir: t\nsync_file: t/sync.txt\nfps: 60\nslide_w: 2\n",
        )
        .unwrap();
        let cfg = ServerConfigFile::load(&path).unwrap();
        assert_eq!(cfg.fps, 60);
        assert_eq!(cfg.window_w, 3);
        let params = cfg.server_params();
        assert_eq!(params.frame_interval_us(), 16_666);
        assert_eq!(params.command_timeout_us, 2 * 16_666);
        assert_eq!(params.slide_w, 2);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("server.yaml");
        fs::write(&path, "trace_dir: t\nsync_file: s\nwarp_factor: 9\n").unwrap();
        assert!(matches!(
            ServerConfigFile::load(&path),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn fault_specs_parse() {
        let f = parse_fault("downlink", "frame_id:2", "drop").unwrap();
        assert_eq!(f.matcher, FaultMatch::FrameId(2));
        assert_eq!(f.action, FaultAction::Drop);
        let f = parse_fault("uplink", "nth:5", "delay:3000").unwrap();
        assert_eq!(f.direction, Direction::Uplink);
        assert_eq!(f.action, FaultAction::Delay(3000));
        assert!(parse_fault("sideways", "frame_id:2", "drop").is_err());
        assert!(parse_fault("uplink", "frame:2", "drop").is_err());
        assert!(parse_fault("uplink", "nth:5", "explode").is_err());

        let f = parse_fault_arg("downlink:frame_id:2:drop").unwrap();
        assert_eq!(f.matcher, FaultMatch::FrameId(2));
        let f = parse_fault_arg("uplink:command_id:1:delay:500").unwrap();
        assert_eq!(f.action, FaultAction::Delay(500));
        assert!(parse_fault_arg("drop").is_err());
    }

    #[test]
    fn sim_config_parses_channel_and_faults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.yaml");
        fs::write(
            &path,
            "channel:\n  seed: 7\n  downlink: {loss_prob: 0.1, base_delay_us: 1000}\n\
             faults:\n  - {direction: downlink, match: \"frame_id:2\", action: drop}\n\
             horizon_us: 10000000\n",
        )
        .unwrap();
        let cfg = SimConfigFile::load(&path).unwrap();
        assert_eq!(cfg.channel.seed, 7);
        assert_eq!(cfg.channel.downlink.loss_prob, 0.1);
        assert_eq!(cfg.faults().unwrap().len(), 1);
        assert_eq!(cfg.horizon_us, Some(10_000_000));
    }

    #[test]
    fn trace_round_trips_through_directory() {
        let spec = GenSpec {
            command_points: vec![(3, 2), (5, 1)],
            frame_body_size: 64,
            ..GenSpec::new(7, 30)
        };
        let (trace, payloads) = generate_trace(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_trace_dir(&trace, &payloads, dir.path()).unwrap();
        let (loaded, loaded_payloads) = load_trace(
            dir.path(),
            &dir.path().join("sync.txt"),
            &dir.path().join("commands.json"),
        )
        .unwrap();
        assert_eq!(loaded, trace);
        assert_eq!(loaded_payloads, payloads);
    }
}
