//! QoE/QoS metrics derived from a session event log.
//!
//! Everything here is a pure function of the log: frame and command rates,
//! their server/player ratios, loss and recovery counts, and per-reaction
//! response times. The same log schema comes out of simulation and UDP
//! replay, so the pipeline does not care how the session ran.
//!
//! Response time for a command group is measured from the emission of the
//! group's last command to the first delivery of the next frame in the sync
//! order (the frame that reacts to it), all within the log's clock domain.
//! UDP logs merged across hosts carry each side's own clock and are
//! reported uncorrected.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::event_log::{EventKind, SimEvent};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("malformed log: {0}")]
    MalformedLog(String),
}

/// How the logged session ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionEnd {
    Complete,
    Aborted,
    /// No terminal event: metrics still computed, flagged partial.
    Partial,
}

impl SessionEnd {
    fn as_str(self) -> &'static str {
        match self {
            SessionEnd::Complete => "complete",
            SessionEnd::Aborted => "aborted",
            SessionEnd::Partial => "partial",
        }
    }
}

/// One action/reaction measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResponseSample {
    /// 1-based index of the command group in the sync order.
    pub group_id: u32,
    pub send_ts_us: u64,
    pub react_ts_us: u64,
    pub rt_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResponseSummary {
    pub count: usize,
    pub min_us: u64,
    pub mean_us: f64,
    pub p95_us: u64,
    pub max_us: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionMetrics {
    pub end: SessionEnd,
    pub duration_us: u64,
    /// Distinct frames first-sent per second at the server.
    pub server_fps: f64,
    /// Distinct frames stored per second at the player.
    pub player_fps: f64,
    pub fps_ratio: f64,
    pub commands_sent: u64,
    pub commands_received_at_server: u64,
    pub command_ratio: f64,
    pub frame_retransmissions: u64,
    /// Command groups re-sent after a duplicate frame or a stall.
    pub command_resends: u64,
    pub frames_lost_then_recovered: u64,
    /// Window NACKs that reached the server.
    pub rollbacks: u64,
    pub response_times: Vec<ResponseSample>,
    pub summary: ResponseSummary,
}

fn parse_field<T: std::str::FromStr>(e: &SimEvent, key: &str) -> Result<T, MetricsError> {
    e.get(key)
        .ok_or_else(|| MetricsError::MalformedLog(format!("{} event missing {key}", e.kind)))?
        .parse()
        .map_err(|_| MetricsError::MalformedLog(format!("bad {key} in {:?}", e.subject)))
}

/// Rate of `n` events spread over `span` microseconds, measured the way a
/// frame counter would: intervals between events, not wall time.
fn rate_per_second(n: usize, first_us: u64, last_us: u64) -> f64 {
    if n < 2 || last_us <= first_us {
        return 0.0;
    }
    (n as f64 - 1.0) * 1_000_000.0 / (last_us - first_us) as f64
}

/// Derive all session metrics from an event log.
pub fn compute_metrics(events: &[SimEvent]) -> Result<SessionMetrics, MetricsError> {
    let mut end = SessionEnd::Partial;
    let mut first_sent: Vec<(u32, u64)> = Vec::new(); // (frame_id, time) first transmissions
    let mut stored: Vec<(u32, u64)> = Vec::new();
    let mut commands_sent = 0u64;
    let mut commands_received = 0u64;
    let mut frame_retransmissions = 0u64;
    let mut command_resends = 0u64;
    let mut rollbacks = 0u64;
    let mut dropped_frames: Vec<u32> = Vec::new();
    // gate frame id -> (last command id, emission time) for first emissions
    let mut groups: Vec<(u32, u32, u64)> = Vec::new();
    let mut frame_deliveries: Vec<(u32, u64)> = Vec::new();

    for e in events {
        match e.kind {
            EventKind::Done => end = SessionEnd::Complete,
            EventKind::Aborted => end = SessionEnd::Aborted,
            EventKind::Sent => {
                // chunk 0 stands for the whole frame; dedup below keeps the
                // first transmission of each id
                if e.get("msg") == Some("frame") && e.get("chunk") == Some("0") {
                    first_sent.push((parse_field(e, "frame_id")?, e.time_us));
                }
            }
            EventKind::FrameStored => stored.push((parse_field(e, "frame_id")?, e.time_us)),
            EventKind::Retransmitted => frame_retransmissions += 1,
            EventKind::CommandEmitted => {
                commands_sent += 1;
                let resend = e.get("resend") == Some("1");
                if resend && e.get("lead") == Some("1") {
                    command_resends += 1;
                }
                if !resend {
                    let gate: u32 = parse_field(e, "group")?;
                    let id: u32 = parse_field(e, "command_id")?;
                    match groups.iter_mut().find(|(g, _, _)| *g == gate) {
                        Some(entry) if id > entry.1 => {
                            entry.1 = id;
                            entry.2 = e.time_us;
                        }
                        Some(_) => {}
                        None => groups.push((gate, id, e.time_us)),
                    }
                }
            }
            EventKind::Delivered => match e.get("msg") {
                Some("command") => commands_received += 1,
                Some("status") if e.get("status") == Some("nack") => rollbacks += 1,
                Some("frame") => frame_deliveries.push((parse_field(e, "frame_id")?, e.time_us)),
                _ => {}
            },
            EventKind::Dropped => {
                if e.get("msg") == Some("frame") {
                    dropped_frames.push(parse_field(e, "frame_id")?);
                }
            }
            EventKind::StatusEmitted => {}
        }
    }

    let distinct_first: Vec<(u32, u64)> = dedup_by_id(first_sent);
    let distinct_stored: Vec<(u32, u64)> = dedup_by_id(stored);
    let server_fps = match (distinct_first.first(), distinct_first.last()) {
        (Some(&(_, a)), Some(&(_, b))) => rate_per_second(distinct_first.len(), a, b),
        _ => 0.0,
    };
    let player_fps = match (distinct_stored.first(), distinct_stored.last()) {
        (Some(&(_, a)), Some(&(_, b))) => rate_per_second(distinct_stored.len(), a, b),
        _ => 0.0,
    };

    let max_frame = distinct_first.iter().map(|&(id, _)| id).max().unwrap_or(0);
    groups.sort_by_key(|&(gate, _, _)| gate);
    let mut response_times = Vec::new();
    for (idx, &(gate, _, send_ts)) in groups.iter().enumerate() {
        let react_frame = gate + 1;
        if react_frame > max_frame {
            continue; // trailing group: nothing reacts to it
        }
        let react = frame_deliveries
            .iter()
            .find(|&&(id, t)| id == react_frame && t >= send_ts)
            .map(|&(_, t)| t);
        if let Some(react_ts) = react {
            response_times.push(ResponseSample {
                group_id: idx as u32 + 1,
                send_ts_us: send_ts,
                react_ts_us: react_ts,
                rt_us: react_ts - send_ts,
            });
        }
    }

    let stored_ids: Vec<u32> = distinct_stored.iter().map(|&(id, _)| id).collect();
    dropped_frames.sort();
    dropped_frames.dedup();
    let frames_lost_then_recovered = dropped_frames
        .iter()
        .filter(|id| stored_ids.contains(id))
        .count() as u64;

    let duration_us = match (events.first(), events.last()) {
        (Some(a), Some(b)) => b.time_us.saturating_sub(a.time_us),
        _ => 0,
    };

    Ok(SessionMetrics {
        end,
        duration_us,
        server_fps,
        player_fps,
        fps_ratio: ratio(server_fps, player_fps),
        commands_sent,
        commands_received_at_server: commands_received,
        command_ratio: ratio(commands_received as f64, commands_sent as f64),
        frame_retransmissions,
        command_resends,
        frames_lost_then_recovered,
        rollbacks,
        summary: summarize(&response_times),
        response_times,
    })
}

fn dedup_by_id(mut v: Vec<(u32, u64)>) -> Vec<(u32, u64)> {
    let mut seen = std::collections::BTreeSet::new();
    v.retain(|&(id, _)| seen.insert(id));
    v
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn summarize(samples: &[ResponseSample]) -> ResponseSummary {
    if samples.is_empty() {
        return ResponseSummary::default();
    }
    let mut sorted: Vec<u64> = samples.iter().map(|s| s.rt_us).collect();
    sorted.sort();
    let n = sorted.len();
    // nearest-rank percentile: deterministic, no interpolation
    let p95 = sorted[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
    ResponseSummary {
        count: n,
        min_us: sorted[0],
        mean_us: sorted.iter().sum::<u64>() as f64 / n as f64,
        p95_us: p95,
        max_us: sorted[n - 1],
    }
}

const REPORT_HEADER: &str = "end,duration_us,server_fps,player_fps,fps_ratio,commands_sent,\
commands_received_at_server,command_ratio,frame_retransmissions,command_resends,\
frames_lost_then_recovered,rollbacks,rt_count,rt_min_us,rt_mean_us,rt_p95_us,rt_max_us";

/// Render the single-row summary CSV.
pub fn render_report(m: &SessionMetrics) -> Vec<u8> {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    out.push_str(&format!(
        "{},{},{:.6},{:.6},{:.6},{},{},{:.6},{},{},{},{},{},{},{:.3},{},{}\n",
        m.end.as_str(),
        m.duration_us,
        m.server_fps,
        m.player_fps,
        m.fps_ratio,
        m.commands_sent,
        m.commands_received_at_server,
        m.command_ratio,
        m.frame_retransmissions,
        m.command_resends,
        m.frames_lost_then_recovered,
        m.rollbacks,
        m.summary.count,
        m.summary.min_us,
        m.summary.mean_us,
        m.summary.p95_us,
        m.summary.max_us,
    ));
    out.into_bytes()
}

/// Render the per-reaction samples CSV.
pub fn render_response_times(m: &SessionMetrics) -> Vec<u8> {
    let mut out = String::from("group_id,send_ts_us,react_ts_us,rt_us\n");
    for s in &m.response_times {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.group_id, s.send_ts_us, s.react_ts_us, s.rt_us
        ));
    }
    out.into_bytes()
}

/// Write `report.csv` and `response_times.csv` into `dir`.
pub fn write_report(m: &SessionMetrics, dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.csv"), render_report(m))?;
    fs::write(dir.join("response_times.csv"), render_response_times(m))?;
    Ok(())
}
