//! Motion-capture ingestion: newline-delimited JSON frames, one per line.
//!
//! ```text
//! {"subject":"subject1","t":1.0,"root":{"pos":[0,0,0],"yaw":0},"joints":{"head":[0,0,0,1]}}
//! ```

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::time::Duration;

use regie_core::scene::Pose;
use regie_core::stagemath::{Joint, Quat, SkeletonFrame};
use serde::Deserialize;
use thiserror::Error;
use tokio::net::UdpSocket;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MocapError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("stale frame for `{subject}`: t={t} is not after {last}")]
    StaleFrame { subject: String, t: f64, last: f64 },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireFrame {
    subject: String,
    t: f64,
    root: Pose,
    #[serde(default)]
    joints: BTreeMap<String, Quat>,
}

/// Parses one frame line without any ordering checks.
pub fn parse_frame(line: &str) -> Result<SkeletonFrame, MocapError> {
    let wire: WireFrame = serde_json::from_str(line).map_err(|e| MocapError::MalformedFrame(e.to_string()))?;
    if wire.subject.is_empty() {
        return Err(MocapError::MalformedFrame("empty subject".into()));
    }
    if !wire.t.is_finite() || !wire.root.is_finite() {
        return Err(MocapError::MalformedFrame("non-finite time or root".into()));
    }
    if let Some((name, q)) = wire.joints.iter().find(|(_, q)| !q.is_unit()) {
        return Err(MocapError::MalformedFrame(format!(
            "joint `{name}` rotation has norm {}",
            q.norm()
        )));
    }
    Ok(SkeletonFrame {
        subject: wire.subject,
        timestamp: wire.t,
        root: Pose::new(wire.root.position, wire.root.yaw),
        joints: wire
            .joints
            .into_iter()
            .map(|(name, rotation)| Joint { name, rotation })
            .collect(),
    })
}

/// Frame decoder enforcing strictly increasing timestamps per subject.
#[derive(Debug, Default)]
pub struct MocapDecoder {
    last: HashMap<String, f64>,
    stale: u64,
}

impl MocapDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn decode_mocap_line(&mut self, line: &str) -> Result<SkeletonFrame, MocapError> {
        let frame = parse_frame(line)?;
        if let Some(&last) = self.last.get(&frame.subject) {
            if frame.timestamp <= last {
                self.stale += 1;
                return Err(MocapError::StaleFrame {
                    subject: frame.subject,
                    t: frame.timestamp,
                    last,
                });
            }
        }
        self.last.insert(frame.subject.clone(), frame.timestamp);
        Ok(frame)
    }

    /// Frames dropped for arriving out of order.
    pub fn stale_count(&self) -> u64 {
        self.stale
    }
}

/// Reads a recorded frames file, skipping blank lines and `#` comments.
/// Every line is validated up front so a bad recording fails before sending.
pub fn load_frames(text: &str) -> Result<Vec<(f64, String)>, (usize, MocapError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let frame = parse_frame(l).map_err(|e| (i + 1, e))?;
            Ok((frame.timestamp, l.trim().to_string()))
        })
        .collect()
}

/// Replays recorded frames as datagrams, one frame per packet. With `pace`
/// set, sends are spaced by the recorded timestamps.
pub async fn simulate_mocap(frames: &[(f64, String)], to: SocketAddr, pace: bool) -> std::io::Result<usize> {
    let bind: SocketAddr = if to.is_ipv4() {
        "0.0.0.0:0".parse().expect("literal address")
    } else {
        "[::]:0".parse().expect("literal address")
    };
    let socket = UdpSocket::bind(bind).await?;
    let start = tokio::time::Instant::now();
    let t0 = frames.first().map_or(0.0, |(t, _)| *t);
    for (t, line) in frames {
        if pace {
            let due = start + Duration::from_secs_f64((t - t0).max(0.0));
            tokio::time::sleep_until(due).await;
        }
        socket.send_to(line.as_bytes(), to).await?;
    }
    Ok(frames.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_root() {
        let mut d = MocapDecoder::new();
        let f = d
            .decode_mocap_line(r#"{"subject":"subject1","t":1.0,"root":{"pos":[0,0,0],"yaw":0}}"#)
            .unwrap();
        assert_eq!(f, SkeletonFrame::new("subject1", 1.0, Pose::IDENTITY));
    }

    #[test]
    fn stale_frames_are_counted() {
        let mut d = MocapDecoder::new();
        let line = |t: f64| format!(r#"{{"subject":"s","t":{t},"root":{{"pos":[0,0,0],"yaw":0}}}}"#);
        d.decode_mocap_line(&line(2.0)).unwrap();
        assert!(matches!(d.decode_mocap_line(&line(1.0)), Err(MocapError::StaleFrame { .. })));
        assert!(matches!(d.decode_mocap_line(&line(2.0)), Err(MocapError::StaleFrame { .. })));
        d.decode_mocap_line(&line(2.5)).unwrap();
        assert_eq!(d.stale_count(), 2);
    }

    #[test]
    fn joint_norm_checked() {
        let line = r#"{"subject":"s","t":0,"root":{"pos":[0,0,0],"yaw":0},"joints":{"head":[0,0,0,0.5]}}"#;
        assert!(matches!(parse_frame(line), Err(MocapError::MalformedFrame(_))));
        let line = r#"{"subject":"s","t":0,"root":{"pos":[0,0,0],"yaw":0},"joints":{"head":[0,0,0,1]}}"#;
        assert_eq!(parse_frame(line).unwrap().joints.len(), 1);
    }

    #[test]
    fn yaw_normalized() {
        let f = parse_frame(r#"{"subject":"s","t":0,"root":{"pos":[1,2,0],"yaw":270}}"#).unwrap();
        assert_eq!(f.root.yaw, -90.0);
    }
}
