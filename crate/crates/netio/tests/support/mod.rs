#![allow(dead_code)]

use std::path::PathBuf;

use proptest::prelude::*;
use regie_net::osc::{OscArg, OscMessage};

/// Straightforward OSC 1.0 layout, written independently of the codec:
/// append a NUL, then zeros until the length is a multiple of four.
pub fn oracle_encode(msg: &OscMessage) -> Vec<u8> {
    fn string(out: &mut Vec<u8>, s: &[u8]) {
        out.extend_from_slice(s);
        out.push(0);
        while !out.len().is_multiple_of(4) {
            out.push(0);
        }
    }
    let mut out = Vec::new();
    string(&mut out, msg.address.as_bytes());
    let mut tags = String::from(",");
    for arg in &msg.args {
        tags.push(match arg {
            OscArg::Int32(_) => 'i',
            OscArg::Float32(_) => 'f',
            OscArg::Text(_) => 's',
            OscArg::Blob(_) => 'b',
        });
    }
    string(&mut out, tags.as_bytes());
    for arg in &msg.args {
        match arg {
            OscArg::Int32(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::Float32(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::Text(s) => string(&mut out, s.as_bytes()),
            OscArg::Blob(b) => {
                out.extend_from_slice(&(b.len() as u32).to_be_bytes());
                out.extend_from_slice(b);
                while out.len() % 4 != 0 {
                    out.push(0);
                }
            }
        }
    }
    out
}

/// Golden vectors: produced by the layout oracle and then frozen here.
pub fn golden() -> Vec<(OscMessage, Vec<u8>)> {
    let m = |addr: &str, args: Vec<OscArg>| OscMessage::new(addr, args).unwrap();
    vec![
        (m("/a", vec![]), hex("2F 61 00 00 2C 00 00 00")),
        (
            m("/cue/go", vec![OscArg::Int32(10)]),
            hex("2F 63 75 65 2F 67 6F 00 2C 69 00 00 00 00 00 0A"),
        ),
        (m("/f", vec![OscArg::Float32(1.0)]), hex("2F 66 00 00 2C 66 00 00 3F 80 00 00")),
        (m("/s", vec![OscArg::Text("hi".into())]), hex("2F 73 00 00 2C 73 00 00 68 69 00 00")),
        (
            m("/b", vec![OscArg::Blob(vec![1, 2, 3])]),
            hex("2F 62 00 00 2C 62 00 00 00 00 00 03 01 02 03 00"),
        ),
        (
            m("/abc", vec![OscArg::Int32(-1), OscArg::Text("four".into())]),
            hex("2F 61 62 63 00 00 00 00 2C 69 73 00 FF FF FF FF 66 6F 75 72 00 00 00 00"),
        ),
    ]
}

pub fn hex(text: &str) -> Vec<u8> {
    text.split_whitespace()
        .map(|b| u8::from_str_radix(b, 16).expect("hex byte"))
        .collect()
}

pub fn arb_address() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-zA-Z0-9_*?!{}\\[\\]-]{1,12}", 1..5).prop_map(|parts| format!("/{}", parts.join("/")))
}

pub fn arb_arg() -> impl Strategy<Value = OscArg> {
    prop_oneof![
        any::<i32>().prop_map(OscArg::Int32),
        any::<u32>().prop_map(|bits| OscArg::Float32(f32::from_bits(bits))),
        "[^\u{0}]{0,24}".prop_map(OscArg::Text),
        prop::collection::vec(any::<u8>(), 0..40).prop_map(OscArg::Blob),
    ]
}

pub fn arb_message() -> impl Strategy<Value = OscMessage> {
    (arb_address(), prop::collection::vec(arb_arg(), 0..8)).prop_map(|(address, args)| OscMessage { address, args })
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub mod live {
    use std::net::SocketAddr;
    use std::sync::Arc;
    use std::time::Duration;

    use regie_net::mocap::parse_frame;
    use regie_core::scene::Pose;
    use regie_net::{load_show, start_service, ServiceConfig, ServiceHandle};
    use serde_json::Value;
    use tokio::net::UdpSocket;
    use tokio::sync::broadcast;

    use super::fixture;

    pub const WAIT: Duration = Duration::from_secs(3);

    /// Fixture show on loopback ephemeral ports, with outbound OSC going to
    /// the returned socket.
    pub async fn start(tick_rate: u32) -> (ServiceHandle, UdpSocket) {
        let sink = UdpSocket::bind("127.0.0.1:0").await.unwrap();
        let mut config = ServiceConfig::new(
            fixture("figure4.level.json"),
            fixture("figure4.cue.json"),
            fixture("figure4.clips.json"),
        );
        let local: SocketAddr = "127.0.0.1:0".parse().unwrap();
        config.tick_rate = tick_rate;
        config.mocap = local;
        config.osc_in = local;
        config.serve = local;
        config.osc_out = sink.local_addr().unwrap();
        let show = load_show(&config.level, &config.cuesheet, &config.clips).unwrap();
        (start_service(&config, show).await.unwrap(), sink)
    }

    pub fn parse(json: &str) -> Value {
        serde_json::from_str(json).unwrap()
    }

    /// Next snapshot on the broadcast channel, skipping past any lag.
    pub async fn next_snapshot(rx: &mut broadcast::Receiver<Arc<str>>) -> Value {
        loop {
            match tokio::time::timeout(WAIT, rx.recv()).await.expect("no snapshot in time") {
                Ok(json) => {
                    let v = parse(&json);
                    assert_eq!(v["type"], "snapshot");
                    return v;
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(e) => panic!("snapshot channel: {e}"),
            }
        }
    }

    pub async fn wait_for(rx: &mut broadcast::Receiver<Arc<str>>, what: &str, pred: impl Fn(&Value) -> bool) -> Value {
        let deadline = tokio::time::Instant::now() + WAIT;
        loop {
            let snap = next_snapshot(rx).await;
            if pred(&snap) {
                return snap;
            }
            assert!(tokio::time::Instant::now() < deadline, "timed out waiting for {what}");
        }
    }

    pub fn pose(v: &Value) -> Pose {
        serde_json::from_value(v.clone()).unwrap()
    }

    pub fn frames() -> Vec<(f64, String)> {
        regie_net::mocap::load_frames(&std::fs::read_to_string(fixture("figure4.frames.jsonl")).unwrap()).unwrap()
    }

    pub fn last_frame_root() -> Pose {
        parse_frame(&frames().last().unwrap().1).unwrap().root
    }

    pub fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
        let dyaw = (a.yaw - b.yaw).rem_euclid(360.0);
        (a.position - b.position).norm() < tol && dyaw.min(360.0 - dyaw) < tol
    }
}
