//! Drive-service wire format. Every websocket message is one binary frame
//! holding a `u32` little-endian byte length followed by that many bytes of
//! JSON: `{"v": 1, "type": …, "payload": …}`.

use base64::Engine;
use serde::{Deserialize, Serialize};
use voxworld_core::buffers::{Camera, GuidanceBufferSet, Trajectory};

use crate::drive::EgoState;

pub const PROTOCOL_VERSION: u32 = 1;

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ClientMessage {
    Create {},
    Control {
        session: u64,
        throttle: f64,
        steer: f64,
        dt: f64,
        #[serde(default = "yes")]
        preview: bool,
    },
    Export {
        session: u64,
    },
    Close {
        session: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnsupportedVersion,
    UnknownSession,
    InvalidControl,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    pub width: usize,
    pub height: usize,
    /// Base64 of row-major RGB8 palette colours.
    pub semantic: String,
    /// Base64 of row-major little-endian f32 camera depth, 0 on a miss.
    pub depth: String,
}

impl Preview {
    pub fn from_buffers(b: &GuidanceBufferSet) -> Self {
        let b64 = base64::engine::general_purpose::STANDARD;
        let rgb: Vec<u8> = b
            .semantic
            .iter()
            .flat_map(|c| c.map(|v| ((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8))
            .collect();
        let depth: Vec<u8> = b.depth.iter().flat_map(|z| (*z as f32).to_le_bytes()).collect();
        Self {
            width: b.width(),
            height: b.height(),
            semantic: b64.encode(rgb),
            depth: b64.encode(depth),
        }
    }

    pub fn decode(&self) -> Option<(Vec<u8>, Vec<f32>)> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let rgb = b64.decode(&self.semantic).ok()?;
        let depth = b64.decode(&self.depth).ok()?;
        if rgb.len() != 3 * self.width * self.height || depth.len() != 4 * self.width * self.height {
            return None;
        }
        Some((rgb, depth.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePayload {
    pub session: u64,
    pub tick: u64,
    pub t: f64,
    pub pose: EgoState,
    pub camera: Camera,
    pub preview: Option<Preview>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerMessage {
    /// Reply to `create`: the new session at its start pose.
    Session(FramePayload),
    Frame(FramePayload),
    Trajectory {
        session: u64,
        trajectory: Trajectory,
    },
    Closed {
        session: u64,
    },
    Error {
        code: ErrorCode,
        message: String,
        session: Option<u64>,
    },
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    v: u32,
    #[serde(flatten)]
    body: T,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("{0}")]
    Malformed(String),
    #[error("protocol version {0} is not supported")]
    UnsupportedVersion(u32),
}

impl ProtocolError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ProtocolError::Malformed(_) => ErrorCode::Malformed,
            ProtocolError::UnsupportedVersion(_) => ErrorCode::UnsupportedVersion,
        }
    }
}

pub fn encode<T: Serialize>(msg: &T) -> Vec<u8> {
    let json = serde_json::to_vec(&Envelope {
        v: PROTOCOL_VERSION,
        body: msg,
    })
    .expect("protocol messages serialize");
    let mut out = Vec::with_capacity(4 + json.len());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out
}

pub fn decode<T: for<'de> Deserialize<'de>>(frame: &[u8]) -> Result<T, ProtocolError> {
    let Some((len, body)) = frame.split_first_chunk::<4>() else {
        return Err(ProtocolError::Malformed("frame shorter than its length prefix".into()));
    };
    let len = u32::from_le_bytes(*len) as usize;
    if len != body.len() {
        return Err(ProtocolError::Malformed(format!("length prefix {len} but {} bytes follow", body.len())));
    }
    let value: serde_json::Value = serde_json::from_slice(body).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    match value.get("v").and_then(|v| v.as_u64()) {
        Some(v) if v == PROTOCOL_VERSION as u64 => {}
        Some(v) => return Err(ProtocolError::UnsupportedVersion(v as u32)),
        None => return Err(ProtocolError::Malformed("missing protocol version".into())),
    }
    serde_json::from_value::<Envelope<T>>(value)
        .map(|e| e.body)
        .map_err(|e| ProtocolError::Malformed(e.to_string()))
}

/// Trajectory file bytes, identical to what `Trajectory::save` writes.
pub fn trajectory_bytes(t: &Trajectory) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(t).expect("trajectories serialize");
    s.push('\n');
    s.into_bytes()
}
