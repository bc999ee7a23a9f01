//! Out-of-process denoisers over a length-prefixed record protocol.
//!
//! Each request is three records, each a `u32` little-endian length followed
//! by the payload:
//!
//! 1. JSON header `{"protocol", "version", "t", "alpha_bar", "null_condition",
//!    "latent_shape": [N, N, N, C], "condition_shape": [N, N, N, S]}`
//! 2. latent values, little-endian f32, `((i·N + j)·N + k)·C + c` order
//! 3. condition values, little-endian f32, same order with `S` channels
//!
//! The response is two records: a JSON header `{"status": "ok"}` (or
//! `{"status": "error", "message": …}`) and the v prediction as f32 with
//! the latent's shape. An error response carries an empty second record.

use std::io::{BufReader, BufWriter, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Denoiser, LatentCube, SamplerError};
use crate::conditions::{ConditionVolume, CONDITION_CHANNELS};
use crate::formats::{self, FormatError};

pub const PROTOCOL_NAME: &str = "voxworld-denoiser";
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RequestHeader {
    protocol: String,
    version: u32,
    t: usize,
    alpha_bar: f64,
    null_condition: bool,
    latent_shape: [usize; 4],
    condition_shape: [usize; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResponseHeader {
    status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    message: Option<String>,
}

struct Channel {
    reader: Box<dyn Read + Send>,
    writer: Box<dyn Write + Send>,
}

/// Denoiser living in another process (or anything behind a byte stream).
pub struct ExternalDenoiser {
    channel: Mutex<Channel>,
    child: Option<Mutex<Child>>,
}

fn proto(e: impl std::fmt::Display) -> SamplerError {
    SamplerError::Denoiser(e.to_string())
}

impl ExternalDenoiser {
    pub fn from_streams(reader: Box<dyn Read + Send>, writer: Box<dyn Write + Send>) -> Self {
        Self {
            channel: Mutex::new(Channel { reader, writer }),
            child: None,
        }
    }

    /// Spawns `program args…` and talks to it over stdin/stdout.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, SamplerError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| SamplerError::Denoiser(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().ok_or_else(|| proto("no stdin"))?;
        let stdout = child.stdout.take().ok_or_else(|| proto("no stdout"))?;
        let mut d = Self::from_streams(Box::new(BufReader::new(stdout)), Box::new(BufWriter::new(stdin)));
        d.child = Some(Mutex::new(child));
        Ok(d)
    }
}

impl Drop for ExternalDenoiser {
    fn drop(&mut self) {
        if let Some(child) = &self.child {
            if let Ok(mut c) = child.lock() {
                let _ = c.kill();
                let _ = c.wait();
            }
        }
    }
}

impl Denoiser for ExternalDenoiser {
    fn predict_v(
        &self,
        x_t: &LatentCube,
        t: usize,
        alpha_bar: f64,
        conditions: &ConditionVolume,
        null_condition: bool,
    ) -> Result<Vec<f64>, SamplerError> {
        let n = x_t.frame.n;
        let header = RequestHeader {
            protocol: PROTOCOL_NAME.into(),
            version: PROTOCOL_VERSION,
            t,
            alpha_bar,
            null_condition,
            latent_shape: [n, n, n, x_t.channels],
            condition_shape: [n, n, n, CONDITION_CHANNELS],
        };
        let mut ch = self.channel.lock().map_err(|_| proto("denoiser channel poisoned"))?;
        let header = serde_json::to_vec(&header).map_err(proto)?;
        formats::write_record(&mut ch.writer, &header)?;
        formats::write_record(&mut ch.writer, &formats::encode_f32_le(&x_t.data))?;
        formats::write_record(&mut ch.writer, &formats::encode_f32_le(conditions.data()))?;
        ch.writer.flush().map_err(proto)?;

        let resp = formats::read_record(&mut ch.reader)?;
        let resp: ResponseHeader = serde_json::from_slice(&resp).map_err(proto)?;
        let body = formats::read_record(&mut ch.reader)?;
        if resp.status != "ok" {
            return Err(SamplerError::Denoiser(resp.message.unwrap_or(resp.status)));
        }
        let v = formats::decode_f32_le(&body)?;
        if v.len() != x_t.data.len() {
            return Err(SamplerError::ShapeMismatch(format!(
                "external denoiser returned {} values, expected {}",
                v.len(),
                x_t.data.len()
            )));
        }
        Ok(v)
    }
}

fn read_request<R: Read>(r: &mut R) -> Result<Option<(RequestHeader, Vec<f64>, Vec<f64>)>, FormatError> {
    let header = match formats::read_record(r) {
        Ok(h) => h,
        Err(FormatError::Stream(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    };
    let header: RequestHeader =
        serde_json::from_slice(&header).map_err(|e| FormatError::Malformed(format!("request header: {e}")))?;
    let latent = formats::decode_f32_le(&formats::read_record(r)?)?;
    let cond = formats::decode_f32_le(&formats::read_record(r)?)?;
    Ok(Some((header, latent, cond)))
}

fn write_response<W: Write>(w: &mut W, result: Result<Vec<f64>, String>) -> Result<(), FormatError> {
    let (header, body) = match result {
        Ok(v) => (
            ResponseHeader {
                status: "ok".into(),
                message: None,
            },
            formats::encode_f32_le(&v),
        ),
        Err(message) => (
            ResponseHeader {
                status: "error".into(),
                message: Some(message),
            },
            Vec::new(),
        ),
    };
    let header = serde_json::to_vec(&header).map_err(|e| FormatError::Malformed(e.to_string()))?;
    formats::write_record(w, &header)?;
    formats::write_record(w, &body)?;
    w.flush()?;
    Ok(())
}

/// Serves `denoiser` over the record protocol until the reader hits EOF.
/// Malformed requests get an error response; the loop keeps running.
pub fn serve_denoiser<R: Read, W: Write>(denoiser: &dyn Denoiser, mut reader: R, mut writer: W) -> Result<usize, FormatError> {
    use crate::conditions::ChunkFrame;
    let mut served = 0;
    while let Some((header, latent, cond)) = read_request(&mut reader)? {
        let result = (|| {
            if header.protocol != PROTOCOL_NAME || header.version != PROTOCOL_VERSION {
                return Err(format!("unsupported protocol {} v{}", header.protocol, header.version));
            }
            let [n, n1, n2, c] = header.latent_shape;
            if n != n1 || n != n2 || latent.len() != n * n * n * c {
                return Err("latent shape mismatch".to_string());
            }
            if header.condition_shape != [n, n, n, CONDITION_CHANNELS] || cond.len() != n * n * n * CONDITION_CHANNELS {
                return Err("condition shape mismatch".to_string());
            }
            let frame = ChunkFrame::centered(crate::Vec3::zeros(), n, 1.0);
            let x_t = LatentCube {
                frame,
                channels: c,
                data: latent,
            };
            let conditions = ConditionVolume::from_raw(frame, cond).map_err(|e| e.to_string())?;
            denoiser
                .predict_v(&x_t, header.t, header.alpha_bar, &conditions, header.null_condition)
                .map_err(|e| e.to_string())
        })();
        write_response(&mut writer, result)?;
        served += 1;
    }
    Ok(served)
}
