//! File-format helpers: raw little-endian arrays, JSON sidecars,
//! length-prefixed records and the PFM float image format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed data: {0}")]
    Malformed(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_f32_le(path: &Path, values: &[f64]) -> Result<(), FormatError> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_f32_le(path: &Path) -> Result<Vec<f64>, FormatError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_f32_le(&bytes)
}

pub fn encode_f32_le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect()
}

pub fn decode_f32_le(bytes: &[u8]) -> Result<Vec<f64>, FormatError> {
    if bytes.len() % 4 != 0 {
        return Err(FormatError::Malformed(format!("{} bytes is not a whole number of f32", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Pretty JSON with a trailing newline; output is stable for equal values.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| FormatError::Json {
        path: path.display().to_string(),
        source,
    })?;
    s.push('\n');
    std::fs::write(path, s).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let f = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|source| FormatError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Maximum accepted record length (256 MiB).
pub const MAX_RECORD_LEN: u32 = 1 << 28;

/// Writes one record: `u32` little-endian byte length, then the payload.
pub fn write_record<W: Write>(w: &mut W, payload: &[u8]) -> Result<(), FormatError> {
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|l| *l <= MAX_RECORD_LEN)
        .ok_or_else(|| FormatError::Malformed(format!("record of {} bytes too large", payload.len())))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(payload)?;
    Ok(())
}

pub fn read_record<R: Read>(r: &mut R) -> Result<Vec<u8>, FormatError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len);
    if len > MAX_RECORD_LEN {
        return Err(FormatError::Malformed(format!("record length {len} exceeds limit")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Splits a buffer of concatenated records.
pub fn split_records(mut bytes: &[u8]) -> Result<Vec<&[u8]>, FormatError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < 4 {
            return Err(FormatError::Malformed("truncated record header".into()));
        }
        let len = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        if bytes.len() < 4 + len {
            return Err(FormatError::Malformed("truncated record payload".into()));
        }
        out.push(&bytes[4..4 + len]);
        bytes = &bytes[4 + len..];
    }
    Ok(out)
}

/// Single-channel PFM (`Pf`), little-endian, rows stored bottom-to-top.
pub fn write_pfm(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<(), FormatError> {
    if values.len() != width * height {
        return Err(FormatError::Malformed("pfm size mismatch".into()));
    }
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    write!(w, "Pf\n{width} {height}\n-1.0\n").map_err(io_err(path))?;
    for row in (0..height).rev() {
        for v in &values[row * width..(row + 1) * width] {
            w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f32>), FormatError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(FormatError::Malformed("truncated pfm header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "Pf" {
        return Err(FormatError::Malformed("only grayscale Pf is supported".into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| FormatError::Malformed(format!("bad pfm dimension {s}")));
    let (width, height) = (parse(&fields[1])?, parse(&fields[2])?);
    let scale: f32 = fields[3].parse().map_err(|_| FormatError::Malformed("bad pfm scale".into()))?;
    let body = &bytes[pos.min(bytes.len())..];
    if body.len() != width * height * 4 {
        return Err(FormatError::Malformed("pfm payload size mismatch".into()));
    }
    let mut values = vec![0f32; width * height];
    for (r, row) in body.chunks_exact(width * 4).enumerate() {
        let dst = height - 1 - r;
        for (c, px) in row.chunks_exact(4).enumerate() {
            let b = [px[0], px[1], px[2], px[3]];
            values[dst * width + c] = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        }
    }
    Ok((width, height, values))
}
