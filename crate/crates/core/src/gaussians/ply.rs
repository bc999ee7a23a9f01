use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};

use super::decode::{logit, sigmoid};
use super::{Gaussian3D, GaussianError};
use crate::formats::FormatError;
use crate::Vec3;

/// Zeroth-order spherical-harmonic basis constant.
const SH_C0: f64 = 0.282_094_791_773_878_14;

const PROPS: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0",
    "rot_1", "rot_2", "rot_3",
];

fn io(path: &Path) -> impl Fn(std::io::Error) -> GaussianError + '_ {
    move |e| {
        GaussianError::Format(FormatError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

fn malformed(path: &Path, msg: impl Into<String>) -> GaussianError {
    GaussianError::Malformed {
        path: path.display().to_string(),
        message: msg.into(),
    }
}

/// Binary little-endian PLY in the common 3D Gaussian splatting layout:
/// log scales, opacity logit, `f_dc = (color − 0.5) / SH_C0`, quaternion `wxyz`.
pub fn write_ply(path: &Path, gaussians: &[Gaussian3D]) -> Result<(), GaussianError> {
    let mut w = BufWriter::new(File::create(path).map_err(io(path))?);
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", gaussians.len());
    for p in PROPS {
        header.push_str(&format!("property float {p}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(io(path))?;
    for g in gaussians {
        let q = g.rotation.quaternion();
        let op = g.opacity.clamp(1e-7, 1.0 - 1e-7);
        let vals = [
            g.position.x,
            g.position.y,
            g.position.z,
            0.0,
            0.0,
            0.0,
            (g.color[0] - 0.5) / SH_C0,
            (g.color[1] - 0.5) / SH_C0,
            (g.color[2] - 0.5) / SH_C0,
            logit(op),
            g.scale.x.ln(),
            g.scale.y.ln(),
            g.scale.z.ln(),
            q.w,
            q.i,
            q.j,
            q.k,
        ];
        for v in vals {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io(path))?;
        }
    }
    w.flush().map_err(io(path))
}

/// Reads binary little-endian PLY files with float or double vertex
/// properties; extra properties are skipped.
pub fn read_ply(path: &Path) -> Result<Vec<Gaussian3D>, GaussianError> {
    let mut r = BufReader::new(File::open(path).map_err(io(path))?);
    let mut line = String::new();
    let mut count = None;
    let mut props: Vec<(String, usize)> = Vec::new();
    let mut in_vertex = false;
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(io(path))? == 0 {
            return Err(malformed(path, "missing end_header"));
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] if *fmt != "binary_little_endian" => {
                return Err(malformed(path, format!("unsupported format {fmt}")));
            }
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n.parse::<usize>().map_err(|_| malformed(path, "bad vertex count"))?);
                } else if props.is_empty() {
                    return Err(malformed(path, "vertex element must come first"));
                }
            }
            ["property", ty, name] if in_vertex => {
                let size = match *ty {
                    "float" | "float32" => 4,
                    "double" | "float64" => 8,
                    _ => return Err(malformed(path, format!("unsupported property type {ty}"))),
                };
                props.push((name.to_string(), size));
            }
            _ => {}
        }
    }
    let n = count.ok_or_else(|| malformed(path, "no vertex element"))?;
    let idx: Vec<usize> = PROPS
        .iter()
        .map(|p| props.iter().position(|(q, _)| q == p).ok_or_else(|| malformed(path, format!("missing property {p}"))))
        .collect::<Result<_, _>>()?;
    let stride: usize = props.iter().map(|(_, s)| s).sum();
    let mut buf = vec![0u8; stride];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf).map_err(io(path))?;
        let mut vals = Vec::with_capacity(props.len());
        let mut at = 0;
        for (_, s) in &props {
            let b = &buf[at..at + s];
            vals.push(if *s == 4 {
                f32::from_le_bytes(b.try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(b.try_into().unwrap())
            });
            at += s;
        }
        let v = |k: usize| vals[idx[k]];
        let q = Quaternion::new(v(13), v(14), v(15), v(16));
        if !(q.norm() > 0.0) {
            return Err(malformed(path, "zero quaternion"));
        }
        out.push(Gaussian3D {
            position: Vec3::new(v(0), v(1), v(2)),
            color: [v(6), v(7), v(8)].map(|f| f * SH_C0 + 0.5),
            opacity: sigmoid(v(9)),
            scale: Vec3::new(v(10).exp(), v(11).exp(), v(12).exp()),
            rotation: UnitQuaternion::from_quaternion(q),
        });
    }
    Ok(out)
}
