//! LiDAR simulation against a Gaussian scene. Each Gaussian above the
//! opacity threshold is a hard ellipsoid at `k_sigma` standard deviations;
//! a beam returns its nearest entry point within range.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Isometry3, Matrix3};
use serde::{Deserialize, Serialize};

use crate::formats::{read_json, FormatError};
use crate::gaussians::{Gaussian3D, GaussianScene};
use crate::geom::Aabb;
use crate::{Execution, Vec3};

/// Default 64-beam rotating pattern.
pub const DEFAULT_PATTERN_JSON: &str = include_str!("../data/lidar_64.json");
const LEAF_SIZE: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum LidarError {
    #[error("invalid pattern: {0}")]
    InvalidPattern(String),
    #[error("malformed point file {path}: {message}")]
    Malformed { path: String, message: String },
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum BeamLayout {
    /// Every elevation swept over `azimuth_steps` evenly spaced azimuths.
    Rotating { elevations_deg: Vec<f64>, azimuth_steps: usize },
    /// Explicit `[azimuth, elevation]` pairs in radians.
    Explicit { beams_rad: Vec<[f64; 2]> },
}

fn default_k_sigma() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarPatternConfig {
    pub beams: BeamLayout,
    pub max_range: f64,
    pub opacity_threshold: f64,
    #[serde(default = "default_k_sigma")]
    pub k_sigma: f64,
}

/// Beam table (`[azimuth, elevation]`, radians) in the sensor frame
/// (x forward, y left, z up).
#[derive(Debug, Clone, PartialEq)]
pub struct LidarPattern {
    pub beams: Vec<[f64; 2]>,
    pub max_range: f64,
    pub opacity_threshold: f64,
    pub k_sigma: f64,
}

impl LidarPattern {
    pub fn new(beams: Vec<[f64; 2]>, max_range: f64, opacity_threshold: f64, k_sigma: f64) -> Result<Self, LidarError> {
        if beams.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LidarError::InvalidPattern("beam angles must be finite".into()));
        }
        if !(max_range > 0.0 && max_range.is_finite()) {
            return Err(LidarError::InvalidPattern("max_range must be positive".into()));
        }
        if !(opacity_threshold > 0.0 && opacity_threshold < 1.0) {
            return Err(LidarError::InvalidPattern("opacity_threshold must lie in (0, 1)".into()));
        }
        if !(k_sigma > 0.0 && k_sigma.is_finite()) {
            return Err(LidarError::InvalidPattern("k_sigma must be positive".into()));
        }
        Ok(Self {
            beams,
            max_range,
            opacity_threshold,
            k_sigma,
        })
    }

    pub fn from_config(cfg: &LidarPatternConfig) -> Result<Self, LidarError> {
        let beams = match &cfg.beams {
            BeamLayout::Rotating {
                elevations_deg,
                azimuth_steps,
            } => {
                let n = *azimuth_steps;
                elevations_deg
                    .iter()
                    .flat_map(|el| {
                        (0..n).map(move |a| [a as f64 / n as f64 * std::f64::consts::TAU, el.to_radians()])
                    })
                    .collect()
            }
            BeamLayout::Explicit { beams_rad } => beams_rad.clone(),
        };
        Self::new(beams, cfg.max_range, cfg.opacity_threshold, cfg.k_sigma)
    }

    pub fn default_64() -> Self {
        let cfg: LidarPatternConfig = serde_json::from_str(DEFAULT_PATTERN_JSON).expect("bundled pattern parses");
        Self::from_config(&cfg).expect("bundled pattern is valid")
    }

    pub fn load(path: &Path) -> Result<Self, LidarError> {
        Self::from_config(&read_json(path)?)
    }

    /// Unit beam direction in the sensor frame.
    pub fn direction(&self, beam: usize) -> Vec3 {
        let [az, el] = self.beams[beam];
        Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarReturn {
    pub beam: usize,
    pub range: f64,
    pub position: Vec3,
    pub instance: Option<u32>,
}

/// A Gaussian as a hard ellipsoid: `‖M (x − center)‖ = 1` on the surface.
#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: Vec3,
    m: Matrix3<f64>,
    aabb: Aabb,
    instance: Option<u32>,
}

impl Ellipsoid {
    fn new(g: &Gaussian3D, k: f64, instance: Option<u32>) -> Self {
        let r = g.rotation.to_rotation_matrix().into_inner();
        let inv_s = Matrix3::from_diagonal(&g.scale.map(|s| 1.0 / (k * s)));
        let axes = r * Matrix3::from_diagonal(&(g.scale * k));
        let half = Vec3::from_fn(|i, _| axes.row(i).norm());
        Self {
            center: g.position,
            m: inv_s * r.transpose(),
            aabb: Aabb::new(g.position - half, g.position + half),
            instance,
        }
    }

    /// Smallest positive ray parameter on the surface. Rays starting inside
    /// the ellipsoid do not hit it.
    fn hit(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        let oc = self.m * (o - self.center);
        let dd = self.m * d;
        let a = dd.dot(&dd);
        let b = 2.0 * oc.dot(&dd);
        let c = oc.dot(&oc) - 1.0;
        if c <= 0.0 || a == 0.0 {
            return None;
        }
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        if q == 0.0 {
            return None;
        }
        let t = (q / a).min(c / q);
        (t > 0.0).then_some(t)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { aabb: Aabb, start: usize, end: usize },
    Inner { aabb: Aabb, left: usize, right: usize },
}

/// Ellipsoids of a posed scene, optionally with a bounding-volume hierarchy.
pub struct LidarScene {
    ellipsoids: Vec<Ellipsoid>,
    nodes: Vec<Node>,
}

fn union_of(items: &[Ellipsoid]) -> Aabb {
    let mut b = Aabb::empty();
    for e in items {
        b.grow(&e.aabb.min);
        b.grow(&e.aabb.max);
    }
    b
}

impl LidarScene {
    pub fn new(gaussians: &[(Gaussian3D, Option<u32>)], pattern: &LidarPattern, use_bvh: bool) -> Self {
        let mut ellipsoids: Vec<Ellipsoid> = gaussians
            .iter()
            .filter(|(g, _)| g.opacity >= pattern.opacity_threshold)
            .map(|(g, id)| Ellipsoid::new(g, pattern.k_sigma, *id))
            .collect();
        let mut nodes = Vec::new();
        if use_bvh && !ellipsoids.is_empty() {
            let n = ellipsoids.len();
            Self::build(&mut ellipsoids, 0, n, &mut nodes);
        }
        Self { ellipsoids, nodes }
    }

    fn build(items: &mut [Ellipsoid], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
        let aabb = union_of(&items[start..end]);
        let id = nodes.len();
        if end - start <= LEAF_SIZE {
            nodes.push(Node::Leaf { aabb, start, end });
            return id;
        }
        let ext = aabb.max - aabb.min;
        let axis = ext.imax();
        items[start..end].sort_by(|a, b| a.center[axis].total_cmp(&b.center[axis]));
        let mid = (start + end) / 2;
        nodes.push(Node::Leaf { aabb, start, end });
        let left = Self::build(items, start, mid, nodes);
        let right = Self::build(items, mid, end, nodes);
        nodes[id] = Node::Inner { aabb, left, right };
        id
    }

    /// Nearest hit `(t, index)` with `t ≤ max_range`; ties go to the lower index.
    fn nearest(&self, o: &Vec3, d: &Vec3, max_range: f64) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        let consider = |i: usize, best: &mut Option<(f64, usize)>| {
            if let Some(t) = self.ellipsoids[i].hit(o, d) {
                if t <= max_range && best.is_none_or(|(bt, bi)| t < bt || (t == bt && i < bi)) {
                    *best = Some((t, i));
                }
            }
        };
        if self.nodes.is_empty() {
            for i in 0..self.ellipsoids.len() {
                consider(i, &mut best);
            }
            return best;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let aabb = match &self.nodes[n] {
                Node::Leaf { aabb, .. } | Node::Inner { aabb, .. } => aabb,
            };
            let limit = best.map_or(max_range, |(t, _)| t);
            match aabb.ray_interval(o, d) {
                Some((t0, t1)) if t1 >= 0.0 && t0 <= limit => {}
                _ => continue,
            }
            match &self.nodes[n] {
                Node::Leaf { start, end, .. } => (*start..*end).for_each(|i| consider(i, &mut best)),
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarOptions {
    pub use_bvh: bool,
    pub execution: Execution,
}

impl Default for LidarOptions {
    fn default() -> Self {
        Self {
            use_bvh: true,
            execution: Execution::default(),
        }
    }
}

/// One sweep from `sensor` (sensor-to-world pose) at scene time `t`.
/// Returns are ordered by beam index.
pub fn cast_lidar(
    scene: &GaussianScene,
    sensor: &Isometry3<f64>,
    t: f64,
    pattern: &LidarPattern,
    options: &LidarOptions,
) -> Vec<LidarReturn> {
    let ls = LidarScene::new(&scene.posed(t), pattern, options.use_bvh);
    cast_prepared(&ls, sensor, pattern, options.execution)
}

pub fn cast_prepared(scene: &LidarScene, sensor: &Isometry3<f64>, pattern: &LidarPattern, execution: Execution) -> Vec<LidarReturn> {
    let o = sensor.translation.vector;
    execution
        .map_range(pattern.beams.len(), |b| {
            let d = sensor.rotation * pattern.direction(b);
            scene.nearest(&o, &d, pattern.max_range).map(|(range, i)| LidarReturn {
                beam: b,
                range,
                position: o + d * range,
                instance: scene.ellipsoids[i].instance,
            })
        })
        .into_iter()
        .flatten()
        .collect()
}

fn malformed(path: &Path, msg: impl Into<String>) -> LidarError {
    LidarError::Malformed {
        path: path.display().to_string(),
        message: msg.into(),
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> LidarError + '_ {
    move |e| {
        LidarError::Format(FormatError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

const POINT_HEADER: &str = "ply\nformat binary_little_endian 1.0\nelement vertex {n}\nproperty float x\nproperty float y\nproperty float z\nproperty uint beam\nproperty double range\nproperty int instance\nend_header\n";

/// Binary PLY point list: `x y z` (float), `beam` (uint), `range` (double),
/// `instance` (int, −1 for none).
pub fn write_points_ply(path: &Path, returns: &[LidarReturn]) -> Result<(), LidarError> {
    let mut w = BufWriter::new(File::create(path).map_err(io(path))?);
    w.write_all(POINT_HEADER.replace("{n}", &returns.len().to_string()).as_bytes())
        .map_err(io(path))?;
    for r in returns {
        for v in r.position.iter() {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(io(path))?;
        }
        w.write_all(&(r.beam as u32).to_le_bytes()).map_err(io(path))?;
        w.write_all(&r.range.to_le_bytes()).map_err(io(path))?;
        let id = r.instance.map_or(-1i32, |i| i as i32);
        w.write_all(&id.to_le_bytes()).map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

/// Reads files written by [`write_points_ply`].
pub fn read_points_ply(path: &Path) -> Result<Vec<LidarReturn>, LidarError> {
    let mut r = BufReader::new(File::open(path).map_err(io(path))?);
    let mut header = String::new();
    let mut line = String::new();
    while !header.ends_with("end_header\n") {
        line.clear();
        if r.read_line(&mut line).map_err(io(path))? == 0 {
            return Err(malformed(path, "missing end_header"));
        }
        header.push_str(&line);
    }
    let n: usize = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| malformed(path, "no vertex count"))?;
    if header != POINT_HEADER.replace("{n}", &n.to_string()) {
        return Err(malformed(path, "unexpected point layout"));
    }
    let mut buf = [0u8; 28];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf).map_err(io(path))?;
        let f = |i: usize| f32::from_le_bytes(buf[i..i + 4].try_into().unwrap()) as f64;
        let id = i32::from_le_bytes(buf[24..28].try_into().unwrap());
        out.push(LidarReturn {
            position: Vec3::new(f(0), f(4), f(8)),
            beam: u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize,
            range: f64::from_le_bytes(buf[16..24].try_into().unwrap()),
            instance: (id >= 0).then_some(id as u32),
        });
    }
    Ok(out)
}
