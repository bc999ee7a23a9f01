//! Dense condition volume for one latent chunk: rasterized HD-map polylines,
//! the fitted road surface, and box headings.
//!
//! Channel layout of [`ConditionVolume`]:
//!
//! | channel | meaning                          | range      |
//! |---------|----------------------------------|------------|
//! | 0       | road edge hit                    | {0, 1}     |
//! | 1       | road line hit                    | {0, 1}     |
//! | 2       | road surface                     | {0, 1}     |
//! | 3, 4    | box heading `[sin α, cos α]`     | unit or 0  |

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::{self, FormatError};
use crate::geom::{wrap_angle, BoxPose, OrientedBox, Vec3};
use crate::sparse_grid::{box_cell_fractions, segment_cells, VoxelCoord};

pub const DEFAULT_CHUNK_CELLS: usize = 32;
pub const DEFAULT_LATENT_VOXEL_SIZE: f64 = 1.6;
pub const CONDITION_CHANNELS: usize = 5;
pub const CHANNEL_NAMES: [&str; CONDITION_CHANNELS] = ["hd_edge", "hd_line", "road_surface", "box_sin", "box_cos"];

/// Road-region fallback when edges do not form closed loops (≈ two lanes).
pub const ROAD_DILATION_M: f64 = 7.0;
/// Plane tiles per chunk side.
pub const ROAD_TILES: usize = 4;

#[derive(Debug, Error)]
pub enum ConditionError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("frame mismatch between condition parts")]
    FrameMismatch,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Placement and resolution of one dense chunk. `origin` is the min corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkFrame {
    pub origin: Vec3,
    pub n: usize,
    pub latent_voxel_size: f64,
}

impl ChunkFrame {
    pub fn centered(center: Vec3, n: usize, latent_voxel_size: f64) -> Self {
        let half = 0.5 * n as f64 * latent_voxel_size;
        Self {
            origin: center - Vec3::repeat(half),
            n,
            latent_voxel_size,
        }
    }

    pub fn extent(&self) -> f64 {
        self.n as f64 * self.latent_voxel_size
    }

    pub fn center(&self) -> Vec3 {
        self.origin + Vec3::repeat(0.5 * self.extent())
    }

    pub fn cell_count(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.latent_voxel_size
    }

    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn in_bounds(&self, c: VoxelCoord) -> bool {
        let n = self.n as i32;
        (0..n).contains(&c.i) && (0..n).contains(&c.j) && (0..n).contains(&c.k)
    }
}

/// Dense `N³ × channels` array in `((i·N + j)·N + k)·channels + c` order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVolume {
    pub frame: ChunkFrame,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl DenseVolume {
    pub fn zeros(frame: ChunkFrame, channels: usize) -> Self {
        Self {
            frame,
            channels,
            data: vec![0.0; frame.cell_count() * channels],
        }
    }

    pub fn get(&self, i: usize, j: usize, k: usize, c: usize) -> f64 {
        self.data[self.frame.cell_index(i, j, k) * self.channels + c]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, c: usize, v: f64) {
        let idx = self.frame.cell_index(i, j, k) * self.channels + c;
        self.data[idx] = v;
    }

    pub fn nonzero_count(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec3>", into = "Vec<Vec3>")]
pub struct Polyline(Vec<Vec3>);

impl Polyline {
    pub fn new(vertices: Vec<Vec3>) -> Result<Self, ConditionError> {
        if vertices.len() < 2 {
            return Err(ConditionError::InvalidInput("polyline needs at least 2 vertices".into()));
        }
        if !vertices.iter().all(|v| v.iter().all(|x| x.is_finite())) {
            return Err(ConditionError::InvalidInput("polyline vertices must be finite".into()));
        }
        Ok(Self(vertices))
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = (&Vec3, &Vec3)> {
        self.0.windows(2).map(|w| (&w[0], &w[1]))
    }

    /// First and last vertex coincide in the ground plane.
    pub fn is_closed(&self) -> bool {
        let (a, b) = (self.0[0], self.0[self.0.len() - 1]);
        self.0.len() >= 4 && (a.xy() - b.xy()).norm() < 1e-6
    }
}

impl TryFrom<Vec<Vec3>> for Polyline {
    type Error = ConditionError;
    fn try_from(v: Vec<Vec3>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Polyline> for Vec<Vec3> {
    fn from(p: Polyline) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HdMap {
    pub road_edges: Vec<Polyline>,
    pub road_lines: Vec<Polyline>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub t: f64,
    pub pose: BoxPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxTrackRecord")]
pub struct BoxTrack {
    pub instance_id: u32,
    /// (length, width, height) in metres.
    pub size: Vec3,
    poses: Vec<TimedPose>,
}

#[derive(Deserialize)]
struct BoxTrackRecord {
    instance_id: u32,
    size: Vec3,
    poses: Vec<TimedPose>,
}

impl TryFrom<BoxTrackRecord> for BoxTrack {
    type Error = ConditionError;
    fn try_from(r: BoxTrackRecord) -> Result<Self, ConditionError> {
        BoxTrack::new(r.instance_id, r.size, r.poses)
    }
}

impl BoxTrack {
    pub fn new(instance_id: u32, size: Vec3, poses: Vec<TimedPose>) -> Result<Self, ConditionError> {
        if size.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(ConditionError::InvalidInput("box size must be positive".into()));
        }
        if poses.is_empty() {
            return Err(ConditionError::InvalidInput("track needs at least one pose".into()));
        }
        if poses.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(ConditionError::InvalidInput("pose timestamps must strictly increase".into()));
        }
        Ok(Self {
            instance_id,
            size,
            poses,
        })
    }

    pub fn poses(&self) -> &[TimedPose] {
        &self.poses
    }

    pub fn half_extents(&self) -> Vec3 {
        0.5 * self.size
    }

    /// Linear position and shortest-arc heading interpolation. `None` outside
    /// the track's time span.
    pub fn pose_at(&self, t: f64) -> Option<BoxPose> {
        let first = self.poses.first()?;
        let last = self.poses.last()?;
        if t < first.t || t > last.t {
            return None;
        }
        let idx = self.poses.partition_point(|p| p.t <= t);
        if idx == 0 {
            return Some(first.pose);
        }
        let a = &self.poses[idx - 1];
        if a.t == t || idx == self.poses.len() {
            return Some(a.pose);
        }
        let b = &self.poses[idx];
        let u = (t - a.t) / (b.t - a.t);
        let center = a.pose.center + (b.pose.center - a.pose.center) * u;
        let dh = wrap_angle(b.pose.heading - a.pose.heading);
        Some(BoxPose::new(center, wrap_angle(a.pose.heading + u * dh)))
    }

    pub fn box_at(&self, t: f64) -> Option<OrientedBox> {
        self.pose_at(t)
            .map(|p| OrientedBox::new(p.center, self.half_extents(), p.heading))
    }

    pub fn with_poses(&self, poses: Vec<TimedPose>) -> Result<Self, ConditionError> {
        Self::new(self.instance_id, self.size, poses)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVolume {
    volume: DenseVolume,
}

impl ConditionVolume {
    pub fn zeros(frame: ChunkFrame) -> Self {
        Self {
            volume: DenseVolume::zeros(frame, CONDITION_CHANNELS),
        }
    }

    /// Wraps raw channel-interleaved values; checks only the shape.
    pub fn from_raw(frame: ChunkFrame, data: Vec<f64>) -> Result<Self, ConditionError> {
        if data.len() != frame.cell_count() * CONDITION_CHANNELS {
            return Err(ConditionError::InvalidInput(format!(
                "{} values for a {}-cell volume",
                data.len(),
                frame.cell_count()
            )));
        }
        Ok(Self {
            volume: DenseVolume {
                frame,
                channels: CONDITION_CHANNELS,
                data,
            },
        })
    }

    pub fn frame(&self) -> &ChunkFrame {
        &self.volume.frame
    }

    pub fn channels(&self) -> usize {
        CONDITION_CHANNELS
    }

    pub fn data(&self) -> &[f64] {
        &self.volume.data
    }

    pub fn cell(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let idx = self.volume.frame.cell_index(i, j, k) * CONDITION_CHANNELS;
        &self.volume.data[idx..idx + CONDITION_CHANNELS]
    }

    /// Back into (hd, road, box) parts.
    pub fn split(&self) -> (DenseVolume, DenseVolume, DenseVolume) {
        let frame = self.volume.frame;
        let mut parts = [
            DenseVolume::zeros(frame, 2),
            DenseVolume::zeros(frame, 1),
            DenseVolume::zeros(frame, 2),
        ];
        for (cell, src) in self.volume.data.chunks_exact(CONDITION_CHANNELS).enumerate() {
            parts[0].data[2 * cell..2 * cell + 2].copy_from_slice(&src[0..2]);
            parts[1].data[cell] = src[2];
            parts[2].data[2 * cell..2 * cell + 2].copy_from_slice(&src[3..5]);
        }
        let [hd, road, boxes] = parts;
        (hd, road, boxes)
    }

    /// Raw little-endian f32 array plus a JSON sidecar.
    pub fn export(&self, raw_path: &Path) -> Result<(), ConditionError> {
        formats::write_f32_le(raw_path, &self.volume.data)?;
        let sidecar = serde_json::json!({
            "N": self.volume.frame.n,
            "channels": CONDITION_CHANNELS,
            "channel_names": CHANNEL_NAMES,
            "layout": "i-major, then j, k, channel; little-endian f32",
            "frame": self.volume.frame,
        });
        formats::write_json(&raw_path.with_extension("json"), &sidecar)?;
        Ok(())
    }
}

pub fn build_hd_condition(map: &HdMap, frame: &ChunkFrame) -> DenseVolume {
    let mut vol = DenseVolume::zeros(*frame, 2);
    let groups = [(0usize, &map.road_edges), (1usize, &map.road_lines)];
    for (ch, lines) in groups {
        for line in lines {
            for (p0, p1) in line.segments() {
                for c in segment_cells(&frame.origin, frame.latent_voxel_size, p0, p1) {
                    if frame.in_bounds(c) {
                        vol.set(c.i as usize, c.j as usize, c.k as usize, ch, 1.0);
                    }
                }
            }
        }
    }
    vol
}

/// Height field `z = a·x + b·y + c` in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Plane {
    pub fn z_at(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }
}

/// Least-squares height plane through `points` via the 3×3 normal equations
/// (solved in coordinates centred on the point mean).
pub fn fit_plane(points: &[Vec3]) -> Result<Plane, ConditionError> {
    if points.len() < 3 {
        return Err(ConditionError::DegenerateGeometry(format!("{} points", points.len())));
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let d = p - mean;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
        sxz += d.x * d.z;
        syz += d.y * d.z;
    }
    let det = sxx * syy - sxy * sxy;
    // Collinear in the ground plane: the xy scatter matrix is rank deficient.
    if !(det > 1e-12 * (sxx + syy).powi(2)) || sxx + syy == 0.0 {
        return Err(ConditionError::DegenerateGeometry("vertices are collinear".into()));
    }
    let a = (sxz * syy - syz * sxy) / det;
    let b = (syz * sxx - sxz * sxy) / det;
    let c = mean.z - a * mean.x - b * mean.y;
    Ok(Plane { a, b, c })
}

fn resample(line: &Polyline, spacing: f64) -> Vec<Vec3> {
    let mut out = vec![line.vertices()[0]];
    for (p0, p1) in line.segments() {
        let steps = ((p1 - p0).norm() / spacing).ceil().max(1.0) as usize;
        for s in 1..=steps {
            out.push(p0 + (p1 - p0) * (s as f64 / steps as f64));
        }
    }
    out
}

/// Polyline samples (every half latent cell) whose ground position lies in the chunk.
pub fn road_fit_points(map: &HdMap, frame: &ChunkFrame) -> Vec<Vec3> {
    let spacing = 0.5 * frame.latent_voxel_size;
    let (x0, y0) = (frame.origin.x, frame.origin.y);
    let e = frame.extent();
    map.road_edges
        .iter()
        .chain(map.road_lines.iter())
        .flat_map(|l| resample(l, spacing))
        .filter(|p| p.x >= x0 && p.x < x0 + e && p.y >= y0 && p.y < y0 + e)
        .collect()
}

fn point_segment_distance_xy(p: [f64; 2], a: &Vec3, b: &Vec3) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let u = if len2 > 0.0 {
        (((p[0] - a.x) * dx + (p[1] - a.y) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.x + u * dx - p[0], a.y + u * dy - p[1]);
    (qx * qx + qy * qy).sqrt()
}

/// Even–odd crossing test over every ring.
fn inside_rings(p: [f64; 2], rings: &[&Polyline]) -> bool {
    let mut inside = false;
    for ring in rings {
        let v = ring.vertices();
        for w in v.windows(2) {
            let (a, b) = (w[0], w[1]);
            if (a.y > p[1]) != (b.y > p[1]) {
                let x = a.x + (p[1] - a.y) / (b.y - a.y) * (b.x - a.x);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

/// Road region test in the ground plane.
pub fn in_road_region(map: &HdMap, p: [f64; 2]) -> bool {
    let rings: Vec<&Polyline> = map.road_edges.iter().filter(|l| l.is_closed()).collect();
    if !rings.is_empty() {
        return inside_rings(p, &rings);
    }
    map.road_edges
        .iter()
        .chain(map.road_lines.iter())
        .flat_map(|l| l.segments())
        .any(|(a, b)| point_segment_distance_xy(p, a, b) <= ROAD_DILATION_M)
}

/// Per-tile road planes (row-major `ROAD_TILES × ROAD_TILES`), falling back
/// to the chunk-global plane for tiles with too few or collinear samples.
pub fn fit_road_planes(map: &HdMap, frame: &ChunkFrame) -> Result<Vec<Plane>, ConditionError> {
    let pts = road_fit_points(map, frame);
    if pts.is_empty() {
        return Err(ConditionError::DegenerateGeometry("no polylines in chunk".into()));
    }
    let global = fit_plane(&pts)?;
    let tile = frame.extent() / ROAD_TILES as f64;
    let mut buckets = vec![Vec::new(); ROAD_TILES * ROAD_TILES];
    for p in &pts {
        let tx = (((p.x - frame.origin.x) / tile) as usize).min(ROAD_TILES - 1);
        let ty = (((p.y - frame.origin.y) / tile) as usize).min(ROAD_TILES - 1);
        buckets[tx * ROAD_TILES + ty].push(*p);
    }
    Ok(buckets
        .iter()
        .map(|b| fit_plane(b).unwrap_or(global))
        .collect())
}

pub fn fit_road_surface(map: &HdMap, frame: &ChunkFrame) -> Result<DenseVolume, ConditionError> {
    let planes = fit_road_planes(map, frame)?;
    let tile = frame.extent() / ROAD_TILES as f64;
    let s = frame.latent_voxel_size;
    let mut vol = DenseVolume::zeros(*frame, 1);
    for i in 0..frame.n {
        for j in 0..frame.n {
            let c = frame.cell_center(i, j, 0);
            if !in_road_region(map, [c.x, c.y]) {
                continue;
            }
            let tx = (((c.x - frame.origin.x) / tile) as usize).min(ROAD_TILES - 1);
            let ty = (((c.y - frame.origin.y) / tile) as usize).min(ROAD_TILES - 1);
            let z = planes[tx * ROAD_TILES + ty].z_at(c.x, c.y);
            let k = ((z - frame.origin.z) / s).floor();
            if k >= 0.0 && (k as usize) < frame.n {
                let k = k as usize;
                // Re-check against the same half-open bounds used elsewhere.
                let lo = frame.origin.z + k as f64 * s;
                let k = if z < lo { k.checked_sub(1) } else { Some(k) };
                if let Some(k) = k {
                    vol.set(i, j, k, 0, 1.0);
                }
            }
        }
    }
    Ok(vol)
}

/// Box heading channels at time `t`. Tracks without a pose at `t` are absent.
pub fn build_box_condition(tracks: &[BoxTrack], t: f64, frame: &ChunkFrame) -> DenseVolume {
    // (fraction, instance, heading) per cell.
    let mut best: Vec<Option<(f64, u32, f64)>> = vec![None; frame.cell_count()];
    for track in tracks {
        let Some(obox) = track.box_at(t) else { continue };
        for (c, frac) in box_cell_fractions(&frame.origin, frame.latent_voxel_size, &obox) {
            if !(frac > 0.5) || !frame.in_bounds(c) {
                continue;
            }
            let idx = frame.cell_index(c.i as usize, c.j as usize, c.k as usize);
            let wins = match best[idx] {
                None => true,
                Some((f, id, _)) => frac > f || (frac == f && track.instance_id < id),
            };
            if wins {
                best[idx] = Some((frac, track.instance_id, obox.heading));
            }
        }
    }
    let mut vol = DenseVolume::zeros(*frame, 2);
    for (idx, b) in best.into_iter().enumerate() {
        if let Some((_, _, heading)) = b {
            let (s, c) = heading.sin_cos();
            vol.data[2 * idx] = s;
            vol.data[2 * idx + 1] = c;
        }
    }
    vol
}

pub fn assemble_conditions(
    hd: &DenseVolume,
    road: &DenseVolume,
    boxes: &DenseVolume,
) -> Result<ConditionVolume, ConditionError> {
    if hd.frame != road.frame || hd.frame != boxes.frame {
        return Err(ConditionError::FrameMismatch);
    }
    if hd.channels != 2 || road.channels != 1 || boxes.channels != 2 {
        return Err(ConditionError::InvalidInput("expected 2 + 1 + 2 channels".into()));
    }
    let frame = hd.frame;
    let mut data = Vec::with_capacity(frame.cell_count() * CONDITION_CHANNELS);
    for cell in 0..frame.cell_count() {
        data.extend_from_slice(&hd.data[2 * cell..2 * cell + 2]);
        data.push(road.data[cell]);
        data.extend_from_slice(&boxes.data[2 * cell..2 * cell + 2]);
    }
    Ok(ConditionVolume {
        volume: DenseVolume {
            frame,
            channels: CONDITION_CHANNELS,
            data,
        },
    })
}

/// Full condition volume for a chunk. A chunk without usable road geometry
/// gets an empty road channel.
pub fn build_conditions(
    map: &HdMap,
    tracks: &[BoxTrack],
    t: f64,
    frame: &ChunkFrame,
) -> Result<ConditionVolume, ConditionError> {
    let hd = build_hd_condition(map, frame);
    let road = match fit_road_surface(map, frame) {
        Ok(r) => r,
        Err(ConditionError::DegenerateGeometry(_)) => DenseVolume::zeros(*frame, 1),
        Err(e) => return Err(e),
    };
    let boxes = build_box_condition(tracks, t, frame);
    assemble_conditions(&hd, &road, &boxes)
}
