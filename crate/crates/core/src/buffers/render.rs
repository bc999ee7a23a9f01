use nalgebra::Isometry3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::{Camera, Trajectory};
use super::palette::{instance_color, miss_color, rescale, semantic_color, voxel_color, Rgb};
use super::raycast::RayGrid;
use super::BufferError;
use crate::conditions::BoxTrack;
use crate::sparse_grid::{SemanticVoxel, SparseVoxelGrid};
use crate::{rng, Execution, Vec3};

pub const DEFAULT_WINDOW: usize = 25;
pub const DEFAULT_COORD_SCALE: f64 = 100.0;
pub const DEFAULT_MAX_RANGE: f64 = 300.0;
pub const DEFAULT_DEPTH_PATCH: usize = 16;

/// A moving object: a voxel grid in its box frame plus the box track that
/// places it in the world.
#[derive(Debug, Clone)]
pub struct DynamicObject {
    pub track: BoxTrack,
    pub grid: SparseVoxelGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    /// Frames per coordinate-normalization window.
    pub window: usize,
    /// Normalization constant K in metres.
    pub coord_scale: f64,
    pub max_range: f64,
    pub execution: Execution,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            coord_scale: DEFAULT_COORD_SCALE,
            max_range: DEFAULT_MAX_RANGE,
            execution: Execution::default(),
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<(), BufferError> {
        if self.window == 0 || !(self.coord_scale > 0.0) || !(self.max_range > 0.0) {
            return Err(BufferError::InvalidArgument(format!("bad render settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneHit {
    pub distance: f64,
    pub voxel: SemanticVoxel,
    /// World-space centre of the hit voxel.
    pub center: Vec3,
    pub instance: Option<u32>,
    pub dynamic: bool,
}

/// Static world plus dynamic objects, indexed for raycasting.
pub struct SceneRaycaster {
    world: RayGrid,
    world_grid: (Vec3, f64),
    dynamic: Vec<(BoxTrack, RayGrid, (Vec3, f64))>,
}

/// Dynamic objects placed at one timestamp.
pub struct PosedScene<'a> {
    scene: &'a SceneRaycaster,
    poses: Vec<(usize, Isometry3<f64>)>,
}

fn center_of(lattice: (Vec3, f64), c: crate::sparse_grid::VoxelCoord) -> Vec3 {
    let (origin, s) = lattice;
    Vec3::new(c.i as f64, c.j as f64, c.k as f64) * s + origin + Vec3::repeat(0.5 * s)
}

impl SceneRaycaster {
    pub fn new(world: &SparseVoxelGrid, dynamic: &[DynamicObject]) -> Self {
        Self {
            world: RayGrid::new(world),
            world_grid: (world.origin(), world.voxel_size()),
            dynamic: dynamic
                .iter()
                .map(|d| (d.track.clone(), RayGrid::new(&d.grid), (d.grid.origin(), d.grid.voxel_size())))
                .collect(),
        }
    }

    /// Places every dynamic object whose track covers `t`.
    pub fn at(&self, t: f64) -> PosedScene<'_> {
        PosedScene {
            scene: self,
            poses: self
                .dynamic
                .iter()
                .enumerate()
                .filter_map(|(i, (track, _, _))| track.pose_at(t).map(|p| (i, p.isometry())))
                .collect(),
        }
    }
}

impl PosedScene<'_> {
    /// Nearest hit over the static world and posed dynamic grids. `d` must be unit length.
    pub fn cast(&self, o: &Vec3, d: &Vec3, max_range: f64) -> Option<SceneHit> {
        let s = self.scene;
        let mut best = s.world.cast(o, d, max_range).map(|h| SceneHit {
            distance: h.distance,
            voxel: h.voxel,
            center: center_of(s.world_grid, h.coord),
            instance: h.voxel.instance_id(),
            dynamic: false,
        });
        for (i, iso) in &self.poses {
            let (track, grid, lattice) = &s.dynamic[*i];
            let range = best.map_or(max_range, |b| b.distance);
            let lo = iso.inverse_transform_point(&(*o).into()).coords;
            let ld = iso.inverse_transform_vector(d);
            if let Some(h) = grid.cast(&lo, &ld, range) {
                if best.is_none_or(|b| h.distance < b.distance) {
                    best = Some(SceneHit {
                        distance: h.distance,
                        voxel: h.voxel,
                        center: iso.transform_point(&center_of(*lattice, h.coord).into()).coords,
                        instance: Some(track.instance_id),
                        dynamic: true,
                    });
                }
            }
        }
        best
    }
}

/// Per-frame guidance images, row-major `H × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceBufferSet {
    pub frame: usize,
    pub window: usize,
    pub t: f64,
    pub camera: Camera,
    /// Ego centroid the coordinate buffer is centred on.
    pub centroid: Vec3,
    pub coord_scale: f64,
    /// Palette colors rescaled to [-1, 1].
    pub semantic: Vec<Rgb>,
    pub coordinate: Vec<[f64; 3]>,
    /// Camera-z of the hit entry point in metres, 0 on a miss.
    pub depth: Vec<f64>,
    /// Hit instance id, -1 for none.
    pub instance: Vec<i64>,
    pub sky: Vec<bool>,
    pub midground: Vec<bool>,
}

impl GuidanceBufferSet {
    pub fn width(&self) -> usize {
        self.camera.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.camera.intrinsics.height
    }
}

/// `(p − centroid) / K` clamped to [-1, 1] per component.
pub fn normalize_coordinate(p: &Vec3, centroid: &Vec3, k: f64) -> [f64; 3] {
    let q = (p - centroid) / k;
    [q.x.clamp(-1.0, 1.0), q.y.clamp(-1.0, 1.0), q.z.clamp(-1.0, 1.0)]
}

/// Mean camera position of each consecutive `window`-frame slice.
pub fn window_centroids(traj: &Trajectory, window: usize) -> Vec<Vec3> {
    traj.frames()
        .chunks(window.max(1))
        .map(|w| w.iter().map(|f| f.camera.position()).sum::<Vec3>() / w.len() as f64)
        .collect()
}

/// Pixels that see neither voxels nor sky.
pub fn mid_ground_mask(depth: &[f64], sky: &[bool]) -> Result<Vec<bool>, BufferError> {
    if depth.len() != sky.len() {
        return Err(BufferError::ShapeMismatch(format!("depth {} vs sky {}", depth.len(), sky.len())));
    }
    Ok(depth.iter().zip(sky).map(|(z, s)| *z == 0.0 && !s).collect())
}

struct PixelSample {
    semantic: Rgb,
    coordinate: [f64; 3],
    depth: f64,
    instance: i64,
    sky: bool,
}

/// Renders one frame. Misses whose ray points above the horizon count as sky.
pub fn render_frame(
    scene: &SceneRaycaster,
    camera: &Camera,
    t: f64,
    frame: usize,
    window: usize,
    centroid: &Vec3,
    settings: &RenderSettings,
) -> GuidanceBufferSet {
    let posed = scene.at(t);
    let k = camera.intrinsics;
    let o = camera.position();
    let fwd = camera.forward();
    let miss = rescale(miss_color());
    let samples = settings.execution.map_range(k.pixel_count(), |p| {
        let d = camera.ray_dir(p % k.width, p / k.width);
        match posed.cast(&o, &d, settings.max_range) {
            Some(h) => {
                let color = if h.dynamic && h.voxel.label().is_vehicle() {
                    instance_color(h.instance.unwrap_or_default())
                } else if h.dynamic {
                    semantic_color(h.voxel.label())
                } else {
                    voxel_color(&h.voxel)
                };
                PixelSample {
                    semantic: rescale(color),
                    coordinate: normalize_coordinate(&h.center, centroid, settings.coord_scale),
                    depth: h.distance * d.dot(&fwd),
                    instance: h.instance.map_or(-1, i64::from),
                    sky: false,
                }
            }
            None => PixelSample {
                semantic: miss,
                coordinate: [0.0; 3],
                depth: 0.0,
                instance: -1,
                sky: d.z > 0.0,
            },
        }
    });
    let depth: Vec<f64> = samples.iter().map(|s| s.depth).collect();
    let sky: Vec<bool> = samples.iter().map(|s| s.sky).collect();
    let midground = depth.iter().zip(&sky).map(|(z, s)| *z == 0.0 && !s).collect();
    GuidanceBufferSet {
        frame,
        window,
        t,
        camera: *camera,
        centroid: *centroid,
        coord_scale: settings.coord_scale,
        semantic: samples.iter().map(|s| s.semantic).collect(),
        coordinate: samples.iter().map(|s| s.coordinate).collect(),
        depth,
        instance: samples.iter().map(|s| s.instance).collect(),
        sky,
        midground,
    }
}

/// Renders every frame of `traj`; coordinate buffers are normalized per window.
pub fn render_buffers(
    world: &SparseVoxelGrid,
    dynamic: &[DynamicObject],
    traj: &Trajectory,
    settings: &RenderSettings,
) -> Result<Vec<GuidanceBufferSet>, BufferError> {
    settings.validate()?;
    let scene = SceneRaycaster::new(world, dynamic);
    let centroids = window_centroids(traj, settings.window);
    Ok(traj
        .frames()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let w = i / settings.window;
            render_frame(&scene, &f.camera, f.t, i, w, &centroids[w], settings)
        })
        .collect())
}

/// Zeroes each `patch × patch` tile of a row-major depth image independently
/// with probability `p`. Edge tiles may be partial.
pub fn mask_depth_patches(
    depth: &[f64],
    width: usize,
    height: usize,
    patch: usize,
    p: f64,
    seed: u64,
) -> Result<Vec<f64>, BufferError> {
    if depth.len() != width * height || patch == 0 || !(0.0..=1.0).contains(&p) {
        return Err(BufferError::InvalidArgument("bad depth-mask arguments".into()));
    }
    let (pw, ph) = (width.div_ceil(patch), height.div_ceil(patch));
    let mut r = rng::stream(seed, &[0x6d61_736b]);
    let zero: Vec<bool> = (0..pw * ph).map(|_| r.random_bool(p)).collect();
    Ok(depth
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let (u, v) = (i % width, i / width);
            if zero[(v / patch) * pw + u / patch] {
                0.0
            } else {
                *z
            }
        })
        .collect())
}
