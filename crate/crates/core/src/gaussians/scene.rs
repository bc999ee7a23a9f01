use std::path::Path;

use serde::{Deserialize, Serialize};

use super::decode::{decode_pixel_gaussians, decode_voxel_gaussians, Z_FAR, Z_NEAR};
use super::ply::{read_ply, write_ply};
use super::predictor::{AttributePredictor, RgbImage};
use super::sky::{Sky, SkyModelParams};
use super::{Gaussian3D, GaussianError};
use crate::buffers::GuidanceBufferSet;
use crate::conditions::BoxTrack;
use crate::formats::{read_f32_le, read_json, write_f32_le, write_json};
use crate::sparse_grid::SparseVoxelGrid;
use crate::Vec3;

/// Voxel size the voxel branch works at.
pub const VOXEL_BRANCH_SIZE: f64 = 0.1;
/// The pixel branch runs on every n-th frame.
pub const PIXEL_BRANCH_STRIDE: usize = 4;
/// Canonical boxes are grown by this factor before filtering object Gaussians.
pub const DYNAMIC_BOX_DILATION: f64 = 1.05;
pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub instance_id: u32,
    /// Gaussians in the object's box frame.
    pub gaussians: Vec<Gaussian3D>,
    pub track: BoxTrack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub static_gaussians: Vec<Gaussian3D>,
    pub objects: Vec<SceneObject>,
    pub sky: Sky,
}

impl GaussianScene {
    /// All Gaussians in world coordinates at time `t`, tagged with their
    /// instance id. Objects whose track does not cover `t` are absent.
    pub fn posed(&self, t: f64) -> Vec<(Gaussian3D, Option<u32>)> {
        let mut out: Vec<(Gaussian3D, Option<u32>)> = self.static_gaussians.iter().map(|g| (*g, None)).collect();
        for o in &self.objects {
            if let Some(pose) = o.track.pose_at(t) {
                let iso = pose.isometry();
                out.extend(o.gaussians.iter().map(|g| (g.transformed(&iso), Some(o.instance_id))));
            }
        }
        out
    }
}

/// One frame of guidance buffers with its appearance image. `depth`
/// optionally overrides the buffer depth (e.g. a patch-masked copy).
#[derive(Debug, Clone)]
pub struct FrameInput {
    pub buffers: GuidanceBufferSet,
    pub image: RgbImage,
    pub depth: Option<Vec<f64>>,
}

/// Decoded pixel Gaussians of one frame with the frame's instance buffer.
#[derive(Debug, Clone)]
pub struct FrameGaussians {
    pub t: f64,
    pub instance: Vec<i64>,
    pub gaussians: Vec<(usize, Gaussian3D)>,
}

fn inside_dilated(track: &BoxTrack, p: &Vec3) -> bool {
    let h = track.half_extents() * DYNAMIC_BOX_DILATION;
    p.x.abs() <= h.x && p.y.abs() <= h.y && p.z.abs() <= h.z
}

/// Gathers the Gaussians of pixels labelled with the track's instance,
/// moves them into the box frame using the pose at each frame's time and
/// keeps those inside the dilated box.
pub fn extract_dynamic_object(frames: &[FrameGaussians], track: &BoxTrack) -> Vec<Gaussian3D> {
    let id = track.instance_id as i64;
    let mut out = Vec::new();
    for f in frames {
        let Some(pose) = track.pose_at(f.t) else {
            continue;
        };
        let inv = pose.isometry().inverse();
        for (p, g) in &f.gaussians {
            if f.instance.get(*p) != Some(&id) {
                continue;
            }
            let local = g.transformed(&inv);
            if inside_dilated(track, &local.position) {
                out.push(local);
            }
        }
    }
    out
}

/// New scene with one object's track replaced.
pub fn transform_dynamic(scene: &GaussianScene, instance_id: u32, track: BoxTrack) -> Result<GaussianScene, GaussianError> {
    let mut next = scene.clone();
    let obj = next
        .objects
        .iter_mut()
        .find(|o| o.instance_id == instance_id)
        .ok_or(GaussianError::UnknownInstance(instance_id))?;
    let mut track = track;
    track.instance_id = instance_id;
    obj.track = track;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeSettings {
    pub pixel_stride: usize,
    pub z_near: f64,
    pub z_far: f64,
}

impl Default for CompositeSettings {
    fn default() -> Self {
        Self {
            pixel_stride: PIXEL_BRANCH_STRIDE,
            z_near: Z_NEAR,
            z_far: Z_FAR,
        }
    }
}

/// Static part of `world` (voxels without an instance id), subdivided down
/// to the voxel-branch resolution.
pub fn static_grid(world: &SparseVoxelGrid) -> Result<SparseVoxelGrid, GaussianError> {
    let mut g = world.clone();
    g.retain(|_, v| v.instance_id().is_none());
    while g.voxel_size() > VOXEL_BRANCH_SIZE * (1.0 + 1e-9) {
        g = g.subdivide()?;
    }
    Ok(g)
}

/// Builds the scene: voxel-branch Gaussians on static voxels, pixel-branch
/// Gaussians at mid-ground pixels of every `pixel_stride`-th frame, and one
/// object per track from the pixels carrying its instance id.
pub fn composite_scene(
    world: &SparseVoxelGrid,
    frames: &[FrameInput],
    predictor: &dyn AttributePredictor,
    tracks: &[BoxTrack],
    sky: Sky,
    settings: &CompositeSettings,
) -> Result<GaussianScene, GaussianError> {
    if settings.pixel_stride == 0 {
        return Err(GaussianError::InvalidArgument("pixel stride must be positive".into()));
    }
    let grid = static_grid(world)?;
    let voxel_params = predictor.predict_voxels(&grid, frames)?;
    let mut static_gaussians = decode_voxel_gaussians(&voxel_params, &grid)?;

    let tracked = |id: i64| tracks.iter().any(|t| t.instance_id as i64 == id);
    let mut dynamic_frames = Vec::new();
    for f in frames.iter().step_by(settings.pixel_stride) {
        let b = &f.buffers;
        let keep: Vec<bool> = (0..b.depth.len())
            .map(|p| if b.instance[p] >= 0 { tracked(b.instance[p]) } else { b.midground[p] })
            .collect();
        let params = predictor.predict_pixels(f)?;
        let decoded = decode_pixel_gaussians(&params, &b.camera, settings.z_near, settings.z_far, Some(&keep))?;
        let (dynamic, stat): (Vec<_>, Vec<_>) = decoded.into_iter().partition(|(p, _)| b.instance[*p] >= 0);
        static_gaussians.extend(stat.into_iter().map(|(_, g)| g));
        dynamic_frames.push(FrameGaussians {
            t: b.t,
            instance: b.instance.clone(),
            gaussians: dynamic,
        });
    }
    let objects = tracks
        .iter()
        .map(|t| SceneObject {
            instance_id: t.instance_id,
            gaussians: extract_dynamic_object(&dynamic_frames, t),
            track: t.clone(),
        })
        .collect();
    Ok(GaussianScene {
        static_gaussians,
        objects,
        sky,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub id: u32,
    pub blob: String,
    pub track: BoxTrack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkyEntry {
    Gradient,
    Model { params_blob: String, latent: Vec<f64> },
}

/// `scene.json`: points at the static PLY, one PLY per object, and the sky.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub version: u32,
    pub static_blob: String,
    pub objects: Vec<ObjectEntry>,
    pub sky: SkyEntry,
}

pub fn save_scene(dir: &Path, scene: &GaussianScene) -> Result<SceneManifest, GaussianError> {
    std::fs::create_dir_all(dir).map_err(|e| crate::formats::FormatError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    write_ply(&dir.join("static.ply"), &scene.static_gaussians)?;
    let mut objects = Vec::new();
    for o in &scene.objects {
        let blob = format!("object_{}.ply", o.instance_id);
        write_ply(&dir.join(&blob), &o.gaussians)?;
        objects.push(ObjectEntry {
            id: o.instance_id,
            blob,
            track: o.track.clone(),
        });
    }
    let sky = match &scene.sky {
        Sky::Gradient => SkyEntry::Gradient,
        Sky::Model { params, latent } => {
            write_f32_le(&dir.join("sky_params.f32"), &params.to_flat())?;
            SkyEntry::Model {
                params_blob: "sky_params.f32".into(),
                latent: latent.clone(),
            }
        }
    };
    let manifest = SceneManifest {
        version: SCENE_VERSION,
        static_blob: "static.ply".into(),
        objects,
        sky,
    };
    write_json(&dir.join("scene.json"), &manifest)?;
    Ok(manifest)
}

pub fn load_scene(dir: &Path) -> Result<GaussianScene, GaussianError> {
    let m: SceneManifest = read_json(&dir.join("scene.json"))?;
    if m.version != SCENE_VERSION {
        return Err(GaussianError::InvalidArgument(format!("unsupported scene version {}", m.version)));
    }
    let objects = m
        .objects
        .iter()
        .map(|o| {
            Ok(SceneObject {
                instance_id: o.id,
                gaussians: read_ply(&dir.join(&o.blob))?,
                track: o.track.clone(),
            })
        })
        .collect::<Result<Vec<_>, GaussianError>>()?;
    let sky = match m.sky {
        SkyEntry::Gradient => Sky::Gradient,
        SkyEntry::Model { params_blob, latent } => Sky::Model {
            params: Box::new(SkyModelParams::from_flat(&read_f32_le(&dir.join(params_blob))?)?),
            latent,
        },
    };
    Ok(GaussianScene {
        static_gaussians: read_ply(&dir.join(&m.static_blob))?,
        objects,
        sky,
    })
}
