//! Pipeline verbs behind the command line.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Translation3, UnitQuaternion};
use voxworld_core::buffers::{
    mask_depth_patches, read_buffer_set, render_buffers, write_buffer_set, BufferSidecar, DynamicObject, Trajectory,
    DEFAULT_DEPTH_PATCH,
};
use voxworld_core::conditions::{build_conditions, BoxTrack, ChunkFrame, HdMap};
use voxworld_core::formats::{read_f32_le, read_json};
use voxworld_core::gaussians::{
    composite_scene, load_scene, save_scene, sky_encode, write_ply, AttributePredictor, CompositeSettings,
    FilePredictor, FrameInput, HeuristicPredictor, RgbImage, SceneManifest, Sky, SkyModelParams,
};
use voxworld_core::geom::OrientedBox;
use voxworld_core::lidar::{cast_lidar, write_points_ply, LidarOptions, LidarPattern};
use voxworld_core::outpaint::{
    outpaint_scene, toy_decoder, ChunkIndex, ChunkLayout, Denoiser, ExternalDenoiser, LinearGaussianDenoiser,
    NoiseSchedule, OutpaintRequest, SamplerError, TRAINING_TIMESTEPS,
};
use voxworld_core::sparse_grid::{SemanticLabel, SemanticVoxel, SparseVoxelGrid};
use voxworld_core::{Execution, Vec3};

use crate::bundle::{write_bundle, Bundle, BundleContents, BundleManifest};
use crate::config::{resolve, Config, DenoiserConfig};
use crate::error::{CliError, Result};

/// Occupancy fraction at which a box marks a voxel of its canonical grid.
const BOX_FILL: f64 = 0.5;

fn make_denoiser(cfg: &Config) -> Result<Box<dyn Denoiser>> {
    Ok(match &cfg.denoiser {
        DenoiserConfig::Toy => Box::new(LinearGaussianDenoiser::world_prior(cfg.world.channels)),
        DenoiserConfig::External { command } => Box::new(ExternalDenoiser::spawn(&command[0], &command[1..])?),
    })
}

fn load_inputs(cfg: &Config, base: &Path) -> Result<(Option<HdMap>, Option<Vec<BoxTrack>>)> {
    let map = cfg.inputs.hd_map.as_ref().map(|p| read_json(&resolve(p, base))).transpose()?;
    let tracks = cfg.inputs.tracks.as_ref().map(|p| read_json(&resolve(p, base))).transpose()?;
    Ok((map, tracks))
}

/// Rounds every latent to f32 so the decoded world matches what a reload sees.
fn quantize(layout: &mut ChunkLayout) {
    for cube in layout.chunks.values_mut() {
        cube.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

fn grow(
    layout: &mut ChunkLayout,
    cfg: &Config,
    chunks: &[ChunkIndex],
    map: &HdMap,
    tracks: &[BoxTrack],
) -> Result<Vec<ChunkIndex>> {
    let denoiser = make_denoiser(cfg)?;
    let conditions = |_: ChunkIndex, frame: &ChunkFrame| {
        build_conditions(map, tracks, cfg.inputs.time, frame).map_err(|e| SamplerError::Conditions(e.to_string()))
    };
    let request = OutpaintRequest {
        chunks,
        seed: cfg.seed,
        sampler: cfg.sampler_config(),
    };
    let placed = outpaint_scene(layout, &request, &conditions, denoiser.as_ref(), &NoiseSchedule::cosine(TRAINING_TIMESTEPS))?;
    quantize(layout);
    Ok(placed)
}

fn decode(layout: &ChunkLayout, upsample: usize) -> Result<SparseVoxelGrid> {
    let empty = SparseVoxelGrid::new(layout.base.origin, layout.base.latent_voxel_size / upsample as f64)?;
    Ok(layout.decode_world(|l| toy_decoder(l, upsample))?.unwrap_or(empty))
}

/// Conditions → outpainting → decoding → bundle on disk.
pub fn generate(cfg: &Config, config_dir: &Path, out: &Path) -> Result<BundleManifest> {
    cfg.validate()?;
    let (map, tracks) = load_inputs(cfg, config_dir)?;
    let mut layout = ChunkLayout::new(cfg.base_frame(), cfg.world.channels, cfg.world.stride_m)?;
    grow(
        &mut layout,
        cfg,
        &cfg.chunk_indices(),
        map.as_ref().unwrap_or(&HdMap::default()),
        tracks.as_deref().unwrap_or_default(),
    )?;
    let world = decode(&layout, cfg.world.upsample)?;
    write_bundle(
        out,
        &BundleContents {
            config: cfg,
            layout: &layout,
            world: &world,
            hd_map: map.as_ref(),
            tracks: tracks.as_deref(),
        },
    )
}

/// Extends a bundle with more chunks, conditioned on the ones it holds.
pub fn outpaint(bundle_dir: &Path, chunks: &[[i32; 2]], out: &Path) -> Result<(BundleManifest, Vec<ChunkIndex>)> {
    let b = Bundle::open(bundle_dir)?;
    let mut cfg = b.config.clone();
    let mut layout = b.layout.clone();
    let request: Vec<ChunkIndex> = chunks.iter().map(|c| ChunkIndex::new(c[0], c[1])).collect();
    let placed = grow(&mut layout, &cfg, &request, &b.hd_map, &b.tracks)?;
    for c in chunks {
        if !cfg.world.chunks.contains(c) {
            cfg.world.chunks.push(*c);
        }
    }
    let world = decode(&layout, cfg.world.upsample)?;
    let has_map = b.manifest.blobs.contains_key(crate::bundle::HD_MAP_BLOB);
    let has_tracks = b.manifest.blobs.contains_key(crate::bundle::TRACKS_BLOB);
    let manifest = write_bundle(
        out,
        &BundleContents {
            config: &cfg,
            layout: &layout,
            world: &world,
            hd_map: has_map.then_some(&b.hd_map),
            tracks: has_tracks.then_some(b.tracks.as_slice()),
        },
    )?;
    Ok((manifest, placed))
}

/// Canonical (box-frame) voxel grid of each track: a box of vehicle voxels
/// centred on the origin.
pub fn dynamic_objects(tracks: &[BoxTrack], voxel_size: f64) -> Result<Vec<DynamicObject>> {
    tracks
        .iter()
        .map(|t| {
            let h = t.half_extents();
            let mut grid = SparseVoxelGrid::new(-h, voxel_size)?;
            let voxel = SemanticVoxel::new(SemanticLabel::Car, Some(t.instance_id))?;
            grid.voxelize_box(&OrientedBox::new(Vec3::zeros(), h, 0.0), voxel, BOX_FILL)?;
            Ok(DynamicObject {
                track: t.clone(),
                grid,
            })
        })
        .collect()
}

/// Renders guidance buffers for every trajectory frame into `out`.
pub fn render_buffers_cmd(
    bundle_dir: &Path,
    trajectory: &Path,
    window: Option<usize>,
    out: &Path,
    execution: Execution,
) -> Result<Vec<BufferSidecar>> {
    let b = Bundle::open(bundle_dir)?;
    let traj = Trajectory::load(trajectory)?;
    let mut settings = b.config.render.settings(execution);
    if let Some(w) = window {
        settings.window = w;
    }
    let dynamic = dynamic_objects(&b.tracks, b.world.voxel_size())?;
    let sets = render_buffers(&b.world, &dynamic, &traj, &settings)?;
    fs::create_dir_all(out).map_err(|e| CliError::Input(format!("{}: {e}", out.display())))?;
    sets.iter()
        .map(|s| write_buffer_set(out, s, Some(b.manifest.seed)).map_err(Into::into))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorSpec {
    Heuristic,
    /// Directory of raw parameter files written by an external model.
    External(PathBuf),
}

impl std::str::FromStr for PredictorSpec {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "heuristic" => Ok(Self::Heuristic),
            _ => match s.strip_prefix("external:") {
                Some(p) if !p.is_empty() => Ok(Self::External(PathBuf::from(p))),
                _ => Err(format!("expected 'heuristic' or 'external:PATH', got {s:?}")),
            },
        }
    }
}

pub struct ComposeOptions {
    pub images: Option<PathBuf>,
    pub predictor: PredictorSpec,
    /// Raw f32 sky-model weights; the gradient sky is used without them.
    pub sky_params: Option<PathBuf>,
    /// Probability of zeroing each depth patch before prediction.
    pub depth_mask: Option<f64>,
    pub settings: CompositeSettings,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        Self {
            images: None,
            predictor: PredictorSpec::Heuristic,
            sky_params: None,
            depth_mask: None,
            settings: CompositeSettings::default(),
        }
    }
}

/// Frame numbers of every buffer set in `dir`, ascending.
pub fn buffer_frames(dir: &Path) -> Result<Vec<usize>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut frames: Vec<usize> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("frame_")?.strip_suffix(".json")?.parse().ok()
        })
        .collect();
    frames.sort_unstable();
    Ok(frames)
}

fn semantic_image(set: &voxworld_core::buffers::GuidanceBufferSet) -> RgbImage {
    RgbImage {
        width: set.width(),
        height: set.height(),
        data: set.semantic.iter().map(|c| c.map(|v| (v + 1.0) / 2.0)).collect(),
    }
}

/// Builds a Gaussian scene from rendered buffers and writes it to `out`.
/// Without images the semantic buffer colours stand in for appearance.
pub fn compose(bundle_dir: &Path, buffers: &Path, opts: &ComposeOptions, out: &Path) -> Result<SceneManifest> {
    let b = Bundle::open(bundle_dir)?;
    let mut frames = Vec::new();
    for f in buffer_frames(buffers)? {
        let set = read_buffer_set(buffers, f)?;
        let image = match &opts.images {
            Some(dir) => RgbImage::load(&dir.join(format!("frame_{f:05}.png")))?,
            None => semantic_image(&set),
        };
        let depth = opts
            .depth_mask
            .map(|p| mask_depth_patches(&set.depth, set.width(), set.height(), DEFAULT_DEPTH_PATCH, p, b.manifest.seed ^ f as u64))
            .transpose()?;
        frames.push(FrameInput {
            buffers: set,
            image,
            depth,
        });
    }
    if frames.is_empty() {
        return Err(CliError::Input(format!("no buffer sets in {}", buffers.display())));
    }
    let sky = match &opts.sky_params {
        None => Sky::Gradient,
        Some(p) => {
            let params = SkyModelParams::from_flat(&read_f32_le(p)?)?;
            let f = &frames[0];
            let latent = sky_encode(&params, &f.image, &f.buffers.sky, &f.buffers.camera)?;
            Sky::Model {
                params: Box::new(params),
                latent,
            }
        }
    };
    let predictor: Box<dyn AttributePredictor> = match &opts.predictor {
        PredictorSpec::Heuristic => Box::new(HeuristicPredictor::default()),
        PredictorSpec::External(dir) => Box::new(FilePredictor { dir: dir.clone() }),
    };
    let scene = composite_scene(&b.world, &frames, predictor.as_ref(), &b.tracks, sky, &opts.settings)?;
    Ok(save_scene(out, &scene)?)
}

/// Ground-vehicle sensor pose: position plus yaw about +z.
pub fn sensor_pose(pose: [f64; 4]) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(pose[0], pose[1], pose[2]),
        UnitQuaternion::from_euler_angles(0.0, 0.0, pose[3]),
    )
}

/// One LiDAR sweep over a saved scene, written as a point list.
pub fn lidar_sim(
    scene_dir: &Path,
    pose: [f64; 4],
    t: f64,
    pattern: Option<&Path>,
    options: &LidarOptions,
    out: &Path,
) -> Result<usize> {
    let scene = load_scene(scene_dir)?;
    let pattern = match pattern {
        Some(p) => LidarPattern::load(p)?,
        None => LidarPattern::default_64(),
    };
    let returns = cast_lidar(&scene, &sensor_pose(pose), t, &pattern, options);
    write_points_ply(out, &returns)?;
    Ok(returns.len())
}

/// Every Gaussian of a saved scene, posed at time `t`, as one PLY.
pub fn export_ply(scene_dir: &Path, t: f64, out: &Path) -> Result<usize> {
    let scene = load_scene(scene_dir)?;
    let posed: Vec<_> = scene.posed(t).into_iter().map(|(g, _)| g).collect();
    write_ply(out, &posed)?;
    Ok(posed.len())
}
