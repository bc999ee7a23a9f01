//! Generation config: one TOML file, unknown keys rejected. Relative input
//! paths resolve against `$WORLDGEN_DATA_ROOT` when set, otherwise against
//! the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voxworld_core::buffers::{Intrinsics, RenderSettings};
use voxworld_core::conditions::ChunkFrame;
use voxworld_core::outpaint::{ChunkIndex, SamplerConfig};
use voxworld_core::{Execution, Vec3};

use crate::error::{CliError, Result};

pub const DATA_ROOT_ENV: &str = "WORLDGEN_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub denoiser: DenoiserConfig,
    #[serde(default)]
    pub inputs: InputsConfig,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub drive: DriveConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Latent cells per chunk edge.
    pub chunk_cells: usize,
    pub latent_voxel_size: f64,
    pub channels: usize,
    /// Distance between neighbouring chunk origins, metres.
    pub stride_m: f64,
    /// Min corner of chunk (0, 0).
    pub origin: [f64; 3],
    pub chunks: Vec<[i32; 2]>,
    /// Decoder upsampling from latent cells to voxels.
    pub upsample: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            chunk_cells: 32,
            latent_voxel_size: 1.6,
            channels: 8,
            stride_m: 25.6,
            origin: [-25.6, -25.6, -6.4],
            chunks: vec![[0, 0]],
            upsample: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub steps: usize,
    pub guidance_weight: f64,
    pub parallel: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        Self {
            steps: d.steps,
            guidance_weight: d.guidance_weight,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserConfig {
    #[default]
    Toy,
    /// Program speaking the length-prefixed denoiser protocol on stdin/stdout.
    External { command: Vec<String> },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputsConfig {
    pub hd_map: Option<PathBuf>,
    pub tracks: Option<PathBuf>,
    /// Scene time the box conditions are built at.
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub window: usize,
    pub max_range: f64,
    pub coord_scale: f64,
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        let d = RenderSettings::default();
        Self {
            window: d.window,
            max_range: d.max_range,
            coord_scale: d.coord_scale,
            width: 512,
            height: 288,
            hfov_deg: 90.0,
        }
    }
}

impl RenderConfig {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.width, self.height, self.hfov_deg.to_radians())
    }

    pub fn settings(&self, execution: Execution) -> RenderSettings {
        RenderSettings {
            window: self.window,
            coord_scale: self.coord_scale,
            max_range: self.max_range,
            execution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveConfig {
    pub wheelbase: f64,
    pub max_speed: f64,
    pub max_steer: f64,
    pub tick_hz: f64,
    pub preview_width: usize,
    pub preview_height: usize,
    /// Ego start on the ground, metres.
    pub start: [f64; 3],
    pub start_yaw: f64,
    pub camera_height: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self {
            wheelbase: 2.8,
            max_speed: 20.0,
            max_steer: 0.5,
            tick_hz: 10.0,
            preview_width: 512,
            preview_height: 288,
            start: [0.0, 0.0, 0.0],
            start_yaw: 0.0,
            camera_height: 1.6,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.world;
        if w.chunk_cells == 0 || w.channels == 0 || w.upsample == 0 {
            return Err(CliError::Config("chunk_cells, channels and upsample must be positive".into()));
        }
        positive("world.latent_voxel_size", w.latent_voxel_size)?;
        positive("world.stride_m", w.stride_m)?;
        if w.chunks.is_empty() {
            return Err(CliError::Config("world.chunks is empty".into()));
        }
        if !w.origin.iter().all(|v| v.is_finite()) {
            return Err(CliError::Config("world.origin must be finite".into()));
        }
        if self.sampler.steps == 0 {
            return Err(CliError::Config("sampler.steps must be positive".into()));
        }
        positive("sampler.guidance_weight", self.sampler.guidance_weight)?;
        if let DenoiserConfig::External { command } = &self.denoiser {
            if command.is_empty() {
                return Err(CliError::Config("denoiser.command is empty".into()));
            }
        }
        let r = &self.render;
        if r.window == 0 || r.width == 0 || r.height == 0 {
            return Err(CliError::Config("render window and size must be positive".into()));
        }
        positive("render.max_range", r.max_range)?;
        positive("render.coord_scale", r.coord_scale)?;
        if !(r.hfov_deg > 0.0 && r.hfov_deg < 180.0) {
            return Err(CliError::Config("render.hfov_deg must lie in (0, 180)".into()));
        }
        let d = &self.drive;
        positive("drive.wheelbase", d.wheelbase)?;
        positive("drive.max_speed", d.max_speed)?;
        positive("drive.max_steer", d.max_steer)?;
        positive("drive.tick_hz", d.tick_hz)?;
        positive("drive.camera_height", d.camera_height)?;
        if d.preview_width == 0 || d.preview_height == 0 {
            return Err(CliError::Config("preview size must be positive".into()));
        }
        if !d.start.iter().chain([&d.start_yaw]).all(|v| v.is_finite()) {
            return Err(CliError::Config("drive start must be finite".into()));
        }
        Ok(())
    }

    pub fn base_frame(&self) -> ChunkFrame {
        ChunkFrame {
            origin: Vec3::from(self.world.origin),
            n: self.world.chunk_cells,
            latent_voxel_size: self.world.latent_voxel_size,
        }
    }

    pub fn chunk_indices(&self) -> Vec<ChunkIndex> {
        self.world.chunks.iter().map(|c| ChunkIndex::new(c[0], c[1])).collect()
    }

    pub fn execution(&self) -> Execution {
        if self.sampler.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            steps: self.sampler.steps,
            guidance_weight: self.sampler.guidance_weight,
            execution: self.execution(),
        }
    }
}

/// Parses `"x,y;x,y;…"`.
pub fn parse_chunks(s: &str) -> Result<Vec<[i32; 2]>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let v: Vec<&str> = p.split(',').map(str::trim).collect();
            match v.as_slice() {
                [x, y] => Ok([
                    x.parse().map_err(|_| CliError::Config(format!("bad chunk index {p:?}")))?,
                    y.parse().map_err(|_| CliError::Config(format!("bad chunk index {p:?}")))?,
                ]),
                _ => Err(CliError::Config(format!("bad chunk index {p:?}"))),
            }
        })
        .collect()
}

/// Resolves a relative input path against the data root or `base`.
pub fn resolve(path: &Path, base: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(path),
        _ => base.join(path),
    }
}
