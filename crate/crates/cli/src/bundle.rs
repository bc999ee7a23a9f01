//! Scene bundles: a directory with `bundle.json` listing every blob with its
//! SHA-256. Nothing time- or host-dependent is written, so the same config
//! and seed always give the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use voxworld_core::buffers::{instance_ramp, miss_color, semantic_color};
use voxworld_core::conditions::{BoxTrack, ChunkFrame, HdMap};
use voxworld_core::formats::{read_json, write_json};
use voxworld_core::outpaint::{ChunkIndex, ChunkLayout, LatentCube};
use voxworld_core::sparse_grid::{read_blob, write_blob, SemanticLabel, SparseVoxelGrid};

use crate::config::Config;
use crate::error::{CliError, Result};

pub const BUNDLE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "bundle.json";
pub const CONFIG_BLOB: &str = "config.json";
pub const WORLD_BLOB: &str = "world.vxl";
pub const HD_MAP_BLOB: &str = "hd_map.json";
pub const TRACKS_BLOB: &str = "tracks.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub version: u32,
    pub seed: u64,
    pub layout: LayoutEntry,
    pub ego: EgoEntry,
    /// Scene time the box conditions were built at.
    pub time: f64,
    pub palette_sha256: String,
    pub blobs: BTreeMap<String, BlobEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutEntry {
    pub base: ChunkFrame,
    pub channels: usize,
    pub stride_cells: usize,
    pub upsample: usize,
    pub voxel_size: f64,
    /// Chunks in generation order.
    pub order: Vec<ChunkIndex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoEntry {
    pub position: [f64; 3],
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobEntry {
    pub kind: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn latent_blob(idx: ChunkIndex) -> String {
    format!("latents/chunk_{}_{}.f32", idx.x, idx.y)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the semantic palette, miss colour and instance ramp.
pub fn palette_sha256() -> String {
    let mut h = Sha256::new();
    let labels = (0u8..).map_while(SemanticLabel::from_u8);
    for c in labels.map(semantic_color).chain([miss_color()]).chain(instance_ramp().iter().copied()) {
        c.iter().for_each(|v| h.update(v.to_le_bytes()));
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

/// Everything a bundle holds, loaded and hash-checked.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub manifest: BundleManifest,
    pub config: Config,
    pub world: SparseVoxelGrid,
    pub hd_map: HdMap,
    pub tracks: Vec<BoxTrack>,
    pub layout: ChunkLayout,
}

impl Bundle {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest: BundleManifest = read_json(&dir.join(MANIFEST_FILE))?;
        if manifest.version != BUNDLE_VERSION {
            return Err(CliError::Input(format!("unsupported bundle version {}", manifest.version)));
        }
        for (name, entry) in &manifest.blobs {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(io(&path))?;
            if bytes.len() as u64 != entry.bytes || sha256_hex(&bytes) != entry.sha256 {
                return Err(CliError::Input(format!("{name}: content does not match the manifest hash")));
            }
        }
        let need = |name: &str| {
            manifest
                .blobs
                .contains_key(name)
                .then(|| dir.join(name))
                .ok_or_else(|| CliError::Input(format!("bundle lists no {name}")))
        };
        let config: Config = read_json(&need(CONFIG_BLOB)?)?;
        let world_path = need(WORLD_BLOB)?;
        let world = read_blob(std::io::BufReader::new(fs::File::open(&world_path).map_err(io(&world_path))?))?;
        let hd_map = match manifest.blobs.contains_key(HD_MAP_BLOB) {
            true => read_json(&dir.join(HD_MAP_BLOB))?,
            false => HdMap::default(),
        };
        let tracks = match manifest.blobs.contains_key(TRACKS_BLOB) {
            true => read_json(&dir.join(TRACKS_BLOB))?,
            false => Vec::new(),
        };
        let l = &manifest.layout;
        let stride_m = l.stride_cells as f64 * l.base.latent_voxel_size;
        let mut layout = ChunkLayout::new(l.base, l.channels, stride_m)?;
        for idx in &l.order {
            let (cube, _) = LatentCube::read(&need(&latent_blob(*idx))?)?;
            if cube.frame != layout.frame_of(*idx) || cube.channels != l.channels {
                return Err(CliError::Input(format!("latent for chunk {idx:?} does not fit the layout")));
            }
            layout.insert(*idx, cube);
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            config,
            world,
            hd_map,
            tracks,
            layout,
        })
    }
}

/// Contents to persist as a bundle.
pub struct BundleContents<'a> {
    pub config: &'a Config,
    pub layout: &'a ChunkLayout,
    pub world: &'a SparseVoxelGrid,
    pub hd_map: Option<&'a HdMap>,
    pub tracks: Option<&'a [BoxTrack]>,
}

/// Writes every blob, then the manifest. Returns the manifest.
pub fn write_bundle(dir: &Path, c: &BundleContents<'_>) -> Result<BundleManifest> {
    fs::create_dir_all(dir.join("latents")).map_err(io(dir))?;
    let mut kinds: BTreeMap<String, &str> = BTreeMap::new();
    write_json(&dir.join(CONFIG_BLOB), c.config)?;
    kinds.insert(CONFIG_BLOB.into(), "config");
    let world_path = dir.join(WORLD_BLOB);
    let mut w = std::io::BufWriter::new(fs::File::create(&world_path).map_err(io(&world_path))?);
    write_blob(c.world, &mut w)?;
    std::io::Write::flush(&mut w).map_err(io(&world_path))?;
    kinds.insert(WORLD_BLOB.into(), "world");
    if let Some(m) = c.hd_map {
        write_json(&dir.join(HD_MAP_BLOB), m)?;
        kinds.insert(HD_MAP_BLOB.into(), "hd_map");
    }
    if let Some(t) = c.tracks {
        write_json(&dir.join(TRACKS_BLOB), t)?;
        kinds.insert(TRACKS_BLOB.into(), "tracks");
    }
    for idx in &c.layout.order {
        let raw = latent_blob(*idx);
        c.layout.chunks[idx].write(&dir.join(&raw), Some(*idx), Some(c.config.seed))?;
        kinds.insert(raw.replace(".f32", ".json"), "latent_sidecar");
        kinds.insert(raw, "latent");
    }
    let mut blobs = BTreeMap::new();
    for (name, kind) in kinds {
        let path = dir.join(&name);
        let bytes = fs::read(&path).map_err(io(&path))?;
        blobs.insert(
            name,
            BlobEntry {
                kind: kind.into(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            },
        );
    }
    let manifest = BundleManifest {
        version: BUNDLE_VERSION,
        seed: c.config.seed,
        layout: LayoutEntry {
            base: c.layout.base,
            channels: c.layout.channels,
            stride_cells: c.layout.stride_cells,
            upsample: c.config.world.upsample,
            voxel_size: c.world.voxel_size(),
            order: c.layout.order.clone(),
        },
        ego: EgoEntry {
            position: c.config.drive.start,
            yaw: c.config.drive.start_yaw,
        },
        time: c.config.inputs.time,
        palette_sha256: palette_sha256(),
        blobs,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
