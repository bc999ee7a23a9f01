use std::path::Path;

use image::{ImageBuffer, Luma, Rgb as ImgRgb};
use serde::{Deserialize, Serialize};

use super::camera::Camera;
use super::render::GuidanceBufferSet;
use super::BufferError;
use crate::formats::{read_json, read_pfm, write_json, write_pfm};
use crate::Vec3;

/// Describes how each buffer file encodes its values.
pub const SIGNED_UNIT_ENCODING: &str = "u16 q = round((v + 1) / 2 * 65535); v = 2 q / 65535 - 1";
pub const INSTANCE_ENCODING: &str = "u16 q = instance_id + 1; 0 = none";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferSidecar {
    pub frame: usize,
    pub window: usize,
    pub t: f64,
    pub camera: Camera,
    pub centroid: Vec3,
    pub coord_scale: f64,
    pub seed: Option<u64>,
    pub semantic: String,
    pub coordinate: String,
    pub depth: String,
    pub instance: String,
    pub sky: String,
    pub midground: String,
    pub signed_unit_encoding: String,
    pub instance_encoding: String,
}

fn img_err(path: &Path) -> impl Fn(image::ImageError) -> BufferError + '_ {
    move |e| BufferError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn encode_unit(v: f64) -> u16 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * 65535.0).round() as u16
}

fn decode_unit(q: u16) -> f64 {
    2.0 * q as f64 / 65535.0 - 1.0
}

fn write_rgb16(path: &Path, w: usize, h: usize, px: &[[f64; 3]]) -> Result<(), BufferError> {
    let raw: Vec<u16> = px.iter().flat_map(|c| c.map(encode_unit)).collect();
    let img: ImageBuffer<ImgRgb<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).ok_or_else(|| BufferError::ShapeMismatch("rgb buffer".into()))?;
    img.save(path).map_err(img_err(path))
}

fn read_rgb16(path: &Path) -> Result<(usize, usize, Vec<[f64; 3]>), BufferError> {
    let img = image::open(path).map_err(img_err(path))?.into_rgb16();
    let (w, h) = img.dimensions();
    let px = img.pixels().map(|p| p.0.map(decode_unit)).collect();
    Ok((w as usize, h as usize, px))
}

fn write_mask(path: &Path, w: usize, h: usize, m: &[bool]) -> Result<(), BufferError> {
    let raw: Vec<u8> = m.iter().map(|b| if *b { 255 } else { 0 }).collect();
    let img: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).ok_or_else(|| BufferError::ShapeMismatch("mask".into()))?;
    img.save(path).map_err(img_err(path))
}

fn read_mask(path: &Path) -> Result<Vec<bool>, BufferError> {
    Ok(image::open(path)
        .map_err(img_err(path))?
        .into_luma8()
        .pixels()
        .map(|p| p.0[0] > 127)
        .collect())
}

/// Writes `frame_NNNNN_{semantic,coordinate,instance,sky,midground}.png`,
/// `frame_NNNNN_depth.pfm` and the `frame_NNNNN.json` sidecar into `dir`.
pub fn write_buffer_set(dir: &Path, set: &GuidanceBufferSet, seed: Option<u64>) -> Result<BufferSidecar, BufferError> {
    let (w, h) = (set.width(), set.height());
    let stem = format!("frame_{:05}", set.frame);
    let name = |s: &str| format!("{stem}_{s}");
    let side = BufferSidecar {
        frame: set.frame,
        window: set.window,
        t: set.t,
        camera: set.camera,
        centroid: set.centroid,
        coord_scale: set.coord_scale,
        seed,
        semantic: name("semantic.png"),
        coordinate: name("coordinate.png"),
        depth: name("depth.pfm"),
        instance: name("instance.png"),
        sky: name("sky.png"),
        midground: name("midground.png"),
        signed_unit_encoding: SIGNED_UNIT_ENCODING.into(),
        instance_encoding: INSTANCE_ENCODING.into(),
    };
    write_rgb16(&dir.join(&side.semantic), w, h, &set.semantic)?;
    write_rgb16(&dir.join(&side.coordinate), w, h, &set.coordinate)?;
    let depth: Vec<f32> = set.depth.iter().map(|z| *z as f32).collect();
    write_pfm(&dir.join(&side.depth), w, h, &depth)?;
    let ids = set
        .instance
        .iter()
        .map(|&id| {
            u16::try_from(id + 1).map_err(|_| BufferError::InvalidArgument(format!("instance id {id} does not fit 16 bits")))
        })
        .collect::<Result<Vec<u16>, _>>()?;
    let path = dir.join(&side.instance);
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, ids).ok_or_else(|| BufferError::ShapeMismatch("instance".into()))?;
    img.save(&path).map_err(img_err(&path))?;
    write_mask(&dir.join(&side.sky), w, h, &set.sky)?;
    write_mask(&dir.join(&side.midground), w, h, &set.midground)?;
    write_json(&dir.join(format!("{stem}.json")), &side)?;
    Ok(side)
}

/// Loads a set written by [`write_buffer_set`] (16-bit quantized, f32 depth).
pub fn read_buffer_set(dir: &Path, frame: usize) -> Result<GuidanceBufferSet, BufferError> {
    let side: BufferSidecar = read_json(&dir.join(format!("frame_{frame:05}.json")))?;
    let (w, h, semantic) = read_rgb16(&dir.join(&side.semantic))?;
    let k = side.camera.intrinsics;
    if (w, h) != (k.width, k.height) {
        return Err(BufferError::ShapeMismatch(format!("{w}x{h} image for {}x{} camera", k.width, k.height)));
    }
    let (_, _, coordinate) = read_rgb16(&dir.join(&side.coordinate))?;
    let (dw, dh, depth) = read_pfm(&dir.join(&side.depth))?;
    if (dw, dh) != (w, h) {
        return Err(BufferError::ShapeMismatch("depth size".into()));
    }
    let path = dir.join(&side.instance);
    let instance = image::open(&path)
        .map_err(img_err(&path))?
        .into_luma16()
        .pixels()
        .map(|p| p.0[0] as i64 - 1)
        .collect();
    Ok(GuidanceBufferSet {
        frame: side.frame,
        window: side.window,
        t: side.t,
        camera: side.camera,
        centroid: side.centroid,
        coord_scale: side.coord_scale,
        semantic,
        coordinate,
        depth: depth.into_iter().map(f64::from).collect(),
        instance,
        sky: read_mask(&dir.join(&side.sky))?,
        midground: read_mask(&dir.join(&side.midground))?,
    })
}
