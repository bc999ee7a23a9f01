#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use voxworld_core::conditions::{BoxTrack, HdMap, Polyline, TimedPose};
use voxworld_core::geom::BoxPose;
use voxworld_core::Vec3;

/// A straight road along +x with one lane line and one car driving on it.
pub fn write_street_inputs(dir: &Path) {
    let line = |y: f64| Polyline::new(vec![Vec3::new(-30.0, y, 0.0), Vec3::new(80.0, y, 0.0)]).unwrap();
    let map = HdMap {
        road_edges: vec![line(-5.0), line(5.0)],
        road_lines: vec![line(0.0)],
    };
    let car = BoxTrack::new(
        4,
        Vec3::new(4.0, 2.0, 1.6),
        vec![
            TimedPose { t: 0.0, pose: BoxPose::new(Vec3::new(12.0, -2.5, 0.8), 0.0) },
            TimedPose { t: 20.0, pose: BoxPose::new(Vec3::new(40.0, -2.5, 0.8), 0.0) },
        ],
    )
    .unwrap();
    fs::write(dir.join("hd_map.json"), serde_json::to_vec_pretty(&map).unwrap()).unwrap();
    fs::write(dir.join("tracks.json"), serde_json::to_vec_pretty(&vec![car]).unwrap()).unwrap();
}

/// `[world]` body for a small world: 6.4 m chunks of 0.2 m voxels.
pub const SMALL_WORLD: &str = "chunk_cells = 8\nlatent_voxel_size = 0.8\nstride_m = 3.2\norigin = [-3.2, -3.2, -0.8]\nupsample = 4\n";

/// Writes `config.toml` (plus street inputs) into `dir` and returns its path.
pub fn write_config(dir: &Path, seed: u64, world: &str, extra: &str) -> PathBuf {
    write_street_inputs(dir);
    let text = format!(
        r#"seed = {seed}

[world]
{world}

[sampler]
steps = 12

[inputs]
hd_map = "hd_map.json"
tracks = "tracks.json"

[render]
width = 48
height = 27

[drive]
preview_width = 24
preview_height = 14
start = [-5.0, 2.5, 0.0]
{extra}"#
    );
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

/// Every file under `dir` as (relative path, bytes), sorted.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn voxworld() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_voxworld"))
}
