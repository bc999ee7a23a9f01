//! Acceptance suite: one line per criterion, run at full tolerance.
//! Exits non-zero when any criterion fails.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;
mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{Isometry3, Point3, Translation3};
use oracles::{
    brute_force, dense_fraction, ddim_pushforward, moments, oracle_hit, oracle_hits, oracle_render, random_beams,
    random_gaussians, random_grid, random_rotation, random_scene, PALETTE_REFERENCE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxworld_core::buffers::{
    instance_color, normalize_coordinate, render_buffers, Camera, Intrinsics, RayGrid, RenderSettings, TimedCamera,
    Trajectory,
};
use voxworld_core::conditions::{BoxTrack, ChunkFrame, ConditionVolume, TimedPose, CONDITION_CHANNELS};
use voxworld_core::gaussians::{
    decode_pixel_gaussians, depth_from_raw, extract_dynamic_object, render_splats, transform_dynamic,
    AttributePredictor, FrameGaussians, FrameInput, Gaussian3D, GaussianScene, HeuristicPredictor, RgbImage,
    SceneObject, Sky, Z_FAR, Z_NEAR,
};
use voxworld_core::geom::{BoxPose, OrientedBox};
use voxworld_core::lidar::{cast_lidar, LidarOptions, LidarPattern, LidarReturn};
use voxworld_core::outpaint::{
    outpaint_scene, sample_chunk, ChunkIndex, ChunkLayout, LinearGaussianDenoiser, NoiseSchedule, OutpaintRequest,
    SamplerConfig,
};
use voxworld_core::sparse_grid::{box_occupancy_fraction, SemanticLabel, SemanticVoxel, SparseVoxelGrid, VoxelCoord};
use voxworld_core::{Execution, Vec3};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sampler_moments() -> Outcome {
    let start = Instant::now();
    let schedule = NoiseSchedule::default();
    let frame = ChunkFrame::centered(Vec3::zeros(), 11, 1.6);
    let cond = ConditionVolume::zeros(frame);
    let cfg = SamplerConfig {
        steps: 100,
        guidance_weight: 1.0,
        execution: Execution::Sequential,
    };
    let mut worst: f64 = 0.0;
    let mut draws = 0;
    for (mu, sigma, seed) in [(0.7, 0.5, 1u64), (-1.3, 1.0, 2), (0.2, 2.0, 3)] {
        let den = LinearGaussianDenoiser::isotropic(8, mu, sigma);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_chunk(&cond, &den, &schedule, &cfg, 8, None, &mut r).map_err(|e| e.to_string())?;
        let n = x.data.len() as f64;
        draws = x.data.len();
        ensure(n >= 1e4, || format!("only {n} draws"))?;
        let (m, v) = moments(&x.data);
        let (m_ref, v_ref) = ddim_pushforward(&schedule, 100, mu, sigma);
        ensure((m_ref - mu).abs() < 1e-9, || format!("deterministic map shifts the mean to {m_ref}"))?;
        let se_m = (v_ref / n).sqrt();
        let se_v = v_ref * (2.0 / (n - 1.0)).sqrt();
        let zm = (m - m_ref).abs() / se_m;
        let zv = (v - v_ref).abs() / se_v;
        worst = worst.max(zm).max(zv);
        ensure(zm < 3.0 && zv < 3.0, || format!("mu {mu} sigma {sigma}: mean {m} var {v}, target {m_ref} {v_ref}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{draws} draws per prior, worst deviation {worst:.2} SE, {secs:.1} s single-threaded"))
}

fn road_layer(f: &ChunkFrame) -> ConditionVolume {
    let mut data = vec![0.0; f.cell_count() * CONDITION_CHANNELS];
    for i in 0..f.n {
        for j in 0..f.n {
            data[f.cell_index(i, j, 4) * CONDITION_CHANNELS + 2] = 1.0;
            if (i + j) % 7 == 0 {
                data[f.cell_index(i, j, 4) * CONDITION_CHANNELS] = 1.0;
            }
        }
    }
    ConditionVolume::from_raw(*f, data).unwrap()
}

fn seam_layout() -> Outcome {
    let start = Instant::now();
    let (n, c) = (32usize, 8usize);
    let base = ChunkFrame::centered(Vec3::zeros(), n, 1.6);
    let mut layout = ChunkLayout::new(base, c, 0.5 * base.extent()).map_err(|e| e.to_string())?;
    let chunks: Vec<ChunkIndex> = (-1..=1).flat_map(|x| (-1..=1).map(move |y| ChunkIndex::new(x, y))).collect();
    let mut ordered = chunks.clone();
    ordered.sort_by_key(|c| (c.x.abs() + c.y.abs(), c.x, c.y));
    let req = OutpaintRequest {
        chunks: &ordered,
        seed: 2024,
        sampler: SamplerConfig {
            steps: 100,
            guidance_weight: 2.0,
            execution: Execution::Parallel,
        },
    };
    let den = LinearGaussianDenoiser::world_prior(c);
    let conditions = |_: ChunkIndex, f: &ChunkFrame| Ok(road_layer(f));
    outpaint_scene(&mut layout, &req, &conditions, &den, &NoiseSchedule::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(layout.chunks.len() == 9, || format!("{} chunks placed", layout.chunks.len()))?;

    let s = layout.stride_cells as i64;
    ensure(2 * s == n as i64, || format!("stride {s} cells is not half of {n}"))?;
    let (mut slabs, mut cells) = (0, 0usize);
    for (a, ca) in &layout.chunks {
        for (b, cb) in &layout.chunks {
            if a >= b {
                continue;
            }
            let (dx, dy) = ((b.x - a.x) as i64 * s, (b.y - a.y) as i64 * s);
            if dx.abs() >= n as i64 || dy.abs() >= n as i64 {
                continue;
            }
            slabs += 1;
            for i in 0..n as i64 {
                for j in 0..n as i64 {
                    let (bi, bj) = (i - dx, j - dy);
                    if !(0..n as i64).contains(&bi) || !(0..n as i64).contains(&bj) {
                        continue;
                    }
                    for k in 0..n {
                        let (x, y) = (ca.cell(i as usize, j as usize, k), cb.cell(bi as usize, bj as usize, k));
                        ensure(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()), || {
                            format!("chunks {a:?} and {b:?} differ at ({i}, {j}, {k})")
                        })?;
                        cells += 1;
                    }
                }
            }
        }
    }

    let mut fixed = 0;
    for (i, idx) in layout.order.iter().enumerate() {
        let mut before = ChunkLayout::new(base, c, layout.stride_m()).unwrap();
        for p in &layout.order[..i] {
            before.insert(*p, layout.chunks[p].clone());
        }
        let Some((mask, existing)) = before.overlap_for(*idx) else {
            ensure(i == 0, || format!("chunk {idx:?} has no placed neighbour"))?;
            continue;
        };
        let got = &layout.chunks[idx];
        for cell in 0..n * n * n {
            if mask.values[cell] != 0 {
                let r = cell * c..(cell + 1) * c;
                ensure(got.data[r.clone()] == existing.data[r], || format!("chunk {idx:?} cell {cell} drifted"))?;
                fixed += 1;
            }
        }
    }
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{slabs} overlap slabs, {cells} shared cells bit-identical, {fixed} masked cells exact, {secs:.1} s"))
}

fn rasterization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let origin = Vec3::new(-0.37, 0.11, 0.05);
    let s = 0.2;
    let mut marked = 0;
    for n in 0..1000 {
        let p0 = Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
        let p1 = p0 + Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let mut g = SparseVoxelGrid::new(origin, s).unwrap();
        g.voxelize_segment(&p0, &p1, SemanticVoxel::stuff(SemanticLabel::LaneMarker)).unwrap();
        let got: Vec<_> = g.iter().map(|(c, _)| c).collect();
        let lo: Vec<i32> = (0..3).map(|a| ((p0[a].min(p1[a]) - origin[a]) / s).floor() as i32 - 2).collect();
        let hi: Vec<i32> = (0..3).map(|a| ((p0[a].max(p1[a]) - origin[a]) / s).floor() as i32 + 2).collect();
        let mut want = Vec::new();
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    let c = VoxelCoord::new(i, j, k);
                    if oracle_hits(&origin, s, &p0, &p1, c) {
                        want.push(c);
                    }
                }
            }
        }
        ensure(got == want, || format!("segment {n}: {p0:?} -> {p1:?}"))?;
        marked += got.len();
    }

    let s = 0.4;
    let origin = Vec3::zeros();
    let (mut max_err, mut decisions, mut band): (f64, usize, usize) = (0.0, 0, 0);
    for n in 0..200 {
        let b = OrientedBox::new(
            Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            Vec3::new(rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)),
            rng.random_range(-3.2..3.2),
        );
        let mut g = SparseVoxelGrid::new(origin, s).unwrap();
        g.voxelize_box(&b, SemanticVoxel::new(SemanticLabel::Car, Some(n)).unwrap(), 0.5).unwrap();
        let bb = b.aabb();
        for i in ((bb.min.x / s).floor() as i32 - 1)..=((bb.max.x / s).floor() as i32 + 1) {
            for j in ((bb.min.y / s).floor() as i32 - 1)..=((bb.max.y / s).floor() as i32 + 1) {
                for k in ((bb.min.z / s).floor() as i32 - 1)..=((bb.max.z / s).floor() as i32 + 1) {
                    let c = VoxelCoord::new(i, j, k);
                    let f = box_occupancy_fraction(&origin, s, &b, c);
                    let o = dense_fraction(&origin, s, &b, c, 32);
                    max_err = max_err.max((f - o).abs());
                    if (o - 0.5).abs() > 0.1 {
                        ensure(g.contains(c) == (o >= 0.5), || format!("box {n} cell {c:?}: oracle {o:.3}"))?;
                        decisions += 1;
                    } else {
                        band += 1;
                    }
                }
            }
        }
    }
    ensure(max_err <= 0.1, || format!("box fraction error {max_err:.4}"))?;
    Ok(format!(
        "1000 segments ({marked} cells) exact; 200 boxes: max fraction error {max_err:.4}, {decisions} decisions match, {band} in band"
    ))
}

fn dda() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(97);
    let (mut rays, mut hits, mut worst): (usize, usize, f64) = (0, 0, 0.0);
    for _ in 0..50 {
        let g = random_grid(&mut r);
        let idx = RayGrid::new(&g);
        let wb = g.world_bounds().unwrap();
        for _ in 0..20 {
            let o = Vec3::new(
                r.random_range(wb.min.x - 3.0..wb.max.x + 3.0),
                r.random_range(wb.min.y - 3.0..wb.max.y + 3.0),
                r.random_range(wb.min.z - 3.0..wb.max.z + 3.0),
            );
            let target = (wb.min + wb.max) / 2.0
                + Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
                    .component_mul(&(wb.max - wb.min))
                    / 2.0;
            let d = (target - o).normalize();
            let max_range = r.random_range(1.0..100.0);
            rays += 1;
            match (idx.cast(&o, &d, max_range), brute_force(&g, &o, &d, max_range)) {
                (Some(h), Some((c, t))) => {
                    ensure(h.coord == c, || format!("ray {rays}: voxel {:?} vs {c:?}", h.coord))?;
                    worst = worst.max((h.distance - t).abs());
                    hits += 1;
                }
                (None, None) => {}
                other => return Err(format!("ray {rays}: {other:?}")),
            }
        }
    }
    ensure(worst < 1e-9, || format!("distance error {worst:e}"))?;
    Ok(format!("{rays} rays, {hits} hits, max distance error {worst:.1e}"))
}

fn coordinate_buffers() -> Outcome {
    let k = Intrinsics::from_fov(64, 48, 90f64.to_radians());
    let mut world = SparseVoxelGrid::new(Vec3::zeros(), 0.5).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for i in -20..80 {
        for j in -20..20 {
            world.insert(VoxelCoord::new(i, j, -1), SemanticVoxel::stuff(SemanticLabel::Road)).unwrap();
        }
    }
    for _ in 0..12 {
        let (i0, j0) = (r.random_range(10..70), r.random_range(-18..14));
        for i in i0..i0 + 4 {
            for j in j0..j0 + 4 {
                for kk in 0..r.random_range(4..14) {
                    world.insert(VoxelCoord::new(i, j, kk), SemanticVoxel::stuff(SemanticLabel::Building)).unwrap();
                }
            }
        }
    }
    let traj = Trajectory::new(
        (0..4)
            .map(|f| TimedCamera {
                t: f as f64 * 0.1,
                camera: Camera::from_ego(k, Vec3::new(2.0 * f as f64, 0.3, 0.0), 0.04 * f as f64, 1.6).unwrap(),
            })
            .collect(),
    )
    .unwrap();
    let sets = render_buffers(&world, &[], &traj, &RenderSettings::default()).map_err(|e| e.to_string())?;
    let idx = RayGrid::new(&world);
    let mut by_voxel: HashMap<VoxelCoord, Vec<(usize, [f64; 3])>> = HashMap::new();
    for (fi, set) in sets.iter().enumerate() {
        for p in 0..set.depth.len() {
            let d = set.camera.ray_dir(p % k.width, p / k.width);
            if let Some(h) = idx.cast(&set.camera.position(), &d, 300.0) {
                by_voxel.entry(h.coord).or_default().push((fi, set.coordinate[p]));
            }
        }
    }
    let mut multi: Vec<_> = by_voxel
        .into_iter()
        .filter(|(_, v)| v.iter().any(|(f, _)| *f != v[0].0))
        .collect();
    multi.sort_by_key(|(c, _)| *c);
    ensure(multi.len() >= 100, || format!("only {} voxels seen from two frames", multi.len()))?;
    let picks: Vec<usize> = (0..100).map(|_| r.random_range(0..multi.len())).collect();
    for &i in &picks {
        let (c, seen) = &multi[i];
        ensure(seen.iter().all(|(_, v)| v == &seen[0].1), || format!("voxel {c:?} disagrees across frames"))?;
    }

    let centroid = Vec3::new(3.0, -2.0, 1.0);
    let kk = 100.0;
    let cases = [
        (Vec3::new(103.0, -2.0, 1.0), [1.0, 0.0, 0.0]),
        (Vec3::new(-97.0, 98.0, -99.0), [-1.0, 1.0, -1.0]),
        (Vec3::new(500.0, -900.0, 1.0), [1.0, -1.0, 0.0]),
        (Vec3::new(52.0, -2.0, 1.0), [0.49, 0.0, 0.0]),
    ];
    for (p, want) in cases {
        let got = normalize_coordinate(&p, &centroid, kk);
        ensure(got.iter().zip(want).all(|(g, w)| (g - w).abs() < 1e-15), || format!("{p:?} -> {got:?}"))?;
    }
    let mut far = SparseVoxelGrid::new(Vec3::zeros(), 1.0).unwrap();
    for j in -10..10 {
        for z in -10..10 {
            far.insert(VoxelCoord::new(250, j, z), SemanticVoxel::stuff(SemanticLabel::Building)).unwrap();
        }
    }
    let cam = Camera::look_at(k, Vec3::new(0.0, 0.5, 0.5), Vec3::new(10.0, 0.5, 0.5), Vec3::z()).unwrap();
    let single = Trajectory::new(vec![TimedCamera { t: 0.0, camera: cam }]).unwrap();
    let set = &render_buffers(&far, &[], &single, &RenderSettings::default()).map_err(|e| e.to_string())?[0];
    let centre = 24 * 64 + 32;
    ensure(set.coordinate[centre][0] == 1.0, || format!("far voxel maps to {:?}", set.coordinate[centre]))?;
    Ok(format!("100 sampled voxels of {} multi-view voxels agree exactly; clamp at ±K holds", multi.len()))
}

fn palette() -> Outcome {
    let k = Intrinsics::from_fov(64, 48, 90f64.to_radians());
    let cam = Camera::look_at(k, Vec3::new(0.0, 0.5, 0.5), Vec3::new(10.0, 0.5, 0.5), Vec3::z()).unwrap();
    let traj = Trajectory::new(vec![TimedCamera { t: 0.0, camera: cam }]).unwrap();
    let centre = 24 * 64 + 32;
    let render = |v: SemanticVoxel| {
        let mut g = SparseVoxelGrid::new(Vec3::zeros(), 1.0).unwrap();
        g.insert(VoxelCoord::new(5, 0, 0), v).unwrap();
        render_buffers(&g, &[], &traj, &RenderSettings::default()).unwrap().remove(0)
    };
    let undo = |c: [f64; 3]| c.map(|v| (v + 1.0) / 2.0);
    for (label, rgb) in PALETTE_REFERENCE {
        let set = render(SemanticVoxel::stuff(label));
        let got = set.semantic[centre];
        ensure(got == rgb.map(|v| 2.0 * v - 1.0), || format!("{label:?}: {:?} vs {rgb:?}", undo(got)))?;
    }
    let vehicles = [SemanticLabel::Car, SemanticLabel::Truck, SemanticLabel::Bus, SemanticLabel::OtherVehicle];
    for (i, label) in vehicles.into_iter().enumerate() {
        let id = 40 + i as u32 * 13;
        let set = render(SemanticVoxel::new(label, Some(id)).unwrap());
        ensure(set.semantic[centre] == instance_color(id).map(|v| 2.0 * v - 1.0), || format!("{label:?} instance colour"))?;
    }
    Ok(format!("{} categories exact, {} vehicle classes on the instance ramp", PALETTE_REFERENCE.len(), vehicles.len()))
}

fn depth_parameterization() -> Outcome {
    let mid = depth_from_raw(0.0, Z_NEAR, Z_FAR);
    ensure(mid == 150.25, || format!("raw 0 gives {mid}"))?;
    let zs: Vec<f64> = (0..1000).map(|i| depth_from_raw(-20.0 + 40.0 * i as f64 / 999.0, Z_NEAR, Z_FAR)).collect();
    ensure(zs.windows(2).all(|w| w[1] > w[0]), || "sweep is not strictly increasing".into())?;

    let (w, h) = (40, 30);
    let cam = Camera::look_at(Intrinsics::from_fov(w, h, 80f64.to_radians()), Vec3::new(1.0, -2.0, 1.5), Vec3::new(10.0, 3.0, 0.5), Vec3::z())
        .unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let depth: Vec<f64> = (0..w * h).map(|_| r.random_range(0.6..299.0)).collect();
    let n = w * h;
    let buffers = voxworld_core::buffers::GuidanceBufferSet {
        frame: 0,
        window: 0,
        t: 0.0,
        camera: cam,
        centroid: Vec3::zeros(),
        coord_scale: 100.0,
        semantic: vec![[0.0; 3]; n],
        coordinate: vec![[0.0; 3]; n],
        midground: vec![true; n],
        sky: vec![false; n],
        instance: vec![-1; n],
        depth: depth.clone(),
    };
    let frame = FrameInput {
        buffers,
        image: RgbImage::constant(w, h, [0.2, 0.4, 0.6]),
        depth: None,
    };
    let params = HeuristicPredictor::default().predict_pixels(&frame).map_err(|e| e.to_string())?;
    let gs = decode_pixel_gaussians(&params, &cam, Z_NEAR, Z_FAR, None).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (p, g) in &gs {
        worst = worst.max((cam.to_camera(&g.position).z - depth[*p]).abs());
    }
    ensure(worst < 1e-6, || format!("round-trip error {worst:e} m"))?;
    Ok(format!("raw 0 -> 150.25 m, 1000-point sweep monotone, {} Gaussians round-trip within {worst:.1e} m", gs.len()))
}

fn moving_track(id: u32) -> BoxTrack {
    let poses = (0..6)
        .map(|i| TimedPose {
            t: i as f64 * 0.5,
            pose: BoxPose::new(Vec3::new(3.0 * i as f64, 1.0 + 0.4 * i as f64, 0.8), 0.3 * i as f64 - 0.7),
        })
        .collect();
    BoxTrack::new(id, Vec3::new(4.5, 1.9, 1.6), poses).unwrap()
}

fn dynamic_extraction() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(121);
    let track = moving_track(7);
    let h = track.half_extents();
    let canon: Vec<Gaussian3D> = (0..80)
        .map(|_| Gaussian3D {
            position: Vec3::new(r.random_range(-h.x..h.x), r.random_range(-h.y..h.y), r.random_range(-h.z..h.z)),
            rotation: random_rotation(&mut r),
            scale: Vec3::new(r.random_range(0.01..0.2), r.random_range(0.01..0.2), r.random_range(0.01..0.2)),
            opacity: r.random_range(0.1..0.9),
            color: [r.random(), r.random(), r.random()],
        })
        .collect();
    let times = [0.0, 0.35, 1.2, 1.9, 2.5];
    let frames: Vec<FrameGaussians> = times
        .iter()
        .map(|&t| {
            let iso = track.pose_at(t).unwrap().isometry();
            let mut instance = Vec::new();
            let mut gaussians = Vec::new();
            for g in &canon {
                gaussians.push((instance.len(), g.transformed(&iso)));
                instance.push(7);
                instance.push(-1);
            }
            FrameGaussians { t, instance, gaussians }
        })
        .collect();
    let extracted = extract_dynamic_object(&frames, &track);
    ensure(extracted.len() == canon.len() * times.len(), || format!("{} Gaussians extracted", extracted.len()))?;
    let mut worst: f64 = 0.0;
    for (i, g) in extracted.iter().enumerate() {
        worst = worst.max((g.position - canon[i % canon.len()].position).norm());
    }
    ensure(worst < 1e-6, || format!("canonical position error {worst:e} m"))?;

    let scene = GaussianScene {
        static_gaussians: vec![],
        objects: vec![SceneObject {
            instance_id: 7,
            gaussians: canon.clone(),
            track: track.clone(),
        }],
        sky: Sky::Gradient,
    };
    let motion = Isometry3::from_parts(Translation3::new(4.0, -3.0, 0.0), nalgebra::UnitQuaternion::from_euler_angles(0.0, 0.0, 0.6));
    let moved_track = track
        .with_poses(
            track
                .poses()
                .iter()
                .map(|p| {
                    let c = motion * Point3::from(p.pose.center);
                    TimedPose {
                        t: p.t,
                        pose: BoxPose::new(c.coords, p.pose.heading + 0.6),
                    }
                })
                .collect(),
        )
        .unwrap();
    let moved = transform_dynamic(&scene, 7, moved_track).map_err(|e| e.to_string())?;
    let mut rigid: f64 = 0.0;
    for t in [0.0, 0.7, 1.6, 2.5] {
        for ((a, _), (b, _)) in scene.posed(t).iter().zip(&moved.posed(t)) {
            rigid = rigid.max((motion * Point3::from(a.position) - Point3::from(b.position)).norm());
        }
    }
    ensure(rigid < 1e-9, || format!("re-posing is not rigid: {rigid:e}"))?;
    Ok(format!("{} Gaussians recovered within {worst:.1e} m; re-posing rigid within {rigid:.1e} m", extracted.len()))
}

fn splat_renderer() -> Outcome {
    let cam = Camera::look_at(Intrinsics::from_fov(32, 32, 80f64.to_radians()), Vec3::new(0.0, 0.0, 1.0), Vec3::new(10.0, 1.0, 1.5), Vec3::z())
        .unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let gs = random_scene(100 + seed, 100, &cam);
        let scene = GaussianScene {
            static_gaussians: gs.clone(),
            objects: vec![],
            sky: Sky::Gradient,
        };
        let shader = Sky::Gradient.shader().map_err(|e| e.to_string())?;
        let (color, alpha, depth) = oracle_render(&gs, &cam, &shader);
        for execution in [Execution::Sequential, Execution::Parallel] {
            let img = render_splats(&scene, &cam, 0.0, execution).map_err(|e| e.to_string())?;
            for p in 0..color.len() {
                for c in 0..3 {
                    worst = worst.max((img.color[p][c] - color[p][c]).abs());
                }
                worst = worst.max((img.alpha[p] - alpha[p]).abs()).max((img.depth[p] - depth[p]).abs());
            }
        }
    }
    ensure(worst < 1e-6, || format!("max deviation {worst:e}"))?;
    Ok(format!("5 scenes of 100 Gaussians at 32x32, max deviation {worst:.1e}"))
}

fn lidar() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let gs = random_gaussians(&mut r, 120, 15.0);
    let pattern = LidarPattern::new(random_beams(&mut r, 1000), 60.0, 0.3, 2.0).map_err(|e| e.to_string())?;
    let sensor = Isometry3::from_parts(Translation3::new(0.5, -0.3, 0.2), nalgebra::UnitQuaternion::from_euler_angles(0.0, 0.0, 0.4));
    let scene = |gs: Vec<Gaussian3D>| GaussianScene {
        static_gaussians: gs,
        objects: vec![],
        sky: Sky::Gradient,
    };
    let got = cast_lidar(&scene(gs.clone()), &sensor, 0.0, &pattern, &LidarOptions::default());
    let mut by_beam = vec![None; pattern.beams.len()];
    for ret in &got {
        by_beam[ret.beam] = Some(*ret);
    }
    let o = sensor.translation.vector;
    let (mut hits, mut checked, mut worst): (usize, usize, f64) = (0, 0, 0.0);
    for (b, got) in by_beam.iter().enumerate() {
        let d = sensor.rotation * pattern.direction(b);
        let mut best: Option<f64> = None;
        let mut ambiguous = false;
        for g in gs.iter().filter(|g| g.opacity >= 0.3) {
            if let Some((t, tangent)) = oracle_hit(g, 2.0, &o, &d) {
                ambiguous |= tangent;
                if !t.is_nan() && t <= 60.0 && best.is_none_or(|bt| t < bt) {
                    best = Some(t);
                }
            }
        }
        if ambiguous {
            continue;
        }
        checked += 1;
        match (best, got) {
            (None, None) => {}
            (Some(t), Some(ret)) => {
                hits += 1;
                worst = worst.max((ret.range - t).abs());
            }
            other => return Err(format!("beam {b}: {other:?}")),
        }
    }
    ensure(worst < 1e-9, || format!("range error {worst:e} m"))?;
    ensure(checked >= 990 && hits >= 200, || format!("{checked} beams checked, {hits} hits"))?;

    let mut equi: f64 = 0.0;
    for _ in 0..3 {
        let iso = Isometry3::from_parts(
            Translation3::new(r.random_range(-100.0..100.0), r.random_range(-100.0..100.0), r.random_range(-5.0..5.0)),
            random_rotation(&mut r),
        );
        let moved: Vec<Gaussian3D> = gs.iter().map(|g| g.transformed(&iso)).collect();
        let again = cast_lidar(&scene(moved), &(iso * sensor), 0.0, &pattern, &LidarOptions::default());
        let beams = |v: &[LidarReturn]| v.iter().map(|x| x.beam).collect::<Vec<_>>();
        ensure(beams(&again) == beams(&got), || "rigid motion changed which beams hit".into())?;
        for (a, b) in got.iter().zip(&again) {
            equi = equi.max((a.range - b.range).abs());
        }
    }
    ensure(equi < 1e-9, || format!("rigid motion moved ranges by {equi:e}"))?;
    Ok(format!("{checked} of 1000 beams checked, {hits} hits within {worst:.1e} m; rigid motion within {equi:.1e} m"))
}

fn determinism() -> Outcome {
    let d = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = common::write_config(d.path(), 77, "chunks = [[0, 0], [1, 0], [0, 1]]", "");
    for out in ["a", "b"] {
        let o = common::voxworld()
            .args(["generate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(d.path().join(out))
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    }
    let (a, b) = (common::tree(&d.path().join("a")), common::tree(&d.path().join("b")));
    let bytes: usize = a.iter().map(|(_, v)| v.len()).sum();
    ensure(a == b, || "bundles differ".into())?;
    Ok(format!("two runs wrote {} identical files ({bytes} bytes)", a.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("sampler moments", sampler_moments),
        ("outpainting seams", seam_layout),
        ("rasterization oracles", rasterization),
        ("dda raycast", dda),
        ("coordinate buffers", coordinate_buffers),
        ("semantic palette", palette),
        ("depth parameterization", depth_parameterization),
        ("dynamic extraction", dynamic_extraction),
        ("splat renderer", splat_renderer),
        ("lidar ranges", lidar),
        ("generate determinism", determinism),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", 11 - failed, 11);
    if failed > 0 {
        std::process::exit(1);
    }
}
