//! Independent reference implementations shared by the integration and
//! acceptance suites. Nothing here calls the code under test.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{Matrix3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxworld_core::buffers::Camera;
use voxworld_core::gaussians::Gaussian3D;
use voxworld_core::geom::OrientedBox;
use voxworld_core::outpaint::NoiseSchedule;
use voxworld_core::sparse_grid::{SemanticLabel, SemanticVoxel, SparseVoxelGrid, VoxelCoord};
use voxworld_core::Vec3;

/// Category colours before rescaling, one row per label.
pub const PALETTE_REFERENCE: [(SemanticLabel, [f64; 3]); 19] = [
    (SemanticLabel::Sign, [0.4, 0.7608, 0.6471]),
    (SemanticLabel::TrafficLight, [0.4, 0.7608, 0.6471]),
    (SemanticLabel::ConstructionCone, [0.4, 0.7608, 0.6471]),
    (SemanticLabel::Motorcyclist, [0.9882, 0.5529, 0.3843]),
    (SemanticLabel::Bicyclist, [0.9882, 0.5529, 0.3843]),
    (SemanticLabel::Pedestrian, [0.9882, 0.5529, 0.3843]),
    (SemanticLabel::Bicycle, [0.9882, 0.5529, 0.3843]),
    (SemanticLabel::Motorcycle, [0.9882, 0.5529, 0.3843]),
    (SemanticLabel::Curb, [1.0, 0.8510, 0.1843]),
    (SemanticLabel::LaneMarker, [1.0, 0.8510, 0.1843]),
    (SemanticLabel::Vegetation, [0.3020, 0.6863, 0.2902]),
    (SemanticLabel::TreeTrunk, [0.3020, 0.6863, 0.2902]),
    (SemanticLabel::Walkable, [0.5529, 0.6275, 0.7961]),
    (SemanticLabel::Sidewalk, [0.5529, 0.6275, 0.7961]),
    (SemanticLabel::Building, [0.8980, 0.7686, 0.5804]),
    (SemanticLabel::Road, [0.7020, 0.7020, 0.7020]),
    (SemanticLabel::OtherGround, [0.7020, 0.7020, 0.7020]),
    (SemanticLabel::Undefined, [0.1216, 0.4706, 0.7059]),
    (SemanticLabel::Pole, [0.8000, 0.9216, 0.7725]),
];

pub fn random_rotation(r: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(r.random_range(-PI..PI), r.random_range(-PI..PI), r.random_range(-PI..PI))
}

/// Independent segment/half-open-cell oracle: clip against the closed box,
/// then test the midpoint of the clipped piece against the half-open box.
pub fn oracle_hits(origin: &Vec3, s: f64, p0: &Vec3, p1: &Vec3, c: VoxelCoord) -> bool {
    let idx = [c.i, c.j, c.k];
    let lo: Vec<f64> = (0..3).map(|a| origin[a] + idx[a] as f64 * s).collect();
    let hi: Vec<f64> = (0..3).map(|a| origin[a] + (idx[a] + 1) as f64 * s).collect();
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for a in 0..3 {
        let d = p1[a] - p0[a];
        if d == 0.0 {
            if p0[a] < lo[a] || p0[a] > hi[a] {
                return false;
            }
        } else {
            let (u, v) = ((lo[a] - p0[a]) / d, (hi[a] - p0[a]) / d);
            t0 = t0.max(u.min(v));
            t1 = t1.min(u.max(v));
        }
    }
    if t0 > t1 {
        return false;
    }
    let tm = 0.5 * (t0 + t1);
    (0..3).all(|a| {
        let x = p0[a] + tm * (p1[a] - p0[a]);
        // Points exactly on an upper face belong to the neighbour; use the
        // parametric bound for the degenerate single-point case.
        lo[a] <= x && x < hi[a]
    })
}

pub fn dense_fraction(origin: &Vec3, s: f64, b: &OrientedBox, c: VoxelCoord, n: usize) -> f64 {
    let base = Vec3::new(
        origin.x + c.i as f64 * s,
        origin.y + c.j as f64 * s,
        origin.z + c.k as f64 * s,
    );
    let mut inside = 0usize;
    for a in 0..n {
        for bb in 0..n {
            for d in 0..n {
                let p = base + Vec3::new(a as f64 + 0.5, bb as f64 + 0.5, d as f64 + 0.5) * (s / n as f64);
                if b.contains(&p) {
                    inside += 1;
                }
            }
        }
    }
    inside as f64 / (n * n * n) as f64
}

/// Nearest entry parameter over every voxel, by independent slab tests.
pub fn brute_force(grid: &SparseVoxelGrid, o: &Vec3, d: &Vec3, max_range: f64) -> Option<(VoxelCoord, f64)> {
    let s = grid.voxel_size();
    let mut best: Option<(VoxelCoord, f64)> = None;
    for (c, _) in grid.iter() {
        let lo = grid.origin() + Vec3::new(c.i as f64, c.j as f64, c.k as f64) * s;
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut miss = false;
        for a in 0..3 {
            let (l, h) = (lo[a], lo[a] + s);
            if d[a] == 0.0 {
                miss |= o[a] < l || o[a] > h;
                continue;
            }
            let (x, y) = ((l - o[a]) / d[a], (h - o[a]) / d[a]);
            t0 = t0.max(x.min(y));
            t1 = t1.min(x.max(y));
        }
        if miss || t0 > t1 || t1 < 0.0 {
            continue;
        }
        let t = t0.max(0.0);
        if t <= max_range && best.is_none_or(|(_, b)| t < b) {
            best = Some((c, t));
        }
    }
    best
}

pub fn random_grid(r: &mut ChaCha8Rng) -> SparseVoxelGrid {
    let n = r.random_range(4..=64);
    let s = r.random_range(0.1..1.0);
    let origin = Vec3::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0));
    let mut g = SparseVoxelGrid::new(origin, s).unwrap();
    let density = r.random_range(0.0005..0.02);
    let count = ((n * n * n) as f64 * density).ceil() as usize;
    for _ in 0..count {
        let c = VoxelCoord::new(r.random_range(0..n), r.random_range(0..n), r.random_range(0..n));
        g.insert(c, SemanticVoxel::stuff(SemanticLabel::Building)).unwrap();
    }
    g
}

/// Mean and variance of the deterministic DDIM map applied to N(0, 1) for a
/// scalar Gaussian prior N(mu, sigma²). Each step is affine in x.
pub fn ddim_pushforward(schedule: &NoiseSchedule, steps: usize, mu: f64, sigma: f64) -> (f64, f64) {
    let ts = schedule.ddim_timesteps(steps).unwrap();
    let (mut m, mut v) = (0.0, 1.0);
    for w in ts.windows(2) {
        let ab = schedule.alpha_bar(w[0]);
        let ab2 = schedule.alpha_bar(w[1]);
        let (a, b, a2, b2) = (ab.sqrt(), (1.0 - ab).sqrt(), ab2.sqrt(), (1.0 - ab2).sqrt());
        let var = a * a * sigma * sigma + b * b;
        let k = (a2 * a * sigma * sigma + b2 * b) / var;
        m = a2 * mu + k * (m - a * mu);
        v *= k * k;
    }
    (m, v)
}

pub fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Naive compositor: every Gaussian projected on its own, per-pixel depth
/// sort, front-to-back blending.
pub fn oracle_render(gs: &[Gaussian3D], cam: &Camera, sky: &dyn Fn(&Vec3) -> [f64; 3]) -> (Vec<[f64; 3]>, Vec<f64>, Vec<f64>) {
    let k = cam.intrinsics;
    let rot = cam.pose.rotation.to_rotation_matrix().into_inner();
    let c = cam.pose.translation.vector;
    let mut color = vec![[0.0; 3]; k.pixel_count()];
    let mut alpha = vec![0.0; k.pixel_count()];
    let mut depth = vec![0.0; k.pixel_count()];
    for v in 0..k.height {
        for u in 0..k.width {
            let (x, y) = (u as f64 + 0.5, v as f64 + 0.5);
            let mut layers: Vec<(f64, f64, [f64; 3])> = Vec::new();
            for g in gs {
                let pc = rot.transpose() * (g.position - c);
                if pc.z <= 0.2 || g.opacity < 1.0 / 255.0 {
                    continue;
                }
                let q = g.rotation.quaternion();
                let (w, i, j, kk) = (q.w, q.i, q.j, q.k);
                let rm = Matrix3::new(
                    1.0 - 2.0 * (j * j + kk * kk),
                    2.0 * (i * j - w * kk),
                    2.0 * (i * kk + w * j),
                    2.0 * (i * j + w * kk),
                    1.0 - 2.0 * (i * i + kk * kk),
                    2.0 * (j * kk - w * i),
                    2.0 * (i * kk - w * j),
                    2.0 * (j * kk + w * i),
                    1.0 - 2.0 * (i * i + j * j),
                );
                let m = rot.transpose() * rm * Matrix3::from_diagonal(&g.scale);
                let sc = m * m.transpose();
                let jr0 = [k.fx / pc.z, 0.0, -k.fx * pc.x / (pc.z * pc.z)];
                let jr1 = [0.0, k.fy / pc.z, -k.fy * pc.y / (pc.z * pc.z)];
                let quad = |a: &[f64; 3], b: &[f64; 3]| {
                    (0..3).map(|r| (0..3).map(|s| a[r] * sc[(r, s)] * b[s]).sum::<f64>()).sum::<f64>()
                };
                let (s00, s01, s11) = (quad(&jr0, &jr0) + 0.3, quad(&jr0, &jr1), quad(&jr1, &jr1) + 0.3);
                let det = s00 * s11 - s01 * s01;
                let mx = k.fx * pc.x / pc.z + k.cx;
                let my = k.fy * pc.y / pc.z + k.cy;
                let (dx, dy) = (x - mx, y - my);
                let power = -0.5 * (s11 * dx * dx - 2.0 * s01 * dx * dy + s00 * dy * dy) / det;
                let a = (g.opacity * power.exp()).min(0.99);
                if a >= 1.0 / 255.0 {
                    layers.push((pc.z, a, g.color));
                }
            }
            layers.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut t, mut col, mut dep) = (1.0, [0.0; 3], 0.0);
            for (z, a, cc) in layers {
                for ch in 0..3 {
                    col[ch] += t * a * cc[ch];
                }
                dep += t * a * z;
                t *= 1.0 - a;
            }
            let s = sky(&cam.ray_dir(u, v));
            for ch in 0..3 {
                col[ch] += t * s[ch];
            }
            let p = v * k.width + u;
            color[p] = col;
            alpha[p] = 1.0 - t;
            depth[p] = if alpha[p] > 0.0 { dep / alpha[p] } else { 0.0 };
        }
    }
    (color, alpha, depth)
}

pub fn random_scene(seed: u64, n: usize, cam: &Camera) -> Vec<Gaussian3D> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z = r.random_range(0.5..15.0);
            let p = cam.pose * nalgebra::Point3::new(r.random_range(-0.8..0.8) * z, r.random_range(-0.6..0.6) * z, z);
            Gaussian3D {
                position: p.coords,
                rotation: random_rotation(&mut r),
                scale: Vec3::new(r.random_range(0.02..0.6), r.random_range(0.02..0.6), r.random_range(0.02..0.6)),
                opacity: r.random_range(0.0..1.0),
                color: [r.random(), r.random(), r.random()],
            }
        })
        .collect()
}

pub fn random_gaussians(r: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<Gaussian3D> {
    (0..n)
        .map(|_| Gaussian3D {
            position: Vec3::new(
                r.random_range(-spread..spread),
                r.random_range(-spread..spread),
                r.random_range(-spread / 4.0..spread / 4.0),
            ),
            rotation: random_rotation(r),
            scale: Vec3::new(r.random_range(0.05..1.5), r.random_range(0.05..1.5), r.random_range(0.05..1.5)),
            opacity: r.random_range(0.0..1.0),
            color: [0.5; 3],
        })
        .collect()
}

pub fn random_beams(r: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [r.random_range(-PI..PI), r.random_range(-0.5..0.5)])
        .collect()
}

/// Entry distance of a ray into one ellipsoid, solved in the ellipsoid's
/// unit-sphere frame and polished with Newton steps. `None` for misses and
/// for origins inside the ellipsoid. The flag marks near-tangent rays.
pub fn oracle_hit(g: &Gaussian3D, k: f64, o: &Vec3, d: &Vec3) -> Option<(f64, bool)> {
    let rm: Matrix3<f64> = g.rotation.to_rotation_matrix().into_inner();
    let to_unit = |v: Vec3| {
        let l = rm.transpose() * v;
        Vec3::new(l.x / (k * g.scale.x), l.y / (k * g.scale.y), l.z / (k * g.scale.z))
    };
    let p = to_unit(o - g.position);
    let q = to_unit(*d);
    if p.norm_squared() <= 1.0 {
        return None;
    }
    let (a, b, c) = (q.dot(&q), 2.0 * p.dot(&q), p.dot(&p) - 1.0);
    let disc = b * b - 4.0 * a * c;
    let tangent = disc.abs() < 1e-6 * b * b;
    if disc < 0.0 {
        return tangent.then_some((f64::NAN, true));
    }
    let mut t = (-b - disc.sqrt()) / (2.0 * a);
    if t <= 0.0 {
        return None;
    }
    for _ in 0..3 {
        let f = a * t * t + b * t + c;
        let df = 2.0 * a * t + b;
        if df != 0.0 {
            t -= f / df;
        }
    }
    Some((t, tangent))
}
