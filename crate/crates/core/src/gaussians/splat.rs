use nalgebra::{Matrix2, Matrix2x3};

use super::scene::GaussianScene;
use super::{Gaussian3D, GaussianError};
use crate::buffers::Camera;
use crate::Execution;

/// Per-Gaussian alpha is clamped to this value.
pub const ALPHA_MAX: f64 = 0.99;
/// Contributions below this alpha are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Screen-space low-pass added to the projected covariance diagonal, px².
pub const LOW_PASS: f64 = 0.3;
/// Gaussians with camera depth at or below this are culled, metres.
pub const NEAR_PLANE: f64 = 0.2;
const TILE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    /// Screen-space mean in continuous pixel coordinates.
    pub mean: [f64; 2],
    /// Inverse screen covariance `[a, b, c]` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Pixel radius beyond which alpha is below [`ALPHA_MIN`].
    pub radius: f64,
}

impl ProjectedGaussian {
    /// Alpha at continuous pixel position `(x, y)`, or `None` when skipped.
    pub fn alpha_at(&self, x: f64, y: f64) -> Option<f64> {
        let (dx, dy) = (x - self.mean[0], y - self.mean[1]);
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        let alpha = (self.opacity * power.exp()).min(ALPHA_MAX);
        (alpha >= ALPHA_MIN).then_some(alpha)
    }
}

/// Perspective-affine projection of a Gaussian's covariance.
pub fn project_gaussian(g: &Gaussian3D, camera: &Camera) -> Option<ProjectedGaussian> {
    let p = camera.to_camera(&g.position);
    if p.z <= NEAR_PLANE || !(g.opacity * 255.0 > 1.0) {
        return None;
    }
    let k = camera.intrinsics;
    let w = camera.pose.rotation.to_rotation_matrix().into_inner().transpose();
    let cov_cam = w * g.covariance() * w.transpose();
    let (iz, iz2) = (1.0 / p.z, 1.0 / (p.z * p.z));
    let j = Matrix2x3::new(k.fx * iz, 0.0, -k.fx * p.x * iz2, 0.0, k.fy * iz, -k.fy * p.y * iz2);
    let cov = j * cov_cam * j.transpose() + Matrix2::identity() * LOW_PASS;
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    if !(det > 0.0) {
        return None;
    }
    let conic = [cov[(1, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det];
    let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = (2.0 * lambda_max * (255.0 * g.opacity).ln()).sqrt();
    Some(ProjectedGaussian {
        mean: [k.fx * p.x * iz + k.cx, k.fy * p.y * iz + k.cy],
        conic,
        depth: p.z,
        opacity: g.opacity,
        color: g.color,
        radius: radius * (1.0 + 1e-9) + 1e-9,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplatImage {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    /// Alpha-weighted mean camera depth, 0 where nothing was hit.
    pub depth: Vec<f64>,
}

/// Front-to-back alpha compositing of the posed scene, sorted by camera
/// depth (stable, ties keep scene order); the sky fills the remaining
/// transmittance. Pixel `(u, v)` is sampled at `(u + 0.5, v + 0.5)`.
pub fn render_splats(
    scene: &GaussianScene,
    camera: &Camera,
    t: f64,
    execution: Execution,
) -> Result<SplatImage, GaussianError> {
    let k = camera.intrinsics;
    let sky = scene.sky.shader()?;
    let posed = scene.posed(t);
    let mut proj: Vec<ProjectedGaussian> = execution
        .map_slice(&posed, |(g, _)| project_gaussian(g, camera))
        .into_iter()
        .flatten()
        .collect();
    proj.sort_by(|a, b| a.depth.total_cmp(&b.depth));

    let (tx, ty) = (k.width.div_ceil(TILE), k.height.div_ceil(TILE));
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tx * ty];
    for (i, g) in proj.iter().enumerate() {
        let lo = |m: f64| (m - g.radius - 0.5).ceil().max(0.0);
        let hi = |m: f64, n: usize| (m + g.radius - 0.5).floor().min(n as f64 - 1.0);
        let (u0, u1, v0, v1) = (lo(g.mean[0]), hi(g.mean[0], k.width), lo(g.mean[1]), hi(g.mean[1], k.height));
        if u0 > u1 || v0 > v1 {
            continue;
        }
        for by in (v0 as usize / TILE)..=(v1 as usize / TILE) {
            for bx in (u0 as usize / TILE)..=(u1 as usize / TILE) {
                bins[by * tx + bx].push(i as u32);
            }
        }
    }

    let tiles = execution.map_range(tx * ty, |ti| {
        let (bx, by) = (ti % tx, ti / tx);
        let mut px = Vec::new();
        for v in by * TILE..((by + 1) * TILE).min(k.height) {
            for u in bx * TILE..((bx + 1) * TILE).min(k.width) {
                let (x, y) = (u as f64 + 0.5, v as f64 + 0.5);
                let (mut trans, mut col, mut dep) = (1.0, [0.0; 3], 0.0);
                for &gi in &bins[ti] {
                    let g = &proj[gi as usize];
                    let Some(a) = g.alpha_at(x, y) else {
                        continue;
                    };
                    let w = trans * a;
                    (0..3).for_each(|c| col[c] += w * g.color[c]);
                    dep += w * g.depth;
                    trans *= 1.0 - a;
                }
                let s = sky(&camera.ray_dir(u, v));
                (0..3).for_each(|c| col[c] += trans * s[c]);
                let alpha = 1.0 - trans;
                px.push((v * k.width + u, col, alpha, if alpha > 0.0 { dep / alpha } else { 0.0 }));
            }
        }
        px
    });
    let n = k.pixel_count();
    let mut img = SplatImage {
        width: k.width,
        height: k.height,
        color: vec![[0.0; 3]; n],
        alpha: vec![0.0; n],
        depth: vec![0.0; n],
    };
    for (p, c, a, d) in tiles.into_iter().flatten() {
        img.color[p] = c;
        img.alpha[p] = a;
        img.depth[p] = d;
    }
    Ok(img)
}
