//! Closed-form stand-ins for the trained networks.

use super::{Denoiser, LatentCube, SamplerError};
use crate::conditions::{ChunkFrame, ConditionVolume, CONDITION_CHANNELS};
use crate::sparse_grid::{GridError, SemanticLabel, SemanticVoxel, SparseVoxelGrid, VoxelCoord};

/// Label decoded from latent channel `1 + m` is `TOY_LABELS[m % len]`.
pub const TOY_LABELS: [SemanticLabel; 7] = [
    SemanticLabel::Road,
    SemanticLabel::LaneMarker,
    SemanticLabel::Sidewalk,
    SemanticLabel::Building,
    SemanticLabel::Vegetation,
    SemanticLabel::Curb,
    SemanticLabel::Pole,
];

/// Exact v-predictor for data `x_0 ~ N(μ, σ²·I)`.
///
/// The conditional mean of element `(cell, c)` is
/// `mean[c] + Σ_s gain[c][s] · conditions[cell][s]`; the unconditional
/// (null-condition) mean is `mean[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianDenoiser {
    pub sigma: f64,
    pub mean: Vec<f64>,
    pub gain: Vec<[f64; CONDITION_CHANNELS]>,
}

impl LinearGaussianDenoiser {
    /// Same mean on every channel, no conditioning.
    pub fn isotropic(channels: usize, mean: f64, sigma: f64) -> Self {
        Self {
            sigma,
            mean: vec![mean; channels],
            gain: vec![[0.0; CONDITION_CHANNELS]; channels],
        }
    }

    /// Toy world prior: empty space by default, occupancy and road labels
    /// pulled up where the conditions mark road geometry.
    pub fn world_prior(channels: usize) -> Self {
        let mut mean = vec![0.0; channels];
        let mut gain = vec![[0.0; CONDITION_CHANNELS]; channels];
        if channels > 0 {
            mean[0] = -1.0;
            // edge, line, road surface, |box| raise occupancy.
            gain[0] = [1.5, 1.5, 2.5, 1.0, 1.0];
        }
        let label_gain = |label: SemanticLabel| TOY_LABELS.iter().position(|l| *l == label).map(|m| m + 1);
        if let Some(c) = label_gain(SemanticLabel::Road).filter(|c| *c < channels) {
            gain[c][2] = 1.0;
        }
        if let Some(c) = label_gain(SemanticLabel::LaneMarker).filter(|c| *c < channels) {
            gain[c][1] = 2.0;
        }
        if let Some(c) = label_gain(SemanticLabel::Curb).filter(|c| *c < channels) {
            gain[c][0] = 2.0;
        }
        Self {
            sigma: 0.1,
            mean,
            gain,
        }
    }

    fn element_mean(&self, cond_cell: &[f64], c: usize, null: bool) -> f64 {
        if null {
            return self.mean[c];
        }
        self.mean[c]
            + self.gain[c]
                .iter()
                .zip(cond_cell)
                .map(|(g, v)| g * v.abs())
                .sum::<f64>()
    }

    /// `E[v | x_t]` for one scalar.
    pub fn exact_v(x_t: f64, mean: f64, sigma: f64, alpha_bar: f64) -> f64 {
        let a = alpha_bar.sqrt();
        let b = (1.0 - alpha_bar).sqrt();
        let var = a * a * sigma * sigma + b * b;
        if var == 0.0 {
            return 0.0;
        }
        a * b * (1.0 - sigma * sigma) / var * (x_t - a * mean) - b * mean
    }
}

impl Denoiser for LinearGaussianDenoiser {
    fn predict_v(
        &self,
        x_t: &LatentCube,
        _t: usize,
        alpha_bar: f64,
        conditions: &ConditionVolume,
        null_condition: bool,
    ) -> Result<Vec<f64>, SamplerError> {
        let c = x_t.channels;
        if self.mean.len() != c || self.gain.len() != c {
            return Err(SamplerError::ShapeMismatch(format!(
                "toy denoiser built for {} channels, latent has {c}",
                self.mean.len()
            )));
        }
        if conditions.frame().n != x_t.frame.n {
            return Err(SamplerError::ShapeMismatch("conditions and latent differ in N".into()));
        }
        let cond = conditions.data();
        Ok(x_t
            .data
            .iter()
            .enumerate()
            .map(|(idx, &x)| {
                let cell = idx / c;
                let cond_cell = &cond[cell * CONDITION_CHANNELS..(cell + 1) * CONDITION_CHANNELS];
                let mu = self.element_mean(cond_cell, idx % c, null_condition);
                Self::exact_v(x, mu, self.sigma, alpha_bar)
            })
            .collect())
    }
}

fn toy_label(cell: &[f64]) -> SemanticLabel {
    if cell.len() < 2 {
        return TOY_LABELS[0];
    }
    let (m, _) = cell[1..]
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (m, v)| if *v > best.1 { (m, *v) } else { best });
    TOY_LABELS[m % TOY_LABELS.len()]
}

/// Nearest-neighbour decoder: occupancy from channel 0 > 0, label from the
/// argmax of the remaining channels. Output voxel size is
/// `latent_voxel_size / upsample`, sharing the latent frame's origin.
pub fn toy_decoder(latent: &LatentCube, upsample: usize) -> Result<SparseVoxelGrid, GridError> {
    let f = latent.frame;
    let u = upsample.max(1) as i32;
    let mut grid = SparseVoxelGrid::new(f.origin, f.latent_voxel_size / u as f64)?;
    for i in 0..f.n {
        for j in 0..f.n {
            for k in 0..f.n {
                let cell = latent.cell(i, j, k);
                if cell.is_empty() || !(cell[0] > 0.0) {
                    continue;
                }
                let voxel = SemanticVoxel::stuff(toy_label(cell));
                let base = VoxelCoord::new(i as i32 * u, j as i32 * u, k as i32 * u);
                for a in 0..u {
                    for b in 0..u {
                        for c in 0..u {
                            grid.insert(base.offset(a, b, c), voxel)?;
                        }
                    }
                }
            }
        }
    }
    Ok(grid)
}

/// Majority-pool encoder, the inverse of [`toy_decoder`] at latent
/// resolution. `grid` must share `frame.origin` and have voxel size
/// `latent_voxel_size / upsample`.
pub fn toy_encode(grid: &SparseVoxelGrid, frame: ChunkFrame, channels: usize, upsample: usize) -> LatentCube {
    let u = upsample.max(1) as i32;
    let n = frame.n as i32;
    let mut counts = vec![0usize; frame.cell_count()];
    let mut label_counts = vec![[0usize; TOY_LABELS.len()]; frame.cell_count()];
    for (c, v) in grid.iter() {
        let (i, j, k) = (c.i.div_euclid(u), c.j.div_euclid(u), c.k.div_euclid(u));
        if !(0..n).contains(&i) || !(0..n).contains(&j) || !(0..n).contains(&k) {
            continue;
        }
        let idx = frame.cell_index(i as usize, j as usize, k as usize);
        counts[idx] += 1;
        let m = TOY_LABELS.iter().position(|l| *l == v.label()).unwrap_or(0);
        label_counts[idx][m] += 1;
    }
    let block = (u * u * u) as usize;
    let mut out = LatentCube::zeros(frame, channels);
    for idx in 0..frame.cell_count() {
        let cell = &mut out.data[idx * channels..(idx + 1) * channels];
        if channels == 0 {
            continue;
        }
        cell[0] = if 2 * counts[idx] > block { 1.0 } else { -1.0 };
        let (best, _) = label_counts[idx]
            .iter()
            .enumerate()
            .fold((0, 0), |acc, (m, n)| if *n > acc.1 { (m, *n) } else { acc });
        if channels > 1 {
            let slot = 1 + best % (channels - 1);
            cell[slot] = 1.0;
        }
    }
    out
}
