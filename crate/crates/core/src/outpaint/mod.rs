//! Chunked latent diffusion: DDIM sampling with v-prediction and
//! classifier-free guidance, masked blending of fixed latents, and
//! breadth-first outpainting of an unbounded chunk layout.
//!
//! Noising follows `x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε` and the network predicts
//! `v = √ᾱ_t·ε − √(1−ᾱ_t)·x_0`.

mod external;
mod layout;
mod toy;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditions::{ChunkFrame, ConditionVolume};
use crate::exec::Execution;
use crate::formats::{self, FormatError};

pub use external::{serve_denoiser, ExternalDenoiser, PROTOCOL_NAME, PROTOCOL_VERSION};
pub use layout::{outpaint_scene, ChunkIndex, ChunkLayout, OutpaintRequest};
pub use toy::{toy_decoder, toy_encode, LinearGaussianDenoiser, TOY_LABELS};

pub const DEFAULT_LATENT_CHANNELS: usize = 8;
pub const TRAINING_TIMESTEPS: usize = 1000;
pub const DEFAULT_SAMPLING_STEPS: usize = 100;
pub const DEFAULT_GUIDANCE_WEIGHT: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("sampler diverged at timestep {t}: non-finite values")]
    SamplerDiverged { t: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("chunk request is not 4-connected: {0:?} unreachable")]
    Disconnected(Vec<ChunkIndex>),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("denoiser failed: {0}")]
    Denoiser(String),
    #[error("condition construction failed: {0}")]
    Conditions(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Dense `N³ × C` latent in `((i·N + j)·N + k)·C + c` order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCube {
    pub frame: ChunkFrame,
    pub channels: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSidecar {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "C")]
    pub channels: usize,
    pub frame: ChunkFrame,
    pub chunk_index: Option<ChunkIndex>,
    pub seed: Option<u64>,
}

impl LatentCube {
    pub fn zeros(frame: ChunkFrame, channels: usize) -> Self {
        Self {
            frame,
            channels,
            data: vec![0.0; frame.cell_count() * channels],
        }
    }

    pub fn noise(frame: ChunkFrame, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..frame.cell_count() * channels)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { frame, channels, data }
    }

    pub fn cell(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let idx = self.frame.cell_index(i, j, k) * self.channels;
        &self.data[idx..idx + self.channels]
    }

    pub fn cell_mut(&mut self, i: usize, j: usize, k: usize) -> &mut [f64] {
        let idx = self.frame.cell_index(i, j, k) * self.channels;
        &mut self.data[idx..idx + self.channels]
    }

    fn same_shape(&self, other: &LatentCube) -> Result<(), SamplerError> {
        if self.frame.n != other.frame.n || self.channels != other.channels || self.data.len() != other.data.len() {
            return Err(SamplerError::ShapeMismatch(format!(
                "{}³×{} vs {}³×{}",
                self.frame.n, self.channels, other.frame.n, other.channels
            )));
        }
        Ok(())
    }

    /// Raw little-endian f32 plus JSON sidecar next to it (`.json`).
    pub fn write(&self, raw_path: &std::path::Path, chunk_index: Option<ChunkIndex>, seed: Option<u64>) -> Result<(), SamplerError> {
        formats::write_f32_le(raw_path, &self.data)?;
        let sidecar = LatentSidecar {
            n: self.frame.n,
            channels: self.channels,
            frame: self.frame,
            chunk_index,
            seed,
        };
        formats::write_json(&raw_path.with_extension("json"), &sidecar)?;
        Ok(())
    }

    pub fn read(raw_path: &std::path::Path) -> Result<(Self, LatentSidecar), SamplerError> {
        let sidecar: LatentSidecar = formats::read_json(&raw_path.with_extension("json"))?;
        let data = formats::read_f32_le(raw_path)?;
        if data.len() != sidecar.frame.cell_count() * sidecar.channels || sidecar.n != sidecar.frame.n {
            return Err(SamplerError::ShapeMismatch(format!("{} values for {:?}", data.len(), sidecar)));
        }
        Ok((
            Self {
                frame: sidecar.frame,
                channels: sidecar.channels,
                data,
            },
            sidecar,
        ))
    }
}

/// Binary per-cell mask; 1 marks fixed (already generated) cells.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMask {
    pub n: usize,
    pub values: Vec<u8>,
}

impl OverlapMask {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0; n * n * n],
        }
    }

    pub fn ones(n: usize) -> Self {
        Self {
            n,
            values: vec![1; n * n * n],
        }
    }

    pub fn fixed_count(&self) -> usize {
        self.values.iter().filter(|v| **v != 0).count()
    }
}

/// Cumulative signal level ᾱ over training timesteps `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule (offset `s = 0.008`), normalized so ᾱ_0 = 1.
    pub fn cosine(timesteps: usize) -> Self {
        let s = 0.008;
        let f = |t: usize| {
            let x = (t as f64 / timesteps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let f0 = f(0);
        let alpha_bar = (0..=timesteps)
            .map(|t| if t == 0 { 1.0 } else { (f(t) / f0).max(f64::MIN_POSITIVE) })
            .collect();
        Self { alpha_bar }
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self, SamplerError> {
        if alpha_bar.len() < 2 {
            return Err(SamplerError::InvalidSchedule("need at least two timesteps".into()));
        }
        if alpha_bar.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(SamplerError::InvalidSchedule("ᾱ must lie in (0, 1]".into()));
        }
        if alpha_bar.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(SamplerError::InvalidSchedule("ᾱ must strictly decrease".into()));
        }
        Ok(Self { alpha_bar })
    }

    pub fn timesteps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Uniformly strided DDIM timesteps from T down to 0 (`steps + 1` entries).
    pub fn ddim_timesteps(&self, steps: usize) -> Result<Vec<usize>, SamplerError> {
        let t_max = self.timesteps();
        if steps == 0 || steps > t_max {
            return Err(SamplerError::InvalidSchedule(format!("{steps} steps for {t_max} timesteps")));
        }
        Ok((0..=steps)
            .map(|i| ((t_max * (steps - i)) as f64 / steps as f64).round() as usize)
            .collect())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::cosine(TRAINING_TIMESTEPS)
    }
}

/// Recovers the clean-sample estimate from a v prediction.
#[inline]
pub fn v_to_x0(x_t: f64, v: f64, alpha_bar: f64) -> f64 {
    alpha_bar.sqrt() * x_t - (1.0 - alpha_bar).sqrt() * v
}

/// Recovers the noise estimate from a v prediction.
#[inline]
pub fn v_to_eps(x_t: f64, v: f64, alpha_bar: f64) -> f64 {
    (1.0 - alpha_bar).sqrt() * x_t + alpha_bar.sqrt() * v
}

/// Training target for v-prediction.
#[inline]
pub fn v_target(x0: f64, eps: f64, alpha_bar: f64) -> f64 {
    alpha_bar.sqrt() * eps - (1.0 - alpha_bar).sqrt() * x0
}

#[inline]
pub fn cfg_combine(v_cond: f64, v_uncond: f64, w: f64) -> f64 {
    v_uncond + w * (v_cond - v_uncond)
}

pub fn cfg_combine_slices(v_cond: &[f64], v_uncond: &[f64], w: f64) -> Result<Vec<f64>, SamplerError> {
    if v_cond.len() != v_uncond.len() {
        return Err(SamplerError::ShapeMismatch("cfg inputs differ in length".into()));
    }
    Ok(v_cond
        .iter()
        .zip(v_uncond)
        .map(|(c, u)| cfg_combine(*c, *u, w))
        .collect())
}

/// Contract for diffusion networks: predicts v for a noisy latent.
pub trait Denoiser: Sync {
    fn predict_v(
        &self,
        x_t: &LatentCube,
        t: usize,
        alpha_bar: f64,
        conditions: &ConditionVolume,
        null_condition: bool,
    ) -> Result<Vec<f64>, SamplerError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance_weight: f64,
    pub execution: Execution,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_SAMPLING_STEPS,
            guidance_weight: DEFAULT_GUIDANCE_WEIGHT,
            execution: Execution::default(),
        }
    }
}

/// Guided v prediction. With `w == 1` the unconditional branch is never evaluated.
pub fn guided_v(
    denoiser: &dyn Denoiser,
    x_t: &LatentCube,
    t: usize,
    alpha_bar: f64,
    conditions: &ConditionVolume,
    w: f64,
) -> Result<Vec<f64>, SamplerError> {
    let v_cond = denoiser.predict_v(x_t, t, alpha_bar, conditions, false)?;
    if v_cond.len() != x_t.data.len() {
        return Err(SamplerError::ShapeMismatch(format!(
            "denoiser returned {} values for {}",
            v_cond.len(),
            x_t.data.len()
        )));
    }
    if w == 1.0 {
        return Ok(v_cond);
    }
    let v_uncond = denoiser.predict_v(x_t, t, alpha_bar, conditions, true)?;
    cfg_combine_slices(&v_cond, &v_uncond, w)
}

/// Deterministic (η = 0) DDIM update from `t` to `t_next`.
pub fn ddim_step(
    x_t: &LatentCube,
    t: usize,
    t_next: usize,
    schedule: &NoiseSchedule,
    denoiser: &dyn Denoiser,
    conditions: &ConditionVolume,
    cfg: &SamplerConfig,
) -> Result<LatentCube, SamplerError> {
    if t_next > t || t > schedule.timesteps() {
        return Err(SamplerError::InvalidSchedule(format!("step {t} -> {t_next}")));
    }
    if t_next == t {
        return Ok(x_t.clone());
    }
    let ab = schedule.alpha_bar(t);
    let ab_next = schedule.alpha_bar(t_next);
    let v = guided_v(denoiser, x_t, t, ab, conditions, cfg.guidance_weight)?;
    let (a_next, b_next) = (ab_next.sqrt(), (1.0 - ab_next).sqrt());
    let mut out = x_t.clone();
    cfg.execution.update_indexed(&mut out.data, |i, x| {
        let x0 = v_to_x0(*x, v[i], ab);
        let eps = v_to_eps(*x, v[i], ab);
        *x = a_next * x0 + b_next * eps;
    });
    if out.data.iter().any(|x| !x.is_finite()) {
        return Err(SamplerError::SamplerDiverged { t });
    }
    Ok(out)
}

/// Masked blend: fixed cells take the noised existing latent, free cells keep
/// the fresh sample. `eps` supplies the noise for the existing latent.
pub fn repaint_blend(
    x_new: &LatentCube,
    x_exist: &LatentCube,
    mask: &OverlapMask,
    alpha_bar: f64,
    eps: &[f64],
) -> Result<LatentCube, SamplerError> {
    x_new.same_shape(x_exist)?;
    if mask.n != x_new.frame.n || eps.len() != x_new.data.len() {
        return Err(SamplerError::ShapeMismatch("mask or noise does not match latent".into()));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let c = x_new.channels;
    let data = x_new
        .data
        .iter()
        .zip(&x_exist.data)
        .zip(eps)
        .enumerate()
        .map(|(i, ((xn, xe), e))| {
            let m = mask.values[i / c] as f64;
            (1.0 - m) * xn + m * (a * xe + b * e)
        })
        .collect();
    Ok(LatentCube {
        frame: x_new.frame,
        channels: c,
        data,
    })
}

/// Fixed region for a constrained sample.
pub struct Constraint<'a> {
    pub mask: &'a OverlapMask,
    pub existing: &'a LatentCube,
}

/// Full DDIM trajectory from white noise. With a constraint, the blend is
/// applied after every step, so masked cells equal the existing latent
/// exactly once ᾱ reaches 1.
pub fn sample_chunk(
    conditions: &ConditionVolume,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    channels: usize,
    constraint: Option<Constraint<'_>>,
    rng: &mut ChaCha8Rng,
) -> Result<LatentCube, SamplerError> {
    let frame = *conditions.frame();
    if let Some(c) = &constraint {
        if c.existing.frame.n != frame.n || c.existing.channels != channels || c.mask.n != frame.n {
            return Err(SamplerError::ShapeMismatch("constraint does not match chunk".into()));
        }
    }
    let ts = schedule.ddim_timesteps(cfg.steps)?;
    let mut x = LatentCube::noise(frame, channels, rng);
    for w in ts.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        x = ddim_step(&x, t, t_next, schedule, denoiser, conditions, cfg)?;
        if let Some(c) = &constraint {
            let eps: Vec<f64> = (0..x.data.len())
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut existing = c.existing.clone();
            existing.frame = frame;
            x = repaint_blend(&x, &existing, c.mask, schedule.alpha_bar(t_next), &eps)?;
        }
    }
    Ok(x)
}
