use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::predictor::RgbImage;
use super::GaussianError;
use crate::buffers::Camera;
use crate::Vec3;

pub const SKY_DIM: usize = 192;
/// Sky patch edge in pixels.
pub const SKY_PATCH: usize = 8;
const PATCH_VALUES: usize = SKY_PATCH * SKY_PATCH * 3;
const LN_EPS: f64 = 1e-5;

/// Weights of the sky model. Directions are embedded as `sin(E·d + e)`;
/// `c` modulates a normalized embedding through AdaLN and a linear head maps
/// it to RGB. The encoder is one single-query attention block over sky patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkyModelParams {
    pub embed_w: DMatrix<f64>,
    pub embed_b: DVector<f64>,
    pub query: DVector<f64>,
    pub patch_w: DMatrix<f64>,
    pub patch_b: DVector<f64>,
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub wo: DMatrix<f64>,
    pub scale_w: DMatrix<f64>,
    pub scale_b: DVector<f64>,
    pub shift_w: DMatrix<f64>,
    pub shift_b: DVector<f64>,
    pub out_w: DMatrix<f64>,
    pub out_b: DVector<f64>,
}

impl SkyModelParams {
    /// Random weights with `N(0, gain² / fan_in)` entries.
    pub fn random(seed: u64, gain: f64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut m = |rows: usize, cols: usize| {
            let n = Normal::new(0.0, gain / (cols as f64).sqrt()).unwrap();
            DMatrix::from_fn(rows, cols, |_, _| n.sample(&mut r))
        };
        let d = SKY_DIM;
        let embed_w = m(d, 3) * 4.0;
        let embed_b = m(d, 1).column(0).into_owned() * 3.0;
        let query = m(d, 1).column(0).into_owned();
        let patch_w = m(d, PATCH_VALUES);
        let patch_b = m(d, 1).column(0).into_owned();
        let (wq, wk, wv, wo) = (m(d, d), m(d, d), m(d, d), m(d, d));
        let (scale_w, scale_b) = (m(d, d) * 0.1, m(d, 1).column(0).into_owned() * 0.1);
        let (shift_w, shift_b) = (m(d, d) * 0.1, m(d, 1).column(0).into_owned() * 0.1);
        let (out_w, out_b) = (m(3, d), DVector::from_element(3, 0.5));
        Self {
            embed_w,
            embed_b,
            query,
            patch_w,
            patch_b,
            wq,
            wk,
            wv,
            wo,
            scale_w,
            scale_b,
            shift_w,
            shift_b,
            out_w,
            out_b,
        }
    }

    pub fn validate(&self) -> Result<(), GaussianError> {
        let d = SKY_DIM;
        let shapes = [
            (self.embed_w.shape(), (d, 3)),
            (self.embed_b.shape(), (d, 1)),
            (self.query.shape(), (d, 1)),
            (self.patch_w.shape(), (d, PATCH_VALUES)),
            (self.patch_b.shape(), (d, 1)),
            (self.wq.shape(), (d, d)),
            (self.wk.shape(), (d, d)),
            (self.wv.shape(), (d, d)),
            (self.wo.shape(), (d, d)),
            (self.scale_w.shape(), (d, d)),
            (self.scale_b.shape(), (d, 1)),
            (self.shift_w.shape(), (d, d)),
            (self.shift_b.shape(), (d, 1)),
            (self.out_w.shape(), (3, d)),
            (self.out_b.shape(), (3, 1)),
        ];
        if let Some((got, want)) = shapes.iter().find(|(g, w)| g != w) {
            return Err(GaussianError::ShapeMismatch(format!("sky weight {got:?}, expected {want:?}")));
        }
        if self.blobs().iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(GaussianError::InvalidArgument("sky weights are not finite".into()));
        }
        Ok(())
    }

    fn blobs(&self) -> [&[f64]; 15] {
        [
            self.embed_w.as_slice(),
            self.embed_b.as_slice(),
            self.query.as_slice(),
            self.patch_w.as_slice(),
            self.patch_b.as_slice(),
            self.wq.as_slice(),
            self.wk.as_slice(),
            self.wv.as_slice(),
            self.wo.as_slice(),
            self.scale_w.as_slice(),
            self.scale_b.as_slice(),
            self.shift_w.as_slice(),
            self.shift_b.as_slice(),
            self.out_w.as_slice(),
            self.out_b.as_slice(),
        ]
    }

    /// All weights, column-major per tensor, in field order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.blobs().concat()
    }

    pub fn from_flat(v: &[f64]) -> Result<Self, GaussianError> {
        let d = SKY_DIM;
        let mut shape = Self::random(0, 0.0);
        let sizes: Vec<usize> = shape.blobs().iter().map(|b| b.len()).collect();
        if v.len() != sizes.iter().sum::<usize>() {
            return Err(GaussianError::ShapeMismatch(format!("sky blob has {} values", v.len())));
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let s = &v[at..at + n];
            at += n;
            s
        };
        shape.embed_w = DMatrix::from_column_slice(d, 3, take(d * 3));
        shape.embed_b = DVector::from_column_slice(take(d));
        shape.query = DVector::from_column_slice(take(d));
        shape.patch_w = DMatrix::from_column_slice(d, PATCH_VALUES, take(d * PATCH_VALUES));
        shape.patch_b = DVector::from_column_slice(take(d));
        shape.wq = DMatrix::from_column_slice(d, d, take(d * d));
        shape.wk = DMatrix::from_column_slice(d, d, take(d * d));
        shape.wv = DMatrix::from_column_slice(d, d, take(d * d));
        shape.wo = DMatrix::from_column_slice(d, d, take(d * d));
        shape.scale_w = DMatrix::from_column_slice(d, d, take(d * d));
        shape.scale_b = DVector::from_column_slice(take(d));
        shape.shift_w = DMatrix::from_column_slice(d, d, take(d * d));
        shape.shift_b = DVector::from_column_slice(take(d));
        shape.out_w = DMatrix::from_column_slice(3, d, take(3 * d));
        shape.out_b = DVector::from_column_slice(take(3));
        shape.validate()?;
        Ok(shape)
    }

    fn embed(&self, d: &Vec3) -> DVector<f64> {
        let dir = DVector::from_column_slice(d.as_slice());
        (&self.embed_w * dir + &self.embed_b).map(f64::sin)
    }
}

fn layer_norm(x: &DVector<f64>) -> DVector<f64> {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.map(|v| (v - mean) / (var + LN_EPS).sqrt())
}

/// Sky model with the AdaLN modulation for a fixed `c` precomputed.
#[derive(Debug, Clone)]
pub struct SkyShader<'a> {
    params: &'a SkyModelParams,
    scale: DVector<f64>,
    shift: DVector<f64>,
}

impl<'a> SkyShader<'a> {
    pub fn new(params: &'a SkyModelParams, c: &[f64]) -> Result<Self, GaussianError> {
        if c.len() != SKY_DIM {
            return Err(GaussianError::ShapeMismatch(format!("sky latent has {} values", c.len())));
        }
        let c = DVector::from_column_slice(c);
        Ok(Self {
            params,
            scale: &params.scale_w * &c + &params.scale_b,
            shift: &params.shift_w * &c + &params.shift_b,
        })
    }

    pub fn eval(&self, dir: &Vec3) -> [f64; 3] {
        let x = layer_norm(&self.params.embed(dir));
        let x = x.component_mul(&self.scale.add_scalar(1.0)) + &self.shift;
        let rgb = &self.params.out_w * x + &self.params.out_b;
        [rgb[0], rgb[1], rgb[2]]
    }
}

/// RGB of the sky seen along unit `direction` under latent `c`.
pub fn sky_eval(params: &SkyModelParams, c: &[f64], direction: &Vec3) -> Result<[f64; 3], GaussianError> {
    Ok(SkyShader::new(params, c)?.eval(direction))
}

/// Sky latent from the image patches that are mostly sky. Each patch token
/// is a linear embedding of its pixels plus the direction embedding of its
/// centre ray; a single learned query attends over the tokens and the result
/// is added to the query. No sky patches gives `c = query`.
pub fn sky_encode(
    params: &SkyModelParams,
    image: &RgbImage,
    sky_mask: &[bool],
    camera: &Camera,
) -> Result<Vec<f64>, GaussianError> {
    let (w, h) = (image.width, image.height);
    if sky_mask.len() != w * h || camera.intrinsics.width != w || camera.intrinsics.height != h {
        return Err(GaussianError::ShapeMismatch("sky mask, image and camera differ in size".into()));
    }
    let mut tokens = Vec::new();
    for pv in 0..h / SKY_PATCH {
        for pu in 0..w / SKY_PATCH {
            let pixels: Vec<usize> = (0..SKY_PATCH)
                .flat_map(|dv| (0..SKY_PATCH).map(move |du| (pv * SKY_PATCH + dv) * w + pu * SKY_PATCH + du))
                .collect();
            if 2 * pixels.iter().filter(|&&p| sky_mask[p]).count() < pixels.len() {
                continue;
            }
            let values = DVector::from_iterator(PATCH_VALUES, pixels.iter().flat_map(|&p| image.data[p]));
            let dir = camera.ray_dir(pu * SKY_PATCH + SKY_PATCH / 2, pv * SKY_PATCH + SKY_PATCH / 2);
            tokens.push(&params.patch_w * values + &params.patch_b + params.embed(&dir));
        }
    }
    Ok(attend(params, &tokens).as_slice().to_vec())
}

fn attend(params: &SkyModelParams, tokens: &[DVector<f64>]) -> DVector<f64> {
    if tokens.is_empty() {
        return params.query.clone();
    }
    let q = &params.wq * &params.query;
    let logits: Vec<f64> = tokens
        .iter()
        .map(|t| (&params.wk * t).dot(&q) / (SKY_DIM as f64).sqrt())
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let mut mix = DVector::zeros(SKY_DIM);
    for (t, w) in tokens.iter().zip(&e) {
        mix += (&params.wv * t) * (w / z);
    }
    &params.query + &params.wo * mix
}

const HORIZON: [f64; 3] = [0.85, 0.88, 0.92];
const ZENITH: [f64; 3] = [0.36, 0.56, 0.86];

/// Sky attached to a scene.
#[derive(Debug, Clone, PartialEq)]
pub enum Sky {
    /// Horizon-to-zenith gradient used when no model is available.
    Gradient,
    Model { params: Box<SkyModelParams>, latent: Vec<f64> },
}

impl Sky {
    /// Returns a colour function for view directions.
    pub fn shader(&self) -> Result<Box<dyn Fn(&Vec3) -> [f64; 3] + Sync + '_>, GaussianError> {
        Ok(match self {
            Sky::Gradient => Box::new(|d: &Vec3| {
                let t = d.z.clamp(0.0, 1.0);
                [0, 1, 2].map(|a| HORIZON[a] + t * (ZENITH[a] - HORIZON[a]))
            }),
            Sky::Model { params, latent } => {
                let s = SkyShader::new(params, latent)?;
                Box::new(move |d: &Vec3| s.eval(d))
            }
        })
    }
}
