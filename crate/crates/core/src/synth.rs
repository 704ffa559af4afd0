//! Seeded synthetic data for the dimension sweep and the bundled fixtures.
//!
//! Images are `0.5 + Σ_k s_k z_k B_k` over the 16 lowest-frequency 2-D DCT
//! patterns `B_k` of an 8×8 plane, with `z ~ U(−1, 1)` and decaying scales, so
//! the dataset has rank 16. The classifier passes the pattern coefficients
//! through a tanh layer and mixes them linearly into three classes; labels
//! are its own argmax.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::Result;
use crate::image::{Image, Shape};
use crate::model::{Activation, BlackBoxModel, Layer};
use crate::rng;

pub const SYNTH_SIDE: usize = 8;
pub const SYNTH_RANK: usize = 16;
pub const SYNTH_CLASSES: usize = 3;
pub const SYNTH_TRAIN: usize = 200;
pub const SYNTH_EVAL: usize = 8;

const SCALE0: f64 = 0.25;
const DECAY: f64 = 0.85;
const GAIN: f64 = 1.5;
const LOGIT_GAIN: f64 = 3.0;
const OFF_MANIFOLD: f64 = 0.05;

pub struct SyntheticTask {
    pub model: BlackBoxModel,
    pub train: Vec<Image>,
    pub eval: Vec<Image>,
    pub labels: Vec<usize>,
    /// Orthonormal patterns as columns (`64 × 16`).
    pub patterns: DMatrix<f64>,
    pub scales: Vec<f64>,
}

pub fn shape() -> Shape {
    Shape::new(1, SYNTH_SIDE, SYNTH_SIDE).expect("nonzero")
}

/// Orthonormal DCT-II patterns for frequencies `(u, v)` with `u, v < 4`,
/// ordered by `u + v`, then `u`.
pub fn dct_patterns() -> DMatrix<f64> {
    let n = SYNTH_SIDE;
    let mut freqs: Vec<(usize, usize)> = (0..4).flat_map(|u| (0..4).map(move |v| (u, v))).collect();
    freqs.sort_by_key(|&(u, v)| (u + v, u));
    let shape = shape();
    let c = |k: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    DMatrix::from_fn(shape.len(), SYNTH_RANK, |i, k| {
        let (_, w, h) = shape.coords(i);
        let (u, v) = freqs[k];
        c(u) * c(v)
            * (PI * (2 * w + 1) as f64 * u as f64 / (2 * n) as f64).cos()
            * (PI * (2 * h + 1) as f64 * v as f64 / (2 * n) as f64).cos()
    })
}

pub fn synthetic_task(seed: u64) -> Result<SyntheticTask> {
    let shape = shape();
    let d = shape.len();
    let patterns = dct_patterns();
    let scales: Vec<f64> = (0..SYNTH_RANK).map(|k| SCALE0 * DECAY.powi(k as i32)).collect();

    let mut r = rng::substream(seed, "synthetic", 0);
    let mut draw_image = || -> Result<Image> {
        let z: Vec<f64> = (0..SYNTH_RANK).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        let values = (0..d)
            .map(|i| 0.5 + (0..SYNTH_RANK).map(|k| scales[k] * z[k] * patterns[(i, k)]).sum::<f64>())
            .collect();
        Image::new(shape, values)
    };
    let train = (0..SYNTH_TRAIN).map(|_| draw_image()).collect::<Result<Vec<_>>>()?;
    let eval = (0..SYNTH_EVAL).map(|_| draw_image()).collect::<Result<Vec<_>>>()?;

    // Hidden unit k reads pattern k's coefficient with one common gain, plus a
    // small off-manifold component.
    let mut r = rng::substream(seed, "synthetic-model", 0);
    let projector = DMatrix::identity(d, d) - &patterns * patterns.transpose();
    let noise = DMatrix::from_fn(SYNTH_RANK, d, |_, _| r.random::<f64>() * 2.0 - 1.0);
    let w1 = (GAIN / SCALE0) * patterns.transpose() + OFF_MANIFOLD * noise * projector;
    let b1 = -(&w1 * DVector::from_element(d, 0.5));
    let w2 = DMatrix::from_fn(SYNTH_CLASSES, SYNTH_RANK, |_, _| LOGIT_GAIN * (r.random::<f64>() * 2.0 - 1.0));
    let model = BlackBoxModel::new(
        shape,
        vec![
            Layer::new(w1, b1, Activation::Tanh)?,
            Layer::new(w2, DVector::zeros(SYNTH_CLASSES), Activation::Softmax)?,
        ],
    )?;
    let labels = train
        .iter()
        .map(|im| model.forward(im).map(|c| c.argmax()))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticTask {
        model,
        train,
        eval,
        labels,
        patterns,
        scales,
    })
}
