//! Gradient-family attribution methods used as comparison rows.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, MapSource, SaliencyMap};
use crate::model::{BlackBoxModel, GradientTarget};
use crate::rng;

pub fn baseline_gradient(
    model: &BlackBoxModel,
    image: &Image,
    class_index: usize,
    target: GradientTarget,
) -> Result<SaliencyMap> {
    model.input_gradient(image, class_index, target)
}

/// Integrated gradients along the straight path from `baseline` to `image`,
/// midpoint rule with `steps` intervals.
pub fn baseline_integrated_gradients(
    model: &BlackBoxModel,
    image: &Image,
    class_index: usize,
    baseline: &Image,
    steps: usize,
    target: GradientTarget,
) -> Result<SaliencyMap> {
    if steps < 1 {
        return Err(Error::Config("integrated gradients needs at least 1 step".into()));
    }
    baseline.ensure_shape(image.shape())?;
    let diff: Vec<f64> = image
        .as_slice()
        .iter()
        .zip(baseline.as_slice())
        .map(|(x, b)| x - b)
        .collect();
    let grads = (0..steps)
        .into_par_iter()
        .map(|k| {
            let t = (k as f64 + 0.5) / steps as f64;
            let point: Vec<f64> = baseline.as_slice().iter().zip(&diff).map(|(b, d)| b + t * d).collect();
            let point = Image::new(image.shape(), point)?;
            model.input_gradient(&point, class_index, target).map(SaliencyMap::into_values)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![0.0; diff.len()];
    for g in &grads {
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v;
        }
    }
    let values = acc
        .iter()
        .zip(&diff)
        .map(|(a, d)| d * a / steps as f64)
        .collect();
    SaliencyMap::new(image.shape(), values, MapSource::BaselineMethod)
}

/// Mean gradient over `samples` copies of the image with `N(0, sigma²)` noise.
pub fn baseline_smoothgrad(
    model: &BlackBoxModel,
    image: &Image,
    class_index: usize,
    samples: usize,
    sigma: f64,
    seed: u64,
    target: GradientTarget,
) -> Result<SaliencyMap> {
    if samples < 1 {
        return Err(Error::Config("smoothgrad needs at least 1 sample".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("smoothgrad sigma must be finite and >= 0, got {sigma}")));
    }
    let grads = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::substream(seed, rng::SMOOTHING, k as u64);
            let noisy: Vec<f64> = image
                .as_slice()
                .iter()
                .map(|x| x + sigma * r.sample::<f64, _>(StandardNormal))
                .collect();
            let noisy = Image::new(image.shape(), noisy)?;
            model.input_gradient(&noisy, class_index, target).map(SaliencyMap::into_values)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![0.0; image.as_slice().len()];
    for g in &grads {
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= samples as f64);
    SaliencyMap::new(image.shape(), acc, MapSource::BaselineMethod)
}
