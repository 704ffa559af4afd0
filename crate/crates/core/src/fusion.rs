//! Convex fusion of the traditional and manifold maps.
//!
//! Both maps are min-max normalized, mixed as
//! `α·N(M_manifold) + (1−α)·N(M_traditional)`, and `α` is picked on a uniform
//! grid to minimize the confidence lost when the mixed map is used as a
//! multiplicative mask on the image.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, MapSource, SaliencyMap};
use crate::model::BlackBoxModel;

pub const DEFAULT_GRID_STEPS: usize = 101;

/// Affine rescale to `[0, 1]`; a constant map becomes all `0.5`.
pub fn normalize_map(map: &SaliencyMap) -> SaliencyMap {
    let (lo, hi) = map.min_max();
    let span = hi - lo;
    let values = if span > 0.0 && span.is_finite() {
        map.values().iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.5; map.values().len()]
    };
    SaliencyMap::new(map.shape(), values, map.source()).expect("same shape")
}

/// `1 − f(mask ⊗ I)_{t*}` where `t*` is the top-1 class of `f(I)`.
pub fn confidence_drop(model: &BlackBoxModel, image: &Image, mask: &SaliencyMap) -> Result<f64> {
    if mask.shape() != image.shape() {
        return Err(Error::shape(image.shape(), mask.shape()));
    }
    if let Some((i, v)) = mask
        .values()
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::Contract(format!("mask entry {i} is {v}, outside [0, 1]")));
    }
    let top = model.forward(image)?.argmax();
    let masked = image.hadamard(mask.values())?;
    Ok(1.0 - model.forward(&masked)?.get(top))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub struct FusionResult {
    pub alpha: f64,
    /// `α·N(M_manifold) + (1−α)·N(M_traditional)`, entries in `[0, 1]`.
    pub fused: SaliencyMap,
    /// `α·M_manifold + (1−α)·M_traditional` on the original scales.
    pub fused_raw: SaliencyMap,
    pub objective_curve: Vec<CurvePoint>,
    pub chosen_objective: f64,
}

fn mix(alpha: f64, manifold: &[f64], traditional: &[f64]) -> Vec<f64> {
    manifold
        .iter()
        .zip(traditional)
        .map(|(m, t)| alpha * m + (1.0 - alpha) * t)
        .collect()
}

pub fn grid_alphas(steps: usize) -> Vec<f64> {
    (0..steps).map(|k| k as f64 / (steps - 1) as f64).collect()
}

/// Grid search for `α`. Ties go to the smallest `α`.
pub fn fuse(
    model: &BlackBoxModel,
    image: &Image,
    m_traditional: &SaliencyMap,
    m_manifold: &SaliencyMap,
    grid_steps: usize,
) -> Result<FusionResult> {
    if grid_steps < 2 {
        return Err(Error::Config(format!("grid_steps must be at least 2, got {grid_steps}")));
    }
    for m in [m_traditional, m_manifold] {
        if m.shape() != image.shape() {
            return Err(Error::shape(image.shape(), m.shape()));
        }
    }
    let shape = image.shape();
    let n_trad = normalize_map(m_traditional);
    let n_man = normalize_map(m_manifold);
    let fused_at = |alpha: f64| -> Result<SaliencyMap> {
        let mut v = mix(alpha, n_man.values(), n_trad.values());
        v.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        SaliencyMap::new(shape, v, MapSource::Fused)
    };

    let objective_curve = grid_alphas(grid_steps)
        .into_par_iter()
        .map(|alpha| {
            Ok(CurvePoint {
                alpha,
                objective: confidence_drop(model, image, &fused_at(alpha)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = objective_curve
        .iter()
        .enumerate()
        .fold(0, |best, (k, p)| if p.objective < objective_curve[best].objective { k } else { best });
    let alpha = objective_curve[best].alpha;
    let fused_raw = SaliencyMap::new(
        shape,
        mix(alpha, m_manifold.values(), m_traditional.values()),
        MapSource::Fused,
    )?;
    Ok(FusionResult {
        alpha,
        fused: fused_at(alpha)?,
        fused_raw,
        chosen_objective: objective_curve[best].objective,
        objective_curve,
    })
}
