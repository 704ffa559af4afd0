//! Maps manifold Shapley values back onto pixels through the decoder Jacobian.
//!
//! Coordinate `p`'s value `φ_p` is split over pixels in proportion to how
//! strongly each pixel responds to `U_p`:
//!
//! ```text
//! w_{i,p} = |J_{i,p}| / Σ_k |J_{k,p}|        M_i = Σ_p w_{i,p} · φ_p
//! ```
//!
//! The weights of each coordinate form a convex combination, so the map total
//! equals `Σ_p φ_p` exactly. A uniform `|J|` column spreads `φ_p / (C·W·H)` to
//! every pixel.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::codec::{Jacobian, ManifoldCode, ManifoldCodec};
use crate::error::{Error, Result};
use crate::image::{Image, MapSource, SaliencyMap, Shape};
use crate::model::BlackBoxModel;
use crate::shapley::{manifold_shap, AttributionVector, Estimator, Imputation};

/// Columns whose weight mass falls below this cannot receive a value.
pub const DEAD_COLUMN_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// `|J| / Σ|J|`; conserves the attribution total.
    #[default]
    Absolute,
    /// `J / ΣJ`; experimental, weights may be negative or unbounded.
    Signed,
}

/// Per-pixel redistribution weights for every coordinate (`pixels × latent`).
/// Dead columns are left at zero.
pub fn redistribution_weights(jac: &Jacobian, mode: WeightMode) -> (DMatrix<f64>, Vec<bool>) {
    let entries = jac.entries();
    let mut weights = DMatrix::zeros(entries.nrows(), entries.ncols());
    let mut live = Vec::with_capacity(entries.ncols());
    for (p, col) in entries.column_iter().enumerate() {
        let mass = match mode {
            WeightMode::Absolute => col.iter().map(|v| v.abs()).sum::<f64>(),
            WeightMode::Signed => col.sum(),
        };
        let alive = mass.abs() >= DEAD_COLUMN_TOL;
        if alive {
            for (i, &v) in col.iter().enumerate() {
                weights[(i, p)] = match mode {
                    WeightMode::Absolute => v.abs() / mass,
                    WeightMode::Signed => v / mass,
                };
            }
        }
        live.push(alive);
    }
    (weights, live)
}

/// Contribution of every coordinate to every pixel (`pixels × latent`);
/// column `p` sums to `φ_p`.
pub fn contributions(attribution: &[f64], jac: &Jacobian, mode: WeightMode) -> Result<DMatrix<f64>> {
    if attribution.len() != jac.latent_dim() {
        return Err(Error::shape(
            format!("{} Shapley values", jac.latent_dim()),
            attribution.len(),
        ));
    }
    let (mut weights, live) = redistribution_weights(jac, mode);
    for (p, (&phi, &alive)) in attribution.iter().zip(&live).enumerate() {
        if !alive && phi != 0.0 {
            return Err(Error::DeadCoordinate { coordinate: p, value: phi });
        }
        weights.column_mut(p).scale_mut(phi);
    }
    Ok(weights)
}

/// Pixel saliency `M_i = Σ_p w_{i,p} φ_p`.
pub fn redistribute(
    attribution: &[f64],
    jac: &Jacobian,
    shape: Shape,
    mode: WeightMode,
) -> Result<SaliencyMap> {
    if jac.num_pixels() != shape.len() {
        return Err(Error::shape(format!("Jacobian with {} rows", shape.len()), jac.num_pixels()));
    }
    let contrib = contributions(attribution, jac, mode)?;
    let values = contrib.row_iter().map(|r| r.sum()).collect();
    SaliencyMap::new(shape, values, MapSource::Manifold)
}

/// Everything the manifold pipeline produced for one image.
#[derive(Clone, Debug)]
pub struct ManifoldSaliency {
    pub code: ManifoldCode,
    pub attribution: AttributionVector,
    pub map: SaliencyMap,
}

/// Manifold Shapley at `R(I)`, then redistribution through the Jacobian at
/// the same code.
pub fn manifold_saliency(
    model: &BlackBoxModel,
    codec: &ManifoldCodec,
    image: &Image,
    class_index: usize,
    imputation: &Imputation,
    estimator: &Estimator,
    mode: WeightMode,
) -> Result<ManifoldSaliency> {
    let (code, attribution) = manifold_shap(model, codec, image, class_index, imputation, estimator)?;
    let jac = codec.jacobian(&code)?;
    let map = redistribute(&attribution.values, &jac, image.shape(), mode)?;
    Ok(ManifoldSaliency {
        code,
        attribution,
        map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::fit_linear_codec;
    use crate::model::{Activation, Layer};
    use crate::rng;
    use nalgebra::DVector;
    use rand::Rng;

    fn jac(rows: usize, cols: usize, data: &[f64]) -> Jacobian {
        Jacobian::new(DMatrix::from_row_slice(rows, cols, data)).unwrap()
    }

    #[test]
    fn single_support_lands_on_one_pixel() {
        let shape = Shape::new(1, 2, 2).unwrap();
        let j = jac(4, 1, &[0.0, 0.0, -3.0, 0.0]);
        let m = redistribute(&[0.7], &j, shape, WeightMode::Absolute).unwrap();
        assert_eq!(m.values(), &[0.0, 0.0, 0.7, 0.0]);
    }

    #[test]
    fn uniform_column_spreads_evenly() {
        let shape = Shape::new(2, 2, 2).unwrap();
        let j = jac(8, 1, &[0.5, -0.5, 0.5, 0.5, -0.5, 0.5, 0.5, 0.5]);
        let m = redistribute(&[0.8], &j, shape, WeightMode::Absolute).unwrap();
        assert!(m.values().iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn contributions_conserve_each_coordinate() {
        let mut r = rng::substream(4, "mapping", 0);
        let j = Jacobian::new(DMatrix::from_fn(12, 4, |_, _| r.random::<f64>() * 2.0 - 1.0)).unwrap();
        let phi: Vec<f64> = (0..4).map(|_| r.random::<f64>() - 0.5).collect();
        let c = contributions(&phi, &j, WeightMode::Absolute).unwrap();
        for p in 0..4 {
            let col: f64 = (0..12).map(|i| c[(i, p)]).sum();
            assert!((col - phi[p]).abs() < 1e-12);
        }
        let m = redistribute(&phi, &j, Shape::new(1, 3, 4).unwrap(), WeightMode::Absolute).unwrap();
        assert!((m.total() - phi.iter().sum::<f64>()).abs() < 1e-12);

        let (w, live) = redistribution_weights(&j, WeightMode::Absolute);
        for p in 0..4 {
            assert!(live[p]);
            assert!(w.column(p).iter().all(|&v| v >= 0.0));
            assert!((w.column(p).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dead_coordinate_is_rejected_unless_value_is_zero() {
        let shape = Shape::new(1, 1, 3).unwrap();
        let j = jac(3, 2, &[1.0, 0.0, 2.0, 0.0, 1.0, 0.0]);
        match redistribute(&[0.5, 0.2], &j, shape, WeightMode::Absolute) {
            Err(Error::DeadCoordinate { coordinate: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let m = redistribute(&[0.5, 0.0], &j, shape, WeightMode::Absolute).unwrap();
        assert!((m.total() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_rows_get_nothing() {
        let shape = Shape::new(1, 1, 4).unwrap();
        let j = jac(4, 2, &[1.0, 2.0, 0.0, 0.0, -1.0, 0.5, 0.0, 0.0]);
        let m = redistribute(&[0.3, -0.9], &j, shape, WeightMode::Absolute).unwrap();
        assert_eq!(m.values()[1], 0.0);
        assert_eq!(m.values()[3], 0.0);
    }

    #[test]
    fn signed_mode_follows_jacobian_sign() {
        let shape = Shape::new(1, 1, 2).unwrap();
        let j = jac(2, 1, &[3.0, -1.0]);
        let m = redistribute(&[1.0], &j, shape, WeightMode::Signed).unwrap();
        assert_eq!(m.values(), &[1.5, -0.5]);
    }

    fn image(shape: Shape, seed: u64) -> Image {
        let mut r = rng::substream(seed, "img", 0);
        Image::new(shape, (0..shape.len()).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn one_dimensional_linear_case_has_closed_form() {
        let shape = Shape::new(1, 3, 3).unwrap();
        let data: Vec<Image> = (0..20).map(|k| image(shape, k)).collect();
        let codec = fit_linear_codec(&data, 1).unwrap();
        let a: Vec<f64> = (0..9).map(|i| 0.2 * i as f64 - 0.7).collect();
        let layer = Layer::new(DMatrix::from_row_slice(1, 9, &a), DVector::zeros(1), Activation::Identity).unwrap();
        let model = BlackBoxModel::new(shape, vec![layer]).unwrap();
        let x = image(shape, 99);
        let zero = Imputation::Baseline(ManifoldCode::zeros(1));
        let out = manifold_saliency(&model, &codec, &x, 0, &zero, &Estimator::Exact, WeightMode::Absolute).unwrap();

        let score = |u: &ManifoldCode| model.score(&codec.decode(u).unwrap(), 0).unwrap();
        let total = score(&out.code) - score(&ManifoldCode::zeros(1));
        let v = codec.basis().unwrap().column(0).into_owned();
        let l1: f64 = v.iter().map(|x| x.abs()).sum();
        for i in 0..9 {
            assert!((out.map.values()[i] - total * v[i].abs() / l1).abs() < 1e-12);
        }
    }

    #[test]
    fn blind_model_gives_zero_map() {
        let shape = Shape::new(1, 3, 3).unwrap();
        let data: Vec<Image> = (0..20).map(|k| image(shape, 200 + k)).collect();
        let codec = fit_linear_codec(&data, 4).unwrap();
        let layer = Layer::new(DMatrix::zeros(2, 9), DVector::zeros(2), Activation::Softmax).unwrap();
        let model = BlackBoxModel::new(shape, vec![layer]).unwrap();
        let zero = Imputation::Baseline(ManifoldCode::zeros(4));
        let out = manifold_saliency(&model, &codec, &image(shape, 5), 1, &zero, &Estimator::Exact, WeightMode::Absolute)
            .unwrap();
        assert!(out.map.values().iter().all(|&v| v == 0.0));
        assert_eq!(out.map.source(), MapSource::Manifold);
    }
}
