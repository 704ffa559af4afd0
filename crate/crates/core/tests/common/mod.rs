//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::PathBuf;

use fusion_shap::codec::{ManifoldCode, ManifoldCodec};
use fusion_shap::image::Shape;
use fusion_shap::model::{Activation, BlackBoxModel, Layer};
use fusion_shap::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn uniform_matrix(r: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * (r.random::<f64>() * 2.0 - 1.0))
}

pub fn small_shape() -> Shape {
    Shape::new(1, 3, 3).unwrap()
}

/// A random two-layer tanh codec on 1×3×3 images.
pub fn random_layered(seed: u64) -> ManifoldCodec {
    let mut r = rng::substream(seed, "test-codec", 0);
    let latent = 2 + (seed % 3) as usize;
    let hidden = 4 + (seed % 4) as usize;
    let shape = small_shape();
    let p = shape.len();
    let w1 = uniform_matrix(&mut r, hidden, latent, 1.0);
    let w2 = uniform_matrix(&mut r, p, hidden, 0.7);
    let e1 = uniform_matrix(&mut r, hidden, p, 1.0);
    let e2 = uniform_matrix(&mut r, latent, hidden, 1.0);
    ManifoldCodec::layered(
        shape,
        vec![0.5; p],
        vec![
            Layer::new(w1, DVector::from_element(hidden, 0.1), Activation::Tanh).unwrap(),
            Layer::new(w2, DVector::zeros(p), Activation::Identity).unwrap(),
        ],
        vec![
            Layer::new(e1, DVector::zeros(hidden), Activation::Tanh).unwrap(),
            Layer::new(e2, DVector::zeros(latent), Activation::Identity).unwrap(),
        ],
    )
    .unwrap()
}

/// A random tanh/softmax classifier on 1×3×3 images.
pub fn random_model(seed: u64, classes: usize) -> BlackBoxModel {
    let mut r = rng::substream(seed, "test-model", 0);
    let p = small_shape().len();
    BlackBoxModel::new(
        small_shape(),
        vec![
            Layer::new(uniform_matrix(&mut r, 6, p, 1.5), uniform_matrix(&mut r, 6, 1, 0.3).column(0).into(), Activation::Tanh)
                .unwrap(),
            Layer::new(uniform_matrix(&mut r, classes, 6, 2.0), DVector::zeros(classes), Activation::Softmax).unwrap(),
        ],
    )
    .unwrap()
}

pub fn random_code(seed: u64, dim: usize) -> ManifoldCode {
    let mut r = rng::substream(seed, "test-code", 0);
    ManifoldCode((0..dim).map(|_| r.random::<f64>() * 3.0 - 1.5).collect())
}

/// Relative Frobenius error of the analytic Jacobian against central
/// differences of the decoder.
pub fn jacobian_fd_error(codec: &ManifoldCodec, code: &ManifoldCode, step: f64) -> f64 {
    let jac = codec.jacobian(code).unwrap();
    let mut fd = DMatrix::zeros(jac.num_pixels(), jac.latent_dim());
    for j in 0..code.len() {
        let mut plus = code.clone();
        let mut minus = code.clone();
        plus.0[j] += step;
        minus.0[j] -= step;
        let a = codec.decode(&plus).unwrap();
        let b = codec.decode(&minus).unwrap();
        for i in 0..jac.num_pixels() {
            fd[(i, j)] = (a.as_slice()[i] - b.as_slice()[i]) / (2.0 * step);
        }
    }
    (jac.entries() - &fd).norm() / jac.entries().norm().max(1e-12)
}

/// Shapley values as the mean marginal contribution over every ordering.
pub fn permutation_oracle(n: usize, v: impl Fn(usize) -> f64) -> Vec<f64> {
    fn orderings(rest: &mut Vec<usize>, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for k in 0..rest.len() {
            let p = rest.remove(k);
            prefix.push(p);
            orderings(rest, prefix, out);
            prefix.pop();
            rest.insert(k, p);
        }
    }
    let mut all = Vec::new();
    orderings(&mut (0..n).collect(), &mut Vec::new(), &mut all);
    let mut phi = vec![0.0; n];
    for order in &all {
        let mut mask = 0usize;
        for &p in order {
            let before = v(mask);
            mask |= 1 << p;
            phi[p] += v(mask) - before;
        }
    }
    phi.iter().map(|x| x / all.len() as f64).collect()
}

/// Spearman rank correlation; ties get average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
    let sy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
    cov / (sx * sy)
}
