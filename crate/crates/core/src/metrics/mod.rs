//! Explanation quality: infidelity, sensitivity, comparison baselines and
//! the axiom suite.

pub mod axioms;
pub mod baselines;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, SaliencyMap};
use crate::model::BlackBoxModel;
use crate::rng;

pub use axioms::{axiom_suite, AxiomCheck, AxiomReport, AxiomStatus};
pub use baselines::{baseline_gradient, baseline_integrated_gradients, baseline_smoothgrad};

pub const DEFAULT_SIGMA: f64 = 0.1;
pub const DEFAULT_INFD_SAMPLES: usize = 256;
pub const DEFAULT_SEN_PROBES: usize = 64;

/// Distribution of perturbations `P` for infidelity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PerturbationKind {
    /// i.i.d. `N(0, sigma²)` on every pixel.
    Gaussian { sigma: f64 },
    /// A random `patch_size × patch_size` square (all channels) is replaced
    /// by the baseline image, i.e. `P = I − baseline` there and 0 elsewhere.
    PatchBaseline { patch_size: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    #[serde(flatten)]
    pub kind: PerturbationKind,
    pub num_samples: usize,
    pub seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            kind: PerturbationKind::Gaussian { sigma: DEFAULT_SIGMA },
            num_samples: DEFAULT_INFD_SAMPLES,
            seed: 0,
        }
    }
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples < 1 {
            return Err(Error::Config("perturbation num_samples must be at least 1".into()));
        }
        match self.kind {
            PerturbationKind::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::Config(format!("gaussian sigma must be positive, got {sigma}")))
            }
            PerturbationKind::PatchBaseline { patch_size: 0 } => {
                Err(Error::Config("patch_size must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// The `k`-th perturbation, drawn from its own stream.
    pub fn draw(&self, image: &Image, baseline: Option<&Image>, k: usize) -> Result<Vec<f64>> {
        let mut r = rng::substream(self.seed, rng::PERTURBATIONS, k as u64);
        let shape = image.shape();
        match self.kind {
            PerturbationKind::Gaussian { sigma } => Ok((0..shape.len())
                .map(|_| sigma * r.sample::<f64, _>(StandardNormal))
                .collect()),
            PerturbationKind::PatchBaseline { patch_size } => {
                let baseline =
                    baseline.ok_or_else(|| Error::Config("patch-baseline perturbation needs a baseline image".into()))?;
                baseline.ensure_shape(shape)?;
                if patch_size > shape.width || patch_size > shape.height {
                    return Err(Error::Config(format!("patch_size {patch_size} exceeds image {shape}")));
                }
                let w0 = r.random_range(0..=shape.width - patch_size);
                let h0 = r.random_range(0..=shape.height - patch_size);
                let mut p = vec![0.0; shape.len()];
                for c in 0..shape.channels {
                    for w in w0..w0 + patch_size {
                        for h in h0..h0 + patch_size {
                            let i = shape.index(c, w, h);
                            p[i] = image.as_slice()[i] - baseline.as_slice()[i];
                        }
                    }
                }
                Ok(p)
            }
        }
    }
}

/// Monte Carlo `E_P[(Pᵀψ − (f(I) − f(I − P)))²]` at one class's confidence.
pub fn infidelity(
    model: &BlackBoxModel,
    image: &Image,
    saliency: &SaliencyMap,
    pert: &PerturbationSpec,
    class_index: usize,
    baseline: Option<&Image>,
) -> Result<f64> {
    pert.validate()?;
    if saliency.shape() != image.shape() {
        return Err(Error::shape(image.shape(), saliency.shape()));
    }
    let reference = model.score(image, class_index)?;
    let squares = (0..pert.num_samples)
        .into_par_iter()
        .map(|k| {
            let p = pert.draw(image, baseline, k)?;
            let predicted: f64 = p.iter().zip(saliency.values()).map(|(a, b)| a * b).sum();
            let moved: Vec<f64> = image.as_slice().iter().zip(&p).map(|(x, d)| x - d).collect();
            let actual = reference - model.score(&Image::new(image.shape(), moved)?, class_index)?;
            Ok((predicted - actual).powi(2))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(squares.iter().sum::<f64>() / pert.num_samples as f64)
}

/// Anything that maps an image to a saliency map.
pub trait Explainer: Sync {
    fn explain(&self, image: &Image) -> Result<SaliencyMap>;
}

impl<F> Explainer for F
where
    F: Fn(&Image) -> Result<SaliencyMap> + Sync,
{
    fn explain(&self, image: &Image) -> Result<SaliencyMap> {
        self(image)
    }
}

/// A point drawn uniformly from the unit ball of the image's dimension.
fn unit_ball_offset(dim: usize, seed: u64, k: usize) -> Vec<f64> {
    let mut r = rng::substream(seed, rng::PROBES, k as u64);
    let mut v: Vec<f64> = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let radius = r.random::<f64>().powf(1.0 / dim as f64);
    let scale = if norm > 0.0 { radius / norm } else { 0.0 };
    v.iter_mut().for_each(|x| *x *= scale);
    v
}

fn probe_distances(
    explainer: &dyn Explainer,
    image: &Image,
    reference: &SaliencyMap,
    radius: f64,
    num_probes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..num_probes)
        .into_par_iter()
        .map(|k| {
            let offset = unit_ball_offset(image.as_slice().len(), seed, k);
            let moved: Vec<f64> = image.as_slice().iter().zip(&offset).map(|(x, d)| x + radius * d).collect();
            let probed = explainer.explain(&Image::new(image.shape(), moved)?)?;
            probed.l2_distance(reference)
        })
        .collect()
}

fn check_probe_args(radius: f64, num_probes: usize) -> Result<()> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("sensitivity radius must be finite and >= 0, got {radius}")));
    }
    if num_probes < 1 {
        return Err(Error::Config("sensitivity needs at least 1 probe".into()));
    }
    Ok(())
}

/// Largest `‖ψ(I′) − ψ(I)‖₂` over `num_probes` points drawn uniformly from
/// the radius-`r` ball around `I`. This is a lower bound on the true maximum.
pub fn sensitivity(
    explainer: &dyn Explainer,
    image: &Image,
    radius: f64,
    num_probes: usize,
    seed: u64,
) -> Result<f64> {
    check_probe_args(radius, num_probes)?;
    let reference = explainer.explain(image)?;
    let d = probe_distances(explainer, image, &reference, radius, num_probes, seed)?;
    Ok(d.into_iter().fold(0.0, f64::max))
}

/// Sensitivity at increasing radii with nested probe sets: the estimate at
/// `radii[j]` maximizes over the probes of every radius up to it, so the
/// profile is non-decreasing.
pub fn sensitivity_profile(
    explainer: &dyn Explainer,
    image: &Image,
    radii: &[f64],
    num_probes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if radii.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("sensitivity radii must be non-decreasing".into()));
    }
    let reference = explainer.explain(image)?;
    let mut running = 0.0_f64;
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        check_probe_args(r, num_probes)?;
        let d = probe_distances(explainer, image, &reference, r, num_probes, seed)?;
        running = d.into_iter().fold(running, f64::max);
        out.push(running);
    }
    Ok(out)
}

/// One row of the method comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub infidelity: f64,
    pub sensitivity: f64,
    pub perturbation: PerturbationSpec,
    pub radius: f64,
    pub num_probes: usize,
    pub probe_seed: u64,
}
