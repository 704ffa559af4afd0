//! One entry point for every attribution method, so the CLI, the metrics and
//! the FFI layer drive them the same way.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{ManifoldCode, ManifoldCodec};
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionResult, DEFAULT_GRID_STEPS};
use crate::image::{Image, MapSource, SaliencyMap};
use crate::mapping::{manifold_saliency, ManifoldSaliency, WeightMode};
use crate::metrics::{baseline_gradient, baseline_integrated_gradients, baseline_smoothgrad, Explainer};
use crate::model::{BlackBoxModel, GradientTarget};
use crate::shapley::{traditional_shap, AttributionVector, Estimator, Imputation, PixelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Traditional,
    Manifold,
    Fusion,
    Grad,
    Ig,
    Smoothgrad,
    /// All-zero map; a reference row for the metrics table.
    Constant,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Traditional,
        Method::Manifold,
        Method::Fusion,
        Method::Grad,
        Method::Ig,
        Method::Smoothgrad,
        Method::Constant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Traditional => "traditional",
            Method::Manifold => "manifold",
            Method::Fusion => "fusion",
            Method::Grad => "grad",
            Method::Ig => "ig",
            Method::Smoothgrad => "smoothgrad",
            Method::Constant => "constant",
        }
    }

    pub fn needs_codec(self) -> bool {
        matches!(self, Method::Manifold | Method::Fusion)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    #[default]
    Auto,
    Exact,
    Sampled,
}

/// Off-coalition manifold coordinates come from the baseline image's code, or
/// are averaged over a pool of dataset codes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ImputationSpec {
    #[default]
    Baseline,
    Empirical { mc_samples: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainSettings {
    pub grid: PixelGrid,
    pub estimator: EstimatorMode,
    pub num_permutations: usize,
    pub imputation: ImputationSpec,
    pub weight_mode: WeightMode,
    pub grid_steps: usize,
    pub ig_steps: usize,
    pub smoothgrad_samples: usize,
    pub smoothgrad_sigma: f64,
    pub gradient_target: GradientTarget,
    pub seed: u64,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        ExplainSettings {
            grid: PixelGrid::new(4, 4),
            estimator: EstimatorMode::Auto,
            num_permutations: 1000,
            imputation: ImputationSpec::Baseline,
            weight_mode: WeightMode::Absolute,
            grid_steps: DEFAULT_GRID_STEPS,
            ig_steps: 64,
            smoothgrad_samples: 32,
            smoothgrad_sigma: 0.1,
            gradient_target: GradientTarget::Confidence,
            seed: 0,
        }
    }
}

impl ExplainSettings {
    pub fn estimator(&self) -> Estimator {
        match self.estimator {
            EstimatorMode::Exact => Estimator::Exact,
            EstimatorMode::Sampled => Estimator::Sampled {
                num_permutations: self.num_permutations,
                seed: self.seed,
            },
            EstimatorMode::Auto => Estimator::Auto {
                num_permutations: self.num_permutations,
                seed: self.seed,
            },
        }
    }
}

/// Model, optional codec and reference data shared by all explanations of one
/// run.
#[derive(Clone, Debug)]
pub struct Context<'a> {
    pub model: &'a BlackBoxModel,
    pub codec: Option<&'a ManifoldCodec>,
    /// Reference image for pixel games, IG and baseline imputation.
    pub baseline: Image,
    /// Codes for empirical imputation.
    pub pool: Vec<ManifoldCode>,
}

impl<'a> Context<'a> {
    /// Baseline defaults to the codec's mean image, or zeros without a codec.
    pub fn new(model: &'a BlackBoxModel, codec: Option<&'a ManifoldCodec>) -> Self {
        let baseline = codec
            .map(ManifoldCodec::mean_image)
            .unwrap_or_else(|| Image::zeros(model.input_shape()));
        Context {
            model,
            codec,
            baseline,
            pool: Vec::new(),
        }
    }

    pub fn with_baseline(mut self, baseline: Image) -> Result<Self> {
        baseline.ensure_shape(self.model.input_shape())?;
        self.baseline = baseline;
        Ok(self)
    }

    /// Encodes `dataset` into the empirical imputation pool.
    pub fn with_pool(mut self, dataset: &[Image]) -> Result<Self> {
        let codec = self.require_codec()?;
        self.pool = dataset.iter().map(|im| codec.encode(im)).collect::<Result<_>>()?;
        Ok(self)
    }

    fn require_codec(&self) -> Result<&'a ManifoldCodec> {
        self.codec
            .ok_or_else(|| Error::Config("this method needs a codec".into()))
    }

    pub fn imputation(&self, settings: &ExplainSettings) -> Result<Imputation> {
        let codec = self.require_codec()?;
        match settings.imputation {
            ImputationSpec::Baseline => Ok(Imputation::Baseline(codec.encode(&self.baseline)?)),
            ImputationSpec::Empirical { mc_samples } => {
                if self.pool.is_empty() {
                    return Err(Error::Config("empirical imputation needs a dataset pool".into()));
                }
                Ok(Imputation::Empirical {
                    pool: self.pool.clone(),
                    mc_samples,
                    seed: settings.seed,
                })
            }
        }
    }

    /// Top-1 class of the model at `image`.
    pub fn top_class(&self, image: &Image) -> Result<usize> {
        Ok(self.model.forward(image)?.argmax())
    }
}

#[derive(Clone, Debug)]
pub struct Explanation {
    pub method: Method,
    pub class_index: usize,
    /// Attribution map on its natural scale; the fused map here is the
    /// unnormalized `α·M_manifold + (1−α)·M_traditional`.
    pub map: SaliencyMap,
    pub traditional: Option<(SaliencyMap, AttributionVector)>,
    pub manifold: Option<ManifoldSaliency>,
    pub fusion: Option<FusionResult>,
}

pub fn explain(
    ctx: &Context<'_>,
    image: &Image,
    class_index: usize,
    method: Method,
    settings: &ExplainSettings,
) -> Result<Explanation> {
    image.ensure_shape(ctx.model.input_shape())?;
    let model = ctx.model;
    let mut out = Explanation {
        method,
        class_index,
        map: SaliencyMap::zeros(image.shape(), MapSource::BaselineMethod),
        traditional: None,
        manifold: None,
        fusion: None,
    };
    let traditional = || traditional_shap(model, image, class_index, settings.grid, &ctx.baseline, &settings.estimator());
    let manifold = || -> Result<ManifoldSaliency> {
        let codec = ctx.require_codec()?;
        manifold_saliency(
            model,
            codec,
            image,
            class_index,
            &ctx.imputation(settings)?,
            &settings.estimator(),
            settings.weight_mode,
        )
    };
    match method {
        Method::Traditional => {
            let t = traditional()?;
            out.map = t.0.clone();
            out.traditional = Some(t);
        }
        Method::Manifold => {
            let m = manifold()?;
            out.map = m.map.clone();
            out.manifold = Some(m);
        }
        Method::Fusion => {
            let t = traditional()?;
            let m = manifold()?;
            let f = fuse(model, image, &t.0, &m.map, settings.grid_steps)?;
            out.map = f.fused_raw.clone();
            out.traditional = Some(t);
            out.manifold = Some(m);
            out.fusion = Some(f);
        }
        Method::Grad => out.map = baseline_gradient(model, image, class_index, settings.gradient_target)?,
        Method::Ig => {
            out.map = baseline_integrated_gradients(
                model,
                image,
                class_index,
                &ctx.baseline,
                settings.ig_steps,
                settings.gradient_target,
            )?
        }
        Method::Smoothgrad => {
            out.map = baseline_smoothgrad(
                model,
                image,
                class_index,
                settings.smoothgrad_samples,
                settings.smoothgrad_sigma,
                settings.seed,
                settings.gradient_target,
            )?
        }
        Method::Constant => {}
    }
    Ok(out)
}

/// A method bound to a context, settings and a fixed class, usable wherever
/// an [`Explainer`] is expected.
pub struct MethodExplainer<'c, 'a> {
    pub ctx: &'c Context<'a>,
    pub method: Method,
    pub class_index: usize,
    pub settings: &'c ExplainSettings,
}

impl Explainer for MethodExplainer<'_, '_> {
    fn explain(&self, image: &Image) -> Result<SaliencyMap> {
        explain(self.ctx, image, self.class_index, self.method, self.settings).map(|e| e.map)
    }
}
