//! Method comparison and manifold-dimension sweep.

use serde::{Deserialize, Serialize};

use crate::codec::fit_linear_codec;
use crate::error::{Error, Result};
use crate::explain::{explain, Context, ExplainSettings, Method, MethodExplainer};
use crate::image::Image;
use crate::metrics::axioms::{image_axioms, AxiomCheck, DEFAULT_AXIOM_TOL};
use crate::metrics::{infidelity, sensitivity, PerturbationSpec, DEFAULT_SEN_PROBES};
use crate::model::BlackBoxModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricSettings {
    pub perturbation: PerturbationSpec,
    pub radius: f64,
    pub num_probes: usize,
    pub probe_seed: u64,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            perturbation: PerturbationSpec::default(),
            radius: 0.1,
            num_probes: DEFAULT_SEN_PROBES,
            probe_seed: 0,
        }
    }
}

/// Metrics of one method, averaged over the evaluated images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: Method,
    pub infidelity: f64,
    pub sensitivity: f64,
    pub complete_allocation: AxiomCheck,
    pub no_unrelated_allocation: AxiomCheck,
    pub images: usize,
}

/// Infidelity, sensitivity and image-level axioms of `method`, each image
/// explained at its own top-1 class.
pub fn score_method(
    ctx: &Context<'_>,
    images: &[Image],
    method: Method,
    explain_settings: &ExplainSettings,
    metric_settings: &MetricSettings,
) -> Result<MethodScore> {
    if images.is_empty() {
        return Err(Error::Config("no images to evaluate".into()));
    }
    let mut infd = 0.0;
    let mut sen = 0.0;
    let mut ca: Vec<f64> = Vec::new();
    let mut nua: Vec<AxiomCheck> = Vec::new();
    for image in images {
        let class_index = ctx.top_class(image)?;
        let e = explain(ctx, image, class_index, method, explain_settings)?;
        infd += infidelity(
            ctx.model,
            image,
            &e.map,
            &metric_settings.perturbation,
            class_index,
            Some(&ctx.baseline),
        )?;
        let explainer = MethodExplainer {
            ctx,
            method,
            class_index,
            settings: explain_settings,
        };
        sen += sensitivity(
            &explainer,
            image,
            metric_settings.radius,
            metric_settings.num_probes,
            metric_settings.probe_seed,
        )?;
        let delta = ctx.model.score(image, class_index)? - ctx.model.score(&ctx.baseline, class_index)?;
        let ax = image_axioms(ctx.model, &e.map, delta, DEFAULT_AXIOM_TOL);
        ca.push(ax.complete_allocation.worst);
        nua.push(ax.no_unrelated_allocation);
    }
    let n = images.len() as f64;
    Ok(MethodScore {
        method,
        infidelity: infd / n,
        sensitivity: sen / n,
        complete_allocation: merge(ca.len(), ca.iter().copied().fold(0.0, f64::max)),
        no_unrelated_allocation: merge(
            nua.iter().map(|c| c.checked).sum(),
            nua.iter().map(|c| c.worst).fold(0.0, f64::max),
        ),
        images: images.len(),
    })
}

fn merge(checked: usize, worst: f64) -> AxiomCheck {
    use crate::metrics::AxiomStatus;
    AxiomCheck {
        status: if worst <= DEFAULT_AXIOM_TOL {
            AxiomStatus::Pass
        } else {
            AxiomStatus::Fail
        },
        checked,
        worst,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepStatus {
    Ok,
    /// The dimension could not be fitted; the row carries no metrics.
    Skipped(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dim: usize,
    pub infidelity: Option<f64>,
    pub sensitivity: Option<f64>,
    pub status: SweepStatus,
}

/// Fits a linear codec per dimension on `dataset` and scores the fusion
/// explanation of `images` with it.
pub fn sweep_dims(
    model: &BlackBoxModel,
    dataset: &[Image],
    images: &[Image],
    dims: &[usize],
    explain_settings: &ExplainSettings,
    metric_settings: &MetricSettings,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(dims.len());
    for &dim in dims {
        let codec = match fit_linear_codec(dataset, dim) {
            Ok(c) => c,
            Err(e @ (Error::RankDeficient { .. } | Error::Dimension(_))) => {
                rows.push(SweepRow {
                    dim,
                    infidelity: None,
                    sensitivity: None,
                    status: SweepStatus::Skipped(format!("{}: {e}", e.code())),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let ctx = Context::new(model, Some(&codec)).with_pool(dataset)?;
        let s = score_method(&ctx, images, Method::Fusion, explain_settings, metric_settings)?;
        rows.push(SweepRow {
            dim,
            infidelity: Some(s.infidelity),
            sensitivity: Some(s.sensitivity),
            status: SweepStatus::Ok,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthetic_task;

    #[test]
    fn constant_method_has_zero_sensitivity() {
        let task = synthetic_task(1).unwrap();
        let ctx = Context::new(&task.model, None);
        let m = MetricSettings {
            num_probes: 4,
            ..Default::default()
        };
        let s = score_method(&ctx, &task.eval[..2], Method::Constant, &ExplainSettings::default(), &m).unwrap();
        assert_eq!(s.sensitivity, 0.0);
        assert!(s.infidelity > 0.0);
    }

    #[test]
    fn rank_errors_become_skipped_rows() {
        let task = synthetic_task(2).unwrap();
        let m = MetricSettings {
            num_probes: 1,
            perturbation: PerturbationSpec {
                num_samples: 4,
                ..Default::default()
            },
            ..Default::default()
        };
        let e = ExplainSettings {
            grid: crate::shapley::PixelGrid::new(2, 2),
            grid_steps: 3,
            ..Default::default()
        };
        let rows = sweep_dims(&task.model, &task.train, &task.eval[..1], &[2, 17], &e, &m).unwrap();
        assert_eq!(rows[0].status, SweepStatus::Ok);
        assert!(matches!(rows[1].status, SweepStatus::Skipped(_)));
        assert!(rows[1].infidelity.is_none());
    }
}
