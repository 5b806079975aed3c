//! Selection-and-dampening of parameters disproportionately important to the
//! forget set.
//!
//! A parameter index is selected when its forget-set importance strictly
//! exceeds `alpha` times its full-set importance; selected parameters are
//! scaled by `beta = min(lambda·imp_full/imp_forget, 1)`. Unselected
//! parameters are returned bit-identical. When both importances are zero the
//! strict inequality fails and the parameter is kept.

use crate::data::{Dataset, ForgetSplit, LabelSource};
use crate::error::{Error, Result};
use crate::importance::{
    fisher_diagonal, lfssd_sensitivity, ImportanceOver, ImportanceSource, ImportanceVector,
    OutputSpace,
};
use crate::model::{ModelSpec, ParamKind, ParameterVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampeningConfig {
    pub alpha: f64,
    pub lambda: f64,
}

impl DampeningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidDampening("alpha"));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidDampening("lambda"));
        }
        Ok(())
    }
}

/// Unlearning method: which importance estimator feeds the dampening rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ssd,
    Lfssd,
}

impl Method {
    pub fn source(self) -> ImportanceSource {
        match self {
            Method::Ssd => ImportanceSource::FisherDiagonal,
            Method::Lfssd => ImportanceSource::LfssdSensitivity,
        }
    }
}

/// Which indices were dampened and by how much.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub selected_indices: Vec<usize>,
    /// Scaling factor per selected index, aligned with `selected_indices`.
    pub betas: Vec<f64>,
    /// Selected count per (layer, kind) block.
    pub counts: Vec<BlockCount>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCount {
    pub layer: usize,
    pub kind: ParamKind,
    pub selected: usize,
    pub total: usize,
}

impl SelectionReport {
    pub fn n_selected(&self) -> usize {
        self.selected_indices.len()
    }

    pub fn mean_beta(&self) -> f64 {
        if self.betas.is_empty() {
            return 1.0;
        }
        self.betas.iter().sum::<f64>() / self.betas.len() as f64
    }
}

/// Apply the dampening rule, returning new parameters and a selection report.
/// The input vector is not mutated.
pub fn apply_dampening(
    theta: &ParameterVector,
    imp_full: &ImportanceVector,
    imp_forget: &ImportanceVector,
    cfg: &DampeningConfig,
) -> Result<(ParameterVector, SelectionReport)> {
    cfg.validate()?;
    if imp_full.values.len() != theta.len() || imp_forget.values.len() != theta.len() {
        return Err(Error::ImportanceMismatch(format!(
            "lengths differ: theta {}, full {}, forget {}",
            theta.len(),
            imp_full.values.len(),
            imp_forget.values.len()
        )));
    }
    if imp_full.over != ImportanceOver::FullSet || imp_forget.over != ImportanceOver::ForgetSet {
        return Err(Error::ImportanceMismatch(format!(
            "expected (full, forget) coverage, got ({:?}, {:?})",
            imp_full.over, imp_forget.over
        )));
    }
    if imp_full.source != imp_forget.source {
        return Err(Error::ImportanceMismatch(format!(
            "estimator sources differ: {:?} vs {:?}",
            imp_full.source, imp_forget.source
        )));
    }

    let mut values = theta.values.clone();
    let mut selected_indices = Vec::new();
    let mut betas = Vec::new();
    for (i, value) in values.iter_mut().enumerate() {
        let full = imp_full.values[i];
        let forget = imp_forget.values[i];
        if forget > cfg.alpha * full {
            // forget > alpha·full >= 0 guarantees forget > 0 here.
            let beta = (cfg.lambda * full / forget).min(1.0);
            *value *= beta;
            selected_indices.push(i);
            betas.push(beta);
        }
    }

    let counts = theta
        .layout
        .iter()
        .map(|entry| {
            let range = entry.offset..entry.offset + entry.len;
            let selected = selected_indices
                .iter()
                .filter(|&&i| range.contains(&i))
                .count();
            BlockCount {
                layer: entry.layer,
                kind: entry.kind,
                selected,
                total: entry.len,
            }
        })
        .collect();

    Ok((
        ParameterVector {
            values,
            layout: theta.layout.clone(),
        },
        SelectionReport {
            selected_indices,
            betas,
            counts,
        },
    ))
}

/// Full unlearning step: estimate importance over the whole dataset and the
/// forget rows with the method's estimator, then dampen. A persisted full-set
/// importance can be passed in so the dataset-wide pass runs only once per
/// checkpoint.
#[allow(clippy::too_many_arguments)]
pub fn unlearn(
    spec: &ModelSpec,
    theta: &ParameterVector,
    dataset: &Dataset,
    split: &ForgetSplit,
    method: Method,
    cfg: &DampeningConfig,
    label_source: LabelSource,
    output_space: OutputSpace,
    precomputed_full: Option<&ImportanceVector>,
) -> Result<(ParameterVector, SelectionReport)> {
    if split.forget_indices.is_empty() {
        let report = SelectionReport {
            selected_indices: Vec::new(),
            betas: Vec::new(),
            counts: theta
                .layout
                .iter()
                .map(|e| BlockCount {
                    layer: e.layer,
                    kind: e.kind,
                    selected: 0,
                    total: e.len,
                })
                .collect(),
        };
        return Ok((theta.clone(), report));
    }
    let all_indices: Vec<usize> = (0..dataset.n_samples()).collect();
    let estimate = |indices: &[usize], over: ImportanceOver| -> Result<ImportanceVector> {
        match method {
            Method::Ssd => fisher_diagonal(spec, theta, dataset, indices, label_source, over),
            Method::Lfssd => lfssd_sensitivity(
                spec,
                theta,
                dataset.features_view(),
                indices,
                output_space,
                over,
            ),
        }
    };
    let computed_full;
    let imp_full = match precomputed_full {
        Some(imp) => {
            if imp.source != method.source() {
                return Err(Error::ImportanceMismatch(format!(
                    "persisted importance source {:?} does not match method {:?}",
                    imp.source, method
                )));
            }
            imp
        }
        None => {
            computed_full = estimate(&all_indices, ImportanceOver::FullSet)?;
            &computed_full
        }
    };
    let imp_forget = estimate(&split.forget_indices, ImportanceOver::ForgetSet)?;
    apply_dampening(theta, imp_full, &imp_forget, cfg)
}
