//! Interaction testing and local heritability on top of the group test.

use ndarray::{s, Array2, ArrayView1};
use serde::Serialize;

use crate::data::{validate_group, Dataset, GroupSpec};
use crate::error::{Error, Result};
use crate::inference::{confidence_interval, estimate, ConfInterval, CorrectionSample, EstimateOptions, QuadEstimate};
use crate::lasso::InitialFit;
use crate::projection::{Mode, Weight};

/// Design `W = (D·X, X)` for `y = (D·X)ᵀγ + Xᵀb + ε`, with the interaction
/// block `γ` as group `{1..p}`.
#[derive(Debug, Clone)]
pub struct InteractionDesign {
    pub data: Dataset,
    pub gamma_group: GroupSpec,
    /// True when the treatment is identically zero.
    pub degenerate: bool,
}

pub fn build_interaction(d: &Dataset, treatment: ArrayView1<'_, f64>) -> Result<InteractionDesign> {
    let (n, p) = (d.n(), d.p());
    if treatment.len() != n {
        return Err(Error::Dimension(format!(
            "treatment has length {} but the data has n = {n}",
            treatment.len()
        )));
    }
    if treatment.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("treatment contains non-finite values".into()));
    }
    let degenerate = treatment.iter().all(|&v| v == 0.0);
    if degenerate {
        log::warn!("treatment is identically zero; the interaction block is all zeros");
    }
    let x = d.x();
    let mut w = Array2::zeros((n, 2 * p));
    for (i, mut row) in w.rows_mut().into_iter().enumerate() {
        let xi = x.row(i);
        row.slice_mut(s![..p]).assign(&(&xi * treatment[i]));
        row.slice_mut(s![p..]).assign(&xi);
    }
    Ok(InteractionDesign {
        data: Dataset::new(w, d.y().to_owned())?,
        gamma_group: GroupSpec::range(1, p)?,
        degenerate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HeritabilityRecord {
    pub group: GroupSpec,
    pub estimate: QuadEstimate,
    pub ci: ConfInterval,
    /// `q_hat / var(y)`, when normalization was requested.
    pub proportion: Option<f64>,
    pub proportion_ci: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy)]
pub struct HeritabilityOptions {
    pub level: f64,
    pub mode: Mode,
    pub estimate: EstimateOptions,
    pub normalize: bool,
    pub truncate: bool,
}

impl Default for HeritabilityOptions {
    fn default() -> Self {
        HeritabilityOptions {
            level: 0.95,
            mode: Mode::Sigma,
            estimate: EstimateOptions::default(),
            normalize: false,
            truncate: false,
        }
    }
}

/// Explained variance `β_GᵀΣ_{G,G}β_G` (or `‖β_G‖²` in identity mode) with
/// a confidence interval for each group, sharing one fit.
pub fn heritability_report(
    d: &Dataset,
    fit: &InitialFit,
    groups: &[GroupSpec],
    opts: &HeritabilityOptions,
) -> Result<Vec<HeritabilityRecord>> {
    let weight = match opts.mode {
        Mode::Sigma => Weight::Sigma,
        Mode::Identity => Weight::Identity,
        Mode::General => return Err(Error::Invalid("heritability supports modes sigma and identity".into())),
    };
    for g in groups {
        validate_group(g, d.p())?;
    }
    let sample = CorrectionSample::new(fit, d)?;
    let var_y = {
        let y = d.y();
        let mean = y.mean().unwrap_or(0.0);
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (y.len() as f64 - 1.0)
    };
    if opts.normalize && !(var_y > 0.0) {
        return Err(Error::Invalid(
            "cannot normalize: the response has zero variance".into(),
        ));
    }
    groups
        .iter()
        .map(|g| {
            let est = estimate(&sample, fit, g, weight, &opts.estimate)?;
            let ci = confidence_interval(&est, opts.level, opts.truncate)?;
            let (proportion, proportion_ci) = if opts.normalize {
                (Some(est.q_hat / var_y), Some([ci.lower / var_y, ci.upper / var_y]))
            } else {
                (None, None)
            };
            Ok(HeritabilityRecord {
                group: g.clone(),
                estimate: est,
                ci,
                proportion,
                proportion_ci,
            })
        })
        .collect()
}
