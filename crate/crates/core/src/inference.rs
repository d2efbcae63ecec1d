//! Bias-corrected estimates of quadratic functionals, one-sided tests and
//! confidence intervals.

use std::borrow::Cow;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{validate_group, Dataset, GroupSpec, WeightMatrix};
use crate::error::{Error, Result};
use crate::lasso::InitialFit;
use crate::linalg;
use crate::normal;
use crate::projection::{solve_projection_with, Mode, ProjectionOptions, ProjectionProblem, Weight};

pub const DEFAULT_TAU: f64 = 1.0;
pub const DEFAULT_C_LAMBDA: f64 = 1.0;

/// Rows used for the correction step together with their sufficient
/// statistics. Reusable across groups and modes for one fit.
#[derive(Debug, Clone)]
pub struct CorrectionSample {
    x: Array2<f64>,
    sigma_hat: Array2<f64>,
    /// `Xᵀ(y − Xβ̂)/m`.
    score: Array1<f64>,
}

impl CorrectionSample {
    /// The full data, or its second half when the fit was split.
    pub fn new(fit: &InitialFit, d: &Dataset) -> Result<Self> {
        if fit.beta_hat.len() != d.p() {
            return Err(Error::Dimension(format!(
                "fit has {} coefficients but the data has p = {}",
                fit.beta_hat.len(),
                d.p()
            )));
        }
        let sample = match &fit.split {
            Some(s) => Cow::Owned(d.select_rows(&s.second_half)?),
            None => Cow::Borrowed(d),
        };
        Ok(Self::from_parts(sample.x(), sample.y(), fit.beta_hat.view()))
    }

    pub fn from_parts(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, beta: ArrayView1<'_, f64>) -> Self {
        let m = x.nrows() as f64;
        let resid = &y - &x.dot(&beta);
        let score = x.t().dot(&resid) / m;
        CorrectionSample {
            x: x.to_owned(),
            sigma_hat: linalg::second_moment(x),
            score,
        }
    }

    pub fn m(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn sigma_hat(&self) -> &Array2<f64> {
        &self.sigma_hat
    }

    pub fn score(&self) -> ArrayView1<'_, f64> {
        self.score.view()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EstimateOptions {
    pub tau: f64,
    pub c_lambda: f64,
    pub projection: ProjectionOptions,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            tau: DEFAULT_TAU,
            c_lambda: DEFAULT_C_LAMBDA,
            projection: ProjectionOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QuadEstimate {
    pub q_hat: f64,
    pub v_hat: f64,
    pub plug_in: f64,
    pub correction: f64,
    pub mode: Mode,
    pub tau: f64,
    pub group: GroupSpec,
    pub n_used: usize,
    pub p: usize,
    /// `(4σ̂²/m)·ûᵀΣ̂û`.
    pub v_projection: f64,
    /// `(1/m²)·Σᵢ((X_{iG}ᵀβ̂_G)² − plug_in)²`; zero outside mode sigma.
    pub v_fluctuation: f64,
    /// `ûᵀΣ̂û`.
    pub quad_value: f64,
    pub lambda_effective: f64,
    pub sigma_hat: f64,
}

impl QuadEstimate {
    /// The same estimate with a different variance enlargement.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        let mut out = self.clone();
        out.tau = tau;
        out.v_hat = assemble_variance(self.v_projection, self.v_fluctuation, tau, self.n_used);
        Ok(out)
    }

    pub fn sd(&self) -> f64 {
        self.v_hat.sqrt()
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau >= 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("tau must be a nonnegative number, got {tau}")))
    }
}

// Kept strictly positive so the statistic is always defined.
fn assemble_variance(v_projection: f64, v_fluctuation: f64, tau: f64, m: usize) -> f64 {
    (v_projection + v_fluctuation + tau / m as f64).max(f64::MIN_POSITIVE)
}

/// Core estimator on a prepared correction sample.
pub fn estimate(
    sample: &CorrectionSample,
    fit: &InitialFit,
    g: &GroupSpec,
    weight: Weight<'_>,
    opts: &EstimateOptions,
) -> Result<QuadEstimate> {
    check_tau(opts.tau)?;
    validate_group(g, sample.p())?;
    let m = sample.m();
    let beta = fit.beta_hat.view();
    let prob = ProjectionProblem::new(Cow::Borrowed(&sample.sigma_hat), m, beta, g, weight, opts.c_lambda)?;
    let sol = solve_projection_with(&prob, &opts.projection)?;

    // β̂ᵀv is β̂_GᵀΣ̂_{G,G}β̂_G, β̂_GᵀAβ̂_G or ‖β̂_G‖² depending on the loading
    let plug_in = beta.dot(&prob.target);
    let correction = 2.0 * sol.u.dot(&sample.score);
    let q_hat = plug_in + correction;

    let mf = m as f64;
    let sigma2 = fit.sigma_hat * fit.sigma_hat;
    let v_projection = 4.0 * sigma2 * sol.quad_value / mf;
    let v_fluctuation = if weight.mode() == Mode::Sigma {
        let idx = g.zero_based();
        let mut acc = 0.0;
        for row in sample.x.rows() {
            let lin: f64 = idx.iter().map(|&j| row[j] * beta[j]).sum();
            let dev = lin * lin - plug_in;
            acc += dev * dev;
        }
        acc / (mf * mf)
    } else {
        0.0
    };

    Ok(QuadEstimate {
        q_hat,
        v_hat: assemble_variance(v_projection, v_fluctuation, opts.tau, m),
        plug_in,
        correction,
        mode: weight.mode(),
        tau: opts.tau,
        group: g.clone(),
        n_used: m,
        p: sample.p(),
        v_projection,
        v_fluctuation,
        quad_value: sol.quad_value,
        lambda_effective: sol.lambda_effective,
        sigma_hat: fit.sigma_hat,
    })
}

/// `Q̂_Σ` for `β_GᵀΣ_{G,G}β_G`.
pub fn estimate_q_sigma(d: &Dataset, fit: &InitialFit, g: &GroupSpec, tau: f64, c_lambda: f64) -> Result<QuadEstimate> {
    let sample = CorrectionSample::new(fit, d)?;
    let opts = EstimateOptions {
        tau,
        c_lambda,
        ..Default::default()
    };
    estimate(&sample, fit, g, Weight::Sigma, &opts)
}

/// `Q̂_A` for `β_GᵀAβ_G`; `a = None` selects `A = I` with the basis-only
/// constraint set.
pub fn estimate_q_a(
    d: &Dataset,
    fit: &InitialFit,
    g: &GroupSpec,
    a: Option<&WeightMatrix>,
    tau: f64,
    c_lambda: f64,
) -> Result<QuadEstimate> {
    let sample = CorrectionSample::new(fit, d)?;
    let opts = EstimateOptions {
        tau,
        c_lambda,
        ..Default::default()
    };
    let weight = match a {
        Some(a) => Weight::Matrix(a),
        None => Weight::Identity,
    };
    estimate(&sample, fit, g, weight, &opts)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{name} must lie in (0, 1), got {x}")))
    }
}

/// One-sided test of `H₀: β_G = 0`: reject when `Q̂/√V̂ ≥ z_{1−α}`.
pub fn test_group(est: &QuadEstimate, alpha: f64) -> Result<TestResult> {
    check_unit("alpha", alpha)?;
    let statistic = est.q_hat / est.v_hat.sqrt();
    Ok(TestResult {
        statistic,
        p_value: normal::sf(statistic),
        reject: statistic >= normal::quantile(1.0 - alpha),
        alpha,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ConfInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub truncated_at_zero: bool,
}

impl ConfInterval {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// `Q̂ ± z_{1−(1−level)/2}·√V̂`, optionally clipped to `[0, ∞)`.
pub fn confidence_interval(est: &QuadEstimate, level: f64, truncate: bool) -> Result<ConfInterval> {
    check_unit("level", level)?;
    let half = normal::quantile(1.0 - (1.0 - level) / 2.0) * est.v_hat.sqrt();
    let (mut lower, mut upper) = (est.q_hat - half, est.q_hat + half);
    if truncate {
        lower = lower.max(0.0);
        upper = upper.max(0.0);
    }
    Ok(ConfInterval {
        lower,
        upper,
        level,
        truncated_at_zero: truncate,
    })
}

/// Flat JSON record of one group's inference.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResultRecord {
    pub mode: Mode,
    pub group: GroupSpec,
    pub q_hat: f64,
    pub v_hat: f64,
    pub plug_in: f64,
    pub correction: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub ci: [f64; 2],
    pub tau: f64,
    pub lambda_effective: f64,
    pub sigma_hat: f64,
    pub n: usize,
    pub p: usize,
}

impl ResultRecord {
    pub fn new(est: &QuadEstimate, test: &TestResult, ci: &ConfInterval) -> Self {
        ResultRecord {
            mode: est.mode,
            group: est.group.clone(),
            q_hat: est.q_hat,
            v_hat: est.v_hat,
            plug_in: est.plug_in,
            correction: est.correction,
            statistic: test.statistic,
            p_value: test.p_value,
            ci: [ci.lower, ci.upper],
            tau: est.tau,
            lambda_effective: est.lambda_effective,
            sigma_hat: est.sigma_hat,
            n: est.n_used,
            p: est.p,
        }
    }
}
