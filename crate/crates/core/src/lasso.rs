//! ℓ1-penalized least squares and the scaled-Lasso initial estimator.
//!
//! The solver is cyclic coordinate descent in covariance form: it works on
//! `XᵀX/m`, `Xᵀy/m` and `yᵀy/m` only, keeping the score `Xᵀr/m` up to date
//! after every coordinate move. Sweeps alternate between the full coordinate
//! set and the current active set.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{make_split, Dataset, SampleSplit};
use crate::error::{Error, Result};
use crate::linalg::{self, soft_threshold};

#[derive(Debug, Clone, Copy)]
pub struct LassoOptions {
    pub max_sweeps: usize,
    /// Largest standardized coordinate move `|Δβ_j|·√G_jj` tolerated in a
    /// full sweep at convergence.
    pub tol_change: f64,
    /// Duality gap, relative to `yᵀy/(2m)`.
    pub tol_gap: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            max_sweeps: 100_000,
            tol_change: 1e-7,
            tol_gap: 1e-8,
        }
    }
}

/// Sufficient statistics of the loss `(1/2m)‖y − Xβ‖²`.
#[derive(Debug, Clone)]
pub struct Gram {
    pub g: Array2<f64>,
    pub xty: Array1<f64>,
    pub yty: f64,
    pub m: usize,
}

impl Gram {
    pub fn new(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Self {
        let m = x.nrows();
        let mf = m as f64;
        Gram {
            g: linalg::second_moment(x),
            xty: x.t().dot(&y) / mf,
            yty: y.dot(&y) / mf,
            m,
        }
    }

    pub fn p(&self) -> usize {
        self.xty.len()
    }

    /// `‖y − Xβ‖²/m` given the matching score `Xᵀ(y − Xβ)/m`.
    fn rss(&self, beta: &Array1<f64>, score: &Array1<f64>) -> f64 {
        (self.yty - beta.dot(&self.xty) - beta.dot(score)).max(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub beta: Array1<f64>,
    /// `Xᵀ(y − Xβ)/m` at the returned β.
    pub score: Array1<f64>,
    pub objective: f64,
    pub gap: f64,
    pub sweeps: usize,
    /// Objective after every sweep, when requested.
    pub trace: Vec<f64>,
}

/// Weighted Lasso on Gram form: minimizes
/// `(1/2m)‖y − Xβ‖² + λ Σ_j w_j |β_j|`.
pub fn solve_gram(
    gram: &Gram,
    lambda: f64,
    weights: ArrayView1<'_, f64>,
    warm_start: Option<&Array1<f64>>,
    opts: &LassoOptions,
    record_trace: bool,
) -> Result<LassoFit> {
    if !(lambda > 0.0) {
        return Err(Error::Invalid(format!("lasso penalty must be positive, got {lambda}")));
    }
    let p = gram.p();
    if weights.len() != p {
        return Err(Error::Dimension(format!(
            "{} penalty weights for {p} coefficients",
            weights.len()
        )));
    }
    let mut beta = match warm_start {
        Some(b) if b.len() == p => b.clone(),
        _ => Array1::zeros(p),
    };
    for j in 0..p {
        if gram.g[[j, j]] <= 0.0 {
            beta[j] = 0.0;
        }
    }
    let mut score = &gram.xty - &gram.g.dot(&beta);
    let thresholds: Vec<f64> = weights.iter().map(|w| lambda * w).collect();

    let objective = |beta: &Array1<f64>, score: &Array1<f64>| {
        let pen: f64 = beta.iter().zip(thresholds.iter()).map(|(b, t)| b.abs() * t).sum();
        0.5 * gram.rss(beta, score) + pen
    };
    let gap_of = |beta: &Array1<f64>, score: &Array1<f64>| {
        let mut s = 1.0_f64;
        for j in 0..p {
            if thresholds[j] > 0.0 {
                s = s.max(score[j].abs() / thresholds[j]);
            }
        }
        let rss = gram.rss(beta, score);
        let ytr = gram.yty - beta.dot(&gram.xty);
        let dual = ytr / s - rss / (2.0 * s * s);
        (objective(beta, score) - dual).max(0.0)
    };

    let gap_scale = (0.5 * gram.yty).max(f64::MIN_POSITIVE);
    let mut trace = Vec::new();
    let mut sweeps = 0usize;
    let mut active: Vec<usize> = Vec::new();

    let update = |j: usize, beta: &mut Array1<f64>, score: &mut Array1<f64>| -> f64 {
        let gjj = gram.g[[j, j]];
        if gjj <= 0.0 {
            return 0.0;
        }
        let old = beta[j];
        let z = score[j] + gjj * old;
        let new = soft_threshold(z, thresholds[j]) / gjj;
        let delta = new - old;
        if delta != 0.0 {
            beta[j] = new;
            score.scaled_add(-delta, &gram.g.column(j));
        }
        delta.abs() * gjj.sqrt()
    };

    loop {
        // full sweep
        let mut max_change = 0.0_f64;
        for j in 0..p {
            max_change = max_change.max(update(j, &mut beta, &mut score));
        }
        sweeps += 1;
        if record_trace {
            trace.push(objective(&beta, &score));
        }
        let gap = gap_of(&beta, &score);
        if max_change <= opts.tol_change || gap <= opts.tol_gap * gap_scale {
            let objective = objective(&beta, &score);
            return Ok(LassoFit {
                beta,
                score,
                objective,
                gap,
                sweeps,
                trace,
            });
        }
        if sweeps >= opts.max_sweeps {
            return Err(Error::NotConverged {
                solver: "lasso coordinate descent",
                iterations: sweeps,
                gap,
            });
        }
        // active-set sweeps
        active.clear();
        active.extend((0..p).filter(|&j| beta[j] != 0.0));
        while sweeps < opts.max_sweeps {
            let mut change = 0.0_f64;
            for &j in &active {
                change = change.max(update(j, &mut beta, &mut score));
            }
            sweeps += 1;
            if record_trace {
                trace.push(objective(&beta, &score));
            }
            if change <= opts.tol_change {
                break;
            }
        }
    }
}

/// Plain Lasso: minimizer of `(1/2m)‖y − Xβ‖² + λ‖β‖₁`.
pub fn fit_lasso(d: &Dataset, lambda: f64) -> Result<Array1<f64>> {
    let gram = Gram::new(d.x(), d.y());
    let w = Array1::ones(d.p());
    Ok(solve_gram(&gram, lambda, w.view(), None, &LassoOptions::default(), false)?.beta)
}

/// Largest relative KKT violation of a weighted Lasso solution:
/// `|Xⱼᵀr/m| ≤ λwⱼ` everywhere, with equality `Xⱼᵀr/m = λwⱼ·sign(βⱼ)` on the
/// support. Coordinates with zero weight must have zero score.
pub fn kkt_violation(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    beta: ArrayView1<'_, f64>,
    lambda: f64,
    weights: ArrayView1<'_, f64>,
) -> f64 {
    let m = x.nrows() as f64;
    let r = &y - &x.dot(&beta);
    let score = x.t().dot(&r) / m;
    let mut worst = 0.0_f64;
    for j in 0..beta.len() {
        let t = lambda * weights[j];
        let col_zero = x.column(j).iter().all(|v| *v == 0.0);
        if col_zero {
            continue;
        }
        let v = if beta[j] != 0.0 {
            (score[j] - t * beta[j].signum()).abs()
        } else {
            (score[j].abs() - t).max(0.0)
        };
        worst = worst.max(if t > 0.0 { v / t } else { v });
    }
    worst
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InitialOptions {
    /// Fit on a random half and keep the other half for the correction step.
    pub split: bool,
    pub seed: u64,
    /// Scaled-Lasso base penalty; defaults to `½·√(2.01·log p / m)`.
    pub lambda0: Option<f64>,
}

impl Default for InitialOptions {
    fn default() -> Self {
        InitialOptions {
            split: false,
            seed: 0,
            lambda0: None,
        }
    }
}

/// Initial estimates `β̂`, `σ̂` for the bias correction.
#[derive(Debug, Clone, Serialize)]
pub struct InitialFit {
    #[serde(skip)]
    pub beta_hat: Array1<f64>,
    pub sigma_hat: f64,
    /// Penalty level of the final Lasso solve (`σ̂·λ₀` at the fixed point).
    pub lambda_used: f64,
    pub lambda0: f64,
    /// Column root-mean-squares; the penalty on `β_j` is `λ·w_j`.
    #[serde(skip)]
    pub penalty_weights: Array1<f64>,
    pub split: Option<SampleSplit>,
    pub outer_iterations: usize,
    /// Rows used to fit `β̂`.
    pub fit_rows: usize,
}

impl InitialFit {
    pub fn support_size(&self) -> usize {
        self.beta_hat.iter().filter(|b| **b != 0.0).count()
    }

    /// Relative KKT violation on the fitting sample.
    pub fn kkt_violation(&self, d: &Dataset) -> Result<f64> {
        let fit_data = match &self.split {
            Some(s) => d.select_rows(&s.first_half)?,
            None => d.clone(),
        };
        Ok(kkt_violation(
            fit_data.x(),
            fit_data.y(),
            self.beta_hat.view(),
            self.lambda_used,
            self.penalty_weights.view(),
        ))
    }
}

const SCALED_MAX_OUTER: usize = 50;
const SCALED_REL_TOL: f64 = 1e-5;

/// Multiplier on the universal penalty `√(2.01·log p / m)`.
pub const LAMBDA0_FACTOR: f64 = 0.5;

pub fn default_lambda0(p: usize, m: usize) -> f64 {
    LAMBDA0_FACTOR * (2.01 * (p as f64).ln() / m as f64).sqrt()
}

/// Scaled Lasso: alternates `β̂ = Lasso(σ̂·λ₀)` with
/// `σ̂² = ‖y − Xβ̂‖²/(m − ŝ)`, `ŝ = min(‖β̂‖₀, m − 1)`, until σ̂ is stable.
/// The penalty is standardized (weight `w_j = √(Xⱼᵀ Xⱼ/m)`), which makes the
/// fit equivariant to column rescaling.
pub fn fit_initial(d: &Dataset, opts: &InitialOptions) -> Result<InitialFit> {
    if d.n() < 10 {
        return Err(Error::Invalid(format!("initial fit needs n >= 10, got {}", d.n())));
    }
    let (split, gram) = if opts.split {
        let s = make_split(d.n(), opts.seed)?;
        let half = d.select_rows(&s.first_half)?;
        (Some(s), Gram::new(half.x(), half.y()))
    } else {
        (None, Gram::new(d.x(), d.y()))
    };
    fit_initial_gram(&gram, opts.lambda0, split)
}

/// Scaled Lasso on precomputed sufficient statistics.
pub fn fit_initial_gram(gram: &Gram, lambda0: Option<f64>, split: Option<SampleSplit>) -> Result<InitialFit> {
    let m = gram.m;
    let p = gram.p();
    let lambda0 = lambda0.unwrap_or_else(|| default_lambda0(p, m));
    if !(lambda0 > 0.0) {
        return Err(Error::Invalid(format!("lambda0 must be positive, got {lambda0}")));
    }
    let weights: Array1<f64> = (0..p).map(|j| gram.g[[j, j]].max(0.0).sqrt()).collect();
    let rms_y = gram.yty.sqrt();
    let floor = 1e-6 * rms_y.max(f64::MIN_POSITIVE.sqrt());
    let opts = LassoOptions::default();

    let mut sigma = rms_y.max(floor);
    let mut beta: Option<Array1<f64>> = None;
    let mut history: Vec<f64> = Vec::new();
    for it in 1..=SCALED_MAX_OUTER {
        let lambda = sigma * lambda0;
        let fit = solve_gram(gram, lambda, weights.view(), beta.as_ref(), &opts, false)?;
        let support = fit.beta.iter().filter(|b| **b != 0.0).count();
        let dof = (m - support.min(m - 1)) as f64;
        let rss_total = gram.rss(&fit.beta, &fit.score) * m as f64;
        let next = (rss_total / dof).sqrt().max(floor);
        let stable = (next - sigma).abs() <= SCALED_REL_TOL * sigma;
        // Support-size changes can make the degrees of freedom cycle; settle
        // a cycle at the largest noise level on it.
        let cycle_start = history.iter().position(|h| (next - h).abs() <= SCALED_REL_TOL * sigma);
        if stable || cycle_start.is_some() {
            let sigma_hat = match cycle_start {
                Some(k) if !stable => history[k..].iter().fold(next, |a, b| a.max(*b)),
                _ => next,
            };
            return Ok(InitialFit {
                beta_hat: fit.beta,
                sigma_hat,
                lambda_used: lambda,
                lambda0,
                penalty_weights: weights,
                split,
                outer_iterations: it,
                fit_rows: m,
            });
        }
        log::trace!("scaled lasso it {it}: sigma {sigma:.6} -> {next:.6}, support {support}");
        history.push(sigma);
        sigma = next;
        beta = Some(fit.beta);
    }
    Err(Error::NotConverged {
        solver: "scaled lasso",
        iterations: SCALED_MAX_OUTER,
        gap: f64::NAN,
    })
}
