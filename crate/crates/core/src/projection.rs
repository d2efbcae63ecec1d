//! Bias-correcting projection directions.
//!
//! For a loading vector `v` (zero outside the group) with `s = ‖v‖₂`, the
//! direction solves
//!
//! ```text
//! minimize  uᵀ Σ̂ u
//! s.t.      |⟨w, Σ̂u − v⟩| ≤ s·λ   for every w in the constraint set,
//! ```
//!
//! where the constraint set is the standard basis `e₁..e_p`, augmented with
//! the normalized loading `v/s` for the `Sigma` and `General` modes.
//! Constraints are two-sided.
//!
//! The program is positively homogeneous in `v`, so it is solved for the unit
//! loading `t = v/s` and rescaled. Writing the constraint rows as
//! `H = [e₁ … e_p, t]` and `M = HᵀΣ̂H`, the dual is the ℓ1-penalized quadratic
//!
//! ```text
//! minimize_γ  ½ γᵀMγ − (Hᵀt)ᵀγ + λ‖γ‖₁,        u = s·Hγ,
//! ```
//!
//! whose optimality conditions are exactly the primal constraints
//! `|Hᵀ(Σ̂Hγ − t)| ≤ λ`. It is solved by cyclic coordinate descent, with
//! projected Newton steps on the current sign pattern once the support
//! settles; the primal-dual gap is `2Σ_k(λ|γ_k| − γ_k g_k)` with
//! `g = Hᵀt − Mγ`.

use std::borrow::Cow;

use clap::ValueEnum;
use ndarray::{s, Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::{validate_group, Dataset, GroupSpec, WeightMatrix};
use crate::error::{Error, Result};
use crate::lasso::InitialFit;
use crate::linalg::{self, soft_threshold};

/// Which functional the direction corrects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `β_Gᵀ Σ_{G,G} β_G` with the unknown second-moment block.
    Sigma,
    /// `β_Gᵀ A β_G` for a known positive-definite `A`.
    General,
    /// `‖β_G‖₂²`.
    Identity,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Sigma => "sigma",
            Mode::General => "general",
            Mode::Identity => "identity",
        }
    }

    fn has_extra_direction(&self) -> bool {
        !matches!(self, Mode::Identity)
    }
}

/// The weight of the quadratic functional.
#[derive(Debug, Clone, Copy)]
pub enum Weight<'a> {
    Sigma,
    Matrix(&'a WeightMatrix),
    Identity,
}

impl Weight<'_> {
    pub fn mode(&self) -> Mode {
        match self {
            Weight::Sigma => Mode::Sigma,
            Weight::Matrix(_) => Mode::General,
            Weight::Identity => Mode::Identity,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionProblem<'a> {
    /// Σ̂ = XᵀX/m on the correction sample.
    pub sigma_hat: Cow<'a, Array2<f64>>,
    /// Loading `v`, zero outside the group.
    pub target: Array1<f64>,
    /// `‖v‖₂`.
    pub scale: f64,
    pub lambda_n: f64,
    pub mode: Mode,
}

/// `λ_n = c·√(log p / m)`.
pub fn lambda_n(c_lambda: f64, p: usize, m: usize) -> f64 {
    c_lambda * ((p as f64).ln().max(0.0) / m as f64).sqrt()
}

/// Loading vector for the given weight: `Σ̂_{G,G}β̂_G`, `Aβ̂_G` or `β̂_G`,
/// placed at the group's coordinates.
pub fn loading(
    sigma_hat: &Array2<f64>,
    beta_hat: ArrayView1<'_, f64>,
    g: &GroupSpec,
    weight: Weight<'_>,
) -> Result<Array1<f64>> {
    let p = sigma_hat.nrows();
    validate_group(g, p)?;
    let idx = g.zero_based();
    let beta_g: Array1<f64> = idx.iter().map(|&j| beta_hat[j]).collect();
    let loading_g: Array1<f64> = match weight {
        Weight::Identity => beta_g,
        Weight::Matrix(a) => {
            if a.dim() != g.len() {
                return Err(Error::Dimension(format!(
                    "weight matrix is {0}x{0} but the group has {1} members",
                    a.dim(),
                    g.len()
                )));
            }
            a.matrix().dot(&beta_g)
        }
        Weight::Sigma => idx
            .iter()
            .map(|&i| idx.iter().zip(beta_g.iter()).map(|(&j, b)| sigma_hat[[i, j]] * b).sum())
            .collect(),
    };
    let mut v = Array1::zeros(p);
    for (&j, val) in idx.iter().zip(loading_g.iter()) {
        v[j] = *val;
    }
    Ok(v)
}

impl<'a> ProjectionProblem<'a> {
    /// Assembles the program from a Σ̂ computed on `m` correction rows.
    pub fn new(
        sigma_hat: Cow<'a, Array2<f64>>,
        m: usize,
        beta_hat: ArrayView1<'_, f64>,
        g: &GroupSpec,
        weight: Weight<'_>,
        c_lambda: f64,
    ) -> Result<Self> {
        if !(c_lambda > 0.0) {
            return Err(Error::Invalid(format!("c_lambda must be positive, got {c_lambda}")));
        }
        let p = sigma_hat.nrows();
        if beta_hat.len() != p {
            return Err(Error::Dimension(format!(
                "beta has length {} but Σ̂ is {p}x{p}",
                beta_hat.len()
            )));
        }
        let target = loading(&sigma_hat, beta_hat, g, weight)?;
        let scale = linalg::norm2(target.view());
        Ok(ProjectionProblem {
            sigma_hat,
            target,
            scale,
            lambda_n: lambda_n(c_lambda, p, m),
            mode: weight.mode(),
        })
    }
}

/// Builds the program on the correction sample of `d` (the second half when
/// the fit carries a split).
pub fn build_problem(
    fit: &InitialFit,
    d: &Dataset,
    g: &GroupSpec,
    mode: Mode,
    a: Option<&WeightMatrix>,
    c_lambda: f64,
) -> Result<ProjectionProblem<'static>> {
    let weight = match (mode, a) {
        (Mode::Sigma, _) => Weight::Sigma,
        (Mode::Identity, _) => Weight::Identity,
        (Mode::General, Some(a)) => Weight::Matrix(a),
        (Mode::General, None) => return Err(Error::Invalid("mode general needs a weight matrix".into())),
    };
    let sample = match &fit.split {
        Some(s) => d.select_rows(&s.second_half)?,
        None => d.clone(),
    };
    let sigma_hat = linalg::second_moment(sample.x());
    ProjectionProblem::new(
        Cow::Owned(sigma_hat),
        sample.n(),
        fit.beta_hat.view(),
        g,
        weight,
        c_lambda,
    )
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionOptions {
    /// Constraint slack tolerated, relative to the bound `s·λ`.
    pub feas_tol: f64,
    /// Primal-dual gap tolerated, relative to `uᵀΣ̂u`.
    pub opt_tol: f64,
    pub max_sweeps: usize,
    /// Stop when the dual objective changes by less than this (relative)
    /// over a full sweep and the certificates hold.
    pub dual_rel_change: f64,
    pub escalation_factor: f64,
    pub max_escalations: usize,
    /// `uᵀΣ̂u/s²` beyond which the dual is deemed unbounded at the current λ.
    pub divergence_cap: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            feas_tol: 1e-6,
            opt_tol: 1e-6,
            max_sweeps: 50_000,
            dual_rel_change: 1e-9,
            escalation_factor: 1.5,
            max_escalations: 10,
            divergence_cap: 1e8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionSolution {
    #[serde(skip)]
    pub u: Array1<f64>,
    /// `uᵀΣ̂u`.
    pub quad_value: f64,
    /// Largest constraint excess over `s·λ_effective` (0 when feasible).
    pub max_violation: f64,
    pub lambda_effective: f64,
    pub escalations: usize,
    pub iterations: usize,
    /// Primal-dual gap in the units of `uᵀΣ̂u`.
    pub gap: f64,
}

pub fn solve_projection(prob: &ProjectionProblem<'_>) -> Result<ProjectionSolution> {
    solve_projection_with(prob, &ProjectionOptions::default())
}

pub fn solve_projection_with(prob: &ProjectionProblem<'_>, opts: &ProjectionOptions) -> Result<ProjectionSolution> {
    let p = prob.sigma_hat.nrows();
    if !(prob.lambda_n > 0.0) {
        return Err(Error::Invalid(format!(
            "lambda_n must be positive, got {}",
            prob.lambda_n
        )));
    }
    if prob.scale == 0.0 {
        return Ok(ProjectionSolution {
            u: Array1::zeros(p),
            quad_value: 0.0,
            max_violation: 0.0,
            lambda_effective: prob.lambda_n,
            escalations: 0,
            iterations: 0,
            gap: 0.0,
        });
    }
    let unit = &prob.target / prob.scale;
    let extra = prob.mode.has_extra_direction();
    let mut lambda = prob.lambda_n;
    let mut total_sweeps = 0;
    let mut last_violation = f64::INFINITY;
    for escalation in 0..=opts.max_escalations {
        match dual_descent(&prob.sigma_hat, unit.view(), extra, lambda, opts) {
            DualOutcome::Solved { gamma, sweeps, gap } => {
                total_sweeps += sweeps;
                let mut u = gamma.slice(s![..p]).to_owned();
                if extra {
                    u.scaled_add(gamma[p], &unit);
                }
                u *= prob.scale;
                let su = prob.sigma_hat.dot(&u);
                let quad_value = u.dot(&su).max(0.0);
                let resid = &su - &prob.target;
                let bound = prob.scale * lambda;
                let mut worst = linalg::norm_inf(resid.view());
                if extra {
                    worst = worst.max(unit.dot(&resid).abs());
                }
                return Ok(ProjectionSolution {
                    u,
                    quad_value,
                    max_violation: (worst - bound).max(0.0),
                    lambda_effective: lambda,
                    escalations: escalation,
                    iterations: total_sweeps,
                    gap: gap * prob.scale * prob.scale,
                });
            }
            DualOutcome::Infeasible { sweeps, violation } => {
                total_sweeps += sweeps;
                last_violation = violation * prob.scale;
                log::debug!("projection infeasible at lambda {lambda:.4e} (violation {violation:.3e}), escalating");
                lambda *= opts.escalation_factor;
            }
        }
    }
    Err(Error::Infeasible {
        lambda: lambda / opts.escalation_factor,
        violation: last_violation,
    })
}

enum DualOutcome {
    Solved {
        gamma: Array1<f64>,
        sweeps: usize,
        gap: f64,
    },
    Infeasible {
        sweeps: usize,
        violation: f64,
    },
}

/// `M = HᵀΣ̂H` for `H = [I, t]` (or `H = I`), accessed without forming it.
struct DualOperator<'a> {
    sigma: &'a Array2<f64>,
    p: usize,
    extra: bool,
    sig_t: Array1<f64>,
    t_sig_t: f64,
    /// `c = Hᵀt`.
    c: Array1<f64>,
}

impl<'a> DualOperator<'a> {
    fn new(sigma: &'a Array2<f64>, t: ArrayView1<'_, f64>, extra: bool) -> Self {
        let p = sigma.nrows();
        let mut c = Array1::zeros(if extra { p + 1 } else { p });
        c.slice_mut(s![..p]).assign(&t);
        let (sig_t, t_sig_t) = if extra {
            let st = sigma.dot(&t);
            let tst = t.dot(&st);
            c[p] = t.dot(&t);
            (st, tst)
        } else {
            (Array1::zeros(0), 0.0)
        };
        DualOperator {
            sigma,
            p,
            extra,
            sig_t,
            t_sig_t,
            c,
        }
    }

    fn dim(&self) -> usize {
        self.c.len()
    }

    fn entry(&self, i: usize, k: usize) -> f64 {
        let p = self.p;
        match (i < p, k < p) {
            (true, true) => self.sigma[[i, k]],
            (true, false) => self.sig_t[i],
            (false, true) => self.sig_t[k],
            (false, false) => self.t_sig_t,
        }
    }

    fn diag(&self, k: usize) -> f64 {
        self.entry(k, k)
    }

    /// `grad −= delta·M[:, k]`.
    fn subtract_column(&self, k: usize, delta: f64, grad: &mut Array1<f64>) {
        let p = self.p;
        if k < p {
            grad.slice_mut(s![..p]).scaled_add(-delta, &self.sigma.column(k));
            if self.extra {
                grad[p] -= delta * self.sig_t[k];
            }
        } else {
            grad.slice_mut(s![..p]).scaled_add(-delta, &self.sig_t);
            grad[p] -= delta * self.t_sig_t;
        }
    }

    /// `c − Mγ` from scratch.
    fn gradient(&self, gamma: &Array1<f64>) -> Array1<f64> {
        let mut grad = self.c.clone();
        for (k, &gk) in gamma.iter().enumerate() {
            if gk != 0.0 {
                self.subtract_column(k, gk, &mut grad);
            }
        }
        grad
    }
}

/// `F(γ) = ½γᵀMγ − cᵀγ + μ‖γ‖₁` given `g = c − Mγ`.
fn dual_objective(op: &DualOperator<'_>, mu: f64, gamma: &Array1<f64>, grad: &Array1<f64>) -> f64 {
    let cg = gamma.dot(&op.c);
    0.5 * (cg - gamma.dot(grad)) - cg + mu * gamma.iter().map(|v| v.abs()).sum::<f64>()
}

/// Newton step on the orthant fixed by the signs of the nonzero coordinates.
/// The projected full step is taken when it lowers the objective, otherwise
/// the step is cut at the first sign change. Updates `grad`. Returns `None`
/// when `M` restricted to the support is singular, otherwise whether the
/// sign pattern survived unchanged.
fn orthant_step(op: &DualOperator<'_>, mu: f64, gamma: &mut Array1<f64>, grad: &mut Array1<f64>) -> Option<bool> {
    let support: Vec<usize> = (0..op.dim()).filter(|&k| gamma[k] != 0.0).collect();
    let k = support.len();
    if k == 0 {
        return Some(true);
    }
    let m_aa = Array2::from_shape_fn((k, k), |(a, b)| op.entry(support[a], support[b]));
    let l = linalg::cholesky(m_aa.view())?;
    let rhs: Array1<f64> = support.iter().map(|&j| op.c[j] - mu * gamma[j].signum()).collect();
    let target = linalg::cholesky_solve(&l, &rhs);
    if !target.iter().all(|v| v.is_finite()) {
        return None;
    }
    let consistent = support
        .iter()
        .zip(target.iter())
        .all(|(&j, x)| x * gamma[j].signum() > 0.0);

    let current = dual_objective(op, mu, gamma, grad);
    let mut projected = gamma.clone();
    for (&j, x) in support.iter().zip(target.iter()) {
        projected[j] = if x * gamma[j].signum() > 0.0 { *x } else { 0.0 };
    }
    let projected_grad = op.gradient(&projected);
    if consistent || dual_objective(op, mu, &projected, &projected_grad) < current {
        *gamma = projected;
        *grad = projected_grad;
        return Some(consistent);
    }

    let mut step = 1.0_f64;
    let mut blocking = 0;
    for (a, &j) in support.iter().enumerate() {
        if target[a] * gamma[j].signum() <= 0.0 {
            let frac = gamma[j] / (gamma[j] - target[a]);
            if frac < step {
                step = frac;
                blocking = j;
            }
        }
    }
    for (a, &j) in support.iter().enumerate() {
        let next = gamma[j] + step * (target[a] - gamma[j]);
        gamma[j] = if next * gamma[j] > 0.0 { next } else { 0.0 };
    }
    gamma[blocking] = 0.0;
    *grad = op.gradient(gamma);
    Some(false)
}

const ORTHANT_STEPS: usize = 100;
const FALLBACK_SWEEPS: usize = 1_000;

/// Minimizes the dual for the unit loading `t`: cyclic coordinate descent
/// to find the sign pattern, exact orthant steps to finish it.
fn dual_descent(
    sigma: &Array2<f64>,
    t: ArrayView1<'_, f64>,
    extra: bool,
    mu: f64,
    opts: &ProjectionOptions,
) -> DualOutcome {
    let op = DualOperator::new(sigma, t, extra);
    let dim = op.dim();
    let mut grad = op.c.clone();

    // Coordinates whose M-row vanishes cannot move; their constraint is fixed.
    let mut fixed_violation = 0.0_f64;
    for k in 0..dim {
        if op.diag(k) <= 0.0 {
            fixed_violation = fixed_violation.max(grad[k].abs() - mu);
        }
    }
    if fixed_violation > opts.feas_tol * mu {
        return DualOutcome::Infeasible {
            sweeps: 0,
            violation: fixed_violation,
        };
    }

    let max_diag = (0..dim)
        .map(|k| op.diag(k))
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let inner_tol = 0.1 * opts.feas_tol * mu / max_diag.sqrt();
    let mut gamma = Array1::<f64>::zeros(dim);

    let update = |k: usize, gamma: &mut Array1<f64>, grad: &mut Array1<f64>| -> f64 {
        let mkk = op.diag(k);
        if mkk <= 0.0 {
            return 0.0;
        }
        let old = gamma[k];
        let new = soft_threshold(grad[k] + mkk * old, mu) / mkk;
        let delta = new - old;
        if delta == 0.0 {
            return 0.0;
        }
        gamma[k] = new;
        op.subtract_column(k, delta, grad);
        delta.abs() * mkk.sqrt()
    };

    let c_dot = |gamma: &Array1<f64>| gamma.dot(&op.c);

    let mut sweeps = 0usize;
    let mut prev_dual = f64::NAN;
    loop {
        for k in 0..dim {
            update(k, &mut gamma, &mut grad);
        }
        sweeps += 1;

        let mut violation = 0.0_f64;
        let mut gap = 0.0;
        let mut l1 = 0.0;
        for k in 0..dim {
            violation = violation.max(grad[k].abs() - mu);
            gap += mu * gamma[k].abs() - gamma[k] * grad[k];
            l1 += gamma[k].abs();
        }
        gap *= 2.0;
        // uᵀΣ̂u = γᵀMγ = γᵀ(c − g)
        let quad = (c_dot(&gamma) - gamma.dot(&grad)).max(0.0);
        // −2F(γ), a lower bound on the optimal uᵀΣ̂u
        let dual = -quad + 2.0 * c_dot(&gamma) - 2.0 * mu * l1;
        log::trace!("dual sweep {sweeps}: dual {dual:.6e} quad {quad:.6e} gap {gap:.3e} violation {violation:.3e}");
        let feasible = violation <= opts.feas_tol * mu;
        if feasible && gap <= opts.opt_tol * quad.max(f64::MIN_POSITIVE) {
            return DualOutcome::Solved { gamma, sweeps, gap };
        }
        if feasible
            && prev_dual.is_finite()
            && (dual - prev_dual).abs() <= opts.dual_rel_change * dual.abs().max(f64::MIN_POSITIVE)
        {
            return DualOutcome::Solved { gamma, sweeps, gap };
        }
        if dual > opts.divergence_cap || sweeps >= opts.max_sweeps {
            return DualOutcome::Infeasible { sweeps, violation };
        }
        prev_dual = dual;

        let mut singular = false;
        for _ in 0..ORTHANT_STEPS {
            sweeps += 1;
            match orthant_step(&op, mu, &mut gamma, &mut grad) {
                Some(true) => break,
                Some(false) => {}
                None => {
                    singular = true;
                    break;
                }
            }
        }
        if singular {
            let active: Vec<usize> = (0..dim).filter(|&k| gamma[k] != 0.0).collect();
            for _ in 0..FALLBACK_SWEEPS {
                let mut change = 0.0_f64;
                for &k in &active {
                    change = change.max(update(k, &mut gamma, &mut grad));
                }
                sweeps += 1;
                if change <= inner_tol || sweeps >= opts.max_sweeps {
                    break;
                }
            }
        }
    }
}
