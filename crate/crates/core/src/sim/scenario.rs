use clap::ValueEnum;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupSpec};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Toeplitz 0.6^|i−j| design, β_j = δ on 25..=50, tested group 30..=200.
    Dense,
    /// Equicorrelated (0.8) first five covariates, β₁ = β₃ = δ, group 1..=5.
    Highcorr,
    /// Ten 2-blocks at 0.7 among the first 20 covariates, actives 1,3,…,19.
    Hier1,
    /// Ten blocks of p/10 at 0.7, actives at the first index of each block.
    Hier2,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Dense => "dense",
            ScenarioKind::Highcorr => "highcorr",
            ScenarioKind::Hier1 => "hier1",
            ScenarioKind::Hier2 => "hier2",
        }
    }

    pub fn is_hierarchical(&self) -> bool {
        matches!(self, ScenarioKind::Hier1 | ScenarioKind::Hier2)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub n: usize,
    pub p: usize,
    pub delta: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Active coefficient for the hierarchical settings.
    pub hier_beta: f64,
    pub noise_sd: f64,
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind, n: usize, delta: f64, replicates: usize, seed: u64) -> Self {
        ScenarioConfig {
            kind,
            n,
            p: 500,
            delta,
            replicates,
            seed,
            hier_beta: 1.0,
            noise_sd: 1.0,
        }
    }
}

/// A fully specified data-generating process.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub beta: Array1<f64>,
    pub sigma: Array2<f64>,
    chol: Array2<f64>,
    /// Tested group (dense, highcorr).
    pub group: Option<GroupSpec>,
    /// Active set.
    pub s0: GroupSpec,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TrueValues {
    pub q_sigma: f64,
    pub q_identity: f64,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        let p = config.p;
        if config.n < 10 {
            return Err(Error::Invalid(format!("scenario needs n >= 10, got {}", config.n)));
        }
        if !(config.noise_sd >= 0.0) || !config.delta.is_finite() || !config.hier_beta.is_finite() {
            return Err(Error::Invalid("scenario parameters must be finite".into()));
        }
        let (sigma, beta, group, s0) = match config.kind {
            ScenarioKind::Dense => {
                if p < 200 {
                    return Err(Error::Invalid(format!("dense scenario needs p >= 200, got {p}")));
                }
                let sigma = Array2::from_shape_fn((p, p), |(i, j)| 0.6f64.powi(i.abs_diff(j) as i32));
                let mut beta = Array1::zeros(p);
                for j in 24..50 {
                    beta[j] = config.delta;
                }
                (sigma, beta, Some(GroupSpec::range(30, 200)?), GroupSpec::range(25, 50)?)
            }
            ScenarioKind::Highcorr => {
                if p < 5 {
                    return Err(Error::Invalid(format!("highcorr scenario needs p >= 5, got {p}")));
                }
                let sigma = Array2::from_shape_fn((p, p), |(i, j)| {
                    if i == j {
                        1.0
                    } else if i < 5 && j < 5 {
                        0.8
                    } else {
                        0.6f64.powi(i.abs_diff(j) as i32)
                    }
                });
                let mut beta = Array1::zeros(p);
                beta[0] = config.delta;
                beta[2] = config.delta;
                (sigma, beta, Some(GroupSpec::range(1, 5)?), GroupSpec::new(vec![1, 3])?)
            }
            ScenarioKind::Hier1 => {
                if p < 20 {
                    return Err(Error::Invalid(format!("hier1 scenario needs p >= 20, got {p}")));
                }
                let mut sigma = Array2::eye(p);
                for b in 0..10 {
                    sigma[[2 * b, 2 * b + 1]] = 0.7;
                    sigma[[2 * b + 1, 2 * b]] = 0.7;
                }
                let s0: Vec<usize> = (0..10).map(|b| 2 * b + 1).collect();
                let mut beta = Array1::zeros(p);
                for &j in &s0 {
                    beta[j - 1] = config.hier_beta;
                }
                (sigma, beta, None, GroupSpec::new(s0)?)
            }
            ScenarioKind::Hier2 => {
                if p < 20 || p % 10 != 0 {
                    return Err(Error::Invalid(format!(
                        "hier2 scenario needs p a multiple of 10 and at least 20, got {p}"
                    )));
                }
                let block = p / 10;
                let sigma = Array2::from_shape_fn((p, p), |(i, j)| {
                    if i == j {
                        1.0
                    } else if i / block == j / block {
                        0.7
                    } else {
                        0.0
                    }
                });
                let s0: Vec<usize> = (0..10).map(|b| b * block + 1).collect();
                let mut beta = Array1::zeros(p);
                for &j in &s0 {
                    beta[j - 1] = config.hier_beta;
                }
                (sigma, beta, None, GroupSpec::new(s0)?)
            }
        };
        let chol = linalg::cholesky(sigma.view())
            .ok_or_else(|| Error::Invalid(format!("{} covariance is not positive definite", config.kind.as_str())))?;
        Ok(Scenario {
            config,
            beta,
            sigma,
            chol,
            group,
            s0,
        })
    }

    /// Exact `β_GᵀΣ_{G,G}β_G` and `‖β_G‖²` for the tested group.
    pub fn true_values(&self) -> Option<TrueValues> {
        let g = self.group.as_ref()?;
        Some(true_values_for(&self.beta, &self.sigma, g))
    }

    /// Replicate `rep` of the design. Depends only on `(seed, rep)`.
    pub fn generate(&self, rep: u64) -> Result<Dataset> {
        let (n, p) = (self.config.n, self.config.p);
        let mut rng = rng::stream(self.config.seed, rep, Role::Design);
        let z = Array2::from_shape_simple_fn((n, p), || rng.sample::<f64, _>(StandardNormal));
        // rows z_i ~ N(0, I) map to L z_i ~ N(0, Σ)
        let x = z.dot(&self.chol.t());
        let mut rng = rng::stream(self.config.seed, rep, Role::Noise);
        let noise = Array1::from_shape_simple_fn(n, || rng.sample::<f64, _>(StandardNormal));
        let y = x.dot(&self.beta) + noise * self.config.noise_sd;
        Dataset::new(x, y)
    }
}

pub fn true_values_for(beta: &Array1<f64>, sigma: &Array2<f64>, g: &GroupSpec) -> TrueValues {
    let idx = g.zero_based();
    let mut q_sigma = 0.0;
    let mut q_identity = 0.0;
    for &i in &idx {
        q_identity += beta[i] * beta[i];
        for &j in &idx {
            q_sigma += beta[i] * sigma[[i, j]] * beta[j];
        }
    }
    TrueValues { q_sigma, q_identity }
}
