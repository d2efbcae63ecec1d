//! Property suites over seeded random instances. Each returns the list of
//! failing instances (empty on success) so callers can assert or report.

use std::borrow::Cow;

use ndarray::{Array1, Array2};
use rand::Rng;

use quadgroup::data::{Dataset, GroupSpec};
use quadgroup::hier::{build_tree, run_hierarchy_with, Linkage};
use quadgroup::inference::{estimate, CorrectionSample, EstimateOptions};
use quadgroup::lasso::{fit_initial, InitialOptions};
use quadgroup::projection::{solve_projection, Mode, ProjectionProblem, Weight};
use quadgroup::sim::{run_scenario, MethodsConfig, Scenario, ScenarioConfig, ScenarioKind};

use super::{gaussian_matrix, gaussian_vector, max_rel_diff, projection_oracle, random_sigma, rng};

pub const KKT_TOL: f64 = 1e-4;
pub const FEAS_TOL: f64 = 1e-6;
pub const ORACLE_REL: f64 = 1e-4;

/// Sparse-signal regression instance with `n` rows and `p` columns.
pub fn random_dataset(seed: u64, n: usize, p: usize) -> Dataset {
    let mut r = rng(seed);
    let x = gaussian_matrix(&mut r, n, p);
    let mut beta = Array1::zeros(p);
    for j in 0..p.min(3) {
        beta[j] = r.random_range(-1.0..1.0);
    }
    let y = x.dot(&beta) + gaussian_vector(&mut r, n);
    Dataset::new(x, y).unwrap()
}

fn random_group(r: &mut impl Rng, p: usize) -> GroupSpec {
    let k = r.random_range(1..=p.min(8));
    let start = r.random_range(1..=p - k + 1);
    GroupSpec::range(start, start + k - 1).unwrap()
}

pub fn lasso_kkt(count: u64) -> Vec<String> {
    let mut bad = Vec::new();
    for seed in 0..count {
        let mut r = rng(1000 + seed);
        let n = r.random_range(20..80);
        let p = r.random_range(5..120);
        let d = random_dataset(1000 + seed, n, p);
        let split = seed % 4 == 0;
        let fit = match fit_initial(
            &d,
            &InitialOptions {
                split,
                seed,
                lambda0: None,
            },
        ) {
            Ok(f) => f,
            Err(e) => {
                bad.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let v = fit.kkt_violation(&d).unwrap();
        if !(v <= KKT_TOL) || !(fit.sigma_hat > 0.0) {
            bad.push(format!("seed {seed}: kkt {v:.3e}, sigma {}", fit.sigma_hat));
        }
    }
    bad
}

pub fn projection_feasibility(count: u64) -> Vec<String> {
    let mut bad = Vec::new();
    for seed in 0..count {
        let mut r = rng(2000 + seed);
        let n = r.random_range(30..120);
        let p = r.random_range(5..150);
        let d = random_dataset(2000 + seed, n, p);
        let fit = fit_initial(&d, &InitialOptions::default()).unwrap();
        let sample = CorrectionSample::new(&fit, &d).unwrap();
        let g = random_group(&mut r, p);
        let mode = [Mode::Sigma, Mode::Identity][seed as usize % 2];
        let weight = if mode == Mode::Sigma {
            Weight::Sigma
        } else {
            Weight::Identity
        };
        let c = [0.5, 1.0, 2.0][seed as usize % 3];
        let beta = if fit.beta_hat.iter().any(|b| *b != 0.0) {
            fit.beta_hat.clone()
        } else {
            gaussian_vector(&mut r, p)
        };
        let prob = ProjectionProblem::new(Cow::Borrowed(sample.sigma_hat()), n, beta.view(), &g, weight, c).unwrap();
        let sol = match solve_projection(&prob) {
            Ok(s) => s,
            Err(e) => {
                bad.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        // recompute the certificates from û alone
        let resid = sample.sigma_hat().dot(&sol.u) - &prob.target;
        let bound = prob.scale * sol.lambda_effective * (1.0 + FEAS_TOL);
        let basis = resid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let extra = if mode == Mode::Sigma && prob.scale > 0.0 {
            (prob.target.dot(&resid) / prob.scale).abs()
        } else {
            0.0
        };
        if basis > bound + 1e-12 || extra > bound + 1e-12 {
            bad.push(format!(
                "seed {seed}: basis {basis:.3e} extra {extra:.3e} bound {bound:.3e}"
            ));
        }
    }
    bad
}

pub fn projection_vs_oracle(seeds: u64) -> Vec<String> {
    let mut bad = Vec::new();
    for seed in 0..seeds {
        let mut r = rng(3000 + seed);
        let p = r.random_range(2..=5);
        let sigma = random_sigma(&mut r, p, 3 * p);
        let v = gaussian_vector(&mut r, p);
        let scale = v.dot(&v).sqrt();
        let lambda = r.random_range(0.02..0.6);
        let mode = if seed % 2 == 0 { Mode::Sigma } else { Mode::Identity };
        let prob = ProjectionProblem {
            sigma_hat: Cow::Owned(sigma.clone()),
            target: v.clone(),
            scale,
            lambda_n: lambda,
            mode,
        };
        let sol = solve_projection(&prob).unwrap();
        let want = projection_oracle(&sigma, &v, scale * sol.lambda_effective, mode == Mode::Sigma);
        let want_quad = want.dot(&sigma.dot(&want));
        let rel = (sol.quad_value - want_quad).abs() / want_quad.max(1e-12);
        if rel > ORACLE_REL {
            bad.push(format!(
                "seed {seed}: quad {} vs oracle {want_quad} (rel {rel:.2e}, u diff {:.2e})",
                sol.quad_value,
                max_rel_diff(&sol.u, &want)
            ));
        }
    }
    bad
}

/// Checks `p_adjusted` never decreases from parent to child, pruned
/// subtrees are never visited, and findings form the significant frontier.
pub fn adjusted_monotonicity(count: u64) -> Vec<String> {
    let mut bad = Vec::new();
    for seed in 0..count {
        let mut r = rng(4000 + seed);
        let p = r.random_range(3..40);
        let n = r.random_range(10..40);
        let d = random_dataset(4000 + seed, n, p);
        let linkage = if seed % 2 == 0 {
            Linkage::Complete
        } else {
            Linkage::Average
        };
        let tree = build_tree(&d, linkage).unwrap();
        let salt: u64 = r.random();
        let res = run_hierarchy_with(&tree, 0.05, |g| {
            // deterministic pseudo-random p-value per group, small for most
            let h = g
                .indices()
                .iter()
                .fold(salt, |h, &i| h.rotate_left(7) ^ (i as u64).wrapping_mul(0x9e37_79b9));
            Ok(((h % 1000) as f64 / 1000.0).powi(4))
        })
        .unwrap();
        let by_id: std::collections::HashMap<usize, &quadgroup::hier::TestedNode> =
            res.tested.iter().map(|t| (t.id, t)).collect();
        for t in &res.tested {
            let node = tree.node(t.id);
            if let Some(parent) = node.parent {
                match by_id.get(&parent) {
                    Some(pt) if pt.significant => {
                        if t.p_adjusted < pt.p_adjusted {
                            bad.push(format!("seed {seed}: node {} adjusted p decreased", t.id));
                        }
                    }
                    _ => bad.push(format!("seed {seed}: node {} tested under a pruned parent", t.id)),
                }
            }
            let sig_children = node
                .children
                .iter()
                .filter(|c| by_id.get(c).is_some_and(|ct| ct.significant))
                .count();
            let is_finding = res.findings.iter().any(|f| f.group == t.group);
            if is_finding != (t.significant && sig_children == 0) {
                bad.push(format!("seed {seed}: node {} frontier mismatch", t.id));
            }
        }
        if res.findings.iter().any(|f| f.p_adjusted > res.alpha) {
            bad.push(format!("seed {seed}: finding above alpha"));
        }
    }
    bad
}

pub fn determinism() -> Vec<String> {
    let mut bad = Vec::new();
    for kind in [ScenarioKind::Dense, ScenarioKind::Highcorr, ScenarioKind::Hier1] {
        let mut cfg = ScenarioConfig::new(kind, 60, 0.3, 4, 11);
        cfg.p = if kind == ScenarioKind::Dense { 200 } else { 40 };
        let sc = Scenario::new(cfg).unwrap();
        let a = serde_json::to_string(&run_scenario(&sc, &MethodsConfig::default()).unwrap()).unwrap();
        let b = serde_json::to_string(&run_scenario(&sc, &MethodsConfig::default()).unwrap()).unwrap();
        if a != b {
            bad.push(format!("{}: reports differ", kind.as_str()));
        }
    }
    bad
}

pub fn additivity(count: u64) -> Vec<String> {
    let mut bad = Vec::new();
    for seed in 0..count {
        let mut r = rng(5000 + seed);
        let n = r.random_range(20..60);
        let p = r.random_range(3..60);
        let d = random_dataset(5000 + seed, n, p);
        let fit = fit_initial(&d, &InitialOptions::default()).unwrap();
        let sample = CorrectionSample::new(&fit, &d).unwrap();
        let g = random_group(&mut r, p);
        let a = Array2::<f64>::eye(g.len()) * 2.0;
        let wm = quadgroup::data::WeightMatrix::new(a).unwrap();
        for weight in [Weight::Sigma, Weight::Identity, Weight::Matrix(&wm)] {
            let e = estimate(&sample, &fit, &g, weight, &EstimateOptions::default()).unwrap();
            if e.q_hat != e.plug_in + e.correction {
                bad.push(format!(
                    "seed {seed} {:?}: {} != {} + {}",
                    e.mode, e.q_hat, e.plug_in, e.correction
                ));
            }
        }
    }
    bad
}
