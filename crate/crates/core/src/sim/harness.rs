use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupSpec};
use crate::error::{Error, Result};
use crate::hier::{build_tree, run_hierarchy_fitted, HierEngine, Linkage};
use crate::inference::{
    confidence_interval, estimate, test_group, CorrectionSample, EstimateOptions, QuadEstimate, DEFAULT_C_LAMBDA,
};
use crate::lasso::{fit_initial, InitialOptions};
use crate::projection::{Mode, Weight};

use super::scenario::{Scenario, ScenarioConfig, TrueValues};

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_RATE: f64 = 0.02;

/// Published reference values for the dense design at δ = 0.06.
pub const DENSE_REFERENCE_TRUTH: TrueValues = TrueValues {
    q_sigma: 0.275,
    q_identity: 0.076,
};

/// Inference settings applied to every replicate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MethodsConfig {
    pub alpha: f64,
    pub level: f64,
    pub c_lambda: f64,
    pub lambda0: Option<f64>,
    pub split: bool,
    pub linkage: Linkage,
    /// Group test used inside the hierarchy.
    pub hier_mode: Mode,
    pub hier_tau: f64,
}

impl Default for MethodsConfig {
    fn default() -> Self {
        MethodsConfig {
            alpha: 0.05,
            level: 0.95,
            c_lambda: DEFAULT_C_LAMBDA,
            lambda0: None,
            split: false,
            linkage: Linkage::Complete,
            hier_mode: Mode::Sigma,
            hier_tau: 1.0,
        }
    }
}

/// An empirical proportion with its Monte Carlo standard error `√(r(1−r)/R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub mc_stderr: f64,
}

impl Rate {
    fn from_count(hits: usize, total: usize) -> Rate {
        let r = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
        Rate {
            value: r,
            mc_stderr: if total == 0 {
                0.0
            } else {
                (r * (1.0 - r) / total as f64).sqrt()
            },
        }
    }
}

/// Metrics for one estimator family (`identity` or `sigma`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub truth: f64,
    /// Rejection rates of the tests with τ = 0 and τ = 1.
    pub err_tau0: Rate,
    pub err_tau1: Rate,
    pub coverage_tau0: Rate,
    pub coverage_tau1: Rate,
    /// `mean |Q̂ − Q|`.
    pub mean_abs_error: f64,
    /// `|mean(Q̂) − Q|`.
    pub abs_mean_bias: f64,
    pub plug_in_mean_abs_error: f64,
    pub plug_in_abs_mean_bias: f64,
    /// Mean and standard deviation of `(Q̂ − Q)/√V̂(τ=0)`.
    pub standardized_mean: f64,
    pub standardized_sd: f64,
    pub mean_lambda_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierSummary {
    /// Share of replicates with at least one finding free of active variables.
    pub fwer: Rate,
    pub adaptive_power: f64,
    pub avg_count: f64,
    pub avg_size: f64,
    pub median_size: f64,
    pub hier_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: String,
    pub n: usize,
    pub p: usize,
    pub delta: f64,
    pub seed: u64,
    pub replicates: usize,
    pub completed: usize,
    /// Indices of replicates that failed and were excluded.
    pub failed: Vec<usize>,
    pub truth: Option<TrueValues>,
    /// Published reference values, where they differ from `truth`.
    pub reference_truth: Option<TrueValues>,
    pub modes: Vec<ModeSummary>,
    pub hier: Option<HierSummary>,
}

impl SimReport {
    pub fn mode(&self, mode: Mode) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

/// `(1/|S₀|)·Σ 1/|C|` over findings `C` containing an active index.
pub fn adaptive_power(findings: &[GroupSpec], s0: &GroupSpec) -> f64 {
    if s0.is_empty() {
        return 0.0;
    }
    let total: f64 = findings
        .iter()
        .filter(|c| c.indices().iter().any(|&j| s0.contains(j)))
        .map(|c| 1.0 / c.len() as f64)
        .sum();
    total / s0.len() as f64
}

#[derive(Debug, Clone)]
struct ModeOutcome {
    q_hat: f64,
    plug_in: f64,
    reject: [bool; 2],
    covers: [bool; 2],
    standardized: f64,
    lambda_ratio: f64,
}

#[derive(Debug, Clone)]
struct HierOutcome {
    false_detection: bool,
    power: f64,
    sizes: Vec<usize>,
}

#[derive(Debug, Clone)]
enum Outcome {
    Group(Vec<ModeOutcome>),
    Hier(HierOutcome),
}

const MODES: [Mode; 2] = [Mode::Identity, Mode::Sigma];

fn mode_truth(t: &TrueValues, mode: Mode) -> f64 {
    match mode {
        Mode::Identity => t.q_identity,
        _ => t.q_sigma,
    }
}

fn replicate(sc: &Scenario, cfg: &MethodsConfig, rep: usize) -> Result<Outcome> {
    let d = sc.generate(rep as u64)?;
    let initial = InitialOptions {
        split: cfg.split,
        seed: sc.config.seed ^ (rep as u64).rotate_left(32),
        lambda0: cfg.lambda0,
    };
    let fit = fit_initial(&d, &initial)?;
    match (&sc.group, sc.true_values()) {
        (Some(g), Some(truth)) => group_outcome(sc, cfg, &d, &fit, g, &truth).map(Outcome::Group),
        _ => hier_outcome(sc, cfg, &d, &fit, initial).map(Outcome::Hier),
    }
}

fn group_outcome(
    sc: &Scenario,
    cfg: &MethodsConfig,
    d: &Dataset,
    fit: &crate::lasso::InitialFit,
    g: &GroupSpec,
    truth: &TrueValues,
) -> Result<Vec<ModeOutcome>> {
    let sample = CorrectionSample::new(fit, d)?;
    let opts = EstimateOptions {
        tau: 1.0,
        c_lambda: cfg.c_lambda,
        ..Default::default()
    };
    let lambda_n = crate::projection::lambda_n(cfg.c_lambda, sc.config.p, sample.m());
    MODES
        .iter()
        .map(|&mode| {
            let weight = if mode == Mode::Identity {
                Weight::Identity
            } else {
                Weight::Sigma
            };
            let est1 = estimate(&sample, fit, g, weight, &opts)?;
            let est0 = est1.with_tau(0.0)?;
            let t = mode_truth(truth, mode);
            let eval = |e: &QuadEstimate| -> Result<(bool, bool)> {
                Ok((
                    test_group(e, cfg.alpha)?.reject,
                    confidence_interval(e, cfg.level, false)?.contains(t),
                ))
            };
            let (r0, c0) = eval(&est0)?;
            let (r1, c1) = eval(&est1)?;
            Ok(ModeOutcome {
                q_hat: est1.q_hat,
                plug_in: est1.plug_in,
                reject: [r0, r1],
                covers: [c0, c1],
                standardized: (est1.q_hat - t) / est0.sd(),
                lambda_ratio: est1.lambda_effective / lambda_n,
            })
        })
        .collect()
}

fn hier_outcome(
    sc: &Scenario,
    cfg: &MethodsConfig,
    d: &Dataset,
    fit: &crate::lasso::InitialFit,
    initial: InitialOptions,
) -> Result<HierOutcome> {
    let tree = build_tree(d, cfg.linkage)?;
    let engine = HierEngine {
        mode: cfg.hier_mode,
        tau: cfg.hier_tau,
        c_lambda: cfg.c_lambda,
        initial,
    };
    let res = run_hierarchy_fitted(d, fit, &tree, cfg.alpha, &engine)?;
    let findings = res.finding_groups();
    let false_detection = findings.iter().any(|c| !c.indices().iter().any(|&j| sc.s0.contains(j)));
    Ok(HierOutcome {
        false_detection,
        power: adaptive_power(&findings, &sc.s0),
        sizes: findings.iter().map(|c| c.len()).collect(),
    })
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let k = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[k]
    } else {
        0.5 * (xs[k - 1] + xs[k])
    }
}

fn summarize_mode(mode: Mode, truth: f64, outs: &[&ModeOutcome]) -> ModeSummary {
    let r = outs.len();
    let count = |f: &dyn Fn(&ModeOutcome) -> bool| outs.iter().filter(|o| f(o)).count();
    let q: Vec<f64> = outs.iter().map(|o| o.q_hat).collect();
    let plug: Vec<f64> = outs.iter().map(|o| o.plug_in).collect();
    let abs_err = |xs: &[f64]| xs.iter().map(|x| (x - truth).abs()).sum::<f64>() / r as f64;
    let z: Vec<f64> = outs.iter().map(|o| o.standardized).collect();
    let (zm, zsd) = mean_sd(&z);
    ModeSummary {
        mode,
        truth,
        err_tau0: Rate::from_count(count(&|o| o.reject[0]), r),
        err_tau1: Rate::from_count(count(&|o| o.reject[1]), r),
        coverage_tau0: Rate::from_count(count(&|o| o.covers[0]), r),
        coverage_tau1: Rate::from_count(count(&|o| o.covers[1]), r),
        mean_abs_error: abs_err(&q),
        abs_mean_bias: (mean_sd(&q).0 - truth).abs(),
        plug_in_mean_abs_error: abs_err(&plug),
        plug_in_abs_mean_bias: (mean_sd(&plug).0 - truth).abs(),
        standardized_mean: zm,
        standardized_sd: zsd,
        mean_lambda_ratio: outs.iter().map(|o| o.lambda_ratio).sum::<f64>() / r as f64,
    }
}

/// Runs every replicate (in parallel) and reduces the outcomes in replicate
/// order, so the report does not depend on scheduling.
pub fn run_scenario(sc: &Scenario, cfg: &MethodsConfig) -> Result<SimReport> {
    let c = &sc.config;
    if c.replicates == 0 {
        return Err(Error::Invalid("replicates must be at least 1".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) || !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::Invalid("alpha and level must lie in (0, 1)".into()));
    }
    if !(cfg.c_lambda > 0.0) {
        return Err(Error::Invalid(format!(
            "c_lambda must be positive, got {}",
            cfg.c_lambda
        )));
    }
    let results: Vec<Result<Outcome>> = (0..c.replicates)
        .into_par_iter()
        .map(|rep| replicate(sc, cfg, rep))
        .collect();

    let mut failed = Vec::new();
    let mut outcomes = Vec::with_capacity(results.len());
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                log::warn!("replicate {rep} failed: {e}");
                failed.push(rep);
            }
        }
    }
    if failed.len() as f64 > MAX_FAILURE_RATE * c.replicates as f64 {
        return Err(Error::TooManyFailures {
            failed: failed.len(),
            total: c.replicates,
        });
    }

    let truth = sc.true_values();
    let mut modes = Vec::new();
    let mut hier = None;
    if let Some(t) = &truth {
        for (k, &mode) in MODES.iter().enumerate() {
            let outs: Vec<&ModeOutcome> = outcomes
                .iter()
                .filter_map(|o| match o {
                    Outcome::Group(v) => Some(&v[k]),
                    Outcome::Hier(_) => None,
                })
                .collect();
            modes.push(summarize_mode(mode, mode_truth(t, mode), &outs));
        }
    } else {
        let outs: Vec<&HierOutcome> = outcomes
            .iter()
            .filter_map(|o| match o {
                Outcome::Hier(h) => Some(h),
                Outcome::Group(_) => None,
            })
            .collect();
        let r = outs.len() as f64;
        let sizes: Vec<f64> = outs.iter().flat_map(|h| h.sizes.iter().map(|&s| s as f64)).collect();
        hier = Some(HierSummary {
            fwer: Rate::from_count(outs.iter().filter(|h| h.false_detection).count(), outs.len()),
            adaptive_power: outs.iter().map(|h| h.power).sum::<f64>() / r,
            avg_count: sizes.len() as f64 / r,
            avg_size: if sizes.is_empty() {
                0.0
            } else {
                sizes.iter().sum::<f64>() / sizes.len() as f64
            },
            median_size: median(sizes),
            hier_beta: c.hier_beta,
        });
    }
    let reference_truth = match c.kind {
        super::ScenarioKind::Dense if (c.delta - 0.06).abs() < 1e-12 => Some(DENSE_REFERENCE_TRUTH),
        _ => None,
    };
    Ok(SimReport {
        scenario: c.kind.as_str().to_string(),
        n: c.n,
        p: c.p,
        delta: c.delta,
        seed: c.seed,
        replicates: c.replicates,
        completed: outcomes.len(),
        failed,
        truth,
        reference_truth,
        modes,
        hier,
    })
}

/// Everything needed to rerun a simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub c_lambda: f64,
    pub tau: Vec<f64>,
    pub scenario: ScenarioConfig,
    pub methods: MethodsConfig,
}

impl Manifest {
    pub fn new(config: &ScenarioConfig, methods: &MethodsConfig) -> Self {
        Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: "simulate".into(),
            seed: config.seed,
            c_lambda: methods.c_lambda,
            tau: vec![0.0, 1.0],
            scenario: config.clone(),
            methods: *methods,
        }
    }
}

/// Rows `(delta, n, method, value)` of the decision, coverage and bias tables.
pub fn table_rows(report: &SimReport) -> Vec<(&'static str, Vec<(String, f64)>)> {
    let mut tables = Vec::new();
    if !report.modes.is_empty() {
        let label = |m: Mode| if m == Mode::Identity { "I" } else { "Sigma" };
        let mut decision = Vec::new();
        let mut coverage = Vec::new();
        let mut bias = Vec::new();
        for s in &report.modes {
            let l = label(s.mode);
            decision.push((format!("phi_{l}(0)"), s.err_tau0.value));
            decision.push((format!("phi_{l}(1)"), s.err_tau1.value));
            coverage.push((format!("CI_{l}(0)"), s.coverage_tau0.value));
            coverage.push((format!("CI_{l}(1)"), s.coverage_tau1.value));
            bias.push((format!("Q_{l}"), s.truth));
            bias.push((format!("abs_bias_{l}"), s.abs_mean_bias));
            bias.push((format!("abs_bias_plug_{l}"), s.plug_in_abs_mean_bias));
            bias.push((format!("mean_abs_err_{l}"), s.mean_abs_error));
            bias.push((format!("mean_abs_err_plug_{l}"), s.plug_in_mean_abs_error));
        }
        tables.push(("decision", decision));
        tables.push(("coverage", coverage));
        tables.push(("bias", bias));
    }
    if let Some(h) = &report.hier {
        tables.push((
            "hier",
            vec![
                ("fwer".into(), h.fwer.value),
                ("adaptive_power".into(), h.adaptive_power),
                ("avg_count".into(), h.avg_count),
                ("avg_size".into(), h.avg_size),
                ("median_size".into(), h.median_size),
            ],
        ));
    }
    tables
}

/// Writes one CSV per table, `report.json` and `manifest.json` into `dir`.
pub fn write_outputs(dir: &Path, report: &SimReport, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, rows) in table_rows(report) {
        let path = dir.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["delta", "n", "method", "value"])?;
        for (method, value) in rows {
            w.write_record([
                report.delta.to_string(),
                report.n.to_string(),
                method,
                value.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let write_json = |file: &str, body: String| {
        let path = dir.join(file);
        fs::write(&path, body + "\n").map_err(|e| Error::io(path, e))
    };
    write_json("report.json", serde_json::to_string_pretty(report)?)?;
    write_json("manifest.json", serde_json::to_string_pretty(manifest)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ScenarioKind;
    use approx::assert_abs_diff_eq;

    fn gs(v: Vec<usize>) -> GroupSpec {
        GroupSpec::new(v).unwrap()
    }

    #[test]
    fn adaptive_power_cases() {
        let s0 = gs((0..10).map(|k| 1 + 50 * k).collect());
        let singles: Vec<GroupSpec> = s0.indices().iter().map(|&j| gs(vec![j])).collect();
        assert_abs_diff_eq!(adaptive_power(&singles, &s0), 1.0);
        assert_abs_diff_eq!(adaptive_power(&[GroupSpec::range(1, 50).unwrap()], &s0), 0.002);
        assert_eq!(adaptive_power(&[], &s0), 0.0);
        // a finding without actives adds nothing
        assert_eq!(adaptive_power(&[gs(vec![2])], &s0), 0.0);
    }

    #[test]
    fn rate_stderr() {
        let r = Rate::from_count(1, 4);
        assert_abs_diff_eq!(r.mc_stderr, (0.25f64 * 0.75 / 4.0).sqrt());
        assert_eq!(Rate::from_count(0, 0).value, 0.0);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn small_dense_run_is_reproducible() {
        let mut cfg = ScenarioConfig::new(ScenarioKind::Dense, 60, 0.06, 3, 5);
        cfg.p = 200;
        let sc = Scenario::new(cfg).unwrap();
        let a = run_scenario(&sc, &MethodsConfig::default()).unwrap();
        let b = run_scenario(&sc, &MethodsConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.completed, 3);
        assert_eq!(a.modes.len(), 2);
        for m in &a.modes {
            for r in [m.err_tau0, m.err_tau1, m.coverage_tau0, m.coverage_tau1] {
                assert!((0.0..=1.0).contains(&r.value));
            }
        }
    }

    #[test]
    fn small_hier_run() {
        let mut cfg = ScenarioConfig::new(ScenarioKind::Hier1, 80, 0.0, 2, 3);
        cfg.p = 30;
        let sc = Scenario::new(cfg).unwrap();
        let rep = run_scenario(&sc, &MethodsConfig::default()).unwrap();
        let h = rep.hier.unwrap();
        assert!((0.0..=1.0).contains(&h.fwer.value));
        assert!(h.adaptive_power <= 1.0);
        assert!(rep.modes.is_empty());
    }

    #[test]
    fn zero_replicates_rejected() {
        let sc = Scenario::new(ScenarioConfig::new(ScenarioKind::Highcorr, 20, 0.0, 0, 1)).unwrap();
        assert!(run_scenario(&sc, &MethodsConfig::default()).is_err());
    }
}
