//! Command-line front end. `quadgroup <subcommand> --help` lists the options.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::applications::{build_interaction, heritability_report, HeritabilityOptions};
use crate::data::{
    load_dataset, load_group_file, load_group_list, load_matrix, read_table, CsvOptions, Dataset, GroupSpec,
    ResponseColumn, WeightMatrix,
};
use crate::error::{Error, Result};
use crate::hier::{build_tree, run_hierarchy_fitted, ClusterTree, HierEngine, Linkage};
use crate::inference::{
    confidence_interval, estimate, test_group, CorrectionSample, EstimateOptions, ResultRecord, DEFAULT_C_LAMBDA,
    DEFAULT_TAU,
};
use crate::lasso::{fit_initial, InitialFit, InitialOptions};
use crate::projection::{Mode, Weight};
use crate::sim::{run_scenario, write_outputs, Manifest, MethodsConfig, Scenario, ScenarioConfig, ScenarioKind};

/// Environment variable that, when set, replaces every `--seed`.
pub const SEED_ENV: &str = "QUADGROUP_SEED";

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "quadgroup",
    version,
    about = "Group inference for high-dimensional linear models"
)]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    #[serde(skip)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Estimate the quadratic functional of one group.
    Estimate(InferArgs),
    /// One-sided test of H0: beta_G = 0.
    Test(InferArgs),
    /// Confidence interval for the quadratic functional.
    Ci(InferArgs),
    /// Top-down testing over a covariate clustering tree.
    Hiertest(HierArgs),
    /// Test for treatment-covariate interactions.
    Interact(InteractArgs),
    /// Explained-variance estimates for several groups.
    Herit(HeritArgs),
    /// Run a Monte Carlo scenario.
    Simulate(SimArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Estimate(_) => "estimate",
            Command::Test(_) => "test",
            Command::Ci(_) => "ci",
            Command::Hiertest(_) => "hiertest",
            Command::Interact(_) => "interact",
            Command::Herit(_) => "herit",
            Command::Simulate(_) => "simulate",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// CSV file with covariates and the response.
    #[arg(long)]
    pub data: PathBuf,
    /// The file has no header row.
    #[arg(long)]
    pub no_header: bool,
    /// Response column name [default: y, or the last column without a header].
    #[arg(long, conflicts_with = "response_col")]
    pub response: Option<String>,
    /// Response column as a 1-based position.
    #[arg(long)]
    pub response_col: Option<usize>,
    /// Drop rows with empty or NA cells instead of failing.
    #[arg(long)]
    pub drop_incomplete: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// Scaled-Lasso base penalty [default: depends on p and n].
    #[arg(long)]
    pub lambda0: Option<f64>,
    /// Fit on one random half, correct on the other.
    #[arg(long)]
    pub split: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TuneArgs {
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = DEFAULT_C_LAMBDA)]
    pub c_lambda: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Clip confidence intervals at zero.
    #[arg(long)]
    pub truncate: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub tune: TuneArgs,
    /// Group file, one 1-based index per line.
    #[arg(long, required_unless_present = "indices", conflicts_with = "indices")]
    pub group: Option<PathBuf>,
    /// Group as comma-separated 1-based indices, e.g. 1,2,5 or 1-10.
    #[arg(long)]
    pub indices: Option<String>,
    #[arg(long, value_enum, default_value_t = Mode::Sigma)]
    pub mode: Mode,
    /// Weight matrix A (header-less CSV, |G|x|G|) for mode general.
    #[arg(long)]
    pub weight: Option<PathBuf>,
    /// Also write result.json and manifest.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HierArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = DEFAULT_C_LAMBDA)]
    pub c_lambda: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = Linkage::Complete)]
    pub linkage: Linkage,
    /// Use this tree (JSON) instead of clustering the data.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Group test at each node: sigma or identity.
    #[arg(long, value_enum, default_value_t = Mode::Sigma)]
    pub mode: Mode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InteractArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub tune: TuneArgs,
    /// Header name of the treatment column.
    #[arg(long)]
    pub treatment_col: String,
    #[arg(long, value_enum, default_value_t = Mode::Sigma)]
    pub mode: Mode,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HeritArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub tune: TuneArgs,
    /// One group per line, comma-separated 1-based indices.
    #[arg(long)]
    pub groups: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Sigma)]
    pub mode: Mode,
    /// Also report estimates divided by the sample variance of y.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimArgs {
    #[arg(long, value_enum)]
    pub scenario: ScenarioKind,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 500)]
    pub p: usize,
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Coefficient of the active covariates in hier1/hier2.
    #[arg(long, default_value_t = 1.0)]
    pub hier_beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = DEFAULT_C_LAMBDA)]
    pub c_lambda: f64,
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long)]
    pub split: bool,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, value_enum, default_value_t = Linkage::Complete)]
    pub linkage: Linkage,
    #[arg(long, value_enum, default_value_t = Mode::Sigma)]
    pub hier_mode: Mode,
    #[arg(long)]
    pub out: PathBuf,
}

/// Resolved configuration written next to every output.
#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    version: &'static str,
    command: &'static str,
    seed_from_env: bool,
    threads: Option<usize>,
    config: &'a Command,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging(cli.verbose);
    match run(&mut cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Invalid(format!("{SEED_ENV} must be a non-negative integer, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn seed_slot(cmd: &mut Command) -> &mut u64 {
    match cmd {
        Command::Estimate(a) | Command::Test(a) | Command::Ci(a) => &mut a.fit.seed,
        Command::Hiertest(a) => &mut a.fit.seed,
        Command::Interact(a) => &mut a.fit.seed,
        Command::Herit(a) => &mut a.fit.seed,
        Command::Simulate(a) => &mut a.seed,
    }
}

pub fn run(cli: &mut Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Invalid("--threads must be at least 1".into()));
        }
        if rayon::ThreadPoolBuilder::new().num_threads(t).build_global().is_err() {
            log::warn!("thread pool already initialized; --threads ignored");
        }
    }
    let seed_from_env = match env_seed()? {
        Some(s) => {
            *seed_slot(&mut cli.command) = s;
            true
        }
        None => false,
    };
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name(),
        seed_from_env,
        threads: cli.threads,
        config: &cli.command,
    };
    match &cli.command {
        Command::Estimate(a) | Command::Test(a) | Command::Ci(a) => cmd_infer(a, &manifest),
        Command::Hiertest(a) => cmd_hiertest(a, &manifest),
        Command::Interact(a) => cmd_interact(a, &manifest),
        Command::Herit(a) => cmd_herit(a, &manifest),
        Command::Simulate(a) => cmd_simulate(a, seed_from_env),
    }
}

fn csv_options(a: &DataArgs) -> CsvOptions {
    CsvOptions {
        header: !a.no_header,
        response: response_column(a, None),
        drop_incomplete: a.drop_incomplete,
    }
}

fn response_column(a: &DataArgs, ncols: Option<usize>) -> ResponseColumn {
    match (&a.response, a.response_col) {
        (Some(name), _) => ResponseColumn::Name(name.clone()),
        (None, Some(i)) => ResponseColumn::Index(i),
        (None, None) if a.no_header => ResponseColumn::Index(ncols.unwrap_or(usize::MAX)),
        (None, None) => ResponseColumn::default(),
    }
}

fn load_data(a: &DataArgs) -> Result<Dataset> {
    if a.no_header && a.response.is_none() && a.response_col.is_none() {
        let t = read_table(&a.data, false, a.drop_incomplete)?;
        let col = response_column(a, Some(t.values.ncols()));
        return t.into_dataset(&col);
    }
    load_dataset(&a.data, &csv_options(a))
}

fn initial_options(f: &FitArgs) -> InitialOptions {
    InitialOptions {
        split: f.split,
        seed: f.seed,
        lambda0: f.lambda0,
    }
}

/// Comma-separated 1-based indices; `a-b` expands to an inclusive range.
fn parse_indices(s: &str) -> Result<GroupSpec> {
    let bad = |t: &str| Error::InvalidGroup(format!("not a positive integer index or range: {t:?}"));
    let mut idx = Vec::new();
    for t in s.split(',').map(str::trim) {
        match t.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad(t))?;
                let b: usize = b.trim().parse().map_err(|_| bad(t))?;
                if a > b {
                    return Err(bad(t));
                }
                idx.extend(a..=b);
            }
            None => idx.push(t.parse().map_err(|_| bad(t))?),
        }
    }
    GroupSpec::new(idx)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, file: &str, value: &T) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(file);
    fs::write(&path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

/// Prints `result` and, with `out`, stores it with the manifest; otherwise
/// the manifest goes to standard error.
fn emit<T: Serialize>(result: &T, out: Option<&Path>, manifest: &RunManifest<'_>) -> Result<()> {
    print_json(result)?;
    match out {
        Some(dir) => {
            write_json(dir, "result.json", result)?;
            write_json(dir, "manifest.json", manifest)
        }
        None => {
            eprintln!("manifest: {}", serde_json::to_string(manifest)?);
            Ok(())
        }
    }
}

fn weight_for<'a>(mode: Mode, a: Option<&'a WeightMatrix>) -> Result<Weight<'a>> {
    match (mode, a) {
        (Mode::Sigma, None) => Ok(Weight::Sigma),
        (Mode::Identity, None) => Ok(Weight::Identity),
        (Mode::General, Some(a)) => Ok(Weight::Matrix(a)),
        (Mode::General, None) => Err(Error::Invalid("mode general needs --weight".into())),
        (_, Some(_)) => Err(Error::Invalid("--weight is only used with --mode general".into())),
    }
}

#[derive(Debug, Serialize)]
struct InferOutput {
    #[serde(flatten)]
    record: ResultRecord,
    reject: bool,
    alpha: f64,
    level: f64,
    truncated_at_zero: bool,
}

fn infer_one(d: &Dataset, fit: &InitialFit, g: &GroupSpec, weight: Weight<'_>, tune: &TuneArgs) -> Result<InferOutput> {
    let sample = CorrectionSample::new(fit, d)?;
    let opts = EstimateOptions {
        tau: tune.tau,
        c_lambda: tune.c_lambda,
        ..Default::default()
    };
    let est = estimate(&sample, fit, g, weight, &opts)?;
    let test = test_group(&est, tune.alpha)?;
    let ci = confidence_interval(&est, tune.level, tune.truncate)?;
    Ok(InferOutput {
        record: ResultRecord::new(&est, &test, &ci),
        reject: test.reject,
        alpha: tune.alpha,
        level: tune.level,
        truncated_at_zero: ci.truncated_at_zero,
    })
}

fn check_tune(t: &TuneArgs) -> Result<()> {
    for (name, v) in [("alpha", t.alpha), ("level", t.level)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Invalid(format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    Ok(())
}

fn cmd_infer(a: &InferArgs, manifest: &RunManifest<'_>) -> Result<()> {
    check_tune(&a.tune)?;
    let g = match (&a.group, &a.indices) {
        (Some(path), _) => load_group_file(path)?,
        (None, Some(s)) => parse_indices(s)?,
        (None, None) => return Err(Error::Invalid("give --group or --indices".into())),
    };
    let d = load_data(&a.data)?;
    crate::data::validate_group(&g, d.p())?;
    let a_mat = a
        .weight
        .as_deref()
        .map(load_matrix)
        .transpose()?
        .map(WeightMatrix::new)
        .transpose()?;
    let weight = weight_for(a.mode, a_mat.as_ref())?;
    let fit = fit_initial(&d, &initial_options(&a.fit))?;
    let out = infer_one(&d, &fit, &g, weight, &a.tune)?;
    emit(&out, a.out.as_deref(), manifest)
}

fn cmd_hiertest(a: &HierArgs, manifest: &RunManifest<'_>) -> Result<()> {
    if a.mode == Mode::General {
        return Err(Error::Invalid("hiertest supports modes sigma and identity".into()));
    }
    let d = load_data(&a.data)?;
    let tree = match &a.tree {
        Some(path) => {
            let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            ClusterTree::from_json(&s)?
        }
        None => build_tree(&d, a.linkage)?,
    };
    let engine = HierEngine {
        mode: a.mode,
        tau: a.tau,
        c_lambda: a.c_lambda,
        initial: initial_options(&a.fit),
    };
    let fit = fit_initial(&d, &engine.initial)?;
    let res = run_hierarchy_fitted(&d, &fit, &tree, a.alpha, &engine)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    res.write_csv(&a.out.join("findings.csv"))?;
    write_json(&a.out, "findings.json", &res)?;
    let tree_path = a.out.join("tree.json");
    fs::write(&tree_path, tree.to_json()? + "\n").map_err(|e| Error::io(tree_path, e))?;
    write_json(&a.out, "manifest.json", manifest)?;
    println!(
        "{} finding(s), {} node(s) tested, {} untestable",
        res.findings.len(),
        res.tested_count,
        res.untestable
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct InteractOutput {
    #[serde(flatten)]
    inner: InferOutput,
    treatment_col: String,
    degenerate: bool,
}

fn cmd_interact(a: &InteractArgs, manifest: &RunManifest<'_>) -> Result<()> {
    check_tune(&a.tune)?;
    if a.data.no_header {
        return Err(Error::Invalid(
            "interact needs a header row to find the treatment column".into(),
        ));
    }
    let weight = weight_for(a.mode, None)?;
    let mut table = read_table(&a.data.data, true, a.data.drop_incomplete)?;
    let treatment = table.take_column(&ResponseColumn::Name(a.treatment_col.clone()))?;
    let d = table.into_dataset(&response_column(&a.data, None))?;
    let design = build_interaction(&d, treatment.view())?;
    let fit = fit_initial(&design.data, &initial_options(&a.fit))?;
    let inner = infer_one(&design.data, &fit, &design.gamma_group, weight, &a.tune)?;
    let out = InteractOutput {
        inner,
        treatment_col: a.treatment_col.clone(),
        degenerate: design.degenerate,
    };
    emit(&out, a.out.as_deref(), manifest)
}

fn cmd_herit(a: &HeritArgs, manifest: &RunManifest<'_>) -> Result<()> {
    check_tune(&a.tune)?;
    let groups = load_group_list(&a.groups)?;
    let d = load_data(&a.data)?;
    let fit = fit_initial(&d, &initial_options(&a.fit))?;
    let opts = HeritabilityOptions {
        level: a.tune.level,
        mode: a.mode,
        estimate: EstimateOptions {
            tau: a.tune.tau,
            c_lambda: a.tune.c_lambda,
            ..Default::default()
        },
        normalize: a.normalize,
        truncate: a.tune.truncate,
    };
    let records = heritability_report(&d, &fit, &groups, &opts)?;
    emit(&records, a.out.as_deref(), manifest)
}

#[derive(Debug, Serialize)]
struct Runtime {
    seconds: f64,
    threads: usize,
}

fn cmd_simulate(a: &SimArgs, seed_from_env: bool) -> Result<()> {
    let config = ScenarioConfig {
        kind: a.scenario,
        n: a.n,
        p: a.p,
        delta: a.delta,
        replicates: a.reps,
        seed: a.seed,
        hier_beta: a.hier_beta,
        noise_sd: a.noise_sd,
    };
    let methods = MethodsConfig {
        alpha: a.alpha,
        level: a.level,
        c_lambda: a.c_lambda,
        lambda0: a.lambda0,
        split: a.split,
        linkage: a.linkage,
        hier_mode: a.hier_mode,
        hier_tau: DEFAULT_TAU,
    };
    if a.hier_mode == Mode::General {
        return Err(Error::Invalid("--hier-mode must be sigma or identity".into()));
    }
    let sc = Scenario::new(config.clone())?;
    if seed_from_env {
        log::info!("seed {} taken from {SEED_ENV}", a.seed);
    }
    let start = Instant::now();
    let report = run_scenario(&sc, &methods)?;
    write_outputs(&a.out, &report, &Manifest::new(&config, &methods))?;
    write_json(
        &a.out,
        "runtime.json",
        &Runtime {
            seconds: start.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
        },
    )?;
    for m in &report.modes {
        println!(
            "{:<8} ERR(0) {:.3} ERR(1) {:.3} CI(0) {:.3} CI(1) {:.3} |bias| {:.4} plug-in {:.4}",
            m.mode.as_str(),
            m.err_tau0.value,
            m.err_tau1.value,
            m.coverage_tau0.value,
            m.coverage_tau1.value,
            m.abs_mean_bias,
            m.plug_in_abs_mean_bias
        );
    }
    if let Some(h) = &report.hier {
        println!(
            "FWER {:.3} adaptive power {:.3} findings/rep {:.2} mean size {:.2}",
            h.fwer.value, h.adaptive_power, h.avg_count, h.avg_size
        );
    }
    if !report.failed.is_empty() {
        println!("{} replicate(s) failed and were excluded", report.failed.len());
    }
    Ok(())
}
