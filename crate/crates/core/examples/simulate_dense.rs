//! A small Monte Carlo run of the dense-signal setting: rejection rates,
//! coverage and bias for both functionals.
//!
//! cargo run --release --example simulate_dense -- [reps]

use quadgroup::sim::{run_scenario, table_rows, MethodsConfig, Scenario, ScenarioConfig, ScenarioKind};

pub fn run_with(reps: usize) -> quadgroup::Result<()> {
    let mut cfg = ScenarioConfig::new(ScenarioKind::Dense, 300, 0.06, reps, 2024);
    cfg.p = 300;
    let report = run_scenario(&Scenario::new(cfg)?, &MethodsConfig::default())?;
    println!("{} of {} replicates completed", report.completed, report.replicates);
    for (table, rows) in table_rows(&report) {
        println!("[{table}]");
        for (method, value) in rows {
            println!("  {method:<24} {value:.4}");
        }
    }
    Ok(())
}

pub fn run() -> quadgroup::Result<()> {
    run_with(4)
}

#[allow(dead_code)]
fn main() -> quadgroup::Result<()> {
    let reps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    run_with(reps)
}
