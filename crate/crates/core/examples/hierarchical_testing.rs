//! Top-down testing over a covariate cluster tree with familywise error
//! control. Correlated pairs of covariates carry the signal.
//!
//! cargo run --release --example hierarchical_testing

use quadgroup::hier::{build_tree, run_hierarchy, HierEngine, Linkage};
use quadgroup::sim::{Scenario, ScenarioConfig, ScenarioKind};

pub fn run() -> quadgroup::Result<()> {
    let mut cfg = ScenarioConfig::new(ScenarioKind::Hier1, 300, 0.0, 1, 5);
    cfg.p = 100;
    let sc = Scenario::new(cfg)?;
    let d = sc.generate(0)?;

    let tree = build_tree(&d, Linkage::Complete)?;
    let res = run_hierarchy(&d, &tree, 0.05, &HierEngine::default())?;
    println!("tested {} of {} nodes", res.tested_count, tree.nodes().len());
    for f in &res.findings {
        println!(
            "{:<12} p_raw {:.2e}  p_adjusted {:.2e}",
            f.group.to_string(),
            f.p_raw,
            f.p_adjusted
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> quadgroup::Result<()> {
    run()
}
