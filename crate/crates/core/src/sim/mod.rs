//! Monte Carlo reproduction of the simulation studies.

mod harness;
mod scenario;

pub use harness::{
    adaptive_power, run_scenario, table_rows, write_outputs, HierSummary, Manifest, MethodsConfig, ModeSummary, Rate,
    SimReport, DENSE_REFERENCE_TRUTH, MAX_FAILURE_RATE,
};
pub use scenario::{true_values_for, Scenario, ScenarioConfig, ScenarioKind, TrueValues};
