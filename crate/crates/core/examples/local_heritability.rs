//! Variance explained by consecutive windows of covariates, each with an
//! interval and its share of `var(y)`.
//!
//! cargo run --release --example local_heritability

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use quadgroup::applications::{heritability_report, HeritabilityOptions};
use quadgroup::data::{Dataset, GroupSpec};
use quadgroup::lasso::{fit_initial, InitialOptions};

pub fn run() -> quadgroup::Result<()> {
    let (n, p, width) = (400, 200, 25);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = Array2::from_shape_simple_fn((n, p), || StandardNormal.sample(&mut rng));
    // signal in the first and third window
    let beta: Array1<f64> = (0..p)
        .map(|j| if j < 4 || (50..54).contains(&j) { 0.3 } else { 0.0 })
        .collect();
    let noise: Array1<f64> = Array1::from_shape_simple_fn(n, || StandardNormal.sample(&mut rng));
    let d = Dataset::new(x.clone(), x.dot(&beta) + noise)?;

    let fit = fit_initial(&d, &InitialOptions::default())?;
    let windows: Vec<GroupSpec> = (0..p / width)
        .map(|k| GroupSpec::range(k * width + 1, (k + 1) * width))
        .collect::<Result<_, _>>()?;
    let opts = HeritabilityOptions {
        normalize: true,
        truncate: true,
        ..Default::default()
    };
    for r in heritability_report(&d, &fit, &windows, &opts)? {
        println!(
            "{:>3}-{:<3} q_hat {:.4}  CI [{:.4}, {:.4}]  share {:.3}",
            r.group.indices()[0],
            r.group.max_index(),
            r.estimate.q_hat,
            r.ci.lower,
            r.ci.upper,
            r.proportion.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> quadgroup::Result<()> {
    run()
}
