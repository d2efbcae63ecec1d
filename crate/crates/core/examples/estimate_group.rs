//! Test whether a block of covariates matters and report a confidence
//! interval for the variance it explains.
//!
//! cargo run --release --example estimate_group

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use quadgroup::data::{Dataset, GroupSpec};
use quadgroup::inference::{confidence_interval, estimate_q_sigma, test_group, DEFAULT_C_LAMBDA, DEFAULT_TAU};
use quadgroup::lasso::{fit_initial, InitialOptions};

pub fn run() -> quadgroup::Result<()> {
    let (n, p) = (200, 400);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Array2::from_shape_simple_fn((n, p), || StandardNormal.sample(&mut rng));
    let mut beta = Array1::<f64>::zeros(p);
    for j in 0..5 {
        beta[j] = 0.4;
    }
    let noise: Array1<f64> = Array1::from_shape_simple_fn(n, || StandardNormal.sample(&mut rng));
    let y = x.dot(&beta) + noise;
    let d = Dataset::new(x, y)?;

    let fit = fit_initial(&d, &InitialOptions::default())?;
    println!(
        "scaled lasso: sigma_hat = {:.3}, support = {}",
        fit.sigma_hat,
        fit.support_size()
    );

    for g in [GroupSpec::range(1, 10)?, GroupSpec::range(200, 220)?] {
        let est = estimate_q_sigma(&d, &fit, &g, DEFAULT_TAU, DEFAULT_C_LAMBDA)?;
        let t = test_group(&est, 0.05)?;
        let ci = confidence_interval(&est, 0.95, true)?;
        println!(
            "group {:>7}: q_hat {:.4} (plug-in {:.4}), p = {:.3e}, reject = {}, 95% CI [{:.4}, {:.4}]",
            format!("{}-{}", g.indices()[0], g.max_index()),
            est.q_hat,
            est.plug_in,
            t.p_value,
            t.reject,
            ci.lower,
            ci.upper
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> quadgroup::Result<()> {
    run()
}
