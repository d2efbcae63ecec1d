//! Quadratic forms with a known weight matrix: the identity functional
//! `‖β_G‖²` and a general `β_GᵀAβ_G`.
//!
//! cargo run --release --example weighted_functional

use ndarray::{array, Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use quadgroup::data::{Dataset, GroupSpec, WeightMatrix};
use quadgroup::inference::{confidence_interval, estimate_q_a, DEFAULT_C_LAMBDA, DEFAULT_TAU};
use quadgroup::lasso::{fit_initial, InitialOptions};

pub fn run() -> quadgroup::Result<()> {
    let (n, p) = (300, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Array2::from_shape_simple_fn((n, p), || StandardNormal.sample(&mut rng));
    let mut beta = Array1::<f64>::zeros(p);
    beta[0] = 0.5;
    beta[1] = -0.3;
    beta[2] = 0.2;
    let noise: Array1<f64> = Array1::from_shape_simple_fn(n, || StandardNormal.sample(&mut rng));
    let d = Dataset::new(x.clone(), x.dot(&beta) + noise)?;
    let fit = fit_initial(&d, &InitialOptions::default())?;

    let g = GroupSpec::range(1, 3)?;
    let a = WeightMatrix::new(array![[2.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 1.0]])?;
    let bg = beta.slice(ndarray::s![..3]).to_owned();

    for (name, w, truth) in [
        ("identity", None, bg.dot(&bg)),
        ("general", Some(&a), bg.dot(&a.matrix().dot(&bg))),
    ] {
        let est = estimate_q_a(&d, &fit, &g, w, DEFAULT_TAU, DEFAULT_C_LAMBDA)?;
        let ci = confidence_interval(&est, 0.95, false)?;
        println!(
            "{name:>8}: truth {truth:.4}, q_hat {:.4}, plug-in {:.4}, sd {:.4}, CI [{:.4}, {:.4}]",
            est.q_hat,
            est.plug_in,
            est.sd(),
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
