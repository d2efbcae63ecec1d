//! The bias-correcting direction on its own: solve the projection program
//! for one group and check its constraints by hand.
//!
//! cargo run --release --example projection_direction

use std::borrow::Cow;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use quadgroup::data::GroupSpec;
use quadgroup::linalg::second_moment;
use quadgroup::projection::{solve_projection, ProjectionProblem, Weight};

pub fn run() -> quadgroup::Result<()> {
    let (m, p) = (80, 150);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Array2::from_shape_simple_fn((m, p), || StandardNormal.sample(&mut rng));
    let sigma_hat = second_moment(x.view());
    let beta_hat: Array1<f64> = (0..p).map(|j| if j < 3 { 1.0 } else { 0.0 }).collect();
    let g = GroupSpec::range(1, 5)?;

    for weight in [Weight::Sigma, Weight::Identity] {
        let prob = ProjectionProblem::new(Cow::Borrowed(&sigma_hat), m, beta_hat.view(), &g, weight, 1.0)?;
        let sol = solve_projection(&prob)?;
        let resid = sigma_hat.dot(&sol.u) - &prob.target;
        let worst = resid.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        println!(
            "{:?}: u'Σu = {:.4}, max |Σu - v| = {:.4} (bound {:.4}), escalations {}, nonzeros {}",
            prob.mode,
            sol.quad_value,
            worst,
            prob.scale * sol.lambda_effective,
            sol.escalations,
            sol.u.iter().filter(|v| **v != 0.0).count()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> quadgroup::Result<()> {
    run()
}
