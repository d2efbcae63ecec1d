//! Brute-force reference solvers and instance generators shared by the
//! integration tests and the acceptance run.
#![allow(dead_code)]

pub mod suites;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, p), || rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.sample(StandardNormal))
}

/// Gaussian elimination with partial pivoting; `None` when (near) singular.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-11 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// All sign patterns in `{-1, 0, 1}^k`.
fn patterns(k: usize) -> impl Iterator<Item = Vec<i8>> {
    (0..3usize.pow(k as u32)).map(move |mut code| {
        (0..k)
            .map(|_| {
                let s = (code % 3) as i8 - 1;
                code /= 3;
                s
            })
            .collect()
    })
}

/// Weighted Lasso `(1/2m)‖y − Xβ‖² + λΣ w_j|β_j|` by enumerating sign
/// patterns: on each pattern the stationarity equations are linear, and the
/// best sign-consistent candidate is the global minimizer.
pub fn lasso_oracle(x: &Array2<f64>, y: &Array1<f64>, lambda: f64, w: &Array1<f64>) -> Array1<f64> {
    let (m, p) = x.dim();
    assert!(p <= 6, "enumeration oracle is for tiny p");
    let g = x.t().dot(x) / m as f64;
    let xty = x.t().dot(y) / m as f64;
    let objective = |b: &Array1<f64>| {
        let r = y - &x.dot(b);
        r.dot(&r) / (2.0 * m as f64) + lambda * b.iter().zip(w.iter()).map(|(b, w)| w * b.abs()).sum::<f64>()
    };
    let mut best = Array1::zeros(p);
    let mut best_obj = objective(&best);
    for signs in patterns(p) {
        let act: Vec<usize> = (0..p).filter(|&j| signs[j] != 0).collect();
        if act.is_empty() {
            continue;
        }
        let a: Vec<Vec<f64>> = act.iter().map(|&i| act.iter().map(|&j| g[[i, j]]).collect()).collect();
        let b: Vec<f64> = act.iter().map(|&j| xty[j] - lambda * w[j] * signs[j] as f64).collect();
        let Some(sol) = dense_solve(a, b) else { continue };
        if act.iter().zip(&sol).any(|(&j, v)| v * signs[j] as f64 <= 0.0) {
            continue;
        }
        let mut cand = Array1::zeros(p);
        for (&j, v) in act.iter().zip(&sol) {
            cand[j] = *v;
        }
        let obj = objective(&cand);
        if obj < best_obj {
            best_obj = obj;
            best = cand;
        }
    }
    best
}

/// Exact solution of `min uᵀΣu` s.t. `|hᵀ(Σu − v)| ≤ bound` for the rows `h`
/// of `e₁..e_p` (plus `v/‖v‖` when `extra`), by enumerating which
/// constraints are tight and at which side. Requires Σ positive definite.
pub fn projection_oracle(sigma: &Array2<f64>, v: &Array1<f64>, bound: f64, extra: bool) -> Array1<f64> {
    let p = v.len();
    assert!(p <= 5, "enumeration oracle is for tiny p");
    let s = v.dot(v).sqrt();
    let mut rows: Vec<Array1<f64>> = (0..p)
        .map(|k| {
            let mut e = Array1::zeros(p);
            e[k] = 1.0;
            e
        })
        .collect();
    if extra && s > 0.0 {
        rows.push(v / s);
    }
    let feasible = |u: &Array1<f64>| {
        let r = sigma.dot(u) - v;
        rows.iter().all(|h| h.dot(&r).abs() <= bound * (1.0 + 1e-9) + 1e-12)
    };
    let mut best: Option<(f64, Array1<f64>)> = None;
    let zero = Array1::zeros(p);
    if feasible(&zero) {
        best = Some((0.0, zero));
    }
    for signs in patterns(rows.len()) {
        let act: Vec<usize> = (0..rows.len()).filter(|&k| signs[k] != 0).collect();
        if act.is_empty() || act.len() > p {
            continue;
        }
        // [2Σ  ΣH_A; H_AᵀΣ  0] [u; ν] = [0; H_Aᵀv + side·bound]
        let q = act.len();
        let sh: Vec<Array1<f64>> = act.iter().map(|&k| sigma.dot(&rows[k])).collect();
        let mut a = vec![vec![0.0; p + q]; p + q];
        let mut b = vec![0.0; p + q];
        for i in 0..p {
            for j in 0..p {
                a[i][j] = 2.0 * sigma[[i, j]];
            }
            for (c, col) in sh.iter().enumerate() {
                a[i][p + c] = col[i];
                a[p + c][i] = col[i];
            }
        }
        for (c, &k) in act.iter().enumerate() {
            b[p + c] = rows[k].dot(v) + signs[k] as f64 * bound;
        }
        let Some(sol) = dense_solve(a, b) else { continue };
        let u = Array1::from(sol[..p].to_vec());
        if !feasible(&u) {
            continue;
        }
        let obj = u.dot(&sigma.dot(&u));
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, u));
        }
    }
    best.expect("program is feasible").1
}

/// A well-conditioned random second-moment matrix from `n` Gaussian rows
/// with mild correlation.
pub fn random_sigma(rng: &mut ChaCha8Rng, p: usize, n: usize) -> Array2<f64> {
    let z = gaussian_matrix(rng, n, p);
    let mix = Array2::from_shape_fn((p, p), |(i, j)| if i == j { 1.0 } else { 0.3 * rng.random::<f64>() });
    let x = z.dot(&mix);
    x.t().dot(&x) / n as f64
}

pub fn max_rel_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
