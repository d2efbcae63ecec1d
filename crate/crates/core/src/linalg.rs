//! Small dense linear-algebra helpers on top of `ndarray`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

/// Second-moment matrix `XᵀX / m` (no centering).
pub fn second_moment(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let m = x.nrows() as f64;
    let mut g = x.t().dot(&x);
    g.mapv_inplace(|v| v / m);
    // symmetrize away rounding from the blocked product
    let p = g.nrows();
    for i in 0..p {
        for j in 0..i {
            let s = 0.5 * (g[[i, j]] + g[[j, i]]);
            g[[i, j]] = s;
            g[[j, i]] = s;
        }
    }
    g
}

/// Lower Cholesky factor of a symmetric matrix, or `None` if it is not
/// numerically positive definite.
pub fn cholesky(a: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    // row-major lower factor, rows as contiguous slices
    let mut l = vec![0.0_f64; n * n];
    for j in 0..n {
        let (done, rest) = l.split_at_mut(j * n);
        let row_j = &mut rest[..n];
        for k in 0..j {
            let row_k = &done[k * n..k * n + k];
            let s = a[[j, k]] - dot(&row_j[..k], row_k);
            row_j[k] = s / done[k * n + k];
        }
        let d = a[[j, j]] - dot(&row_j[..j], &row_j[..j]);
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        row_j[j] = d.sqrt();
    }
    Array2::from_shape_vec((n, n), l).ok()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorizes
    let mut acc = [0.0_f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for r in 0..4 {
            acc[r] += a[4 * c + r] * b[4 * c + r];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Solves `L Lᵀ x = b` for a lower Cholesky factor `L`.
pub fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[[i, k]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// `vᵀ A v`.
pub fn quad_form(a: ArrayView2<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&a.dot(&v))
}

/// Columns of `x` picked by zero-based index, in the given order.
pub fn select_columns(x: ArrayView2<'_, f64>, cols: &[usize]) -> Array2<f64> {
    x.select(Axis(1), cols)
}

pub fn norm2(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub fn norm_inf(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Pearson correlation matrix of the columns of `x`. Returns the index of the
/// first constant column as the error.
pub fn column_correlation(x: ArrayView2<'_, f64>) -> Result<Array2<f64>, usize> {
    let n = x.nrows() as f64;
    let mean: Array1<f64> = x.mean_axis(Axis(0)).expect("nonempty design");
    let mut centered = x.to_owned();
    centered -= &mean;
    let mut sd = Array1::<f64>::zeros(x.ncols());
    for (j, col) in centered.columns().into_iter().enumerate() {
        let ss = col.dot(&col);
        let scale = col.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(mean[j].abs());
        if ss <= (1e-14 * scale).powi(2) * n || ss == 0.0 {
            return Err(j);
        }
        sd[j] = ss.sqrt();
    }
    for (j, mut col) in centered.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| v / sd[j]);
    }
    let mut c = centered.t().dot(&centered);
    let p = c.nrows();
    for i in 0..p {
        c[[i, i]] = 1.0;
        for j in 0..i {
            let s = (0.5 * (c[[i, j]] + c[[j, i]])).clamp(-1.0, 1.0);
            c[[i, j]] = s;
            c[[j, i]] = s;
        }
    }
    Ok(c)
}
