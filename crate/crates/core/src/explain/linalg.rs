use crate::error::{Error, Result};

/// Solves the dense `n×n` system `a·x = b` (row-major `a`) by Gaussian
/// elimination with partial pivoting.
pub fn solve(mut a: Vec<f64>, mut b: Vec<f64>, what: &'static str) -> Result<Vec<f64>> {
    let n = b.len();
    assert_eq!(a.len(), n * n, "matrix must be n×n");
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if n > 0 && scale == 0.0 {
        return Err(Error::Singular(what));
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs())).expect("rows");
        if a[pivot * n + col].abs() <= scale * 1e-13 {
            return Err(Error::Singular(what));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let p = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / p;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    Ok(x)
}

/// Weighted least squares `min Σ wᵢ (yᵢ − c − xᵢ·β)² + λ‖β‖²` with an
/// unpenalized intercept `c`. Returns `(β, c)`.
pub fn weighted_ridge(rows: &[Vec<f64>], y: &[f64], w: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let m = rows.first().map_or(0, Vec::len);
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::Singular("weighted ridge: weights sum to zero"));
    }
    let mut xbar = vec![0.0; m];
    let mut ybar = 0.0;
    for ((r, &yi), &wi) in rows.iter().zip(y).zip(w) {
        for (xb, &v) in xbar.iter_mut().zip(r) {
            *xb += wi * v;
        }
        ybar += wi * yi;
    }
    xbar.iter_mut().for_each(|v| *v /= wsum);
    ybar /= wsum;

    let mut a = vec![0.0; m * m];
    let mut b = vec![0.0; m];
    let mut xc = vec![0.0; m];
    for ((r, &yi), &wi) in rows.iter().zip(y).zip(w) {
        for j in 0..m {
            xc[j] = r[j] - xbar[j];
        }
        let yc = yi - ybar;
        for j in 0..m {
            let wx = wi * xc[j];
            b[j] += wx * yc;
            for k in j..m {
                a[j * m + k] += wx * xc[k];
            }
        }
    }
    for j in 0..m {
        for k in 0..j {
            a[j * m + k] = a[k * m + j];
        }
        a[j * m + j] += lambda;
    }
    let beta = solve(a, b, "weighted ridge: normal equations are singular")?;
    let intercept = ybar - beta.iter().zip(&xbar).map(|(b, x)| b * x).sum::<f64>();
    Ok((beta, intercept))
}
