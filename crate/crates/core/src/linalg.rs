//! Small dense vector/matrix helpers used by the estimators and the policy
//! optimizer. Everything is f64 and allocation-light; problem sizes stay in
//! the tens of dimensions.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("non-finite value in input")]
    NonFinite,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Unit vector in the direction of `a`, or None when the norm is below `tol`.
pub fn unit(a: &[f64], tol: f64) -> Option<Vec<f64>> {
    let n = norm2(a);
    if n < tol {
        None
    } else {
        Some(scaled(a, 1.0 / n))
    }
}

/// Solve `A x = b` for symmetric positive definite `A` (row-major d x d)
/// by Cholesky factorization. `A` is consumed as workspace.
pub fn cholesky_solve(a: &mut [f64], b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let d = b.len();
    debug_assert_eq!(a.len(), d * d);
    if a.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    // in-place lower Cholesky
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { row: j, pivot: diag });
        }
        let l_jj = diag.sqrt();
        a[j * d + j] = l_jj;
        for i in (j + 1)..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = v / l_jj;
        }
    }
    // forward substitution L y = b
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * d + k] * y[k];
        }
        y[i] = v / a[i * d + i];
    }
    // back substitution L^T x = y
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut v = y[i];
        for k in (i + 1)..d {
            v -= a[k * d + i] * x[k];
        }
        x[i] = v / a[i * d + i];
    }
    Ok(x)
}
