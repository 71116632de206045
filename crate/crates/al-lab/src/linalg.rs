//! Small dense symmetric-positive-definite helpers used by the Gaussian
//! divergence code. Matrices here are tiny (C x C where C is the class
//! count), stored row-major in a flat `Vec<f64>`.

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Numeric(format!(
                        "matrix not positive definite (pivot {s:e} at {i})"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// log det(A) from its Cholesky factor.
pub fn log_det_from_chol(l: &[f64], n: usize) -> f64 {
    (0..n).map(|i| l[i * n + i].ln()).sum::<f64>() * 2.0
}

/// Solve A x = b given the Cholesky factor L of A.
pub fn chol_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    // forward: L y = b
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    // backward: L^T x = y
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cholesky_solves_spd_system() {
        // A = [[4,2],[2,3]]
        let a = vec![4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        assert_relative_eq!(log_det_from_chol(&l, 2), (8.0f64).ln(), epsilon = 1e-12);
        let x = chol_solve(&l, 2, &[2.0, 5.0]);
        // A x = b  =>  x = A^{-1} b ; det=8, inv = 1/8 [[3,-2],[-2,4]]
        assert_relative_eq!(x[0], (3.0 * 2.0 - 2.0 * 5.0) / 8.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], (-2.0 * 2.0 + 4.0 * 5.0) / 8.0, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = vec![1.0, 2.0, 2.0, 1.0];
        assert!(cholesky(&a, 2).is_err());
    }
}
