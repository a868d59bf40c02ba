//! Cyclic Jacobi eigendecomposition for small dense symmetric matrices.
//!
//! The logit Hessian is V x V with V at most 64 in every supported scenario,
//! so a dependency-free rotation sweep is both fast enough and exactly
//! reproducible across platforms. Convergence is declared when the
//! off-diagonal Frobenius mass drops below [`OFF_DIAGONAL_THRESHOLD`]; the
//! sweep count is hard-capped so a non-symmetric or otherwise hostile input
//! fails loudly instead of spinning.

use crate::error::{Error, Result};

/// Off-diagonal Frobenius norm below which the iteration stops.
pub(crate) const OFF_DIAGONAL_THRESHOLD: f64 = 1e-14;

/// Hard cap on full sweeps before reporting non-convergence.
pub(crate) const MAX_SWEEPS: usize = 100;

/// Frobenius norm of the off-diagonal part of a flat row-major n x n matrix.
fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[i * n + j] * a[i * n + j];
            }
        }
    }
    sum.sqrt()
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// `a` is row-major n x n and is assumed symmetric; only the caller-checked
/// symmetric part participates in the rotations. Returns the eigenvalues and
/// the matching eigenvectors (unit norm, mutually orthogonal) in an
/// unspecified order; callers impose their own ordering and sign policy.
///
/// # Errors
/// [`Error::EigenNonConvergence`] if the off-diagonal mass is still above the
/// threshold after [`MAX_SWEEPS`] sweeps.
pub(crate) fn eigen_symmetric(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    assert_eq!(a.len(), n * n, "matrix buffer must be n*n");
    let mut m = a.to_vec();
    // Rotation accumulator; eigenvector k ends up in column k.
    let mut vecs = vec![0.0f64; n * n];
    for i in 0..n {
        vecs[i * n + i] = 1.0;
    }

    for _sweep in 0..MAX_SWEEPS {
        if off_diagonal_norm(&m, n) < OFF_DIAGONAL_THRESHOLD {
            return Ok(extract(&m, &vecs, n));
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                // Symmetric Schur decomposition of the 2x2 (p,q) block.
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    // Avoid overflow in theta^2; the rotation is tiny anyway.
                    1.0 / (2.0 * theta)
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                m[p * n + p] -= t * apq;
                m[q * n + q] += t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for i in 0..n {
                    if i != p && i != q {
                        let aip = m[i * n + p];
                        let aiq = m[i * n + q];
                        m[i * n + p] = aip - s * (aiq + tau * aip);
                        m[i * n + q] = aiq + s * (aip - tau * aiq);
                        m[p * n + i] = m[i * n + p];
                        m[q * n + i] = m[i * n + q];
                    }
                }
                for i in 0..n {
                    let vip = vecs[i * n + p];
                    let viq = vecs[i * n + q];
                    vecs[i * n + p] = vip - s * (viq + tau * vip);
                    vecs[i * n + q] = viq + s * (vip - tau * viq);
                }
            }
        }
    }

    let off = off_diagonal_norm(&m, n);
    if off < OFF_DIAGONAL_THRESHOLD {
        return Ok(extract(&m, &vecs, n));
    }
    Err(Error::EigenNonConvergence {
        sweeps: MAX_SWEEPS,
        off_norm: off,
    })
}

fn extract(m: &[f64], vecs: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let eigenvalues: Vec<f64> = (0..n).map(|k| m[k * n + k]).collect();
    let eigenvectors: Vec<Vec<f64>> = (0..n)
        .map(|k| (0..n).map(|i| vecs[i * n + k]).collect())
        .collect();
    (eigenvalues, eigenvectors)
}
