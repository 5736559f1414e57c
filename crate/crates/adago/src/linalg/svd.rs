//! Reduced singular value decomposition via one-sided Jacobi rotations.

use super::{ensure_finite, frobenius_norm, Matrix};
use crate::error::{Error, Result};

/// Relative threshold below which a column pair counts as orthogonal.
const JACOBI_TOL: f64 = 1e-12;
/// Sweep budget; one-sided Jacobi converges quadratically, so desk-scale
/// matrices need well under ten sweeps.
const MAX_SWEEPS: usize = 60;
/// Singular values at or below `RANK_TOL * sigma_max` are dropped.
const RANK_TOL: f64 = 1e-12;

/// Reduced SVD `m = u * diag(sigma) * v^T` keeping only the `k` singular
/// values above the rank threshold.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows x k`, orthonormal columns.
    pub u: Matrix,
    /// Singular values, descending, all positive.
    pub sigma: Vec<f64>,
    /// `cols x k`, orthonormal columns.
    pub v: Matrix,
    /// Numerical rank.
    pub k: usize,
}

/// Computes the reduced SVD of a nonzero matrix.
///
/// The decomposition runs on the taller orientation (the input is transposed
/// when it has more columns than rows, and `u`/`v` are swapped back at the
/// end). One-sided Jacobi rotations orthogonalize the columns; the sweep loop
/// stops once every column pair is orthogonal to within `1e-12` relative, and
/// errors out if 60 sweeps were not enough.
pub fn svd_reduced(m: &Matrix) -> Result<SvdResult> {
    ensure_finite(m, "svd_reduced")?;
    if frobenius_norm(m)? == 0.0 {
        return Err(Error::DegenerateInput(
            "svd_reduced: zero matrix has no reduced SVD".into(),
        ));
    }

    let transposed = m.cols() > m.rows();
    let tall = if transposed { m.transpose() } else { m.clone() };
    let (rows, cols) = (tall.rows(), tall.cols());

    // Work on w = tall^T so each column of `tall` is a contiguous row of `w`;
    // vt accumulates V^T the same way (its rows are the columns of V).
    let mut w = tall.transpose();
    let mut vt = Matrix::identity(cols);

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotations = 0usize;
        for p in 0..cols.saturating_sub(1) {
            for q in (p + 1)..cols {
                let (app, aqq, apq) = {
                    let rp = w.row(p);
                    let rq = w.row(q);
                    let mut app = 0.0;
                    let mut aqq = 0.0;
                    let mut apq = 0.0;
                    for i in 0..rows {
                        app += rp[i] * rp[i];
                        aqq += rq[i] * rq[i];
                        apq += rp[i] * rq[i];
                    }
                    (app, aqq, apq)
                };
                if app == 0.0 || aqq == 0.0 {
                    continue; // a zero column is orthogonal to everything
                }
                if apq.abs() <= JACOBI_TOL * (app * aqq).sqrt() {
                    continue;
                }
                rotations += 1;
                // Symmetric Jacobi rotation that zeroes the (p,q) entry of
                // the 2x2 Gram block [[app, apq], [apq, aqq]].
                let zeta = (aqq - app) / (2.0 * apq);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut w, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        if rotations == 0 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericFailure(format!(
            "svd_reduced: one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    // Singular values are the row norms of w; sort them descending.
    let mut order: Vec<(usize, f64)> = (0..cols)
        .map(|j| {
            let n = w.row(j).iter().map(|x| x * x).sum::<f64>().sqrt();
            (j, n)
        })
        .collect();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite norms"));

    let sigma_max = order[0].1;
    let k = order
        .iter()
        .take_while(|(_, s)| *s > RANK_TOL * sigma_max)
        .count();
    debug_assert!(k >= 1, "nonzero matrix must have at least one singular value");

    let mut u = Matrix::zeros(rows, k);
    let mut v = Matrix::zeros(cols, k);
    let mut sigma = Vec::with_capacity(k);
    for (col, &(j, s)) in order.iter().take(k).enumerate() {
        sigma.push(s);
        let wr = w.row(j);
        for i in 0..rows {
            u[(i, col)] = wr[i] / s;
        }
        let vr = vt.row(j);
        for i in 0..cols {
            v[(i, col)] = vr[i];
        }
    }

    let (u, v) = if transposed { (v, u) } else { (u, v) };
    Ok(SvdResult { u, sigma, v, k })
}

/// Applies the Givens rotation `[c -s; s c]` to rows `p` and `q` in place.
fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    let (pi, qi) = (p * cols, q * cols);
    let data = m.data_mut();
    for i in 0..cols {
        let a = data[pi + i];
        let b = data[qi + i];
        data[pi + i] = c * a - s * b;
        data[qi + i] = s * a + c * b;
    }
}
