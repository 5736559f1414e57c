//! Exact and Newton–Schulz orthogonalization.
//!
//! `Orth(m)` is the nearest matrix with orthonormal rows (wide case) or
//! columns (tall case) in Frobenius distance; for a reduced SVD
//! `m = u * diag(sigma) * v^T` that minimizer is `u * v^T`. The Newton–Schulz
//! variant approximates the same map with matrix products only, which is what
//! a large-scale implementation would run on an accelerator.

use super::{ensure_finite, frobenius_norm, svd_reduced, Matrix};
use crate::error::{Error, Result};

/// Exact orthogonalization `Orth(m) = u * v^T` from the reduced SVD.
///
/// Rank-deficient inputs use only the singular vectors above the rank
/// threshold, so the result has orthonormal columns spanning the range of the
/// surviving part. The zero matrix has no meaningful direction and is
/// rejected.
pub fn orthogonalize_exact(m: &Matrix) -> Result<Matrix> {
    let svd = svd_reduced(m)?;
    Ok(svd.u.matmul(&svd.v.transpose()))
}

/// Cubic Newton–Schulz iteration for `Orth(m)`.
///
/// Starts from `x = m / ‖m‖_F` (all singular values then lie in `(0, 1]`,
/// inside the iteration's monotone convergence region) and repeats
/// `x <- 1.5 x - 0.5 x (x^T x)` for `iters` rounds. Accuracy improves with
/// `iters`; roughly 30 rounds reach `1e-6` spectral error on mildly
/// conditioned inputs.
pub fn orthogonalize_newton_schulz(m: &Matrix, iters: u32) -> Result<Matrix> {
    ensure_finite(m, "orthogonalize_newton_schulz")?;
    let fro = frobenius_norm(m)?;
    if fro == 0.0 {
        return Err(Error::DegenerateInput(
            "orthogonalize_newton_schulz: zero matrix has no orthogonal factor".into(),
        ));
    }
    let mut x = m.scale(1.0 / fro);
    let use_right_gram = m.rows() >= m.cols();
    for _ in 0..iters {
        // x (x^T x) and (x x^T) x are equal; form the smaller Gram matrix.
        let cubic = if use_right_gram {
            let gram = x.transpose().matmul(&x);
            x.matmul(&gram)
        } else {
            let gram = x.matmul(&x.transpose());
            gram.matmul(&x)
        };
        let mut next = x.scale(1.5);
        next.add_scaled(-0.5, &cubic);
        x = next;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_norm;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut state = seed;
        Matrix::from_fn(rows, cols, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 6.0 - 3.0
        })
    }

    #[test]
    fn identity_is_fixed() {
        let o = orthogonalize_exact(&Matrix::identity(2)).unwrap();
        let err = frobenius_norm(&o.sub(&Matrix::identity(2))).unwrap();
        assert!(err < 1e-12);
    }

    #[test]
    fn positive_diagonal_maps_to_identity() {
        let d = mat(&[&[3.0, 0.0], &[0.0, 5.0]]);
        let o = orthogonalize_exact(&d).unwrap();
        let err = frobenius_norm(&o.sub(&Matrix::identity(2))).unwrap();
        assert!(err < 1e-12, "Orth(diag(3,5)) should be I, got error {err}");
    }

    #[test]
    fn rotation_scaled_recovers_rotation() {
        // [[0,2],[-2,0]] = 2 * (rotation by -90 degrees); Orth strips the scale.
        let m = mat(&[&[0.0, 2.0], &[-2.0, 0.0]]);
        let o = orthogonalize_exact(&m).unwrap();
        let expect = mat(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let err = frobenius_norm(&o.sub(&expect)).unwrap();
        assert!(err < 1e-12, "expected the unscaled rotation, error {err}");
    }

    #[test]
    fn tall_result_has_orthonormal_columns_wide_has_orthonormal_rows() {
        let tall = lcg_matrix(7, 3, 41);
        let o = orthogonalize_exact(&tall).unwrap();
        let gram = o.transpose().matmul(&o);
        let err = frobenius_norm(&gram.sub(&Matrix::identity(3))).unwrap();
        assert!(err < 1e-10, "O^T O != I for tall input: {err}");

        let wide = lcg_matrix(3, 7, 42);
        let o = orthogonalize_exact(&wide).unwrap();
        let gram = o.matmul(&o.transpose());
        let err = frobenius_norm(&gram.sub(&Matrix::identity(3))).unwrap();
        assert!(err < 1e-10, "O O^T != I for wide input: {err}");
    }

    #[test]
    fn scale_invariance_and_left_orthogonal_invariance() {
        let m = lcg_matrix(4, 4, 43);
        let o = orthogonalize_exact(&m).unwrap();

        let o_scaled = orthogonalize_exact(&m.scale(3.5)).unwrap();
        assert!(frobenius_norm(&o_scaled.sub(&o)).unwrap() < 1e-9);

        // Left-multiplying by a rotation rotates the orthogonal factor.
        let (c, s) = (1.1f64.cos(), 1.1f64.sin());
        let mut p = Matrix::identity(4);
        p[(0, 0)] = c;
        p[(0, 2)] = -s;
        p[(2, 0)] = s;
        p[(2, 2)] = c;
        let o_rot = orthogonalize_exact(&p.matmul(&m)).unwrap();
        let err = frobenius_norm(&o_rot.sub(&p.matmul(&o))).unwrap();
        assert!(err < 1e-9, "Orth(P m) != P Orth(m): {err}");
    }

    #[test]
    fn exact_minimizes_frobenius_distance_over_2x2_grid() {
        // Brute-force oracle: sweep rotations in 1-degree steps, with and
        // without a reflection, and check Orth(m) is at least as close.
        for seed in [51u64, 52, 53, 54] {
            let m = lcg_matrix(2, 2, seed);
            let o = orthogonalize_exact(&m).unwrap();
            let best = frobenius_norm(&o.sub(&m)).unwrap();
            for deg in 0..360 {
                let th = (deg as f64).to_radians();
                let (c, s) = (th.cos(), th.sin());
                for refl in [1.0, -1.0] {
                    let cand = mat(&[&[c, -s * refl], &[s, c * refl]]);
                    let d = frobenius_norm(&cand.sub(&m)).unwrap();
                    assert!(
                        best <= d + 1e-12,
                        "seed {seed}: grid candidate at {deg} deg (refl {refl}) beats Orth: {d} < {best}"
                    );
                }
            }
        }
    }

    #[test]
    fn newton_schulz_converges_to_identity_on_identity() {
        let o = orthogonalize_newton_schulz(&Matrix::identity(2), 30).unwrap();
        let err = frobenius_norm(&o.sub(&Matrix::identity(2))).unwrap();
        assert!(err < 1e-9, "NS(I) after 30 iters should be I, error {err}");
    }

    #[test]
    fn newton_schulz_approaches_exact_factor() {
        // Mild condition number (about 4): 30 iterations reach 1e-6.
        let d = mat(&[&[2.0, 0.3, 0.0], &[0.0, 1.0, -0.2], &[0.1, 0.0, 0.5]]);
        let exact = orthogonalize_exact(&d).unwrap();
        let ns = orthogonalize_newton_schulz(&d, 30).unwrap();
        let err = spectral_norm(&ns.sub(&exact)).unwrap();
        assert!(err <= 1e-6, "NS error after 30 iters: {err}");
    }

    #[test]
    fn newton_schulz_error_decreases_with_more_iterations() {
        let d = mat(&[&[1.0, 0.0], &[0.0, 1e-8]]);
        let exact = orthogonalize_exact(&d).unwrap();
        let err5 = spectral_norm(&orthogonalize_newton_schulz(&d, 5).unwrap().sub(&exact)).unwrap();
        let err50 =
            spectral_norm(&orthogonalize_newton_schulz(&d, 50).unwrap().sub(&exact)).unwrap();
        assert!(
            err50 < err5,
            "ill-conditioned input: error at 50 iters ({err50}) not below 5 iters ({err5})"
        );
    }

    #[test]
    fn zero_matrix_is_rejected_by_both_routes() {
        assert!(orthogonalize_exact(&Matrix::zeros(2, 2)).is_err());
        assert!(orthogonalize_newton_schulz(&Matrix::zeros(2, 2), 10).is_err());
    }
}
