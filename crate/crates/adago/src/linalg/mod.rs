//! Dense row-major matrices and the handful of decompositions the optimizers
//! need: Frobenius/spectral/nuclear norms, a reduced SVD, and exact /
//! Newton–Schulz orthogonalization.
//!
//! Everything is written for desk-scale problems (dimensions in the tens to
//! low hundreds). The SVD is a one-sided Jacobi — slow asymptotically but
//! simple, dependency-free, and accurate to near machine precision, which is
//! what the orthogonalization correctness bounds require.

mod ortho;
mod svd;

pub use ortho::{orthogonalize_exact, orthogonalize_newton_schulz};
pub use svd::{svd_reduced, SvdResult};

use crate::error::{Error, Result};

/// Dense `rows x cols` matrix of `f64`, row-major.
///
/// Vectors are carried as `n x 1` matrices and scalars as `1 x 1`, so a single
/// type flows through models, optimizers, and telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from an explicit data buffer (row-major).
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix buffer length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "from_rows needs at least one row");
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix::new(rows, cols, data)
    }

    /// Column vector from a slice.
    pub fn column(values: &[f64]) -> Self {
        Matrix::new(values.len(), 1, values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// `self * other`, naive triple loop in cache-friendly (i,k,j) order.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = out.row_mut(i);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> Matrix {
        let data = self.data.iter().map(|x| c * x).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert!(self.same_shape(other), "add shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert!(self.same_shape(other), "sub shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, c: f64, other: &Matrix) {
        assert!(self.same_shape(other), "add_scaled shape mismatch");
        for (d, s) in self.data.iter_mut().zip(&other.data) {
            *d += c * s;
        }
    }

    /// Trace inner product `<self, other> = sum_ij self_ij * other_ij`.
    pub fn dot(&self, other: &Matrix) -> f64 {
        assert!(self.same_shape(other), "dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let data = self.data.iter().map(|x| f(*x)).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    /// Maximum absolute entry; 0 for an all-zero matrix.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what}: non-finite entry")))
    }
}

/// Frobenius norm `sqrt(sum_ij m_ij^2)`.
pub fn frobenius_norm(m: &Matrix) -> Result<f64> {
    ensure_finite(m, "frobenius_norm")?;
    Ok(m.data().iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// Spectral norm (largest singular value) via power iteration on the Gram
/// matrix of the smaller side.
///
/// Stops when the Rayleigh-quotient estimate changes by a relative factor of
/// at most `1e-10`, or after 10 000 iterations; the zero matrix returns 0.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    ensure_finite(m, "spectral_norm")?;
    let fro = frobenius_norm(m)?;
    if fro == 0.0 {
        return Ok(0.0);
    }
    // Work with the smaller Gram matrix: m^T m (cols x cols) or m m^T.
    let gram = if m.rows() >= m.cols() {
        m.transpose().matmul(m)
    } else {
        m.matmul(&m.transpose())
    };
    let n = gram.rows();
    if n == 1 {
        return Ok(gram[(0, 0)].max(0.0).sqrt());
    }

    // Deterministic pseudo-random start vector (splitmix64 stream) so the
    // iteration almost surely has a component along the top eigenvector.
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut x: Vec<f64> = (0..n)
        .map(|_| {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^= z >> 31;
            (z as f64 / u64::MAX as f64) - 0.5
        })
        .collect();
    normalize(&mut x);

    let mut lambda = 0.0f64;
    for _ in 0..10_000 {
        let y = mat_vec(&gram, &x);
        let rayleigh: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if ynorm == 0.0 {
            // x landed in the kernel; the Gram matrix is nonzero, so restart
            // from a shifted deterministic vector.
            x = (0..n).map(|i| 1.0 + (i as f64) * 0.5).collect();
            normalize(&mut x);
            lambda = 0.0;
            continue;
        }
        let converged = (rayleigh - lambda).abs() <= 1e-10 * rayleigh.abs().max(f64::MIN_POSITIVE);
        lambda = rayleigh;
        x = y;
        for v in &mut x {
            *v /= ynorm;
        }
        if converged {
            break;
        }
    }
    Ok(lambda.max(0.0).sqrt())
}

/// Nuclear norm (sum of singular values).
pub fn nuclear_norm(m: &Matrix) -> Result<f64> {
    ensure_finite(m, "nuclear_norm")?;
    if frobenius_norm(m)? == 0.0 {
        return Ok(0.0);
    }
    let svd = svd_reduced(m)?;
    Ok(svd.sigma.iter().sum())
}

fn mat_vec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|i| m.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        for v in x.iter_mut() {
            *v /= n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn frobenius_matches_hand_values() {
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 2)).unwrap(), 0.0);
        let i3 = Matrix::identity(3);
        assert!((frobenius_norm(&i3).unwrap() - 3.0f64.sqrt()).abs() < 1e-15);
        let row = mat(&[&[3.0, 4.0]]);
        assert_eq!(frobenius_norm(&row).unwrap(), 5.0);
    }

    #[test]
    fn frobenius_rejects_non_finite() {
        let m = mat(&[&[1.0, f64::NAN]]);
        assert!(matches!(
            frobenius_norm(&m),
            Err(crate::Error::InvalidInput(_))
        ));
    }

    #[test]
    fn spectral_norm_of_diagonal_is_max_entry() {
        let d = mat(&[&[2.0, 0.0], &[0.0, 5.0]]);
        assert!((spectral_norm(&d).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_of_identity_is_one() {
        for n in [1, 2, 5, 8] {
            let i = Matrix::identity(n);
            assert!((spectral_norm(&i).unwrap() - 1.0).abs() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn spectral_norm_matches_largest_singular_value() {
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let m = Matrix::from_fn(4, 3, |_, _| next() * 4.0);
        let svd = svd_reduced(&m).unwrap();
        let top = svd.sigma[0];
        assert!(
            (spectral_norm(&m).unwrap() - top).abs() <= 1e-9 * top,
            "power iteration disagrees with Jacobi SVD"
        );
    }

    #[test]
    fn spectral_norm_of_zero_is_zero() {
        assert_eq!(spectral_norm(&Matrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn nuclear_norm_of_diagonal_sums_entries() {
        let d = mat(&[&[2.0, 0.0], &[0.0, 5.0]]);
        assert!((nuclear_norm(&d).unwrap() - 7.0).abs() < 1e-10);
    }

    #[test]
    fn nuclear_norm_of_rank_one_is_product_of_lengths() {
        let a = [1.0, -2.0, 0.5];
        let b = [3.0, 4.0];
        let m = Matrix::from_fn(3, 2, |i, j| a[i] * b[j]);
        let expect = (a.iter().map(|x| x * x).sum::<f64>()
            * b.iter().map(|x| x * x).sum::<f64>())
        .sqrt();
        assert!((nuclear_norm(&m).unwrap() - expect).abs() < 1e-10 * expect);
    }

    #[test]
    fn norm_ordering_spectral_fro_nuclear() {
        let mut state = 99u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for _ in 0..50 {
            let m = Matrix::from_fn(5, 4, |_, _| next() * 10.0);
            let s = spectral_norm(&m).unwrap();
            let f = frobenius_norm(&m).unwrap();
            let n = nuclear_norm(&m).unwrap();
            let slack = 1e-9 * (1.0 + n);
            assert!(s <= f + slack, "spectral {s} > frobenius {f}");
            assert!(f <= n + slack, "frobenius {f} > nuclear {n}");
        }
    }

    #[test]
    fn matmul_and_transpose_agree_with_hand_product() {
        let a = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = mat(&[&[5.0, 6.0], &[7.0, 8.0]]);
        let ab = a.matmul(&b);
        assert_eq!(ab.data(), &[19.0, 22.0, 43.0, 50.0]);
        let at = a.transpose();
        assert_eq!(at.data(), &[1.0, 3.0, 2.0, 4.0]);
    }
}
