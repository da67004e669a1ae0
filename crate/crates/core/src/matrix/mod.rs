//! Dense row-major `f64` matrices and the handful of spectral primitives the
//! rest of the crate is built on.
//!
//! A [`Matrix`] is validated on construction: the entry count must equal
//! `rows * cols` and every entry must be finite. Shapes are checked eagerly
//! by every binary operation.

mod svd;
mod text;

pub use svd::{singular_values, svd, SvdResult, SVD_MAX_SWEEPS};
pub use text::{format_f64, format_matrix, parse_matrix};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{BhraError, Result};

/// Default relative tolerance for [`numeric_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = BhraError;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl From<Matrix> for RawMatrix {
    fn from(m: Matrix) -> Self {
        RawMatrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for row in self.data.chunks(self.cols.max(1)) {
            writeln!(f, "  {row:?}")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(BhraError::BadLength {
                rows,
                cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(BhraError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
                value: data[pos],
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged or non-finite input,
    /// so this is meant for literals in tests and fixtures.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), n_cols, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix::new(n_rows, n_cols, data).expect("finite literal")
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = f(i, j);
                assert!(v.is_finite(), "from_fn produced {v} at ({i}, {j})");
                data.push(v);
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![1.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Matrix::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 })
    }

    /// Outer product `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        Matrix::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    // Mutation stays crate-private: optimizers and finite differences are the
    // only writers, and they keep entries finite.
    #[inline]
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(BhraError::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Matrix::new(m, n, out)
    }

    fn check_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(BhraError::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        self.check_same_shape(other, op)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add_scaled", |a, b| a + alpha * b)
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| alpha * self.get(i, j))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Matrix> {
        Matrix::new(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Copies the `rows x cols` window whose top-left corner is `(r0, c0)`.
    pub fn submatrix(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        assert!(
            r0 + rows <= self.rows && c0 + cols <= self.cols,
            "window out of range"
        );
        let mut data = Vec::with_capacity(rows * cols);
        for i in r0..r0 + rows {
            data.extend_from_slice(&self.data[i * self.cols + c0..i * self.cols + c0 + cols]);
        }
        Matrix { rows, cols, data }
    }

    pub(crate) fn write_submatrix(&mut self, r0: usize, c0: usize, block: &Matrix) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for i in 0..block.rows {
            let dst = (r0 + i) * self.cols + c0;
            self.data[dst..dst + block.cols].copy_from_slice(block.row(i));
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.sum_squares().sqrt()
    }

    pub fn spectral_norm(&self) -> Result<f64> {
        Ok(singular_values(self)?.first().copied().unwrap_or(0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Largest entrywise absolute difference. Shapes must agree.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs())))
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.hadamard(b)
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.frobenius_norm()
}

pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    m.spectral_norm()
}

/// Number of singular values strictly above `tol * σ₁`; zero for a zero matrix.
pub fn numeric_rank(m: &Matrix, tol: f64) -> Result<usize> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(BhraError::config(format!(
            "rank tolerance must be positive, got {tol}"
        )));
    }
    let sv = singular_values(m)?;
    Ok(rank_of_spectrum(&sv, tol))
}

pub(crate) fn rank_of_spectrum(sv: &[f64], tol: f64) -> usize {
    match sv.first() {
        Some(&top) if top > 0.0 => sv.iter().filter(|&&s| s > tol * top).count(),
        _ => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_and_hand_cases() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(Matrix::identity(2).matmul(&m).unwrap(), m);

        let col = Matrix::from_rows(&[[1.0], [1.0]]);
        let row = Matrix::from_rows(&[[1.0, 0.0]]);
        assert_eq!(
            col.matmul(&row).unwrap(),
            Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]])
        );
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        assert!(matches!(
            a.matmul(&b),
            Err(BhraError::DimensionMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn hadamard_cases() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(m.hadamard(&Matrix::ones(2, 2)).unwrap(), m);
        let mask = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]);
        assert_eq!(
            m.hadamard(&mask).unwrap(),
            Matrix::from_rows(&[[1.0, 0.0], [3.0, 0.0]])
        );
        assert!(m.hadamard(&Matrix::zeros(2, 2)).unwrap().is_zero());
        assert!(m.hadamard(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn construction_validates() {
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0; 3]),
            Err(BhraError::BadLength { got: 3, .. })
        ));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(BhraError::NonFinite { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn norms() {
        let i3 = Matrix::identity(3);
        assert!((i3.frobenius_norm() - 3f64.sqrt()).abs() < 1e-15);
        assert!((i3.spectral_norm().unwrap() - 1.0).abs() < 1e-15);

        let d = Matrix::from_rows(&[[3.0, 0.0], [0.0, 4.0]]);
        assert_eq!(d.frobenius_norm(), 5.0);
        assert!((d.spectral_norm().unwrap() - 4.0).abs() < 1e-14);

        let z = Matrix::zeros(3, 2);
        assert_eq!(z.frobenius_norm(), 0.0);
        assert_eq!(z.spectral_norm().unwrap(), 0.0);
    }

    #[test]
    fn numeric_rank_cases() {
        let uv = Matrix::outer(&[1.0, -2.0, 0.5], &[3.0, 1.0, 4.0, 1.5]);
        assert_eq!(numeric_rank(&uv, DEFAULT_RANK_TOL).unwrap(), 1);
        assert_eq!(
            numeric_rank(&Matrix::zeros(4, 4), DEFAULT_RANK_TOL).unwrap(),
            0
        );
        assert!(numeric_rank(&uv, 0.0).is_err());
    }

    #[test]
    fn submatrix_round_trip() {
        let m = Matrix::from_fn(4, 6, |i, j| (i * 6 + j) as f64);
        let block = m.submatrix(2, 3, 2, 3);
        assert_eq!(block.row(0), &[15.0, 16.0, 17.0]);
        let mut out = Matrix::zeros(4, 6);
        out.write_submatrix(2, 3, &block);
        assert_eq!(out.get(3, 5), 23.0);
        assert_eq!(out.get(0, 0), 0.0);
    }
}
