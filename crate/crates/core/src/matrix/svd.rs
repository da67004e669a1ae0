//! One-sided (Hestenes) Jacobi SVD.
//!
//! Columns of the working copy are rotated pairwise until every pair is
//! numerically orthogonal; the column norms are then the singular values.
//! Tall inputs are handled directly, wide inputs through their transpose.

use super::Matrix;
use crate::error::{BhraError, Result};

pub const SVD_MAX_SWEEPS: usize = 60;

/// Columns whose norm falls below this fraction of `‖M‖_F` are treated as
/// numerically null: they are not rotated and their left vectors are
/// completed to an orthonormal basis afterwards.
const NULL_COLUMN_REL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Non-increasing, length `min(rows, cols)`.
    pub singular_values: Vec<f64>,
    /// `rows x k` with orthonormal columns, when requested.
    pub left_vectors: Option<Matrix>,
    /// `cols x k` with orthonormal columns, when requested.
    pub right_vectors: Option<Matrix>,
    pub sweeps: usize,
}

impl SvdResult {
    /// `U · diag(σ) · Vᵀ`, or `None` when factors were not computed.
    pub fn reconstruct(&self) -> Option<Matrix> {
        let u = self.left_vectors.as_ref()?;
        let v = self.right_vectors.as_ref()?;
        let k = self.singular_values.len();
        Some(Matrix::from_fn(u.rows(), v.rows(), |i, j| {
            (0..k)
                .map(|p| u.get(i, p) * self.singular_values[p] * v.get(j, p))
                .sum()
        }))
    }
}

pub fn svd(m: &Matrix) -> Result<SvdResult> {
    decompose(m, true)
}

pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    Ok(decompose(m, false)?.singular_values)
}

fn decompose(m: &Matrix, want_vectors: bool) -> Result<SvdResult> {
    if m.rows() >= m.cols() {
        decompose_tall(m, want_vectors)
    } else {
        let r = decompose_tall(&m.transpose(), want_vectors)?;
        Ok(SvdResult {
            singular_values: r.singular_values,
            left_vectors: r.right_vectors,
            right_vectors: r.left_vectors,
            sweeps: r.sweeps,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xp, yp) = (*x, *y);
        *x = c * xp - s * yp;
        *y = s * xp + c * yp;
    }
}

fn decompose_tall(m: &Matrix, want_vectors: bool) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    let mut work: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut right: Vec<Vec<f64>> = if want_vectors {
        (0..cols)
            .map(|j| (0..cols).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    } else {
        Vec::new()
    };

    let null_sq = (NULL_COLUMN_REL * m.frobenius_norm()).powi(2);
    let rel_tol = (rows.max(1) as f64) * f64::EPSILON;

    let mut sweeps = 0;
    let mut converged = cols < 2;
    while !converged {
        if sweeps == SVD_MAX_SWEEPS {
            return Err(BhraError::SvdNoConvergence { sweeps });
        }
        sweeps += 1;
        let mut rotated = false;
        for p in 0..cols - 1 {
            for q in p + 1..cols {
                let alpha = dot(&work[p], &work[p]);
                let beta = dot(&work[q], &work[q]);
                if alpha <= null_sq || beta <= null_sq {
                    continue;
                }
                let gamma = dot(&work[p], &work[q]);
                if gamma.abs() <= rel_tol * (alpha * beta).sqrt() {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = work.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                if want_vectors {
                    let (lo, hi) = right.split_at_mut(q);
                    rotate(&mut lo[p], &mut hi[0], c, s);
                }
                rotated = true;
            }
        }
        converged = !rotated;
    }

    let norms: Vec<f64> = work.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let singular_values: Vec<f64> = order.iter().map(|&j| norms[j]).collect();

    if !want_vectors {
        return Ok(SvdResult {
            singular_values,
            left_vectors: None,
            right_vectors: None,
            sweeps,
        });
    }

    let null_norm = null_sq.sqrt();
    let mut left: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut pending = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        if norms[j] > null_norm && norms[j] > 0.0 {
            left.push(work[j].iter().map(|v| v / norms[j]).collect());
        } else {
            left.push(vec![0.0; rows]);
            pending.push(slot);
        }
    }
    complete_basis(&mut left, &pending, rows);

    let u = Matrix::from_fn(rows, cols, |i, k| left[k][i]);
    let v = Matrix::from_fn(cols, cols, |i, k| right[order[k]][i]);
    Ok(SvdResult {
        singular_values,
        left_vectors: Some(u),
        right_vectors: Some(v),
        sweeps,
    })
}

/// Fills the `pending` slots with unit vectors orthogonal to every other
/// column. Each slot takes the standard basis vector with the largest
/// residual after projection; with `k` slots still open that residual has
/// squared norm at least `k / dim`.
fn complete_basis(cols: &mut [Vec<f64>], pending: &[usize], dim: usize) {
    for (i, &slot) in pending.iter().enumerate() {
        let open = &pending[i..];
        let residual = |e: usize| {
            let mut v = vec![0.0; dim];
            v[e] = 1.0;
            // Two passes of Gram-Schmidt for stability.
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if open.contains(&k) {
                        continue;
                    }
                    let proj = dot(&v, c);
                    for (x, y) in v.iter_mut().zip(c) {
                        *x -= proj * y;
                    }
                }
            }
            v
        };
        let best = (0..dim)
            .map(residual)
            .max_by(|a, b| dot(a, a).total_cmp(&dot(b, b)))
            .expect("dimension is positive");
        let norm = dot(&best, &best).sqrt();
        cols[slot] = best.into_iter().map(|x| x / norm).collect();
    }
}
