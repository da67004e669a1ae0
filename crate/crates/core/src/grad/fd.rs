use crate::error::{BhraError, Result};
use crate::matrix::Matrix;

/// Central-difference step.
pub const FD_EPS: f64 = 1e-5;

/// Central finite differences `(f(θ + ε e) − f(θ − ε e)) / 2ε`, one
/// coordinate at a time over every entry of every parameter matrix.
pub fn fd_gradient<F>(loss: F, params: &[Matrix], eps: f64) -> Result<Vec<Matrix>>
where
    F: Fn(&[Matrix]) -> f64,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(BhraError::config(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let mut work: Vec<Matrix> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    let mut evals = 0usize;
    let mut eval = |work: &[Matrix]| -> Result<f64> {
        let v = loss(work);
        evals += 1;
        if !v.is_finite() {
            return Err(BhraError::Diverged {
                step: evals,
                value: v,
            });
        }
        Ok(v)
    };
    for k in 0..params.len() {
        let (rows, cols) = params[k].shape();
        let mut g = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let orig = params[k].get(i, j);
                work[k].set(i, j, orig + eps);
                let plus = eval(&work)?;
                work[k].set(i, j, orig - eps);
                let minus = eval(&work)?;
                work[k].set(i, j, orig);
                g.set(i, j, (plus - minus) / (2.0 * eps));
            }
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Coordinatewise agreement between two gradient sets.
///
/// The normalized error of a coordinate is `|a − n| / max(|a|, |n|, floor)`
/// with `floor = abs_tol / rel_tol`, so `max_normalized_err ≤ rel_tol`
/// exactly when every coordinate satisfies
/// `|a − n| ≤ max(rel_tol · max(|a|, |n|), abs_tol)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradComparison {
    pub max_abs_err: f64,
    pub max_normalized_err: f64,
    pub coordinates: usize,
}

impl GradComparison {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_normalized_err <= rel_tol
    }

    pub fn merge(self, other: GradComparison) -> GradComparison {
        GradComparison {
            max_abs_err: self.max_abs_err.max(other.max_abs_err),
            max_normalized_err: self.max_normalized_err.max(other.max_normalized_err),
            coordinates: self.coordinates + other.coordinates,
        }
    }
}

pub fn compare_gradients(
    analytic: &[Matrix],
    numeric: &[Matrix],
    rel_tol: f64,
    abs_tol: f64,
) -> Result<GradComparison> {
    if analytic.len() != numeric.len() {
        return Err(BhraError::config(format!(
            "gradient sets differ in length: {} vs {}",
            analytic.len(),
            numeric.len()
        )));
    }
    let floor = abs_tol / rel_tol;
    let mut out = GradComparison {
        max_abs_err: 0.0,
        max_normalized_err: 0.0,
        coordinates: 0,
    };
    for (a, n) in analytic.iter().zip(numeric) {
        if a.shape() != n.shape() {
            return Err(BhraError::DimensionMismatch {
                op: "compare_gradients",
                left: a.shape(),
                right: n.shape(),
            });
        }
        for (&x, &y) in a.as_slice().iter().zip(n.as_slice()) {
            let err = (x - y).abs();
            out.max_abs_err = out.max_abs_err.max(err);
            out.max_normalized_err = out
                .max_normalized_err
                .max(err / x.abs().max(y.abs()).max(floor));
            out.coordinates += 1;
        }
    }
    Ok(out)
}
