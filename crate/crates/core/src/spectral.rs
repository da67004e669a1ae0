//! Spectral diagnostics for adapter updates.
//!
//! Zero-matrix conventions: stable rank, effective rank and block Gini are
//! all 0 for an all-zero input.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adapters::{partition, BlockGrid};
use crate::error::Result;
use crate::matrix::{format_f64, rank_of_spectrum, singular_values, Matrix, DEFAULT_RANK_TOL};

/// Threshold fraction used for the reported singular count.
pub const COUNT_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub stable_rank: f64,
    pub effective_rank: f64,
    pub numeric_rank: usize,
    pub count_above_1pct: usize,
    pub energy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_gini: Option<f64>,
}

impl SpectralReport {
    pub fn compute(m: &Matrix, grid: Option<BlockGrid>) -> Result<Self> {
        let sv = singular_values(m)?;
        let block_gini = grid.map(|g| block_gini(m, g)).transpose()?;
        Ok(SpectralReport {
            stable_rank: stable_rank_from_spectrum(&sv),
            effective_rank: effective_rank(&sv),
            numeric_rank: rank_of_spectrum(&sv, DEFAULT_RANK_TOL),
            count_above_1pct: count_above_fraction(&sv, COUNT_FRACTION),
            energy: energy(&sv),
            block_gini,
        })
    }

    /// Flat JSON object with 17-significant-digit floats.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{");
        let _ = write!(
            out,
            "\"stable_rank\":{},\"effective_rank\":{},\"numeric_rank\":{},\"count_above_1pct\":{},\"energy\":{}",
            format_f64(self.stable_rank),
            format_f64(self.effective_rank),
            self.numeric_rank,
            self.count_above_1pct,
            format_f64(self.energy),
        );
        if let Some(g) = self.block_gini {
            let _ = write!(out, ",\"block_gini\":{}", format_f64(g));
        }
        out.push('}');
        out
    }

    pub const CSV_HEADER: &'static str =
        "matrix_id,stable_rank,effective_rank,count_1pct,energy,block_gini";

    /// `matrix_id,stable_rank,effective_rank,count_1pct,energy,block_gini`;
    /// the Gini column is empty when no grid was supplied.
    pub fn csv_row(&self, matrix_id: &str) -> String {
        format!(
            "{},{},{},{},{},{}",
            matrix_id,
            format_f64(self.stable_rank),
            format_f64(self.effective_rank),
            self.count_above_1pct,
            format_f64(self.energy),
            self.block_gini.map(format_f64).unwrap_or_default()
        )
    }
}

/// `‖M‖²_F / ‖M‖²₂`, or 0 for the zero matrix.
pub fn stable_rank(m: &Matrix) -> Result<f64> {
    Ok(stable_rank_from_spectrum(&singular_values(m)?))
}

fn stable_rank_from_spectrum(sv: &[f64]) -> f64 {
    match sv.first() {
        Some(&top) if top > 0.0 => energy(sv) / (top * top),
        _ => 0.0,
    }
}

/// `exp(−Σ pᵢ ln pᵢ)` with `pᵢ = σᵢ / Σσ` over the nonzero values.
pub fn effective_rank(sv: &[f64]) -> f64 {
    let total: f64 = sv.iter().filter(|&&s| s > 0.0).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let entropy: f64 = sv
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|&s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    entropy.exp()
}

/// Number of values strictly above `frac · σ₁`.
pub fn count_above_fraction(sv: &[f64], frac: f64) -> usize {
    let top = sv.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > frac * top).count()
}

/// `Σσᵢ²`.
pub fn energy(sv: &[f64]) -> f64 {
    sv.iter().map(|s| s * s).sum()
}

/// Gini coefficient of the per-block Frobenius norms,
/// `Σᵢⱼ |vᵢ − vⱼ| / (2 k² mean(v))` over all ordered pairs of the `k`
/// blocks. Lies in `[0, 1 − 1/k]`.
pub fn block_gini(m: &Matrix, grid: BlockGrid) -> Result<f64> {
    let norms: Vec<f64> = partition(m, grid)?
        .iter()
        .map(Matrix::frobenius_norm)
        .collect();
    Ok(gini(&norms))
}

/// Gini coefficient of a nonnegative sample; 0 when the sample sums to 0.
pub fn gini(values: &[f64]) -> f64 {
    let k = values.len();
    let sum: f64 = values.iter().sum();
    if k == 0 || sum <= 0.0 {
        return 0.0;
    }
    // Sorted form of the pairwise sum: Σᵢⱼ|vᵢ − vⱼ| = 2 Σᵢ (2i − k + 1) v₍ᵢ₎.
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, v)| (2.0 * i as f64 - k as f64 + 1.0) * v)
        .sum();
    let mean = sum / k as f64;
    (2.0 * weighted) / (2.0 * (k * k) as f64 * mean)
}
