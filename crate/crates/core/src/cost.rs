//! Closed-form FLOP and activation-memory accounting for one adapted linear
//! layer of shape `m x n` processing `T` tokens.
//!
//! One scalar multiply or add is one FLOP. The dense base product `W0 X` is
//! left out of every adapter figure.
//!
//! Two families of formulas live here. The *reference* forms
//! ([`flops_lora_train`], [`flops_bhra_train`], [`flops_gralora_train`], ...)
//! follow the standard stage-by-stage accounting. The *counted* forms
//! ([`counted_masked_forward`], [`counted_factored_blockwise`]) are exact
//! operation counts of the pipelines in this crate and are checked against
//! instrumented runs. They coincide with the reference forms on the LoRA
//! pair and on the `(2n − b) r T` projection stage; the reference
//! reconstruction stage `(2m − b) r T` swaps the roles of `m` and `r`
//! relative to the executed product `Y_ij = B_ij Z_ij`, whose count is
//! `(2r − b) m T`.

use serde::Serialize;

use crate::adapters::{AdapterKind, AdapterState, BlockGrid};
use crate::counting::{accumulate, gemm, FlopTally};
use crate::error::{BhraError, Result};
use crate::matrix::Matrix;

fn check_positive(vals: &[(&'static str, usize)]) -> Result<()> {
    for &(name, v) in vals {
        if v == 0 {
            return Err(BhraError::config(format!("{name} must be positive")));
        }
    }
    Ok(())
}

fn check_divides(b: usize, vals: &[(&'static str, usize)]) -> Result<()> {
    for &(what, dim) in vals {
        if dim % b != 0 {
            return Err(BhraError::Divisibility {
                what,
                dim,
                parts: b,
            });
        }
    }
    Ok(())
}

fn to_u64(v: i128) -> u64 {
    u64::try_from(v).expect("flop count is nonnegative and fits in u64")
}

/// `(2n − 1) r T + (2r − 1) m T = 2r(m + n)T − (r + m)T`.
pub fn flops_lora_train(m: usize, n: usize, r: usize, t: usize) -> Result<u64> {
    check_positive(&[("m", m), ("n", n), ("r", r), ("T", t)])?;
    let (m, n, r, t) = (m as i128, n as i128, r as i128, t as i128);
    Ok(to_u64(2 * r * (m + n) * t - (r + m) * t))
}

/// Adapter-only inference cost `(2n − 1) r T + (2m − 1) r T`, shared by HiRA
/// and BHRA once the masks are folded.
pub fn flops_hira_adapter(m: usize, n: usize, r: usize, t: usize) -> Result<u64> {
    check_positive(&[("m", m), ("n", n), ("r", r), ("T", t)])?;
    let (m, n, r, t) = (m as i128, n as i128, r as i128, t as i128);
    Ok(to_u64((2 * n - 1) * r * t + (2 * m - 1) * r * t))
}

pub fn flops_bhra_adapter(m: usize, n: usize, r: usize, t: usize) -> Result<u64> {
    flops_hira_adapter(m, n, r, t)
}

/// HiRA training expression `2r(m + n)T − 2rT + mnT + 2mnr`.
pub fn flops_hira_train(m: usize, n: usize, r: usize, t: usize) -> Result<u64> {
    check_positive(&[("m", m), ("n", n), ("r", r), ("T", t)])?;
    let (m, n, r, t) = (m as i128, n as i128, r as i128, t as i128);
    Ok(to_u64(
        2 * r * (m + n) * t - 2 * r * t + m * n * t + 2 * m * n * r,
    ))
}

/// `2r(m + n)T − 2brT + (mn / b²)T + 2mnr / b`.
pub fn flops_bhra_train(m: usize, n: usize, r: usize, b: usize, t: usize) -> Result<u64> {
    check_positive(&[("m", m), ("n", n), ("r", r), ("b", b), ("T", t)])?;
    check_divides(b, &[("m", m), ("n", n), ("r", r)])?;
    let (m, n, r, b, t) = (m as i128, n as i128, r as i128, b as i128, t as i128);
    Ok(to_u64(
        2 * r * (m + n) * t - 2 * b * r * t + (m * n / (b * b)) * t + 2 * m * n * r / b,
    ))
}

/// Per-stage terms of the BHRA training cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BhraTrainStages {
    /// `Z_ij = A_ij X_j` over all blocks: `(2n − b) r T`.
    pub projection: u64,
    /// `Y_ij = B_ij Z_ij` over all blocks: `(2m − b) r T`.
    pub reconstruction: u64,
    /// Online mask application: `(mn / b²) T`.
    pub mask_online: u64,
    /// Refreshing `C_ij = B_ij A_ij` once per step: `2mnr / b`.
    pub mask_refresh: u64,
}

impl BhraTrainStages {
    pub fn total(&self) -> u64 {
        self.projection + self.reconstruction + self.mask_online + self.mask_refresh
    }
}

pub fn bhra_train_stages(
    m: usize,
    n: usize,
    r: usize,
    b: usize,
    t: usize,
) -> Result<BhraTrainStages> {
    check_positive(&[("m", m), ("n", n), ("r", r), ("b", b), ("T", t)])?;
    check_divides(b, &[("m", m), ("n", n), ("r", r)])?;
    let (m, n, r, b, t) = (m as i128, n as i128, r as i128, b as i128, t as i128);
    Ok(BhraTrainStages {
        projection: to_u64((2 * n - b) * r * t),
        reconstruction: to_u64((2 * m - b) * r * t),
        mask_online: to_u64(m * n / (b * b) * t),
        mask_refresh: to_u64(2 * m * n * r / b),
    })
}

/// The GraLoRA limit (`W0_ij = 1`, `k = b`) in its reference form
/// `(2n − k) r T + (2m − k) m T + (k − 1) m T`.
///
/// The middle term is kept as `(2m − k) m T`; the executed
/// reconstruction costs `(2r − k) m T`, see [`counted_factored_blockwise`].
pub fn flops_gralora_train(m: usize, n: usize, r: usize, k: usize, t: usize) -> Result<u64> {
    check_positive(&[("m", m), ("n", n), ("r", r), ("k", k), ("T", t)])?;
    check_divides(k, &[("m", m), ("n", n), ("r", r)])?;
    let (m, n, r, k, t) = (m as i128, n as i128, r as i128, k as i128, t as i128);
    Ok(to_u64(
        (2 * n - k) * r * t + (2 * m - k) * m * t + (k - 1) * m * t,
    ))
}

/// Exact count of the masked blockwise forward: per block, refresh
/// `C_ij`, form `H_ij = W0_ij ⊙ C_ij`, apply `H_ij X_j`, then accumulate the
/// `b` partial outputs of each block row. Totals `2mnr / b + (2n − 1) m T`.
pub fn counted_masked_forward(m: usize, n: usize, r: usize, b: usize, t: usize) -> Result<u64> {
    check_positive(&[("m", m), ("n", n), ("r", r), ("b", b), ("T", t)])?;
    check_divides(b, &[("m", m), ("n", n), ("r", r)])?;
    let (m, n, r, b, t) = (m as u64, n as u64, r as u64, b as u64, t as u64);
    Ok(2 * m * n * r / b + (2 * n - 1) * m * t)
}

/// Exact count of the factored blockwise pipeline `Z_ij = A_ij X_j`,
/// `Y_ij = B_ij Z_ij`, `Y_i = Σ_j Y_ij`:
/// `(2n − b) r T + (2r − b) m T + (b − 1) m T`.
pub fn counted_factored_blockwise(m: usize, n: usize, r: usize, b: usize, t: usize) -> Result<u64> {
    check_positive(&[("m", m), ("n", n), ("r", r), ("b", b), ("T", t)])?;
    check_divides(b, &[("m", m), ("n", n), ("r", r)])?;
    let (m, n, r, b, t) = (m as u64, n as u64, r as u64, b as u64, t as u64);
    Ok((2 * n - b) * r * t + (2 * r - b) * m * t + (b - 1) * m * t)
}

/// Runs the factored blockwise pipeline on a BHRA state with `W0 ≡ 1`,
/// i.e. computes `C x` without forming any mask, and tallies its work.
pub fn factored_blockwise_apply(state: &AdapterState, x: &Matrix) -> Result<(Matrix, FlopTally)> {
    let AdapterState::Bhra { grid, blocks } = state else {
        return Err(BhraError::KindMismatch {
            expected: AdapterKind::Bhra,
            found: state.kind(),
        });
    };
    let (m, n) = state.update_shape();
    if x.rows() != n {
        return Err(BhraError::DimensionMismatch {
            op: "factored_blockwise_apply",
            left: (m, n),
            right: x.shape(),
        });
    }
    let BlockGrid {
        row_parts,
        col_parts,
    } = *grid;
    let (br, bc) = grid.block_shape(m, n)?;
    let t = x.cols();
    let mut tally = FlopTally::default();
    let mut out = Matrix::zeros(m, t);
    for i in 0..row_parts {
        let mut acc: Option<Matrix> = None;
        for j in 0..col_parts {
            let blk = &blocks[grid.index(i, j)];
            let xj = x.submatrix(j * bc, 0, bc, t);
            let z = gemm(&blk.a_factor, &xj, &mut tally);
            let y = gemm(&blk.b_factor, &z, &mut tally);
            match acc.as_mut() {
                None => acc = Some(y),
                Some(a) => accumulate(a, &y, &mut tally),
            }
        }
        out.write_submatrix(i * br, 0, &acc.expect("grid has at least one column"));
    }
    Ok((out, tally))
}

/// Which masks stay resident under gradient checkpointing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskResidency {
    /// Masks for all `b²` blocks are cached: `mn` elements.
    #[default]
    AllBlocks,
    /// Only the active block's mask is held: `mn / b²` elements.
    ActiveBlock,
}

/// Peak activation memory in elements.
///
/// Without checkpointing: `rT + mn / b²` (projection cache plus the active
/// block mask). With checkpointing: `rT` plus the persistent masks, whose
/// size depends on [`MaskResidency`]; [`peak_memory`] uses the default
/// `AllBlocks` reading, giving `rT + mn`.
pub fn peak_memory_with(
    m: usize,
    n: usize,
    r: usize,
    b: usize,
    t: usize,
    checkpointing: bool,
    residency: MaskResidency,
) -> Result<u64> {
    check_positive(&[("m", m), ("n", n), ("r", r), ("b", b), ("T", t)])?;
    check_divides(b, &[("m", m), ("n", n)])?;
    let (m, n, r, b, t) = (m as u64, n as u64, r as u64, b as u64, t as u64);
    let cache = r * t;
    let masks = match (checkpointing, residency) {
        (false, _) | (true, MaskResidency::ActiveBlock) => m * n / (b * b),
        (true, MaskResidency::AllBlocks) => m * n,
    };
    Ok(cache + masks)
}

pub fn peak_memory(
    m: usize,
    n: usize,
    r: usize,
    b: usize,
    t: usize,
    checkpointing: bool,
) -> Result<u64> {
    peak_memory_with(m, n, r, b, t, checkpointing, MaskResidency::default())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub kind: AdapterKind,
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub b: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub flops_train: u64,
    pub flops_adapter_inference: u64,
    pub peak_memory_elements: u64,
    pub peak_memory_checkpointed: u64,
}

/// Cost summary for one kind. `b` is only meaningful for BHRA; LoRA and HiRA
/// are reported at `b = 1`. ABBA has no closed form here.
pub fn cost_report(
    kind: AdapterKind,
    m: usize,
    n: usize,
    r: usize,
    b: usize,
    t: usize,
) -> Result<CostReport> {
    let b = if kind == AdapterKind::Bhra { b } else { 1 };
    let (flops_train, flops_adapter_inference, peak, peak_ckpt) = match kind {
        AdapterKind::Lora => {
            let f = flops_lora_train(m, n, r, t)?;
            let cache = (r * t) as u64;
            (f, f, cache, cache)
        }
        AdapterKind::Hira => (
            flops_hira_train(m, n, r, t)?,
            flops_hira_adapter(m, n, r, t)?,
            peak_memory(m, n, r, 1, t, false)?,
            peak_memory(m, n, r, 1, t, true)?,
        ),
        AdapterKind::Bhra => (
            flops_bhra_train(m, n, r, b, t)?,
            flops_bhra_adapter(m, n, r, t)?,
            peak_memory(m, n, r, b, t, false)?,
            peak_memory(m, n, r, b, t, true)?,
        ),
        AdapterKind::Abba => {
            return Err(BhraError::config("no cost model for abba"));
        }
    };
    Ok(CostReport {
        kind,
        m,
        n,
        r,
        b,
        t,
        flops_train,
        flops_adapter_inference,
        peak_memory_elements: peak,
        peak_memory_checkpointed: peak_ckpt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluations() {
        assert_eq!(flops_lora_train(8, 8, 4, 1).unwrap(), 116);
        assert_eq!(flops_hira_adapter(8, 8, 4, 1).unwrap(), 120);
        assert_eq!(flops_bhra_train(8, 8, 4, 2, 1).unwrap(), 384);
        assert_eq!(flops_gralora_train(8, 8, 4, 2, 1).unwrap(), 176);
        assert_eq!(peak_memory(8, 8, 4, 2, 1, false).unwrap(), 20);
    }

    #[test]
    fn preconditions() {
        assert!(flops_lora_train(8, 8, 0, 1).is_err());
        assert!(matches!(
            flops_bhra_train(8, 8, 4, 3, 1),
            Err(BhraError::Divisibility { .. })
        ));
        assert!(cost_report(AdapterKind::Abba, 8, 8, 4, 1, 1).is_err());
    }

    #[test]
    fn gralora_k1_substitution() {
        for (m, n, r, t) in [(8, 8, 4, 1), (12, 6, 3, 5), (7, 9, 2, 2)] {
            let expected = (2 * n - 1) * r * t + (2 * m - 1) * m * t;
            assert_eq!(flops_gralora_train(m, n, r, 1, t).unwrap(), expected as u64);
        }
    }

    #[test]
    fn stage_sum_reproduces_total() {
        for (m, n, r, b, t) in [(8, 8, 4, 2, 1), (16, 32, 8, 4, 3), (12, 12, 6, 3, 7)] {
            let stages = bhra_train_stages(m, n, r, b, t).unwrap();
            assert_eq!(stages.total(), flops_bhra_train(m, n, r, b, t).unwrap());
        }
        assert_eq!(bhra_train_stages(8, 8, 4, 2, 1).unwrap().projection, 56);
    }

    #[test]
    fn memory_readings() {
        assert_eq!(peak_memory(8, 8, 4, 1, 3, false).unwrap(), 12 + 64);
        assert_eq!(peak_memory(8, 8, 4, 2, 3, true).unwrap(), 12 + 64);
        assert_eq!(
            peak_memory_with(8, 8, 4, 2, 3, true, MaskResidency::ActiveBlock).unwrap(),
            12 + 16
        );
        // The rT cache does not depend on b.
        let cache = |b| peak_memory(16, 16, 4, b, 5, false).unwrap() - (256 / (b * b)) as u64;
        assert_eq!(cache(1), cache(2));
        assert_eq!(cache(2), cache(4));
    }

    #[test]
    fn report_fields() {
        let r = cost_report(AdapterKind::Bhra, 8, 8, 4, 2, 1).unwrap();
        assert_eq!(r.flops_train, 384);
        assert_eq!(r.flops_adapter_inference, 120);
        let hira = cost_report(AdapterKind::Hira, 8, 8, 4, 2, 1).unwrap();
        assert_eq!(hira.b, 1);
        let bhra1 = cost_report(AdapterKind::Bhra, 8, 8, 4, 1, 1).unwrap();
        assert_eq!(bhra1.flops_train, hira.flops_train);
    }
}
