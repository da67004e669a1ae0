use super::{grid::assemble, AdapterConfig, AdapterKind, AdapterState, BlockGrid, FrozenWeight};
use crate::counting::{accumulate, gemm, hadamard_counted, FlopTally, NoCount, OpCounter};
use crate::error::{BhraError, Result};
use crate::matrix::Matrix;

fn kind_mismatch(expected: AdapterKind, state: &AdapterState) -> BhraError {
    BhraError::KindMismatch {
        expected,
        found: state.kind(),
    }
}

fn check_w0(w0: &FrozenWeight, state: &AdapterState) -> Result<()> {
    if w0.shape() != state.update_shape() {
        return Err(BhraError::DimensionMismatch {
            op: "frozen weight vs adapter",
            left: w0.shape(),
            right: state.update_shape(),
        });
    }
    Ok(())
}

/// `L1 L2`.
pub fn delta_lora(state: &AdapterState) -> Result<Matrix> {
    match state {
        AdapterState::Lora { l1, l2 } => l1.matmul(l2),
        other => Err(kind_mismatch(AdapterKind::Lora, other)),
    }
}

/// `W0 ⊙ (B A)`.
pub fn delta_hira(w0: &FrozenWeight, state: &AdapterState) -> Result<Matrix> {
    match state {
        AdapterState::Hira { b, a } => {
            check_w0(w0, state)?;
            w0.matrix().hadamard(&b.matmul(a)?)
        }
        other => Err(kind_mismatch(AdapterKind::Hira, other)),
    }
}

/// `(B1 A1) ⊙ (B2 A2)`.
pub fn delta_abba(state: &AdapterState) -> Result<Matrix> {
    match state {
        AdapterState::Abba { b1, a1, b2, a2 } => b1.matmul(a1)?.hadamard(&b2.matmul(a2)?),
        other => Err(kind_mismatch(AdapterKind::Abba, other)),
    }
}

/// The capacity matrix: block `(i, j)` is `B_ij A_ij`.
pub fn capacity_bhra(state: &AdapterState) -> Result<Matrix> {
    match state {
        AdapterState::Bhra { grid, blocks } => {
            let products: Vec<Matrix> = blocks.iter().map(|b| b.product()).collect();
            assemble(&products, *grid)
        }
        other => Err(kind_mismatch(AdapterKind::Bhra, other)),
    }
}

/// `C □ W0`. Blocks are disjoint, so this is the plain Hadamard product of
/// the assembled capacity with `W0`.
pub fn delta_bhra(w0: &FrozenWeight, state: &AdapterState) -> Result<Matrix> {
    if state.kind() != AdapterKind::Bhra {
        return Err(kind_mismatch(AdapterKind::Bhra, state));
    }
    check_w0(w0, state)?;
    w0.matrix().hadamard(&capacity_bhra(state)?)
}

/// Unscaled update `ΔW` for any kind.
pub fn delta(w0: &FrozenWeight, state: &AdapterState) -> Result<Matrix> {
    match state.kind() {
        AdapterKind::Lora => delta_lora(state),
        AdapterKind::Hira => delta_hira(w0, state),
        AdapterKind::Abba => delta_abba(state),
        AdapterKind::Bhra => delta_bhra(w0, state),
    }
}

fn check_forward(
    w0: &FrozenWeight,
    state: &AdapterState,
    cfg: &AdapterConfig,
    x: &Matrix,
) -> Result<()> {
    if cfg.kind != state.kind() {
        return Err(kind_mismatch(cfg.kind, state));
    }
    check_w0(w0, state)?;
    if x.rows() != w0.shape().1 {
        return Err(BhraError::DimensionMismatch {
            op: "forward input",
            left: w0.shape(),
            right: x.shape(),
        });
    }
    Ok(())
}

/// `W0 x + (alpha / r_tot) ΔW x` with `ΔW` materialized.
pub fn forward_materialized(
    w0: &FrozenWeight,
    state: &AdapterState,
    cfg: &AdapterConfig,
    x: &Matrix,
) -> Result<Matrix> {
    check_forward(w0, state, cfg, x)?;
    let base = w0.matrix().matmul(x)?;
    let update = delta(w0, state)?.matmul(x)?;
    base.add_scaled(cfg.scale(), &update)
}

/// Blockwise forward; the default evaluation path.
pub fn forward(
    w0: &FrozenWeight,
    state: &AdapterState,
    cfg: &AdapterConfig,
    x: &Matrix,
) -> Result<Matrix> {
    forward_blockwise(w0, state, cfg, x)
}

/// Forward pass that never materializes the full `ΔW` for LoRA, HiRA or BHRA.
///
/// LoRA runs the factored pair `Z = L2 x`, `Y = L1 Z`. HiRA and BHRA build
/// one mask `H_ij = W0_ij ⊙ (B_ij A_ij)` per block and accumulate
/// `Y_i += H_ij X_j` (HiRA is the single-block case). ABBA has no blockwise
/// structure and falls back to the dense update.
pub fn forward_blockwise(
    w0: &FrozenWeight,
    state: &AdapterState,
    cfg: &AdapterConfig,
    x: &Matrix,
) -> Result<Matrix> {
    forward_blockwise_impl(w0, state, cfg, x, &mut NoCount)
}

/// [`forward_blockwise`] plus the operation tally of the adapter branch.
/// The base product `W0 x`, the output scaling and the final residual add
/// are not counted.
pub fn forward_blockwise_counted(
    w0: &FrozenWeight,
    state: &AdapterState,
    cfg: &AdapterConfig,
    x: &Matrix,
) -> Result<(Matrix, FlopTally)> {
    let mut tally = FlopTally::default();
    let y = forward_blockwise_impl(w0, state, cfg, x, &mut tally)?;
    Ok((y, tally))
}

fn forward_blockwise_impl<C: OpCounter>(
    w0: &FrozenWeight,
    state: &AdapterState,
    cfg: &AdapterConfig,
    x: &Matrix,
    counter: &mut C,
) -> Result<Matrix> {
    check_forward(w0, state, cfg, x)?;
    let base = w0.matrix().matmul(x)?;
    let update = match state {
        AdapterState::Lora { l1, l2 } => {
            let z = gemm(l2, x, counter);
            gemm(l1, &z, counter)
        }
        AdapterState::Hira { b, a } => {
            let c = gemm(b, a, counter);
            let h = hadamard_counted(w0.matrix(), &c, counter);
            gemm(&h, x, counter)
        }
        AdapterState::Abba { .. } => {
            let dw = delta_abba(state)?;
            gemm(&dw, x, counter)
        }
        AdapterState::Bhra { grid, blocks } => {
            masked_blocks_apply(w0.matrix(), *grid, blocks, x, counter)?
        }
    };
    base.add_scaled(cfg.scale(), &update)
}

fn masked_blocks_apply<C: OpCounter>(
    w0: &Matrix,
    grid: BlockGrid,
    blocks: &[super::BlockFactors],
    x: &Matrix,
    counter: &mut C,
) -> Result<Matrix> {
    let (br, bc) = grid.block_shape(w0.rows(), w0.cols())?;
    let t = x.cols();
    let mut out = Matrix::zeros(w0.rows(), t);
    for i in 0..grid.row_parts {
        let mut row_acc: Option<Matrix> = None;
        for j in 0..grid.col_parts {
            let blk = &blocks[grid.index(i, j)];
            let c = gemm(&blk.b_factor, &blk.a_factor, counter);
            let h = hadamard_counted(&w0.submatrix(i * br, j * bc, br, bc), &c, counter);
            let xj = x.submatrix(j * bc, 0, bc, t);
            let y = gemm(&h, &xj, counter);
            match row_acc.as_mut() {
                None => row_acc = Some(y),
                Some(acc) => accumulate(acc, &y, counter),
            }
        }
        out.write_submatrix(i * br, 0, &row_acc.expect("at least one column block"));
    }
    Ok(out)
}

/// `W0 + (alpha / r_tot) ΔW`, for serving without the adapter.
pub fn merge(w0: &FrozenWeight, state: &AdapterState, cfg: &AdapterConfig) -> Result<Matrix> {
    if cfg.kind != state.kind() {
        return Err(kind_mismatch(cfg.kind, state));
    }
    w0.matrix().add_scaled(cfg.scale(), &delta(w0, state)?)
}
