//! Analytic adapter gradients.
//!
//! For a layer output `z = (W0 + s ΔW) x` with loss gradient `g = ∂L/∂z`,
//! the gradient with respect to `ΔW` is `s G` where `G = g xᵀ`. Each kind
//! then pulls `G` back through its own parameterization:
//!
//! * LoRA: `∂L1 = s G L2ᵀ`, `∂L2 = s L1ᵀ G`, independent of `W0`.
//! * HiRA: with `M = W0 ⊙ G`, `∂B = s M Aᵀ`, `∂A = s Bᵀ M`.
//! * BHRA: the HiRA rule applied per block with `M_ij = W0_ij ⊙ G_ij`, so
//!   each block only ever sees its own slice of `G` and `W0`.
//! * ABBA: with `P = B1 A1`, `Q = B2 A2`, `∂P = s G ⊙ Q`, `∂Q = s G ⊙ P`.

mod adam;
mod fd;

pub use adam::{AdamConfig, AdamState};
pub use fd::{compare_gradients, fd_gradient, GradComparison, FD_EPS};

use std::cell::OnceCell;

use crate::adapters::{forward, AdapterConfig, AdapterKind, AdapterState, BlockGrid, FrozenWeight};
use crate::error::{BhraError, Result};
use crate::matrix::Matrix;

/// Residual/input pair at one linear layer, with the outer product
/// `G = g xᵀ` built on first use.
#[derive(Debug, Clone)]
pub struct BackpropContext {
    residual: Matrix,
    input: Matrix,
    outer: OnceCell<Matrix>,
}

impl BackpropContext {
    pub fn new(residual: Matrix, input: Matrix) -> Result<Self> {
        if residual.cols() != input.cols() {
            return Err(BhraError::DimensionMismatch {
                op: "backprop context",
                left: residual.shape(),
                right: input.shape(),
            });
        }
        Ok(BackpropContext {
            residual,
            input,
            outer: OnceCell::new(),
        })
    }

    /// Context for `L = ½‖(W0 + s ΔW) x − y‖²_F`, whose output gradient is
    /// the residual itself.
    pub fn for_squared_loss(
        w0: &FrozenWeight,
        state: &AdapterState,
        cfg: &AdapterConfig,
        x: &Matrix,
        target: &Matrix,
    ) -> Result<Self> {
        let residual = forward(w0, state, cfg, x)?.sub(target)?;
        Self::new(residual, x.clone())
    }

    pub fn residual(&self) -> &Matrix {
        &self.residual
    }

    pub fn input(&self) -> &Matrix {
        &self.input
    }

    /// `T`, the number of input columns.
    pub fn tokens(&self) -> usize {
        self.input.cols()
    }

    pub fn outer(&self) -> &Matrix {
        self.outer.get_or_init(|| {
            self.residual
                .matmul(&self.input.transpose())
                .expect("column counts checked at construction")
        })
    }

    /// Block `(i, j)` of `G` under `grid`.
    pub fn block(&self, grid: BlockGrid, i: usize, j: usize) -> Result<Matrix> {
        let g = self.outer();
        let (br, bc) = grid.block_shape(g.rows(), g.cols())?;
        Ok(g.submatrix(i * br, j * bc, br, bc))
    }
}

/// `½‖(W0 + s ΔW) x − y‖²_F`.
pub fn squared_loss(
    w0: &FrozenWeight,
    state: &AdapterState,
    cfg: &AdapterConfig,
    x: &Matrix,
    target: &Matrix,
) -> Result<f64> {
    Ok(0.5 * forward(w0, state, cfg, x)?.sub(target)?.sum_squares())
}

fn check_outer(ctx: &BackpropContext, shape: (usize, usize)) -> Result<()> {
    let g = (ctx.residual.rows(), ctx.input.rows());
    if g != shape {
        return Err(BhraError::DimensionMismatch {
            op: "gradient outer product",
            left: g,
            right: shape,
        });
    }
    Ok(())
}

fn mismatch(expected: AdapterKind, state: &AdapterState) -> BhraError {
    BhraError::KindMismatch {
        expected,
        found: state.kind(),
    }
}

/// `(∂L1, ∂L2)`.
pub fn grad_lora(
    ctx: &BackpropContext,
    state: &AdapterState,
    cfg: &AdapterConfig,
) -> Result<(Matrix, Matrix)> {
    let AdapterState::Lora { l1, l2 } = state else {
        return Err(mismatch(AdapterKind::Lora, state));
    };
    check_outer(ctx, state.update_shape())?;
    let g = ctx.outer();
    let s = cfg.scale();
    Ok((
        g.matmul(&l2.transpose())?.scale(s),
        l1.transpose().matmul(g)?.scale(s),
    ))
}

fn pull_back_masked(m: &Matrix, up: &Matrix, down: &Matrix, s: f64) -> Result<(Matrix, Matrix)> {
    Ok((
        m.matmul(&down.transpose())?.scale(s),
        up.transpose().matmul(m)?.scale(s),
    ))
}

/// `(∂B, ∂A)`.
pub fn grad_hira(
    ctx: &BackpropContext,
    w0: &FrozenWeight,
    state: &AdapterState,
    cfg: &AdapterConfig,
) -> Result<(Matrix, Matrix)> {
    let AdapterState::Hira { b, a } = state else {
        return Err(mismatch(AdapterKind::Hira, state));
    };
    check_outer(ctx, state.update_shape())?;
    let masked = w0.matrix().hadamard(ctx.outer())?;
    pull_back_masked(&masked, b, a, cfg.scale())
}

/// Gradient of one BHRA block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrad {
    pub d_b: Matrix,
    pub d_a: Matrix,
}

/// Per-block `(∂B_ij, ∂A_ij)` in row-major grid order.
pub fn grad_bhra(
    ctx: &BackpropContext,
    w0: &FrozenWeight,
    state: &AdapterState,
    cfg: &AdapterConfig,
) -> Result<Vec<BlockGrad>> {
    let AdapterState::Bhra { grid, blocks } = state else {
        return Err(mismatch(AdapterKind::Bhra, state));
    };
    check_outer(ctx, state.update_shape())?;
    if w0.shape() != state.update_shape() {
        return Err(BhraError::DimensionMismatch {
            op: "grad_bhra frozen weight",
            left: w0.shape(),
            right: state.update_shape(),
        });
    }
    let (br, bc) = grid.block_shape(w0.shape().0, w0.shape().1)?;
    let s = cfg.scale();
    let mut out = Vec::with_capacity(blocks.len());
    for i in 0..grid.row_parts {
        for j in 0..grid.col_parts {
            let blk = &blocks[grid.index(i, j)];
            let w_ij = w0.matrix().submatrix(i * br, j * bc, br, bc);
            let masked = w_ij.hadamard(&ctx.block(*grid, i, j)?)?;
            let (d_b, d_a) = pull_back_masked(&masked, &blk.b_factor, &blk.a_factor, s)?;
            out.push(BlockGrad { d_b, d_a });
        }
    }
    Ok(out)
}

/// `(∂B1, ∂A1, ∂B2, ∂A2)`.
pub fn grad_abba(
    ctx: &BackpropContext,
    state: &AdapterState,
    cfg: &AdapterConfig,
) -> Result<(Matrix, Matrix, Matrix, Matrix)> {
    let AdapterState::Abba { b1, a1, b2, a2 } = state else {
        return Err(mismatch(AdapterKind::Abba, state));
    };
    check_outer(ctx, state.update_shape())?;
    let g = ctx.outer();
    let p = b1.matmul(a1)?;
    let q = b2.matmul(a2)?;
    let (db1, da1) = pull_back_masked(&g.hadamard(&q)?, b1, a1, cfg.scale())?;
    let (db2, da2) = pull_back_masked(&g.hadamard(&p)?, b2, a2, cfg.scale())?;
    Ok((db1, da1, db2, da2))
}

/// Gradients for any kind, in [`AdapterState::params`] order.
pub fn gradients(
    ctx: &BackpropContext,
    w0: &FrozenWeight,
    state: &AdapterState,
    cfg: &AdapterConfig,
) -> Result<Vec<Matrix>> {
    if cfg.kind != state.kind() {
        return Err(mismatch(cfg.kind, state));
    }
    Ok(match state.kind() {
        AdapterKind::Lora => {
            let (a, b) = grad_lora(ctx, state, cfg)?;
            vec![a, b]
        }
        AdapterKind::Hira => {
            let (a, b) = grad_hira(ctx, w0, state, cfg)?;
            vec![a, b]
        }
        AdapterKind::Abba => {
            let (a, b, c, d) = grad_abba(ctx, state, cfg)?;
            vec![a, b, c, d]
        }
        AdapterKind::Bhra => grad_bhra(ctx, w0, state, cfg)?
            .into_iter()
            .flat_map(|g| [g.d_b, g.d_a])
            .collect(),
    })
}
