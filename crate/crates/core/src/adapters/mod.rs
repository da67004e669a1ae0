//! LoRA, HiRA, ABBA and BHRA adapters on a single frozen linear layer.
//!
//! Every kind trains `r_tot * (m + n)` parameters:
//!
//! | kind | update `ΔW`                          | rank bound       |
//! |------|--------------------------------------|------------------|
//! | LoRA | `L1 L2`                              | `r`              |
//! | HiRA | `W0 ⊙ (B A)`                         | `r0 r`           |
//! | ABBA | `(B1 A1) ⊙ (B2 A2)`, two rank-`r/2` pairs | `(r/2)²`   |
//! | BHRA | `C □ W0`, `C_ij = B_ij A_ij` per block | `b r0 r`       |
//!
//! The scale `alpha / r_tot` is applied at forward and merge time and is
//! never folded into the stored factors.

mod checkpoint;
mod grid;
mod ops;

pub use checkpoint::{Checkpoint, NamedFactor};
pub use grid::{assemble, partition, BlockGrid};
pub use ops::{
    capacity_bhra, delta, delta_abba, delta_bhra, delta_hira, delta_lora, forward,
    forward_blockwise, forward_blockwise_counted, forward_materialized, merge,
};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BhraError, Result};
use crate::matrix::{numeric_rank, Matrix, DEFAULT_RANK_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Lora,
    Hira,
    Abba,
    Bhra,
}

impl AdapterKind {
    pub const ALL: [AdapterKind; 4] = [
        AdapterKind::Lora,
        AdapterKind::Hira,
        AdapterKind::Abba,
        AdapterKind::Bhra,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AdapterKind::Lora => "lora",
            AdapterKind::Hira => "hira",
            AdapterKind::Abba => "abba",
            AdapterKind::Bhra => "bhra",
        }
    }
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdapterKind {
    type Err = BhraError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lora" => Ok(AdapterKind::Lora),
            "hira" => Ok(AdapterKind::Hira),
            "abba" => Ok(AdapterKind::Abba),
            "bhra" => Ok(AdapterKind::Bhra),
            other => Err(BhraError::config(format!("unknown adapter kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub kind: AdapterKind,
    /// Total rank budget.
    pub r_tot: usize,
    /// Blocks per side; always 1 for non-BHRA kinds.
    pub b: usize,
    pub alpha: f64,
}

impl AdapterConfig {
    /// Config with `b = 1` and the default `alpha = r_tot`.
    pub fn new(kind: AdapterKind, r_tot: usize) -> Self {
        AdapterConfig {
            kind,
            r_tot,
            b: 1,
            alpha: r_tot as f64,
        }
    }

    pub fn bhra(r_tot: usize, b: usize) -> Self {
        AdapterConfig {
            b,
            ..Self::new(AdapterKind::Bhra, r_tot)
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.r_tot as f64
    }

    /// Per-block rank `r_tot / b`.
    pub fn block_rank(&self) -> usize {
        self.r_tot / self.b
    }

    pub fn grid(&self) -> BlockGrid {
        BlockGrid {
            row_parts: self.b,
            col_parts: self.b,
        }
    }

    /// Checks the config against an `m x n` layer.
    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        if m == 0 || n == 0 {
            return Err(BhraError::config("layer dimensions must be positive"));
        }
        if self.r_tot == 0 {
            return Err(BhraError::config("r_tot must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(BhraError::config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.b == 0 {
            return Err(BhraError::config("b must be positive"));
        }
        match self.kind {
            AdapterKind::Bhra => {
                if !self.r_tot.is_multiple_of(self.b) {
                    return Err(BhraError::Divisibility {
                        what: "r_tot",
                        dim: self.r_tot,
                        parts: self.b,
                    });
                }
                self.grid().block_shape(m, n)?;
            }
            _ if self.b != 1 => {
                return Err(BhraError::config(format!("{} requires b = 1", self.kind)));
            }
            AdapterKind::Abba if !self.r_tot.is_multiple_of(2) => {
                return Err(BhraError::Divisibility {
                    what: "r_tot (abba split)",
                    dim: self.r_tot,
                    parts: 2,
                });
            }
            _ => {}
        }
        Ok(())
    }
}

/// A frozen base weight with its cached numeric rank.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenWeight {
    w0: Matrix,
    r0: usize,
}

impl FrozenWeight {
    pub fn new(w0: Matrix) -> Result<Self> {
        let r0 = numeric_rank(&w0, DEFAULT_RANK_TOL)?;
        Ok(FrozenWeight { w0, r0 })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.w0
    }

    pub fn rank(&self) -> usize {
        self.r0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.w0.shape()
    }
}

/// One BHRA block: `B_ij` is `(m/p) x r_b`, `A_ij` is `r_b x (n/q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFactors {
    pub b_factor: Matrix,
    pub a_factor: Matrix,
}

impl BlockFactors {
    pub fn product(&self) -> Matrix {
        self.b_factor
            .matmul(&self.a_factor)
            .expect("block factor shapes checked at construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdapterState {
    Lora {
        l1: Matrix,
        l2: Matrix,
    },
    Hira {
        b: Matrix,
        a: Matrix,
    },
    Abba {
        b1: Matrix,
        a1: Matrix,
        b2: Matrix,
        a2: Matrix,
    },
    Bhra {
        grid: BlockGrid,
        /// Row-major over the grid.
        blocks: Vec<BlockFactors>,
    },
}

fn check_pair(up: &Matrix, down: &Matrix, what: &'static str) -> Result<()> {
    if up.cols() != down.rows() {
        return Err(BhraError::DimensionMismatch {
            op: what,
            left: up.shape(),
            right: down.shape(),
        });
    }
    Ok(())
}

impl AdapterState {
    pub fn lora(l1: Matrix, l2: Matrix) -> Result<Self> {
        check_pair(&l1, &l2, "lora factors")?;
        Ok(AdapterState::Lora { l1, l2 })
    }

    pub fn hira(b: Matrix, a: Matrix) -> Result<Self> {
        check_pair(&b, &a, "hira factors")?;
        Ok(AdapterState::Hira { b, a })
    }

    pub fn abba(b1: Matrix, a1: Matrix, b2: Matrix, a2: Matrix) -> Result<Self> {
        check_pair(&b1, &a1, "abba first pair")?;
        check_pair(&b2, &a2, "abba second pair")?;
        if b1.rows() != b2.rows() || a1.cols() != a2.cols() {
            return Err(BhraError::DimensionMismatch {
                op: "abba products",
                left: (b1.rows(), a1.cols()),
                right: (b2.rows(), a2.cols()),
            });
        }
        Ok(AdapterState::Abba { b1, a1, b2, a2 })
    }

    /// Blocks in row-major grid order; all must share shapes.
    pub fn bhra(grid: BlockGrid, blocks: Vec<BlockFactors>) -> Result<Self> {
        if blocks.len() != grid.block_count() {
            return Err(BhraError::config(format!(
                "grid has {} blocks, got {} factor pairs",
                grid.block_count(),
                blocks.len()
            )));
        }
        let first = &blocks[0];
        check_pair(&first.b_factor, &first.a_factor, "bhra block factors")?;
        for blk in &blocks {
            if blk.b_factor.shape() != first.b_factor.shape()
                || blk.a_factor.shape() != first.a_factor.shape()
            {
                return Err(BhraError::DimensionMismatch {
                    op: "bhra blocks",
                    left: first.b_factor.shape(),
                    right: blk.b_factor.shape(),
                });
            }
        }
        Ok(AdapterState::Bhra { grid, blocks })
    }

    pub fn kind(&self) -> AdapterKind {
        match self {
            AdapterState::Lora { .. } => AdapterKind::Lora,
            AdapterState::Hira { .. } => AdapterKind::Hira,
            AdapterState::Abba { .. } => AdapterKind::Abba,
            AdapterState::Bhra { .. } => AdapterKind::Bhra,
        }
    }

    /// Shape of the update `ΔW`.
    pub fn update_shape(&self) -> (usize, usize) {
        match self {
            AdapterState::Lora { l1, l2 } => (l1.rows(), l2.cols()),
            AdapterState::Hira { b, a } => (b.rows(), a.cols()),
            AdapterState::Abba { b1, a1, .. } => (b1.rows(), a1.cols()),
            AdapterState::Bhra { grid, blocks } => (
                blocks[0].b_factor.rows() * grid.row_parts,
                blocks[0].a_factor.cols() * grid.col_parts,
            ),
        }
    }

    /// Trainable factors in canonical order. For BHRA the order is
    /// `B_00, A_00, B_01, A_01, ...` over the row-major grid.
    pub fn params(&self) -> Vec<&Matrix> {
        match self {
            AdapterState::Lora { l1, l2 } => vec![l1, l2],
            AdapterState::Hira { b, a } => vec![b, a],
            AdapterState::Abba { b1, a1, b2, a2 } => vec![b1, a1, b2, a2],
            AdapterState::Bhra { blocks, .. } => blocks
                .iter()
                .flat_map(|blk| [&blk.b_factor, &blk.a_factor])
                .collect(),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            AdapterState::Lora { l1, l2 } => vec![l1, l2],
            AdapterState::Hira { b, a } => vec![b, a],
            AdapterState::Abba { b1, a1, b2, a2 } => vec![b1, a1, b2, a2],
            AdapterState::Bhra { blocks, .. } => blocks
                .iter_mut()
                .flat_map(|blk| [&mut blk.b_factor, &mut blk.a_factor])
                .collect(),
        }
    }

    /// Same layout as `self` with the factors replaced, in [`params`](Self::params) order.
    pub fn with_params(&self, params: Vec<Matrix>) -> Result<Self> {
        let expected = self.params();
        if params.len() != expected.len() {
            return Err(BhraError::config(format!(
                "expected {} factors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (new, old) in params.iter().zip(&expected) {
            if new.shape() != old.shape() {
                return Err(BhraError::DimensionMismatch {
                    op: "with_params",
                    left: old.shape(),
                    right: new.shape(),
                });
            }
        }
        let mut it = params.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(match self {
            AdapterState::Lora { .. } => AdapterState::Lora {
                l1: next(),
                l2: next(),
            },
            AdapterState::Hira { .. } => AdapterState::Hira {
                b: next(),
                a: next(),
            },
            AdapterState::Abba { .. } => AdapterState::Abba {
                b1: next(),
                a1: next(),
                b2: next(),
                a2: next(),
            },
            AdapterState::Bhra { grid, blocks } => AdapterState::Bhra {
                grid: *grid,
                blocks: (0..blocks.len())
                    .map(|_| BlockFactors {
                        b_factor: next(),
                        a_factor: next(),
                    })
                    .collect(),
            },
        })
    }

    /// Number of trainable scalars actually held.
    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            AdapterState::Lora { .. } => vec!["L1".into(), "L2".into()],
            AdapterState::Hira { .. } => vec!["B".into(), "A".into()],
            AdapterState::Abba { .. } => ["B1", "A1", "B2", "A2"].map(String::from).to_vec(),
            AdapterState::Bhra { grid, .. } => (0..grid.row_parts)
                .flat_map(|i| (0..grid.col_parts).map(move |j| (i, j)))
                .flat_map(|(i, j)| [format!("B[{i},{j}]"), format!("A[{i},{j}]")])
                .collect(),
        }
    }
}

fn uniform_factor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

/// Zero-update initialization: down-projections uniform on
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, up-projections zero.
///
/// ABBA is the one exception on the up side: only `B1` is zeroed, since
/// zeroing both `B1` and `B2` would also zero every ABBA gradient.
pub fn init_adapter(cfg: &AdapterConfig, m: usize, n: usize, seed: u64) -> Result<AdapterState> {
    cfg.validate(m, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = cfg.r_tot;
    match cfg.kind {
        AdapterKind::Lora => {
            let l2 = uniform_factor(&mut rng, r, n, n);
            AdapterState::lora(Matrix::zeros(m, r), l2)
        }
        AdapterKind::Hira => {
            let a = uniform_factor(&mut rng, r, n, n);
            AdapterState::hira(Matrix::zeros(m, r), a)
        }
        AdapterKind::Abba => {
            let half = r / 2;
            let a1 = uniform_factor(&mut rng, half, n, n);
            let b2 = uniform_factor(&mut rng, m, half, half);
            let a2 = uniform_factor(&mut rng, half, n, n);
            AdapterState::abba(Matrix::zeros(m, half), a1, b2, a2)
        }
        AdapterKind::Bhra => {
            let grid = cfg.grid();
            let (br, bc) = grid.block_shape(m, n)?;
            let rb = cfg.block_rank();
            let blocks = (0..grid.block_count())
                .map(|_| BlockFactors {
                    b_factor: Matrix::zeros(br, rb),
                    a_factor: uniform_factor(&mut rng, rb, bc, bc),
                })
                .collect();
            AdapterState::bhra(grid, blocks)
        }
    }
}

/// Trainable parameter count `r_tot (m + n)`; for BHRA it is evaluated as
/// the blockwise sum `b² ((m/b) r_b + r_b (n/b))`.
pub fn param_count(cfg: &AdapterConfig, m: usize, n: usize) -> Result<usize> {
    cfg.validate(m, n)?;
    Ok(match cfg.kind {
        AdapterKind::Lora | AdapterKind::Hira => cfg.r_tot * (m + n),
        AdapterKind::Abba => 2 * (cfg.r_tot / 2) * (m + n),
        AdapterKind::Bhra => {
            let b = cfg.b;
            let rb = cfg.block_rank();
            b * b * ((m / b) * rb + rb * (n / b))
        }
    })
}

/// Upper bound on `rank(ΔW)` for the given kind; `r0` is `rank(W0)`.
pub fn rank_bound(
    kind: AdapterKind,
    m: usize,
    n: usize,
    r_tot: usize,
    b: usize,
    r0: usize,
) -> usize {
    let cap = m.min(n);
    let raw = match kind {
        AdapterKind::Lora => r_tot,
        AdapterKind::Hira => r0 * r_tot,
        AdapterKind::Abba => (r_tot / 2) * (r_tot / 2),
        AdapterKind::Bhra => b * r0 * r_tot,
    };
    raw.min(cap)
}

/// Deterministic instance where BHRA exceeds the HiRA rank bound.
///
/// `W0 = 1 1ᵀ` on a 4×4 layer (rank 1) with `b = 2`, `r_tot = 2`. Each
/// block's capacity is one unit-vector outer product, placed so that the
/// assembled capacity is a permutation matrix. `ΔW` then has rank 4 while
/// `r0 · r_tot = 2`.
pub fn bhra_rank_witness() -> (FrozenWeight, AdapterConfig, AdapterState) {
    let unit_col = |k: usize| Matrix::from_fn(2, 1, |i, _| if i == k { 1.0 } else { 0.0 });
    let unit_row = |k: usize| Matrix::from_fn(1, 2, |_, j| if j == k { 1.0 } else { 0.0 });
    // Local (row, col) of the single 1 in blocks (0,0), (0,1), (1,0), (1,1).
    let picks = [(0, 0), (1, 0), (0, 1), (1, 1)];
    let blocks = picks
        .iter()
        .map(|&(r, c)| BlockFactors {
            b_factor: unit_col(r),
            a_factor: unit_row(c),
        })
        .collect();
    let grid = BlockGrid::square(2).expect("2 > 0");
    let w0 = FrozenWeight::new(Matrix::ones(4, 4)).expect("finite");
    let state = AdapterState::bhra(grid, blocks).expect("consistent shapes");
    (w0, AdapterConfig::bhra(2, 2), state)
}
