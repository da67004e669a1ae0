use serde::{Deserialize, Serialize};

use crate::error::{BhraError, Result};
use crate::matrix::Matrix;

/// A `row_parts x col_parts` partition of an `m x n` matrix into equal,
/// disjoint blocks. Ragged partitions are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockGrid {
    pub row_parts: usize,
    pub col_parts: usize,
}

impl BlockGrid {
    pub fn new(row_parts: usize, col_parts: usize) -> Result<Self> {
        if row_parts == 0 || col_parts == 0 {
            return Err(BhraError::config("grid parts must be positive"));
        }
        Ok(BlockGrid {
            row_parts,
            col_parts,
        })
    }

    pub fn square(b: usize) -> Result<Self> {
        Self::new(b, b)
    }

    pub fn block_count(&self) -> usize {
        self.row_parts * self.col_parts
    }

    /// Block shape for an `m x n` matrix, or a divisibility error.
    pub fn block_shape(&self, m: usize, n: usize) -> Result<(usize, usize)> {
        if !m.is_multiple_of(self.row_parts) {
            return Err(BhraError::Divisibility {
                what: "rows",
                dim: m,
                parts: self.row_parts,
            });
        }
        if !n.is_multiple_of(self.col_parts) {
            return Err(BhraError::Divisibility {
                what: "cols",
                dim: n,
                parts: self.col_parts,
            });
        }
        Ok((m / self.row_parts, n / self.col_parts))
    }

    /// Row-major block index.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.col_parts + j
    }
}

/// Splits `m` into its blocks in row-major block order.
pub fn partition(m: &Matrix, grid: BlockGrid) -> Result<Vec<Matrix>> {
    let (br, bc) = grid.block_shape(m.rows(), m.cols())?;
    let mut blocks = Vec::with_capacity(grid.block_count());
    for i in 0..grid.row_parts {
        for j in 0..grid.col_parts {
            blocks.push(m.submatrix(i * br, j * bc, br, bc));
        }
    }
    Ok(blocks)
}

/// Inverse of [`partition`]. All blocks must share one shape.
pub fn assemble(blocks: &[Matrix], grid: BlockGrid) -> Result<Matrix> {
    if blocks.len() != grid.block_count() {
        return Err(BhraError::config(format!(
            "expected {} blocks, got {}",
            grid.block_count(),
            blocks.len()
        )));
    }
    let (br, bc) = blocks[0].shape();
    if let Some(bad) = blocks.iter().find(|b| b.shape() != (br, bc)) {
        return Err(BhraError::DimensionMismatch {
            op: "assemble",
            left: (br, bc),
            right: bad.shape(),
        });
    }
    let mut out = Matrix::zeros(br * grid.row_parts, bc * grid.col_parts);
    for i in 0..grid.row_parts {
        for j in 0..grid.col_parts {
            out.write_submatrix(i * br, j * bc, &blocks[grid.index(i, j)]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block_is_whole_matrix() {
        let m = Matrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64);
        let blocks = partition(&m, BlockGrid::square(1).unwrap()).unwrap();
        assert_eq!(blocks, vec![m]);
    }

    #[test]
    fn two_by_two_scalars() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let blocks = partition(&m, BlockGrid::square(2).unwrap()).unwrap();
        let vals: Vec<f64> = blocks.iter().map(|b| b.get(0, 0)).collect();
        assert_eq!(vals, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn non_square_grid_round_trip() {
        let m = Matrix::from_fn(6, 4, |i, j| (i as f64).sin() + j as f64);
        let grid = BlockGrid::new(3, 2).unwrap();
        let blocks = partition(&m, grid).unwrap();
        assert_eq!(blocks.len(), 6);
        assert!(blocks.iter().all(|b| b.shape() == (2, 2)));
        assert_eq!(assemble(&blocks, grid).unwrap(), m);
    }

    #[test]
    fn ragged_partition_rejected() {
        let m = Matrix::zeros(8, 8);
        assert!(matches!(
            partition(&m, BlockGrid::square(3).unwrap()),
            Err(BhraError::Divisibility {
                dim: 8,
                parts: 3,
                ..
            })
        ));
        assert!(BlockGrid::square(0).is_err());
    }
}
