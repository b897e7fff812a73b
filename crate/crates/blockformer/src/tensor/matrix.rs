//! A logically dense matrix stored as a complete tiling of tensor blocks.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::block::TensorBlock;

/// Number of rows (or columns) the block at grid index `idx` spans.
#[inline]
pub fn block_span(total: usize, block_dim: usize, idx: usize) -> usize {
    block_dim.min(total - idx * block_dim)
}

/// A complete, non-overlapping tiling of a dense row-major matrix.
///
/// Blocks are keyed by `(block_row, block_col)`; the `BTreeMap` key order gives
/// a deterministic row-major iteration over blocks, which fixes the float
/// summation order of every kernel for a given `block_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockedMatrix {
    logical_rows: usize,
    logical_cols: usize,
    block_dim: usize,
    pub(crate) blocks: BTreeMap<(usize, usize), TensorBlock>,
}

impl BlockedMatrix {
    /// Tile a dense row-major matrix. Element `(i, j)` lands in block
    /// `(i / block_dim, j / block_dim)` at local `(i % block_dim, j % block_dim)`.
    pub fn partition(
        dense: &[f32],
        logical_rows: usize,
        logical_cols: usize,
        block_dim: usize,
    ) -> Result<Self> {
        if logical_rows == 0 || logical_cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dimensions must be at least 1x1, got {}x{}",
                logical_rows, logical_cols
            )));
        }
        if block_dim == 0 {
            return Err(Error::InvalidArgument("block_dim must be at least 1".into()));
        }
        if dense.len() != logical_rows * logical_cols {
            return Err(Error::Shape(format!(
                "dense payload has {} elements, expected {}x{} = {}",
                dense.len(),
                logical_rows,
                logical_cols,
                logical_rows * logical_cols
            )));
        }
        if let Some(pos) = dense.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite element at flat index {}",
                pos
            )));
        }

        let grid_rows = logical_rows.div_ceil(block_dim);
        let grid_cols = logical_cols.div_ceil(block_dim);
        let mut blocks = BTreeMap::new();
        for bi in 0..grid_rows {
            for bj in 0..grid_cols {
                let rows = block_span(logical_rows, block_dim, bi);
                let cols = block_span(logical_cols, block_dim, bj);
                let mut block = TensorBlock::zeros(bi, bj, rows, cols);
                for r in 0..rows {
                    let src = (bi * block_dim + r) * logical_cols + bj * block_dim;
                    block.data[r * cols..(r + 1) * cols]
                        .copy_from_slice(&dense[src..src + cols]);
                }
                blocks.insert((bi, bj), block);
            }
        }
        Ok(Self {
            logical_rows,
            logical_cols,
            block_dim,
            blocks,
        })
    }

    pub fn zeros(logical_rows: usize, logical_cols: usize, block_dim: usize) -> Result<Self> {
        Self::partition(
            &vec![0.0; logical_rows * logical_cols],
            logical_rows,
            logical_cols,
            block_dim,
        )
    }

    /// Rebuild a matrix from loose blocks, validating shape and completeness.
    pub fn from_block_list(
        logical_rows: usize,
        logical_cols: usize,
        block_dim: usize,
        list: Vec<TensorBlock>,
    ) -> Result<Self> {
        if logical_rows == 0 || logical_cols == 0 || block_dim == 0 {
            return Err(Error::InvalidArgument(
                "dimensions and block_dim must be at least 1".into(),
            ));
        }
        let grid_rows = logical_rows.div_ceil(block_dim);
        let grid_cols = logical_cols.div_ceil(block_dim);
        let mut blocks = BTreeMap::new();
        for block in list {
            let (bi, bj) = block.key();
            if bi >= grid_rows || bj >= grid_cols {
                return Err(Error::Corruption(format!(
                    "block ({}, {}) outside the {}x{} grid",
                    bi, bj, grid_rows, grid_cols
                )));
            }
            let want_rows = block_span(logical_rows, block_dim, bi);
            let want_cols = block_span(logical_cols, block_dim, bj);
            if block.rows != want_rows || block.cols != want_cols {
                return Err(Error::Corruption(format!(
                    "block ({}, {}) is {}x{}, expected {}x{}",
                    bi, bj, block.rows, block.cols, want_rows, want_cols
                )));
            }
            if block.data.len() != block.rows * block.cols {
                return Err(Error::Corruption(format!(
                    "block ({}, {}) payload length {} does not match {}x{}",
                    bi,
                    bj,
                    block.data.len(),
                    block.rows,
                    block.cols
                )));
            }
            if blocks.insert((bi, bj), block).is_some() {
                return Err(Error::Corruption(format!(
                    "duplicate block ({}, {})",
                    bi, bj
                )));
            }
        }
        if blocks.len() != grid_rows * grid_cols {
            return Err(Error::Corruption(format!(
                "incomplete tiling: {} of {} blocks present",
                blocks.len(),
                grid_rows * grid_cols
            )));
        }
        Ok(Self {
            logical_rows,
            logical_cols,
            block_dim,
            blocks,
        })
    }

    /// Inverse of [`BlockedMatrix::partition`], bit-exact.
    pub fn reassemble(&self) -> Result<Vec<f32>> {
        let grid = self.grid();
        let mut dense = vec![0.0f32; self.logical_rows * self.logical_cols];
        for bi in 0..grid.0 {
            for bj in 0..grid.1 {
                let block = self.blocks.get(&(bi, bj)).ok_or_else(|| {
                    Error::Corruption(format!("missing block ({}, {})", bi, bj))
                })?;
                for r in 0..block.rows {
                    let dst = (bi * self.block_dim + r) * self.logical_cols
                        + bj * self.block_dim;
                    dense[dst..dst + block.cols]
                        .copy_from_slice(&block.data[r * block.cols..(r + 1) * block.cols]);
                }
            }
        }
        Ok(dense)
    }

    pub fn logical_rows(&self) -> usize {
        self.logical_rows
    }

    pub fn logical_cols(&self) -> usize {
        self.logical_cols
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    /// Block-grid shape: `(ceil(rows / block_dim), ceil(cols / block_dim))`.
    pub fn grid(&self) -> (usize, usize) {
        (
            self.logical_rows.div_ceil(self.block_dim),
            self.logical_cols.div_ceil(self.block_dim),
        )
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, block_row: usize, block_col: usize) -> Option<&TensorBlock> {
        self.blocks.get(&(block_row, block_col))
    }

    /// Blocks in row-major grid order.
    pub fn blocks(&self) -> impl Iterator<Item = &TensorBlock> {
        self.blocks.values()
    }

    /// Element access by logical coordinates. Intended for tests and small
    /// matrices; kernels work block-wise.
    pub fn get(&self, i: usize, j: usize) -> f32 {
        let block = &self.blocks[&(i / self.block_dim, j / self.block_dim)];
        block.get(i % self.block_dim, j % self.block_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_dense(rng: &mut impl Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn partition_4x4_block_dim_2() {
        let dense: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let m = BlockedMatrix::partition(&dense, 4, 4, 2).unwrap();
        assert_eq!(m.num_blocks(), 4);
        for b in m.blocks() {
            assert_eq!((b.rows, b.cols), (2, 2));
        }
        // element (2,3) lives in block (1,1) at local (0,1)
        assert_eq!(m.block(1, 1).unwrap().get(0, 1), 11.0);
    }

    #[test]
    fn partition_5x3_block_dim_2_remainders() {
        let dense: Vec<f32> = (0..15).map(|v| v as f32).collect();
        let m = BlockedMatrix::partition(&dense, 5, 3, 2).unwrap();
        assert_eq!(m.num_blocks(), 6);
        let corner = m.block(2, 1).unwrap();
        assert_eq!((corner.rows, corner.cols), (1, 1));
        assert_eq!(corner.data, vec![14.0]);
    }

    #[test]
    fn partition_rejects_bad_input() {
        assert!(matches!(
            BlockedMatrix::partition(&[], 0, 3, 2),
            Err(crate::Error::InvalidArgument(_))
        ));
        assert!(matches!(
            BlockedMatrix::partition(&[1.0], 1, 1, 0),
            Err(crate::Error::InvalidArgument(_))
        ));
        assert!(matches!(
            BlockedMatrix::partition(&[1.0, f32::NAN], 1, 2, 1),
            Err(crate::Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn roundtrip_1x1() {
        let m = BlockedMatrix::partition(&[3.5], 1, 1, 4).unwrap();
        assert_eq!(m.reassemble().unwrap(), vec![3.5]);
    }

    #[test]
    fn roundtrip_7x7_block_dim_3() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let dense = random_dense(&mut rng, 49);
        let m = BlockedMatrix::partition(&dense, 7, 7, 3).unwrap();
        let back = m.reassemble().unwrap();
        assert_eq!(
            dense.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn roundtrip_10x64_block_dim_8() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let dense = random_dense(&mut rng, 640);
        let m = BlockedMatrix::partition(&dense, 10, 64, 8).unwrap();
        let back = m.reassemble().unwrap();
        assert_eq!(
            dense.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn reassemble_missing_block_is_corruption() {
        let dense: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let mut m = BlockedMatrix::partition(&dense, 4, 4, 2).unwrap();
        m.blocks.remove(&(1, 0));
        assert!(matches!(m.reassemble(), Err(crate::Error::Corruption(_))));
    }

    #[test]
    fn from_block_list_rejects_wrong_shape() {
        let dense: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let m = BlockedMatrix::partition(&dense, 4, 4, 2).unwrap();
        let mut list: Vec<TensorBlock> = m.blocks().cloned().collect();
        list[0].rows = 1;
        list[0].data.truncate(2);
        assert!(matches!(
            BlockedMatrix::from_block_list(4, 4, 2, list),
            Err(crate::Error::Corruption(_))
        ));
    }
}
