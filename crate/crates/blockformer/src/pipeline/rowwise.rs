//! Row-wise composite operators over blocked matrices: the two-phase softmax
//! and layer normalization.
//!
//! Rows span several blocks horizontally; every pass below walks a block-row
//! band left to right, so per-row statistics accumulate in the same column
//! order a dense single-pass implementation would use, with 64-bit partials.

use crate::tensor::{BlockedMatrix, TensorBlock};

/// Row-major copy of the blocks plus grid shape, for banded row iteration.
fn grid_copy(a: &BlockedMatrix) -> (Vec<TensorBlock>, usize, usize) {
    let (grid_rows, grid_cols) = a.grid();
    (a.blocks().cloned().collect(), grid_rows, grid_cols)
}

fn rebuild(a: &BlockedMatrix, blocks: Vec<TensorBlock>) -> BlockedMatrix {
    BlockedMatrix::from_block_list(a.logical_rows(), a.logical_cols(), a.block_dim(), blocks)
        .expect("row-wise ops preserve the tiling")
}

/// Softmax phase 1: scan every row element of every block, subtract the row
/// max, exponentiate. With the max subtracted, every output lies in (0, 1].
pub fn softmax_exp_scan(a: &BlockedMatrix) -> BlockedMatrix {
    let (mut blocks, grid_rows, grid_cols) = grid_copy(a);
    for bi in 0..grid_rows {
        let band = &mut blocks[bi * grid_cols..(bi + 1) * grid_cols];
        let band_rows = band[0].rows;
        for r in 0..band_rows {
            let mut max = f32::NEG_INFINITY;
            for block in band.iter() {
                for c in 0..block.cols {
                    max = max.max(block.get(r, c));
                }
            }
            for block in band.iter_mut() {
                for c in 0..block.cols {
                    let e = ((block.get(r, c) - max) as f64).exp() as f32;
                    block.set(r, c, e);
                }
            }
        }
    }
    rebuild(a, blocks)
}

/// Softmax phase 2: aggregate the exponentials per row, then divide every
/// element by its row total.
pub fn softmax_aggregate_divide(a: &BlockedMatrix) -> BlockedMatrix {
    let (mut blocks, grid_rows, grid_cols) = grid_copy(a);
    for bi in 0..grid_rows {
        let band = &mut blocks[bi * grid_cols..(bi + 1) * grid_cols];
        let band_rows = band[0].rows;
        for r in 0..band_rows {
            let mut total = 0.0f64;
            for block in band.iter() {
                for c in 0..block.cols {
                    total += block.get(r, c) as f64;
                }
            }
            for block in band.iter_mut() {
                for c in 0..block.cols {
                    let v = (block.get(r, c) as f64 / total) as f32;
                    block.set(r, c, v);
                }
            }
        }
    }
    rebuild(a, blocks)
}

/// Both softmax phases back to back. Every output row sums to 1.
pub fn softmax_two_phase(a: &BlockedMatrix) -> BlockedMatrix {
    softmax_aggregate_divide(&softmax_exp_scan(a))
}

/// Row-wise layer normalization: `(x - mean) / sqrt(var + eps)` with
/// population variance, no learnable scale or shift.
pub fn layer_norm(a: &BlockedMatrix, eps: f32) -> BlockedMatrix {
    assert!(eps >= 0.0, "layer_norm eps must be non-negative");
    let n = a.logical_cols() as f64;
    let (mut blocks, grid_rows, grid_cols) = grid_copy(a);
    for bi in 0..grid_rows {
        let band = &mut blocks[bi * grid_cols..(bi + 1) * grid_cols];
        let band_rows = band[0].rows;
        for r in 0..band_rows {
            let mut sum = 0.0f64;
            for block in band.iter() {
                for c in 0..block.cols {
                    sum += block.get(r, c) as f64;
                }
            }
            let mean = sum / n;
            let mut sq = 0.0f64;
            for block in band.iter() {
                for c in 0..block.cols {
                    let d = block.get(r, c) as f64 - mean;
                    sq += d * d;
                }
            }
            let denom = (sq / n + eps as f64).sqrt();
            for block in band.iter_mut() {
                for c in 0..block.cols {
                    // denom == 0 only when every element equals the mean
                    // exactly, where the centered numerator is exactly 0.
                    let v = if denom == 0.0 {
                        0.0
                    } else {
                        ((block.get(r, c) as f64 - mean) / denom) as f32
                    };
                    block.set(r, c, v);
                }
            }
        }
    }
    rebuild(a, blocks)
}
