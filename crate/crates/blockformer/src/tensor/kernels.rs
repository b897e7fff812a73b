//! Block-level linear-algebra kernels.
//!
//! All kernels are pure functions over immutable inputs. Distinct output blocks
//! are evaluated in parallel; results are identical regardless of evaluation
//! order because each output element is reduced in a fixed order with 64-bit
//! partial sums, then rounded to f32 once.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::block::TensorBlock;
use crate::tensor::matrix::{block_span, BlockedMatrix};

/// Shared kernel thread pool. `BLOCKFORMER_THREADS` caps its size.
pub fn kernel_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = std::env::var("BLOCKFORMER_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1)
        {
            builder = builder.num_threads(n);
        }
        builder.build().expect("failed to build kernel thread pool")
    })
}

/// Element-wise functions accepted by [`elementwise_map`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapFn {
    /// `exp(x)`, evaluated in f64 and rounded once. Inputs are expected to be
    /// pre-stabilized (softmax subtracts the row max before this).
    Exp,
    Relu,
    Scale(f32),
    AddConst(f32),
}

impl MapFn {
    #[inline]
    pub fn apply(self, v: f32) -> f32 {
        match self {
            MapFn::Exp => (v as f64).exp() as f32,
            MapFn::Relu => v.max(0.0),
            MapFn::Scale(c) => v * c,
            MapFn::AddConst(c) => v + c,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MapFn::Exp => "exp",
            MapFn::Relu => "relu",
            MapFn::Scale(_) => "scale",
            MapFn::AddConst(_) => "add_const",
        }
    }
}

fn dims_of(m: &BlockedMatrix) -> String {
    format!("{}x{}/bd{}", m.logical_rows(), m.logical_cols(), m.block_dim())
}

/// C = A * B over the block grid: `C(bi,bj) = sum_k A(bi,k) * B(k,bj)`.
///
/// Each output element accumulates its full inner product in f64, k ascending
/// across the whole logical dimension, so the result does not depend on
/// `block_dim` or evaluation order.
pub fn block_matmul(a: &BlockedMatrix, b: &BlockedMatrix) -> Result<BlockedMatrix> {
    if a.logical_cols() != b.logical_rows() {
        return Err(Error::Shape(format!(
            "matmul inner dimensions disagree: {} vs {}",
            dims_of(a),
            dims_of(b)
        )));
    }
    if a.block_dim() != b.block_dim() {
        return Err(Error::Shape(format!(
            "matmul block_dim disagree: {} vs {}",
            a.block_dim(),
            b.block_dim()
        )));
    }
    let bd = a.block_dim();
    let out_rows = a.logical_rows();
    let out_cols = b.logical_cols();
    let grid_rows = out_rows.div_ceil(bd);
    let grid_cols = out_cols.div_ceil(bd);
    let grid_inner = a.logical_cols().div_ceil(bd);

    let keys: Vec<(usize, usize)> = (0..grid_rows)
        .flat_map(|bi| (0..grid_cols).map(move |bj| (bi, bj)))
        .collect();

    let blocks: Vec<TensorBlock> = kernel_pool().install(|| {
        keys.par_iter()
            .map(|&(bi, bj)| {
                let rows = block_span(out_rows, bd, bi);
                let cols = block_span(out_cols, bd, bj);
                let mut acc = vec![0.0f64; rows * cols];
                for bk in 0..grid_inner {
                    let lhs = a.block(bi, bk).expect("complete tiling");
                    let rhs = b.block(bk, bj).expect("complete tiling");
                    for r in 0..rows {
                        for k in 0..lhs.cols {
                            let av = lhs.data[r * lhs.cols + k] as f64;
                            let rhs_row = &rhs.data[k * rhs.cols..k * rhs.cols + cols];
                            let out_row = &mut acc[r * cols..(r + 1) * cols];
                            for (o, &bv) in out_row.iter_mut().zip(rhs_row) {
                                *o += av * bv as f64;
                            }
                        }
                    }
                }
                TensorBlock {
                    block_row: bi,
                    block_col: bj,
                    rows,
                    cols,
                    data: acc.into_iter().map(|v| v as f32).collect(),
                }
            })
            .collect()
    });
    BlockedMatrix::from_block_list(out_rows, out_cols, bd, blocks)
}

/// Block (i, j) maps to (j, i) with each tile transposed; logical dims swap.
pub fn block_transpose(a: &BlockedMatrix) -> BlockedMatrix {
    let mut out = Vec::with_capacity(a.num_blocks());
    for block in a.blocks() {
        let mut t = TensorBlock::zeros(block.block_col, block.block_row, block.cols, block.rows);
        for r in 0..block.rows {
            for c in 0..block.cols {
                t.set(c, r, block.get(r, c));
            }
        }
        out.push(t);
    }
    BlockedMatrix::from_block_list(a.logical_cols(), a.logical_rows(), a.block_dim(), out)
        .expect("transpose preserves the tiling")
}

/// Per-element sum, implemented as a key-equality join over `(block_row, block_col)`.
pub fn elementwise_add(a: &BlockedMatrix, b: &BlockedMatrix) -> Result<BlockedMatrix> {
    if a.logical_rows() != b.logical_rows()
        || a.logical_cols() != b.logical_cols()
        || a.block_dim() != b.block_dim()
    {
        return Err(Error::Shape(format!(
            "elementwise_add operands disagree: {} vs {}",
            dims_of(a),
            dims_of(b)
        )));
    }
    // Both maps cover the identical complete grid, so the merge join pairs
    // every key exactly once.
    let joined = a
        .blocks()
        .zip(b.blocks())
        .map(|(lhs, rhs)| {
            debug_assert_eq!(lhs.key(), rhs.key());
            TensorBlock {
                block_row: lhs.block_row,
                block_col: lhs.block_col,
                rows: lhs.rows,
                cols: lhs.cols,
                data: lhs
                    .data
                    .iter()
                    .zip(&rhs.data)
                    .map(|(x, y)| x + y)
                    .collect(),
            }
        })
        .collect();
    BlockedMatrix::from_block_list(a.logical_rows(), a.logical_cols(), a.block_dim(), joined)
}

/// Apply `f` to every element; shape preserved. A non-finite output aborts with
/// the offending block coordinate.
pub fn elementwise_map(a: &BlockedMatrix, f: MapFn) -> Result<BlockedMatrix> {
    let mut out = Vec::with_capacity(a.num_blocks());
    for block in a.blocks() {
        let mut data = Vec::with_capacity(block.data.len());
        for &v in &block.data {
            let y = f.apply(v);
            if !y.is_finite() {
                return Err(Error::NumericOverflow {
                    block_row: block.block_row,
                    block_col: block.block_col,
                    detail: format!("{}({v}) is not finite", f.name()),
                });
            }
            data.push(y);
        }
        out.push(TensorBlock {
            block_row: block.block_row,
            block_col: block.block_col,
            rows: block.rows,
            cols: block.cols,
            data,
        });
    }
    BlockedMatrix::from_block_list(a.logical_rows(), a.logical_cols(), a.block_dim(), out)
}

/// Add `bias` (length `logical_cols`) to every row.
pub fn broadcast_row_add(a: &BlockedMatrix, bias: &[f32]) -> Result<BlockedMatrix> {
    if bias.len() != a.logical_cols() {
        return Err(Error::Shape(format!(
            "bias length {} does not match {} columns",
            bias.len(),
            a.logical_cols()
        )));
    }
    let bd = a.block_dim();
    let mut out = Vec::with_capacity(a.num_blocks());
    for block in a.blocks() {
        let col0 = block.block_col * bd;
        let mut next = block.clone();
        for r in 0..block.rows {
            for c in 0..block.cols {
                next.data[r * block.cols + c] += bias[col0 + c];
            }
        }
        out.push(next);
    }
    BlockedMatrix::from_block_list(a.logical_rows(), a.logical_cols(), a.block_dim(), out)
}

/// Copy columns `[start, start + count)` into a new matrix with the same block_dim.
pub fn slice_cols(a: &BlockedMatrix, start: usize, count: usize) -> Result<BlockedMatrix> {
    if count == 0 || start + count > a.logical_cols() {
        return Err(Error::Shape(format!(
            "column slice [{start}, {}) out of range for {} columns",
            start + count,
            a.logical_cols()
        )));
    }
    let rows = a.logical_rows();
    let cols = a.logical_cols();
    let dense = a.reassemble()?;
    let mut sliced = Vec::with_capacity(rows * count);
    for r in 0..rows {
        sliced.extend_from_slice(&dense[r * cols + start..r * cols + start + count]);
    }
    BlockedMatrix::partition(&sliced, rows, count, a.block_dim())
}

/// Concatenate matrices left to right. All parts must share rows and block_dim.
pub fn concat_cols(parts: &[&BlockedMatrix]) -> Result<BlockedMatrix> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat_cols needs at least one input".into()))?;
    let rows = first.logical_rows();
    let bd = first.block_dim();
    for p in parts {
        if p.logical_rows() != rows || p.block_dim() != bd {
            return Err(Error::Shape(
                "concat_cols inputs must share rows and block_dim".into(),
            ));
        }
    }
    let total_cols: usize = parts.iter().map(|p| p.logical_cols()).sum();
    let denses: Vec<Vec<f32>> = parts
        .iter()
        .map(|p| p.reassemble())
        .collect::<Result<_>>()?;
    let mut dense = Vec::with_capacity(rows * total_cols);
    for r in 0..rows {
        for (p, d) in parts.iter().zip(&denses) {
            let c = p.logical_cols();
            dense.extend_from_slice(&d[r * c..(r + 1) * c]);
        }
    }
    BlockedMatrix::partition(&dense, rows, total_cols, bd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{self, DenseMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_blocked(seed: u64, rows: usize, cols: usize, bd: usize) -> BlockedMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense: Vec<f32> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        BlockedMatrix::partition(&dense, rows, cols, bd).unwrap()
    }

    fn to_dense(m: &BlockedMatrix) -> DenseMatrix {
        DenseMatrix::new(m.logical_rows(), m.logical_cols(), m.reassemble().unwrap()).unwrap()
    }

    fn identity(n: usize, bd: usize) -> BlockedMatrix {
        let mut dense = vec![0.0f32; n * n];
        for i in 0..n {
            dense[i * n + i] = 1.0;
        }
        BlockedMatrix::partition(&dense, n, n, bd).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = random_blocked(1, 6, 6, 4);
        let c = block_matmul(&a, &identity(6, 4)).unwrap();
        let m = oracle::compare(&to_dense(&a), &to_dense(&c)).unwrap();
        assert!(m.max_abs <= 1e-6, "max_abs {}", m.max_abs);
    }

    #[test]
    fn matmul_matches_dense_oracle() {
        let a = random_blocked(42, 10, 64, 8);
        let b = random_blocked(43, 64, 64, 8);
        let c = block_matmul(&a, &b).unwrap();
        let want = oracle::matmul(&to_dense(&a), &to_dense(&b)).unwrap();
        let m = oracle::compare(&want, &to_dense(&c)).unwrap();
        assert!(m.max_abs <= 1e-5, "max_abs {}", m.max_abs);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let a = BlockedMatrix::zeros(5, 7, 3).unwrap();
        let b = random_blocked(3, 7, 4, 3);
        let c = block_matmul(&a, &b).unwrap();
        assert!(c.blocks().all(|blk| blk.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn matmul_shape_errors() {
        let a = random_blocked(1, 4, 5, 2);
        let b = random_blocked(2, 4, 4, 2);
        assert!(matches!(block_matmul(&a, &b), Err(crate::Error::Shape(_))));
        let c = random_blocked(3, 5, 4, 4);
        assert!(matches!(block_matmul(&a, &c), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn matmul_block_dim_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let da: Vec<f32> = (0..10 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let db: Vec<f32> = (0..64 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let coarse = block_matmul(
            &BlockedMatrix::partition(&da, 10, 64, 16).unwrap(),
            &BlockedMatrix::partition(&db, 64, 32, 16).unwrap(),
        )
        .unwrap();
        let fine = block_matmul(
            &BlockedMatrix::partition(&da, 10, 64, 4).unwrap(),
            &BlockedMatrix::partition(&db, 64, 32, 4).unwrap(),
        )
        .unwrap();
        // Full-width f64 accumulation makes the two tilings bit-identical,
        // comfortably inside the 1e-5 contract.
        assert_eq!(coarse.reassemble().unwrap(), fine.reassemble().unwrap());
    }

    #[test]
    fn transpose_involution_and_oracle() {
        let a = random_blocked(5, 5, 3, 2);
        let t = block_transpose(&a);
        assert_eq!((t.logical_rows(), t.logical_cols()), (3, 5));
        let tt = block_transpose(&t);
        assert_eq!(a, tt);
        let want = oracle::transpose(&to_dense(&a));
        assert_eq!(want.data, t.reassemble().unwrap());
    }

    #[test]
    fn transpose_symmetric_input() {
        let dense = vec![1.0, 2.0, 2.0, 5.0];
        let a = BlockedMatrix::partition(&dense, 2, 2, 1).unwrap();
        assert_eq!(block_transpose(&a).reassemble().unwrap(), dense);
    }

    #[test]
    fn add_zero_and_negation() {
        let a = random_blocked(11, 10, 64, 8);
        let zero = BlockedMatrix::zeros(10, 64, 8).unwrap();
        assert_eq!(elementwise_add(&a, &zero).unwrap(), a);

        let neg = elementwise_map(&a, MapFn::Scale(-1.0)).unwrap();
        let sum = elementwise_add(&a, &neg).unwrap();
        assert!(sum.blocks().all(|b| b.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn add_matches_dense_oracle() {
        let a = random_blocked(21, 10, 64, 8);
        let b = random_blocked(22, 10, 64, 8);
        let got = elementwise_add(&a, &b).unwrap();
        let want = oracle::add(&to_dense(&a), &to_dense(&b)).unwrap();
        let m = oracle::compare(&want, &to_dense(&got)).unwrap();
        assert!(m.max_abs <= 1e-6);
    }

    #[test]
    fn add_block_dim_mismatch_is_shape_error() {
        let a = random_blocked(1, 8, 8, 4);
        let b = random_blocked(2, 8, 8, 2);
        assert!(matches!(
            elementwise_add(&a, &b),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn map_relu_and_scale() {
        let a = BlockedMatrix::partition(&[-1.0, 0.0, 2.0], 1, 3, 2).unwrap();
        let r = elementwise_map(&a, MapFn::Relu).unwrap();
        assert_eq!(r.reassemble().unwrap(), vec![0.0, 0.0, 2.0]);
        let s = elementwise_map(&a, MapFn::Scale(1.0)).unwrap();
        assert_eq!(s, a);
    }

    #[test]
    fn map_exp_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dense: Vec<f32> = (0..60).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let a = BlockedMatrix::partition(&dense, 6, 10, 4).unwrap();
        let e = elementwise_map(&a, MapFn::Exp).unwrap();
        for (x, y) in dense.iter().zip(e.reassemble().unwrap()) {
            let want = (*x as f64).exp();
            assert!(((y as f64 - want) / want).abs() < 1e-6);
        }
    }

    #[test]
    fn map_exp_overflow_names_block() {
        let a = BlockedMatrix::partition(&[0.0, 200.0], 1, 2, 1).unwrap();
        match elementwise_map(&a, MapFn::Exp) {
            Err(crate::Error::NumericOverflow {
                block_row,
                block_col,
                ..
            }) => {
                assert_eq!((block_row, block_col), (0, 1));
            }
            other => panic!("expected overflow, got {:?}", other),
        }
    }

    #[test]
    fn broadcast_bias_cases() {
        let a = random_blocked(31, 10, 64, 8);
        let zero_bias = vec![0.0f32; 64];
        assert_eq!(broadcast_row_add(&a, &zero_bias).unwrap(), a);

        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let bias: Vec<f32> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = broadcast_row_add(&a, &bias).unwrap();
        let want = oracle::broadcast_row_add(&to_dense(&a), &bias).unwrap();
        let m = oracle::compare(&want, &to_dense(&got)).unwrap();
        assert!(m.max_abs <= 1e-6);

        assert!(matches!(
            broadcast_row_add(&a, &bias[..10]),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn broadcast_single_row_equals_join_add() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let row: Vec<f32> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f32> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = BlockedMatrix::partition(&row, 1, 9, 4).unwrap();
        let b = BlockedMatrix::partition(&bias, 1, 9, 4).unwrap();
        assert_eq!(
            broadcast_row_add(&a, &bias).unwrap(),
            elementwise_add(&a, &b).unwrap()
        );
    }

    #[test]
    fn slice_and_concat_are_inverse() {
        let a = random_blocked(40, 10, 64, 8);
        let left = slice_cols(&a, 0, 16).unwrap();
        let right = slice_cols(&a, 16, 48).unwrap();
        let back = concat_cols(&[&left, &right]).unwrap();
        assert_eq!(a, back);
    }
}
