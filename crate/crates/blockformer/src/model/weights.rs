//! Encoder weights: seeded initialization and the named-set inventory used by
//! the store layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::oracle::{DenseBlockWeights, DenseMatrix};
use crate::tensor::BlockedMatrix;

/// Weights for one encoder block. Attention projections carry no bias;
/// both FFN layers do.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub wq: BlockedMatrix,
    pub wk: BlockedMatrix,
    pub wv: BlockedMatrix,
    pub wo: Option<BlockedMatrix>,
    pub w0: BlockedMatrix,
    pub b0: Vec<f32>,
    pub w1: BlockedMatrix,
    pub b1: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub blocks: Vec<BlockWeights>,
}

/// Weight-set roles in generation and storage order.
pub fn weight_roles(use_output_projection: bool) -> Vec<&'static str> {
    if use_output_projection {
        vec!["wq", "wk", "wv", "wo", "w0", "b0", "w1", "b1"]
    } else {
        vec!["wq", "wk", "wv", "w0", "b0", "w1", "b1"]
    }
}

/// Canonical name for one weight set, e.g. `blk0.wq`.
pub fn weight_set_name(block_idx: usize, role: &str) -> String {
    format!("blk{block_idx}.{role}")
}

fn random_dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Vec<f32> {
    let a = (1.0 / fan_in as f32).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect()
}

fn random_blocked(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    fan_in: usize,
    block_dim: usize,
) -> Result<BlockedMatrix> {
    let data = random_dense(rng, rows, cols, fan_in);
    BlockedMatrix::partition(&data, rows, cols, block_dim)
}

impl EncoderWeights {
    /// Deterministic uniform init, half-width `sqrt(1 / fan_in)` per matrix.
    /// Generation order is fixed (wq, wk, wv, [wo], w0, b0, w1, b1 per block,
    /// blocks ascending) so a seed pins every parameter.
    pub fn init_random(cfg: &ModelConfig) -> Result<EncoderWeights> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let e = cfg.embed_dim;
        let f = cfg.ffn_hidden;
        let bd = cfg.block_dim;
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for _ in 0..cfg.n_blocks {
            let wq = random_blocked(&mut rng, e, e, e, bd)?;
            let wk = random_blocked(&mut rng, e, e, e, bd)?;
            let wv = random_blocked(&mut rng, e, e, e, bd)?;
            let wo = if cfg.use_output_projection {
                Some(random_blocked(&mut rng, e, e, e, bd)?)
            } else {
                None
            };
            let w0 = random_blocked(&mut rng, e, f, e, bd)?;
            let b0 = random_dense(&mut rng, 1, f, e);
            let w1 = random_blocked(&mut rng, f, e, f, bd)?;
            let b1 = random_dense(&mut rng, 1, e, f);
            blocks.push(BlockWeights {
                wq,
                wk,
                wv,
                wo,
                w0,
                b0,
                w1,
                b1,
            });
        }
        Ok(EncoderWeights { blocks })
    }

    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| {
                let wo = b.wo.as_ref().map_or(0, |m| m.logical_rows() * m.logical_cols());
                b.wq.logical_rows() * b.wq.logical_cols() * 3
                    + wo
                    + b.w0.logical_rows() * b.w0.logical_cols()
                    + b.b0.len()
                    + b.w1.logical_rows() * b.w1.logical_cols()
                    + b.b1.len()
            })
            .sum()
    }

    /// All weight sets as named blocked matrices, biases as 1-row matrices.
    /// This is the inventory the store and the pipeline both consume.
    pub fn named_sets(&self, block_dim: usize) -> Result<Vec<(String, BlockedMatrix)>> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((weight_set_name(i, "wq"), b.wq.clone()));
            out.push((weight_set_name(i, "wk"), b.wk.clone()));
            out.push((weight_set_name(i, "wv"), b.wv.clone()));
            if let Some(wo) = &b.wo {
                out.push((weight_set_name(i, "wo"), wo.clone()));
            }
            out.push((weight_set_name(i, "w0"), b.w0.clone()));
            out.push((
                weight_set_name(i, "b0"),
                BlockedMatrix::partition(&b.b0, 1, b.b0.len(), block_dim)?,
            ));
            out.push((weight_set_name(i, "w1"), b.w1.clone()));
            out.push((
                weight_set_name(i, "b1"),
                BlockedMatrix::partition(&b.b1, 1, b.b1.len(), block_dim)?,
            ));
        }
        Ok(out)
    }

    /// Rebuild from a set lookup (the inverse of [`named_sets`]).
    pub fn from_named_sets<F>(cfg: &ModelConfig, mut lookup: F) -> Result<EncoderWeights>
    where
        F: FnMut(&str) -> Result<BlockedMatrix>,
    {
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for i in 0..cfg.n_blocks {
            let row_vec = |m: BlockedMatrix, name: &str| -> Result<Vec<f32>> {
                if m.logical_rows() != 1 {
                    return Err(Error::Shape(format!(
                        "bias set {name} must have 1 row, got {}",
                        m.logical_rows()
                    )));
                }
                m.reassemble()
            };
            let wo = if cfg.use_output_projection {
                Some(lookup(&weight_set_name(i, "wo"))?)
            } else {
                None
            };
            blocks.push(BlockWeights {
                wq: lookup(&weight_set_name(i, "wq"))?,
                wk: lookup(&weight_set_name(i, "wk"))?,
                wv: lookup(&weight_set_name(i, "wv"))?,
                wo,
                w0: lookup(&weight_set_name(i, "w0"))?,
                b0: row_vec(lookup(&weight_set_name(i, "b0"))?, "b0")?,
                w1: lookup(&weight_set_name(i, "w1"))?,
                b1: row_vec(lookup(&weight_set_name(i, "b1"))?, "b1")?,
            });
        }
        Ok(EncoderWeights { blocks })
    }

    /// Dense copies for the reference implementation.
    pub fn to_dense(&self) -> Result<Vec<DenseBlockWeights>> {
        let dense = |m: &BlockedMatrix| -> Result<DenseMatrix> {
            Ok(DenseMatrix {
                rows: m.logical_rows(),
                cols: m.logical_cols(),
                data: m.reassemble()?,
            })
        };
        self.blocks
            .iter()
            .map(|b| {
                Ok(DenseBlockWeights {
                    wq: dense(&b.wq)?,
                    wk: dense(&b.wk)?,
                    wv: dense(&b.wv)?,
                    wo: b.wo.as_ref().map(&dense).transpose()?,
                    w0: dense(&b.w0)?,
                    b0: b.b0.clone(),
                    w1: dense(&b.w1)?,
                    b1: b.b1.clone(),
                })
            })
            .collect()
    }
}
