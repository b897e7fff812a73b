//! Encoder model: configuration, seeded weights, attention/FFN operators, and
//! the batched forward pass in direct and pipelined form.

mod attention;
mod config;
mod encoder;
mod weights;

pub use attention::{
    feed_forward, multi_head_attention, scaled_dot_product_attention, split_heads, unify_heads,
};
pub use config::ModelConfig;
pub use encoder::{
    build_forward_pipeline, encoder_block_forward, model_forward, random_batch,
};
pub use weights::{weight_roles, weight_set_name, BlockWeights, EncoderWeights};

use crate::error::Result;
use crate::oracle::{DenseEncoderParams, DenseMatrix};
use crate::tensor::BlockedMatrix;

/// Dense copy of a blocked matrix, for reference comparisons.
pub fn to_dense(m: &BlockedMatrix) -> Result<DenseMatrix> {
    Ok(DenseMatrix {
        rows: m.logical_rows(),
        cols: m.logical_cols(),
        data: m.reassemble()?,
    })
}

/// Reference-implementation parameters matching this config.
pub fn dense_params(cfg: &ModelConfig) -> DenseEncoderParams {
    DenseEncoderParams {
        heads: cfg.heads,
        eps: cfg.layernorm_eps,
        final_ffn_relu: cfg.final_ffn_relu,
        netsdb_dataflow: cfg.netsdb_dataflow,
    }
}
