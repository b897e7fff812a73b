//! Attention and feed-forward over blocked matrices, composed directly from
//! the block kernels. The pipeline builder emits the same operator sequence;
//! both paths must agree bit for bit.

use crate::error::{Error, Result};
use crate::model::weights::BlockWeights;
use crate::pipeline::softmax_two_phase;
use crate::tensor::{
    block_matmul, block_transpose, broadcast_row_add, elementwise_map, slice_cols, BlockedMatrix,
    MapFn,
};

/// Column-slice the projected activations into per-head matrices.
pub fn split_heads(x: &BlockedMatrix, heads: usize) -> Result<Vec<BlockedMatrix>> {
    if heads == 0 || !x.logical_cols().is_multiple_of(heads) {
        return Err(Error::Shape(format!(
            "cannot split {} columns into {heads} heads",
            x.logical_cols()
        )));
    }
    let hd = x.logical_cols() / heads;
    (0..heads).map(|h| slice_cols(x, h * hd, hd)).collect()
}

/// Concatenate per-head outputs back to full width, optionally applying the
/// output projection.
pub fn unify_heads(parts: &[BlockedMatrix], wo: Option<&BlockedMatrix>) -> Result<BlockedMatrix> {
    let refs: Vec<&BlockedMatrix> = parts.iter().collect();
    let cat = crate::tensor::concat_cols(&refs)?;
    match wo {
        Some(w) => block_matmul(&cat, w),
        None => Ok(cat),
    }
}

/// softmax(q kᵀ / sqrt(d)) v for one head. `d` is the head width taken from
/// `k`; scaling happens before the two-phase softmax.
pub fn scaled_dot_product_attention(
    q: &BlockedMatrix,
    k: &BlockedMatrix,
    v: &BlockedMatrix,
) -> Result<BlockedMatrix> {
    if q.logical_cols() != k.logical_cols() || k.logical_rows() != v.logical_rows() {
        return Err(Error::Shape(format!(
            "attention shape mismatch: q {}x{}, k {}x{}, v {}x{}",
            q.logical_rows(),
            q.logical_cols(),
            k.logical_rows(),
            k.logical_cols(),
            v.logical_rows(),
            v.logical_cols()
        )));
    }
    let scale = 1.0 / (k.logical_cols() as f32).sqrt();
    let kt = block_transpose(k);
    let scores = block_matmul(q, &kt)?;
    let scaled = elementwise_map(&scores, MapFn::Scale(scale))?;
    let probs = softmax_two_phase(&scaled);
    block_matmul(&probs, v)
}

/// Full multi-head attention for one sequence: project, split, attend per
/// head, concatenate.
pub fn multi_head_attention(
    x: &BlockedMatrix,
    w: &BlockWeights,
    heads: usize,
) -> Result<BlockedMatrix> {
    let q = block_matmul(x, &w.wq)?;
    let k = block_matmul(x, &w.wk)?;
    let v = block_matmul(x, &w.wv)?;
    let qs = split_heads(&q, heads)?;
    let ks = split_heads(&k, heads)?;
    let vs = split_heads(&v, heads)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        outs.push(scaled_dot_product_attention(&qs[h], &ks[h], &vs[h])?);
    }
    unify_heads(&outs, w.wo.as_ref())
}

/// Two-layer FFN: relu(x w0 + b0) w1 + b1, with an optional trailing ReLU.
pub fn feed_forward(
    x: &BlockedMatrix,
    w: &BlockWeights,
    final_relu: bool,
) -> Result<BlockedMatrix> {
    let h = block_matmul(x, &w.w0)?;
    let h = broadcast_row_add(&h, &w.b0)?;
    let h = elementwise_map(&h, MapFn::Relu)?;
    let y = block_matmul(&h, &w.w1)?;
    let y = broadcast_row_add(&y, &w.b1)?;
    if final_relu {
        elementwise_map(&y, MapFn::Relu)
    } else {
        Ok(y)
    }
}
