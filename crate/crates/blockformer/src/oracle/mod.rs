//! Dense, unblocked reference implementations used as numerical ground truth.
//!
//! Everything here is deliberately plain: row-major `Vec<f32>`, single-threaded
//! loops, 64-bit accumulation in deterministic order. None of the blocked kernel
//! code is shared with this module, so agreement between the two paths is
//! evidence rather than tautology.

use crate::error::{Error, Result};

/// Row-major dense matrix of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "dense matrix {}x{} expects {} elements, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "dense matrix contains non-finite elements".into(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }
}

/// Comparison metrics between two same-shaped matrices.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CompareMetrics {
    pub max_abs: f64,
    pub max_rel: f64,
    pub mean_abs: f64,
}

/// Per-block dense weights mirroring the seven-set inventory
/// (plus the optional output projection).
#[derive(Debug, Clone)]
pub struct DenseBlockWeights {
    pub wq: DenseMatrix,
    pub wk: DenseMatrix,
    pub wv: DenseMatrix,
    pub wo: Option<DenseMatrix>,
    pub w0: DenseMatrix,
    pub b0: Vec<f32>,
    pub w1: DenseMatrix,
    pub b1: Vec<f32>,
}

/// Encoder hyperparameters the oracle needs; kept free of any blocked-engine types.
#[derive(Debug, Clone, Copy)]
pub struct DenseEncoderParams {
    pub heads: usize,
    pub eps: f32,
    pub final_ffn_relu: bool,
    /// Use the alternate block topology: attention, post-norm, FFN, one residual
    /// joining the FFN output with the post-attention norm output.
    pub netsdb_dataflow: bool,
}

fn check_same_shape(a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::Shape(format!(
            "expected {}x{}, got {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(())
}

/// C = A * B with 64-bit accumulation, k ascending.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut acc = 0.0f64;
            for k in 0..a.cols {
                acc += a.get(i, k) as f64 * b.get(k, j) as f64;
            }
            out.set(i, j, acc as f32);
        }
    }
    Ok(out)
}

pub fn transpose(a: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.cols, a.rows);
    for i in 0..a.rows {
        for j in 0..a.cols {
            out.set(j, i, a.get(i, j));
        }
    }
    out
}

pub fn add(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    check_same_shape(a, b)?;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| x + y)
        .collect::<Vec<_>>();
    Ok(DenseMatrix {
        rows: a.rows,
        cols: a.cols,
        data,
    })
}

pub fn relu(a: &DenseMatrix) -> DenseMatrix {
    DenseMatrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().map(|v| v.max(0.0)).collect(),
    }
}

pub fn scale(a: &DenseMatrix, c: f32) -> DenseMatrix {
    DenseMatrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().map(|v| v * c).collect(),
    }
}

pub fn broadcast_row_add(a: &DenseMatrix, bias: &[f32]) -> Result<DenseMatrix> {
    if bias.len() != a.cols {
        return Err(Error::Shape(format!(
            "bias length {} does not match {} columns",
            bias.len(),
            a.cols
        )));
    }
    let mut out = a.clone();
    for i in 0..a.rows {
        for (j, &b) in bias.iter().enumerate() {
            out.set(i, j, a.get(i, j) + b);
        }
    }
    Ok(out)
}

/// Row-wise softmax, single pass per row: subtract the row max, exponentiate,
/// divide by the row total.
pub fn softmax_rows(a: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.rows, a.cols);
    for i in 0..a.rows {
        let row = &a.data[i * a.cols..(i + 1) * a.cols];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut exps = vec![0.0f64; a.cols];
        let mut sum = 0.0f64;
        for (j, &x) in row.iter().enumerate() {
            let e = ((x - max) as f64).exp();
            exps[j] = e;
            sum += e;
        }
        for (j, &e) in exps.iter().enumerate() {
            out.set(i, j, (e / sum) as f32);
        }
    }
    out
}

/// Row-wise layer normalization with population variance and no learnable
/// scale or shift.
pub fn layer_norm_rows(a: &DenseMatrix, eps: f32) -> DenseMatrix {
    let n = a.cols as f64;
    let mut out = DenseMatrix::zeros(a.rows, a.cols);
    for i in 0..a.rows {
        let row = &a.data[i * a.cols..(i + 1) * a.cols];
        let mean = row.iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = row
            .iter()
            .map(|&x| {
                let d = x as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        let inv = 1.0 / (var + eps as f64).sqrt();
        for (j, &x) in row.iter().enumerate() {
            out.set(i, j, ((x as f64 - mean) * inv) as f32);
        }
    }
    out
}

fn slice_cols(a: &DenseMatrix, start: usize, count: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.rows, count);
    for i in 0..a.rows {
        for j in 0..count {
            out.set(i, j, a.get(i, start + j));
        }
    }
    out
}

fn concat_cols(parts: &[DenseMatrix]) -> DenseMatrix {
    let rows = parts[0].rows;
    let cols: usize = parts.iter().map(|p| p.cols).sum();
    let mut out = DenseMatrix::zeros(rows, cols);
    let mut off = 0;
    for p in parts {
        for i in 0..rows {
            for j in 0..p.cols {
                out.set(i, off + j, p.get(i, j));
            }
        }
        off += p.cols;
    }
    out
}

/// Scaled dot-product attention for one head: softmax(Q K^T / sqrt(d_k)) V.
pub fn attention(q: &DenseMatrix, k: &DenseMatrix, v: &DenseMatrix) -> Result<DenseMatrix> {
    check_same_shape(q, k)?;
    check_same_shape(k, v)?;
    let head_dim = k.cols;
    let factor = 1.0 / (head_dim as f32).sqrt();
    let scores = scale(&matmul(q, &transpose(k))?, factor);
    let probs = softmax_rows(&scores);
    matmul(&probs, v)
}

/// Multi-head attention: project, split into column slices, attend per head,
/// concatenate, optionally apply the output projection.
pub fn multi_head_attention(
    x: &DenseMatrix,
    w: &DenseBlockWeights,
    heads: usize,
) -> Result<DenseMatrix> {
    let q = matmul(x, &w.wq)?;
    let k = matmul(x, &w.wk)?;
    let v = matmul(x, &w.wv)?;
    let head_dim = q.cols / heads;
    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = slice_cols(&q, h * head_dim, head_dim);
        let kh = slice_cols(&k, h * head_dim, head_dim);
        let vh = slice_cols(&v, h * head_dim, head_dim);
        outputs.push(attention(&qh, &kh, &vh)?);
    }
    let cat = concat_cols(&outputs);
    match &w.wo {
        Some(wo) => matmul(&cat, wo),
        None => Ok(cat),
    }
}

/// Two-hidden-layer feed-forward network: relu(x w0 + b0) w1 + b1,
/// with an optional final relu.
pub fn feed_forward(
    x: &DenseMatrix,
    w: &DenseBlockWeights,
    final_relu: bool,
) -> Result<DenseMatrix> {
    let h = relu(&broadcast_row_add(&matmul(x, &w.w0)?, &w.b0)?);
    let y = broadcast_row_add(&matmul(&h, &w.w1)?, &w.b1)?;
    Ok(if final_relu { relu(&y) } else { y })
}

/// One encoder block.
///
/// Canonical topology: u = x + MHA(LN(x)); y = u + FFN(LN(u)).
/// `netsdb_dataflow` topology: n = LN(MHA(x)); y = n + FFN(n).
pub fn encoder_block(
    x: &DenseMatrix,
    w: &DenseBlockWeights,
    p: &DenseEncoderParams,
) -> Result<DenseMatrix> {
    if p.netsdb_dataflow {
        let attn = multi_head_attention(x, w, p.heads)?;
        let normed = layer_norm_rows(&attn, p.eps);
        let ffn = feed_forward(&normed, w, p.final_ffn_relu)?;
        add(&normed, &ffn)
    } else {
        let attn = multi_head_attention(&layer_norm_rows(x, p.eps), w, p.heads)?;
        let u = add(x, &attn)?;
        let ffn = feed_forward(&layer_norm_rows(&u, p.eps), w, p.final_ffn_relu)?;
        add(&u, &ffn)
    }
}

/// Full forward pass over a stack of encoder blocks for one batch item.
pub fn encoder_forward(
    x: &DenseMatrix,
    weights: &[DenseBlockWeights],
    p: &DenseEncoderParams,
) -> Result<DenseMatrix> {
    let mut cur = x.clone();
    for w in weights {
        cur = encoder_block(&cur, w, p)?;
    }
    Ok(cur)
}

/// Element-wise comparison metrics; `max_rel` uses max(|a|, |b|, 1e-12) as the
/// denominator.
pub fn compare(a: &DenseMatrix, b: &DenseMatrix) -> Result<CompareMetrics> {
    check_same_shape(a, b)?;
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut sum_abs = 0.0f64;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let diff = (x as f64 - y as f64).abs();
        let denom = (x as f64).abs().max((y as f64).abs()).max(1e-12);
        max_abs = max_abs.max(diff);
        max_rel = max_rel.max(diff / denom);
        sum_abs += diff;
    }
    let mean_abs = if a.data.is_empty() {
        0.0
    } else {
        sum_abs / a.data.len() as f64
    };
    Ok(CompareMetrics {
        max_abs,
        max_rel,
        mean_abs,
    })
}
