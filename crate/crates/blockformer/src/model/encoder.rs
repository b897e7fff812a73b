//! The encoder forward pass, in two equivalent forms: direct kernel calls and
//! a traced stage pipeline. Both apply the operators in the same order, so
//! their outputs are bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::attention::{feed_forward, multi_head_attention};
use crate::model::config::ModelConfig;
use crate::model::weights::{weight_set_name, EncoderWeights};
use crate::pipeline::{
    layer_norm, run_pipeline, ExecMode, Pipeline, SetStore, StageOp, StageTrace, TensorSet,
};
use crate::tensor::{elementwise_add, BatchedTensor, BlockedMatrix, MapFn};

/// One encoder block, direct form.
///
/// Canonical topology: `u = x + MHA(LN(x)); y = u + FFN(LN(u))`.
/// With `netsdb_dataflow`: `n = LN(MHA(x)); y = n + FFN(n)` (post-norm, single
/// residual from the normed attention output).
pub fn encoder_block_forward(
    x: &BlockedMatrix,
    w: &crate::model::weights::BlockWeights,
    cfg: &ModelConfig,
) -> Result<BlockedMatrix> {
    if cfg.netsdb_dataflow {
        let attn = multi_head_attention(x, w, cfg.heads)?;
        let normed = layer_norm(&attn, cfg.layernorm_eps);
        let ffn = feed_forward(&normed, w, cfg.final_ffn_relu)?;
        elementwise_add(&normed, &ffn)
    } else {
        let attn = multi_head_attention(&layer_norm(x, cfg.layernorm_eps), w, cfg.heads)?;
        let u = elementwise_add(x, &attn)?;
        let ffn = feed_forward(&layer_norm(&u, cfg.layernorm_eps), w, cfg.final_ffn_relu)?;
        elementwise_add(&u, &ffn)
    }
}

/// Build the full forward pass as a pipeline for one batch item.
///
/// Stage names are logical (`blk0.q_proj.matmul`, `blk0.h2.softmax.exp_scan`,
/// ...). Output set names carry `set_prefix` so several items can share one
/// intermediate store; weight set names (`blk0.wq`, ...) are never prefixed.
/// The input activation set is named `{set_prefix}x`.
pub fn build_forward_pipeline(cfg: &ModelConfig, set_prefix: &str) -> Pipeline {
    let mut p = Pipeline::new();
    let eps = cfg.layernorm_eps;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f32).sqrt();
    let mut cur = format!("{set_prefix}x");
    for b in 0..cfg.n_blocks {
        let stage = |s: &str| format!("blk{b}.{s}");
        let set = |s: &str| format!("{set_prefix}blk{b}.{s}");
        let weight = |role: &str| weight_set_name(b, role);

        let attn_in = if cfg.netsdb_dataflow {
            cur.clone()
        } else {
            p.push(
                stage("ln_attn"),
                vec![cur.clone()],
                set("ln_attn"),
                StageOp::LayerNorm { eps },
            );
            set("ln_attn")
        };

        for (role, out) in [("wq", "q"), ("wk", "k"), ("wv", "v")] {
            p.push(
                stage(&format!("{out}_proj.matmul")),
                vec![attn_in.clone(), weight(role)],
                set(out),
                StageOp::MatMul,
            );
        }

        let mut head_outputs = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let hs = |s: &str| format!("h{h}.{s}");
            for src in ["q", "k", "v"] {
                p.push(
                    stage(&hs(&format!("{src}_slice"))),
                    vec![set(src)],
                    set(&hs(src)),
                    StageOp::SliceCols {
                        start: h * hd,
                        count: hd,
                    },
                );
            }
            p.push(
                stage(&hs("k_transpose")),
                vec![set(&hs("k"))],
                set(&hs("kt")),
                StageOp::Transpose,
            );
            p.push(
                stage(&hs("scores.matmul")),
                vec![set(&hs("q")), set(&hs("kt"))],
                set(&hs("scores")),
                StageOp::MatMul,
            );
            p.push(
                stage(&hs("scores.scale")),
                vec![set(&hs("scores"))],
                set(&hs("scaled")),
                StageOp::Map(MapFn::Scale(scale)),
            );
            p.push(
                stage(&hs("softmax.exp_scan")),
                vec![set(&hs("scaled"))],
                set(&hs("exp")),
                StageOp::ExpScan,
            );
            p.push(
                stage(&hs("softmax.aggregate_divide")),
                vec![set(&hs("exp"))],
                set(&hs("probs")),
                StageOp::AggregateDivide,
            );
            p.push(
                stage(&hs("context.matmul")),
                vec![set(&hs("probs")), set(&hs("v"))],
                set(&hs("ctx")),
                StageOp::MatMul,
            );
            head_outputs.push(set(&hs("ctx")));
        }

        p.push(
            stage("concat_heads"),
            head_outputs,
            set("heads"),
            StageOp::ConcatCols,
        );
        let attn_out = if cfg.use_output_projection {
            p.push(
                stage("out_proj.matmul"),
                vec![set("heads"), weight("wo")],
                set("attn_proj"),
                StageOp::MatMul,
            );
            set("attn_proj")
        } else {
            set("heads")
        };

        let (ffn_in, residual_base) = if cfg.netsdb_dataflow {
            p.push(
                stage("ln_post"),
                vec![attn_out],
                set("ln_post"),
                StageOp::LayerNorm { eps },
            );
            (set("ln_post"), set("ln_post"))
        } else {
            p.push(
                stage("attn_residual.join"),
                vec![cur.clone(), attn_out],
                set("attn_res"),
                StageOp::JoinAdd,
            );
            p.push(
                stage("ln_ffn"),
                vec![set("attn_res")],
                set("ln_ffn"),
                StageOp::LayerNorm { eps },
            );
            (set("ln_ffn"), set("attn_res"))
        };

        p.push(
            stage("ffn.w0.matmul"),
            vec![ffn_in, weight("w0")],
            set("ffn_h0"),
            StageOp::MatMul,
        );
        p.push(
            stage("ffn.b0.bias_add"),
            vec![set("ffn_h0"), weight("b0")],
            set("ffn_h0b"),
            StageOp::BroadcastRowAdd,
        );
        p.push(
            stage("ffn.relu1"),
            vec![set("ffn_h0b")],
            set("ffn_a0"),
            StageOp::Map(MapFn::Relu),
        );
        p.push(
            stage("ffn.w1.matmul"),
            vec![set("ffn_a0"), weight("w1")],
            set("ffn_h1"),
            StageOp::MatMul,
        );
        p.push(
            stage("ffn.b1.bias_add"),
            vec![set("ffn_h1"), weight("b1")],
            set("ffn_h1b"),
            StageOp::BroadcastRowAdd,
        );
        let ffn_out = if cfg.final_ffn_relu {
            p.push(
                stage("ffn.relu2"),
                vec![set("ffn_h1b")],
                set("ffn_out"),
                StageOp::Map(MapFn::Relu),
            );
            set("ffn_out")
        } else {
            set("ffn_h1b")
        };
        p.push(
            stage("ffn_residual.join"),
            vec![residual_base, ffn_out],
            set("out"),
            StageOp::JoinAdd,
        );
        cur = set("out");
    }
    p
}

fn check_batch_shape(x: &BatchedTensor, cfg: &ModelConfig) -> Result<()> {
    let got = (x.batch(), x.seq_len(), x.feature_dim(), x.block_dim());
    let want = (cfg.batch, cfg.seq_len, cfg.embed_dim, cfg.block_dim);
    if got != want {
        return Err(Error::Shape(format!(
            "input batch shape {:?} does not match configured (batch, seq_len, embed_dim, block_dim) {:?}",
            got, want
        )));
    }
    Ok(())
}

/// Run the full encoder over a batch, one pipeline per item.
///
/// With a store, every stage output is materialized; set names get an
/// `i{item}.` prefix so items never collide, while weight sets are shared.
/// Returns the output batch plus one trace entry per executed stage.
pub fn model_forward(
    x: &BatchedTensor,
    weights: &EncoderWeights,
    cfg: &ModelConfig,
    mut store: Option<&mut dyn SetStore>,
) -> Result<(BatchedTensor, Vec<StageTrace>)> {
    cfg.validate()?;
    check_batch_shape(x, cfg)?;
    if weights.blocks.len() != cfg.n_blocks {
        return Err(Error::Config(format!(
            "weights carry {} encoder blocks, config expects {}",
            weights.blocks.len(),
            cfg.n_blocks
        )));
    }
    if cfg.n_blocks == 0 {
        return Ok((x.clone(), Vec::new()));
    }

    let weight_sets = weights.named_sets(cfg.block_dim)?;
    let mut outputs = Vec::with_capacity(x.batch());
    let mut traces = Vec::new();
    for (i, item) in x.items().iter().enumerate() {
        let prefix = format!("i{i}.");
        let pipeline = build_forward_pipeline(cfg, &prefix);
        let mut inputs = vec![TensorSet::new(format!("{prefix}x"), item.clone())];
        inputs.extend(
            weight_sets
                .iter()
                .map(|(name, m)| TensorSet::new(name.clone(), m.clone())),
        );
        let mut mode = match store.as_deref_mut() {
            Some(s) => ExecMode::MaterializeEachStage(s),
            None => ExecMode::Memory,
        };
        let (out, item_traces) = run_pipeline(&pipeline, inputs, &mut mode)?;
        outputs.push(out.value);
        traces.extend(item_traces);
    }
    Ok((BatchedTensor::new(outputs)?, traces))
}

/// Deterministic random input batch with values in (-1, 1), shaped by `cfg`.
pub fn random_batch(cfg: &ModelConfig, seed: u64) -> Result<BatchedTensor> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let dense: Vec<f32> = (0..cfg.seq_len * cfg.embed_dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        items.push(BlockedMatrix::partition(
            &dense,
            cfg.seq_len,
            cfg.embed_dim,
            cfg.block_dim,
        )?);
    }
    BatchedTensor::new(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::weights::EncoderWeights;
    use crate::oracle;
    use crate::pipeline::MemoryStore;

    fn dense(m: &BlockedMatrix) -> oracle::DenseMatrix {
        oracle::DenseMatrix {
            rows: m.logical_rows(),
            cols: m.logical_cols(),
            data: m.reassemble().unwrap(),
        }
    }

    fn dense_params(cfg: &ModelConfig) -> oracle::DenseEncoderParams {
        oracle::DenseEncoderParams {
            heads: cfg.heads,
            eps: cfg.layernorm_eps,
            final_ffn_relu: cfg.final_ffn_relu,
            netsdb_dataflow: cfg.netsdb_dataflow,
        }
    }

    fn forward_both_ways(cfg: &ModelConfig, seed: u64) -> (BatchedTensor, Vec<StageTrace>) {
        let w = EncoderWeights::init_random(cfg).unwrap();
        let x = random_batch(cfg, seed).unwrap();
        model_forward(&x, &w, cfg, None).unwrap()
    }

    #[test]
    fn matches_reference_for_both_topologies() {
        for dataflow in [false, true] {
            let cfg = ModelConfig {
                netsdb_dataflow: dataflow,
                ..ModelConfig::default()
            };
            let w = EncoderWeights::init_random(&cfg).unwrap();
            let dw = w.to_dense().unwrap();
            let x = random_batch(&cfg, 7).unwrap();
            let (y, traces) = model_forward(&x, &w, &cfg, None).unwrap();
            assert_eq!(traces.len() % cfg.batch, 0);
            for (xi, yi) in x.items().iter().zip(y.items()) {
                let want =
                    oracle::encoder_forward(&dense(xi), &dw, &dense_params(&cfg)).unwrap();
                let m = oracle::compare(&dense(yi), &want).unwrap();
                assert!(m.max_abs <= 1e-4, "dataflow={dataflow} max_abs {}", m.max_abs);
            }
        }
    }

    #[test]
    fn pipeline_and_direct_block_agree_bitwise() {
        for dataflow in [false, true] {
            let cfg = ModelConfig {
                n_blocks: 1,
                netsdb_dataflow: dataflow,
                ..ModelConfig::default()
            };
            let w = EncoderWeights::init_random(&cfg).unwrap();
            let x = random_batch(&cfg, 11).unwrap();
            let (y, _) = model_forward(&x, &w, &cfg, None).unwrap();
            for (xi, yi) in x.items().iter().zip(y.items()) {
                let direct = encoder_block_forward(xi, &w.blocks[0], &cfg).unwrap();
                assert_eq!(direct.reassemble().unwrap(), yi.reassemble().unwrap());
            }
        }
    }

    #[test]
    fn zero_blocks_is_identity() {
        let cfg = ModelConfig {
            n_blocks: 0,
            ..ModelConfig::default()
        };
        let (y, traces) = forward_both_ways(&cfg, 3);
        let x = random_batch(&cfg, 3).unwrap();
        assert_eq!(x, y);
        assert!(traces.is_empty());
    }

    #[test]
    fn zero_weights_collapse_attention_and_ffn() {
        // With all-zero weights the canonical topology returns x: attention
        // and FFN emit zeros (softmax of zeros times zero V), so both
        // residuals pass x through unchanged.
        let cfg = ModelConfig {
            n_blocks: 1,
            final_ffn_relu: false,
            ..ModelConfig::default()
        };
        let e = cfg.embed_dim;
        let f = cfg.ffn_hidden;
        let zero = |r, c| BlockedMatrix::zeros(r, c, cfg.block_dim).unwrap();
        let w = EncoderWeights {
            blocks: vec![crate::model::weights::BlockWeights {
                wq: zero(e, e),
                wk: zero(e, e),
                wv: zero(e, e),
                wo: None,
                w0: zero(e, f),
                b0: vec![0.0; f],
                w1: zero(f, e),
                b1: vec![0.0; e],
            }],
        };
        let x = random_batch(&cfg, 5).unwrap();
        let (y, _) = model_forward(&x, &w, &cfg, None).unwrap();
        for (xi, yi) in x.items().iter().zip(y.items()) {
            assert_eq!(xi.reassemble().unwrap(), yi.reassemble().unwrap());
        }
    }

    #[test]
    fn trace_covers_every_stage_with_expected_names() {
        let cfg = ModelConfig::default();
        let (_, traces) = forward_both_ways(&cfg, 9);
        let per_item = build_forward_pipeline(&cfg, "").stages.len();
        assert_eq!(traces.len(), per_item * cfg.batch);
        let names: Vec<&str> = traces.iter().map(|t| t.stage_name.as_str()).collect();
        for expected in [
            "blk0.ln_attn",
            "blk0.q_proj.matmul",
            "blk0.h0.softmax.exp_scan",
            "blk0.h3.softmax.aggregate_divide",
            "blk0.concat_heads",
            "blk0.attn_residual.join",
            "blk1.ffn.w1.matmul",
            "blk1.ffn_residual.join",
        ] {
            assert!(names.contains(&expected), "missing stage {expected}");
        }
        assert!(traces.iter().all(|t| t.blocks_processed > 0));
    }

    #[test]
    fn materialized_run_matches_memory_run_bitwise() {
        let cfg = ModelConfig::default();
        let w = EncoderWeights::init_random(&cfg).unwrap();
        let x = random_batch(&cfg, 13).unwrap();
        let (mem, _) = model_forward(&x, &w, &cfg, None).unwrap();
        let mut store = MemoryStore::new();
        let (mat, traces) = model_forward(&x, &w, &cfg, Some(&mut store)).unwrap();
        assert_eq!(mem, mat);
        // Every stage output for every item landed in the store.
        for t in &traces {
            assert!(store.contains_set(&t.output_set), "missing {}", t.output_set);
        }
        assert!(store.contains_set("i0.blk0.h0.probs"));
        assert!(store.contains_set("i1.blk1.out"));
    }

    #[test]
    fn permutation_equivariance_over_sequence_rows() {
        // Attention has no positional information here, so permuting input
        // rows permutes output rows identically.
        let cfg = ModelConfig {
            batch: 1,
            ..ModelConfig::default()
        };
        let w = EncoderWeights::init_random(&cfg).unwrap();
        let x = random_batch(&cfg, 17).unwrap();
        let xi = &x.items()[0];
        let perm: Vec<usize> = vec![4, 0, 7, 2, 9, 1, 6, 3, 8, 5];
        let d = dense(xi);
        let mut permuted = vec![0.0f32; d.data.len()];
        for (dst, &src) in perm.iter().enumerate() {
            permuted[dst * d.cols..(dst + 1) * d.cols]
                .copy_from_slice(&d.data[src * d.cols..(src + 1) * d.cols]);
        }
        let xp = BatchedTensor::new(vec![BlockedMatrix::partition(
            &permuted,
            cfg.seq_len,
            cfg.embed_dim,
            cfg.block_dim,
        )
        .unwrap()])
        .unwrap();

        let (y, _) = model_forward(&x, &w, &cfg, None).unwrap();
        let (yp, _) = model_forward(&xp, &w, &cfg, None).unwrap();
        let yd = dense(&y.items()[0]);
        let ypd = dense(&yp.items()[0]);
        for (dst, &src) in perm.iter().enumerate() {
            for c in 0..yd.cols {
                let a = ypd.data[dst * yd.cols + c];
                let b = yd.data[src * yd.cols + c];
                assert!((a - b).abs() <= 1e-4, "row {src}->{dst} col {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn batch_shape_mismatch_is_rejected() {
        let cfg = ModelConfig::default();
        let w = EncoderWeights::init_random(&cfg).unwrap();
        let wrong = random_batch(
            &ModelConfig {
                seq_len: 12,
                ..cfg.clone()
            },
            1,
        )
        .unwrap();
        let err = model_forward(&wrong, &w, &cfg, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("does not match"), "{msg}");
    }
}
