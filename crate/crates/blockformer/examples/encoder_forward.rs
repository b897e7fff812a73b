// Full encoder forward pass on the blocked engine, checked against the dense
// reference, for both residual topologies.

use blockformer::model::{
    dense_params, model_forward, random_batch, to_dense, EncoderWeights, ModelConfig,
};
use blockformer::oracle;
use blockformer::Result;

fn run(cfg: &ModelConfig, label: &str) -> Result<()> {
    let weights = EncoderWeights::init_random(cfg)?;
    let x = random_batch(cfg, 7)?;
    let (y, traces) = model_forward(&x, &weights, cfg, None)?;

    let dense_weights = weights.to_dense()?;
    let params = dense_params(cfg);
    let mut max_abs = 0.0f64;
    for (xi, yi) in x.items().iter().zip(y.items()) {
        let reference = oracle::encoder_forward(&to_dense(xi)?, &dense_weights, &params)?;
        max_abs = max_abs.max(oracle::compare(&to_dense(yi)?, &reference)?.max_abs);
    }
    println!(
        "{label}: {} stages over {} items, {} parameters, max |blocked - dense| = {max_abs:.3e}",
        traces.len() / cfg.batch,
        cfg.batch,
        weights.param_count()
    );
    Ok(())
}

fn main() -> Result<()> {
    // Canonical pre-norm residual wiring.
    let cfg = ModelConfig::default();
    println!(
        "config: batch {}, seq_len {}, embed_dim {}, {} heads, ffn {}, {} encoder blocks",
        cfg.batch, cfg.seq_len, cfg.embed_dim, cfg.heads, cfg.ffn_hidden, cfg.n_blocks
    );
    run(&cfg, "pre-norm")?;

    // Alternate dataflow: normalization after attention, the normalized
    // tensor feeding both the FFN and its residual.
    let alt = ModelConfig {
        netsdb_dataflow: true,
        ..ModelConfig::default()
    };
    run(&alt, "post-norm dataflow")?;

    // With the output projection enabled each block carries 8 weight sets.
    let proj = ModelConfig {
        use_output_projection: true,
        ..ModelConfig::default()
    };
    run(&proj, "with output projection")?;

    // Zero blocks degenerate to the identity.
    let id = ModelConfig {
        n_blocks: 0,
        ..ModelConfig::default()
    };
    let w = EncoderWeights::init_random(&id)?;
    let x = random_batch(&id, 7)?;
    let (y, _) = model_forward(&x, &w, &id, None)?;
    let same = y.items()[0]
        .reassemble()?
        .iter()
        .zip(x.items()[0].reassemble()?)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!("n_blocks = 0: output equals input = {same}");
    Ok(())
}
