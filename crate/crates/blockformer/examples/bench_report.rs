// Time the blocked engine against the dense reference and build the full
// benchmark report: totals, per-stage samples, and model byte counts.

use blockformer::bench::{run_bench, ModelBytes};
use blockformer::model::{random_batch, EncoderWeights, ModelConfig};
use blockformer::store::{
    deduplicate, pack_catalog, storage_report, DedupConfig, SetBlocks, DEFAULT_PAGE_CAPACITY,
};
use blockformer::Result;

fn main() -> Result<()> {
    let cfg = ModelConfig::default();
    let weights = EncoderWeights::init_random(&cfg)?;
    let x = random_batch(&cfg, 7)?;

    // Byte counts come from actually packing the weights.
    let sets: Vec<SetBlocks> = weights
        .named_sets(cfg.block_dim)?
        .iter()
        .map(|(name, m)| SetBlocks::from_matrix(name.clone(), m))
        .collect();
    let mut catalog = deduplicate(&sets, &DedupConfig::default())?;
    let pages = pack_catalog(&mut catalog, DEFAULT_PAGE_CAPACITY)?;
    let sr = storage_report(&catalog, &pages)?;
    let bytes = ModelBytes {
        naive: sr.naive_bytes,
        deduped: sr.stored_bytes,
        packed: sr.packed_bytes,
    };

    let iters = 5;
    let report = run_bench(&cfg, &weights, &x, iters, cfg.seed, bytes)?;

    println!("{} iterations per engine, one warmup each\n", report.iterations);
    println!("{:<14} {:>12} {:>12} {:>12}", "engine", "mean (ms)", "min (ms)", "max (ms)");
    for e in &report.engines {
        println!(
            "{:<14} {:>12.3} {:>12.3} {:>12.3}",
            e.engine, e.total.mean_ms, e.total.min_ms, e.total.max_ms
        );
    }

    let blocked = &report.engines[0];
    let mut by_cost: Vec<_> = blocked.stages.iter().collect();
    by_cost.sort_by(|a, b| b.timing.mean_ms.total_cmp(&a.timing.mean_ms));
    println!("\nslowest stages (mean over {} samples each):", iters);
    for s in by_cost.iter().take(6) {
        println!("  {:<28} {:>9.3} ms", s.stage, s.timing.mean_ms);
    }
    let stage_sum: f64 = blocked.stages.iter().map(|s| s.timing.mean_ms).sum();
    println!(
        "\nstage mean sum {:.3} ms vs blocked total mean {:.3} ms",
        stage_sum, blocked.total.mean_ms
    );
    println!(
        "model bytes: naive {}, deduped {}, packed {}",
        report.model_bytes.naive, report.model_bytes.deduped, report.model_bytes.packed
    );

    // The report serializes with every raw sample, so any statistic can be
    // recomputed downstream.
    let json = serde_json::to_string_pretty(&report).expect("serialize");
    println!("\nreport JSON is {} bytes; first lines:", json.len());
    for line in json.lines().take(8) {
        println!("  {line}");
    }
    Ok(())
}
