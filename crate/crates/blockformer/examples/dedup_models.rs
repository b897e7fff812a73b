// Deduplicate weight blocks across model versions: exact sharing between
// identical models, then near-duplicate sharing for a perturbed copy.

use blockformer::model::{EncoderWeights, ModelConfig};
use blockformer::store::{
    deduplicate, pack_catalog, storage_report, DedupConfig, SetBlocks, DEFAULT_PAGE_CAPACITY,
};
use blockformer::tensor::BlockedMatrix;
use blockformer::Result;

fn model_sets(cfg: &ModelConfig, tag: &str, perturb: f32) -> Result<Vec<SetBlocks>> {
    let weights = EncoderWeights::init_random(cfg)?;
    let mut out = Vec::new();
    for (name, m) in weights.named_sets(cfg.block_dim)? {
        let m = if perturb == 0.0 {
            m
        } else {
            let data: Vec<f32> = m.reassemble()?.iter().map(|v| v * (1.0 + perturb)).collect();
            BlockedMatrix::partition(&data, m.logical_rows(), m.logical_cols(), m.block_dim())?
        };
        out.push(SetBlocks::from_matrix(format!("{tag}/{name}"), &m));
    }
    Ok(out)
}

fn main() -> Result<()> {
    let cfg = ModelConfig {
        embed_dim: 32,
        heads: 4,
        ffn_hidden: 64,
        n_blocks: 1,
        block_dim: 8,
        ..ModelConfig::default()
    };

    // Two identical copies: every stored block is referenced by both, so the
    // store holds exactly half the naive bytes.
    let mut sets = model_sets(&cfg, "m0", 0.0)?;
    sets.extend(model_sets(&cfg, "m1", 0.0)?);
    let mut catalog = deduplicate(&sets, &DedupConfig::default())?;
    let pages = pack_catalog(&mut catalog, DEFAULT_PAGE_CAPACITY)?;
    let r = storage_report(&catalog, &pages)?;
    println!("identical copies, threshold 0:");
    println!(
        "  {} instances -> {} stored, shared fraction {:.3}",
        r.block_instances, r.stored_blocks, r.shared_fraction
    );
    println!(
        "  naive {} B, stored {} B, packed {} B (catalog overhead {} B)",
        r.naive_bytes, r.stored_bytes, r.packed_bytes, r.catalog_bytes
    );

    // Reconstruction out of the deduplicated catalog is bit-exact.
    let w0 = catalog.reconstruct_set("m0/blk0.wq")?;
    let w1 = catalog.reconstruct_set("m1/blk0.wq")?;
    let same = w0
        .reassemble()?
        .iter()
        .zip(w1.reassemble()?)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!("  m0/blk0.wq reconstructs bit-identical to m1/blk0.wq: {same}");

    // A slightly scaled copy shares nothing at threshold 0 but nearly
    // everything once the mean-squared-distance threshold allows it.
    let mut sets = model_sets(&cfg, "m0", 0.0)?;
    sets.extend(model_sets(&cfg, "m1", 1e-4)?);
    for t in [0.0, 1e-6] {
        let mut catalog = deduplicate(&sets, &DedupConfig { threshold_t: t, ..DedupConfig::default() })?;
        let pages = pack_catalog(&mut catalog, DEFAULT_PAGE_CAPACITY)?;
        let r = storage_report(&catalog, &pages)?;
        println!("perturbed copy (x1.0001), threshold {t:e}:");
        println!(
            "  {} instances -> {} stored, shared fraction {:.3}, saved {} B",
            r.block_instances, r.stored_blocks, r.shared_fraction, r.dedup_savings_bytes
        );
    }
    Ok(())
}
