// Round-trip a model through the on-disk store: serialize blocks into pages,
// write catalog.json plus page files, read them back, and run inference off
// the reconstructed weights.

use blockformer::model::{model_forward, random_batch, EncoderWeights, ModelConfig};
use blockformer::store::{
    deduplicate, fingerprint_block, pack_catalog, read_store, serialize_block, write_store,
    DedupConfig, SetBlocks, DEFAULT_PAGE_CAPACITY,
};
use blockformer::Result;

fn main() -> Result<()> {
    let cfg = ModelConfig {
        embed_dim: 32,
        heads: 2,
        ffn_hidden: 48,
        n_blocks: 2,
        block_dim: 8,
        ..ModelConfig::default()
    };
    let weights = EncoderWeights::init_random(&cfg)?;

    // Every block serializes to a self-describing record: magic, version,
    // coordinates, dims, payload, CRC32.
    let named = weights.named_sets(cfg.block_dim)?;
    let first = named[0].1.blocks().next().unwrap();
    let record = serialize_block(first);
    println!(
        "block ({}, {}) of {}: {} payload floats -> {} record bytes, fingerprint {:016x}",
        first.block_row,
        first.block_col,
        named[0].0,
        first.data.len(),
        record.len(),
        fingerprint_block(first)
    );

    let sets: Vec<SetBlocks> = named
        .iter()
        .map(|(name, m)| SetBlocks::from_matrix(name.clone(), m))
        .collect();
    let mut catalog = deduplicate(&sets, &DedupConfig::default())?;
    let pages = pack_catalog(&mut catalog, DEFAULT_PAGE_CAPACITY)?;

    let dir = tempfile::tempdir().expect("tempdir");
    write_store(dir.path(), &catalog, &pages)?;
    let mut listing: Vec<String> = std::fs::read_dir(dir.path())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    listing.sort();
    println!("store directory: {listing:?}");

    let (catalog2, pages2) = read_store(dir.path())?;
    println!(
        "read back: {} sets, {} stored blocks, {} pages",
        catalog2.sets.len(),
        catalog2.stored.len(),
        pages2.len()
    );

    // Weights reconstructed from the store drive the same forward pass.
    let restored = EncoderWeights::from_named_sets(&cfg, |name| catalog2.reconstruct_set(name))?;
    let x = random_batch(&cfg, 7)?;
    let (y_orig, _) = model_forward(&x, &weights, &cfg, None)?;
    let (y_restored, _) = model_forward(&x, &restored, &cfg, None)?;
    let identical = y_orig
        .items()
        .iter()
        .zip(y_restored.items())
        .all(|(a, b)| {
            a.reassemble()
                .unwrap()
                .iter()
                .zip(b.reassemble().unwrap())
                .all(|(p, q)| p.to_bits() == q.to_bits())
        });
    println!("inference from restored store is bit-identical: {identical}");
    Ok(())
}
