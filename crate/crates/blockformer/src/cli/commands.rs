//! Implementations behind the CLI verbs. Each command returns `Result<()>`;
//! the binary maps errors to exit codes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::bench::{run_bench, ModelBytes};
use crate::cli::io::{
    read_config, read_weight_file, write_config, write_weight_file, WeightFormat, CONFIG_FILE,
    WEIGHT_EXT,
};
use crate::error::{Error, Result};
use crate::model::{
    dense_params, model_forward, random_batch, to_dense, EncoderWeights, ModelConfig,
};
use crate::oracle;
use crate::pipeline::{SetStore, StageTrace};
use crate::store::{
    deduplicate, pack_catalog, read_store, storage_report, write_store, Catalog, DedupConfig,
    FsSetStore, Page, SetBlocks, StorageReport, DEFAULT_PAGE_CAPACITY,
};
use crate::tensor::{BatchedTensor, BlockedMatrix};

/// Input seed for infer/verify/bench when no input file is given; the model's
/// own seed stays reserved for weights.
pub const DEFAULT_INPUT_SEED: u64 = 7;

/// Subdirectory holding materialized intermediate sets under `--materialize`.
pub const INTERMEDIATES_DIR: &str = "intermediates";

fn load_model(dir: &Path) -> Result<(ModelConfig, Catalog, Vec<Page>, EncoderWeights)> {
    let cfg = read_config(&dir.join(CONFIG_FILE))?;
    let (catalog, pages) = read_store(dir)?;
    let weights = EncoderWeights::from_named_sets(&cfg, |name| catalog.reconstruct_set(name))?;
    Ok((cfg, catalog, pages, weights))
}

fn remove_page_files(dir: &Path) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("page_") && name.ends_with(".pg") {
            fs::remove_file(entry.path())?;
        }
    }
    Ok(())
}

/// Sum wall time and block counts per logical stage, preserving first-seen
/// order across batch items.
fn aggregate_traces(traces: &[StageTrace]) -> Vec<(String, f64, usize)> {
    let mut out: Vec<(String, f64, usize)> = Vec::new();
    for t in traces {
        let ms = t.wall_time.as_secs_f64() * 1e3;
        match out.iter_mut().find(|(name, _, _)| name == &t.stage_name) {
            Some(row) => {
                row.1 += ms;
                row.2 += t.blocks_processed;
            }
            None => out.push((t.stage_name.clone(), ms, t.blocks_processed)),
        }
    }
    out
}

/// Build a model directory: `config.json`, one dense weight file per weight
/// set, and the deduplicated, packed page store.
pub fn cmd_init(
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    force: bool,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => read_config(p)?,
        None => ModelConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;

    if out.exists() {
        let non_empty = fs::read_dir(out)?.next().is_some();
        if non_empty {
            if !force {
                return Err(Error::InvalidArgument(format!(
                    "output directory {} is not empty (pass --force to replace it)",
                    out.display()
                )));
            }
            fs::remove_dir_all(out)?;
        }
    }
    fs::create_dir_all(out)?;
    write_config(&out.join(CONFIG_FILE), &cfg)?;

    let weights = EncoderWeights::init_random(&cfg)?;
    let named = weights.named_sets(cfg.block_dim)?;
    for (name, m) in &named {
        let data = m.reassemble()?;
        write_weight_file(
            &out.join(format!("{name}.{WEIGHT_EXT}")),
            m.logical_rows(),
            m.logical_cols(),
            &data,
            WeightFormat::Binary,
        )?;
    }

    let sets: Vec<SetBlocks> = named
        .iter()
        .map(|(name, m)| SetBlocks::from_matrix(name.clone(), m))
        .collect();
    let mut catalog = deduplicate(&sets, &DedupConfig::default())?;
    let pages = pack_catalog(&mut catalog, DEFAULT_PAGE_CAPACITY)?;
    write_store(out, &catalog, &pages)?;
    let report = storage_report(&catalog, &pages)?;

    println!("initialized model at {}", out.display());
    println!(
        "  weights: {} sets, {} files, {} parameters",
        named.len(),
        named.len(),
        weights.param_count()
    );
    println!(
        "  store: {} stored blocks in {} pages, {} bytes packed",
        report.stored_blocks, report.pages_used, report.packed_bytes
    );
    Ok(())
}

fn batch_from_stacked(cfg: &ModelConfig, rows: usize, cols: usize, data: &[f32]) -> Result<BatchedTensor> {
    let want_rows = cfg.batch * cfg.seq_len;
    if rows != want_rows || cols != cfg.embed_dim {
        return Err(Error::Shape(format!(
            "input matrix is {rows}x{cols}, model expects {want_rows}x{} \
             (batch {} x seq_len {} stacked rows, embed_dim {} cols)",
            cfg.embed_dim, cfg.batch, cfg.seq_len, cfg.embed_dim
        )));
    }
    let mut items = Vec::with_capacity(cfg.batch);
    for i in 0..cfg.batch {
        let slice = &data[i * cfg.seq_len * cols..(i + 1) * cfg.seq_len * cols];
        items.push(BlockedMatrix::partition(
            slice,
            cfg.seq_len,
            cfg.embed_dim,
            cfg.block_dim,
        )?);
    }
    BatchedTensor::new(items)
}

fn stack_output(y: &BatchedTensor) -> Result<(usize, usize, Vec<f32>)> {
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = 0;
    for item in y.items() {
        rows += item.logical_rows();
        cols = item.logical_cols();
        data.extend(item.reassemble()?);
    }
    Ok((rows, cols, data))
}

/// Forward pass over a model directory; prints the stage trace and optionally
/// writes the stacked output matrix in the input's format.
pub fn cmd_infer(
    model: &Path,
    input: Option<&Path>,
    out: Option<&Path>,
    materialize: bool,
) -> Result<()> {
    let (cfg, _, _, weights) = load_model(model)?;
    let (batch, format) = match input {
        Some(p) => {
            let wf = read_weight_file(p)?;
            (batch_from_stacked(&cfg, wf.rows, wf.cols, &wf.data)?, wf.format)
        }
        None => (random_batch(&cfg, DEFAULT_INPUT_SEED)?, WeightFormat::Text),
    };

    let mut fs_store;
    let store: Option<&mut dyn SetStore> = if materialize {
        fs_store = FsSetStore::create_fresh(model.join(INTERMEDIATES_DIR))?;
        Some(&mut fs_store)
    } else {
        None
    };
    let (y, traces) = model_forward(&batch, &weights, &cfg, store)?;

    let agg = aggregate_traces(&traces);
    println!("{:<32} {:>12} {:>8}", "stage", "time (ms)", "blocks");
    for (name, ms, blocks) in &agg {
        println!("{name:<32} {ms:>12.3} {blocks:>8}");
    }
    let total_ms: f64 = agg.iter().map(|(_, ms, _)| ms).sum();
    println!("{:<32} {total_ms:>12.3}", "total");

    let (rows, cols, data) = stack_output(&y)?;
    match out {
        Some(p) => {
            write_weight_file(p, rows, cols, &data, format)?;
            println!("wrote {rows}x{cols} output to {}", p.display());
        }
        None => println!("output is {rows}x{cols} (no --out given, not written)"),
    }
    if materialize {
        println!(
            "materialized {} stage sets under {}",
            traces.len(),
            model.join(INTERMEDIATES_DIR).display()
        );
    }
    Ok(())
}

/// Blocked engine vs dense reference on a seeded input. Exit 0 iff the
/// element-wise max-abs difference stays within `tolerance`.
pub fn cmd_verify(model: &Path, tolerance: f64) -> Result<()> {
    if !tolerance.is_finite() || tolerance < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be a finite non-negative number, got {tolerance}"
        )));
    }
    let (cfg, _, _, weights) = load_model(model)?;
    let x = random_batch(&cfg, DEFAULT_INPUT_SEED)?;
    let (y, _) = model_forward(&x, &weights, &cfg, None)?;

    let dense_weights = weights.to_dense()?;
    let params = dense_params(&cfg);
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut mean_abs_sum = 0.0f64;
    for (xi, yi) in x.items().iter().zip(y.items()) {
        let reference = oracle::encoder_forward(&to_dense(xi)?, &dense_weights, &params)?;
        let m = oracle::compare(&to_dense(yi)?, &reference)?;
        max_abs = max_abs.max(m.max_abs);
        max_rel = max_rel.max(m.max_rel);
        mean_abs_sum += m.mean_abs;
    }
    let mean_abs = mean_abs_sum / x.batch() as f64;

    println!("max_abs  {max_abs:e}");
    println!("max_rel  {max_rel:e}");
    println!("mean_abs {mean_abs:e}");
    if max_abs <= tolerance {
        println!("PASS (tolerance {tolerance:e})");
        Ok(())
    } else {
        println!("FAIL (tolerance {tolerance:e})");
        Err(Error::VerificationFailed { max_abs, tolerance })
    }
}

/// Time N forward passes per engine and emit the benchmark report.
pub fn cmd_bench(model: &Path, iters: usize, report: Option<&Path>) -> Result<()> {
    let (cfg, catalog, pages, weights) = load_model(model)?;
    let x = random_batch(&cfg, DEFAULT_INPUT_SEED)?;
    let sr = storage_report(&catalog, &pages)?;
    let bytes = ModelBytes {
        naive: sr.naive_bytes,
        deduped: sr.stored_bytes,
        packed: sr.packed_bytes,
    };
    let rep = run_bench(&cfg, &weights, &x, iters, cfg.seed, bytes)?;

    println!(
        "{:<14} {:>18} {:>20}",
        "engine", "avg time (ms)", "model size (bytes)"
    );
    for engine in &rep.engines {
        let size = if engine.engine == crate::bench::BLOCKED_ENGINE {
            rep.model_bytes.packed
        } else {
            rep.model_bytes.naive
        };
        println!(
            "{:<14} {:>18.3} {:>20}",
            engine.engine, engine.total.mean_ms, size
        );
    }
    if let Some(p) = report {
        let mut json = serde_json::to_vec_pretty(&rep)?;
        json.push(b'\n');
        fs::write(p, json)?;
        println!("report written to {}", p.display());
    }
    Ok(())
}

fn print_storage_report(sr: &StorageReport) {
    println!(
        "sets {}  block instances {}  stored blocks {}",
        sr.sets, sr.block_instances, sr.stored_blocks
    );
    println!(
        "shared {}  private {}  shared fraction {:.4}",
        sr.shared_blocks, sr.private_blocks, sr.shared_fraction
    );
    println!(
        "naive {} B  stored {} B  catalog {} B  packed {} B  saved {} B",
        sr.naive_bytes, sr.stored_bytes, sr.catalog_bytes, sr.packed_bytes, sr.dedup_savings_bytes
    );
    println!(
        "pages {}  capacity {} B  fill ratio {:.4}",
        sr.pages_used, sr.page_capacity_bytes, sr.fill_ratio
    );
}

/// Deduplicate the weight sets of several model directories against each
/// other; set names are qualified as `m{i}/{set}` per directory.
pub fn cmd_dedup(models: &[PathBuf], threshold: f64, report: Option<&Path>) -> Result<()> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("dedup needs at least one --models directory".into()));
    }
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "threshold must be a finite non-negative number, got {threshold}"
        )));
    }
    let mut sets = Vec::new();
    for (i, dir) in models.iter().enumerate() {
        let (catalog, _) = read_store(dir)?;
        for name in catalog.sets.keys() {
            let m = catalog.reconstruct_set(name)?;
            sets.push(SetBlocks::from_matrix(format!("m{i}/{name}"), &m));
        }
    }
    let dcfg = DedupConfig {
        threshold_t: threshold,
        ..DedupConfig::default()
    };
    let mut catalog = deduplicate(&sets, &dcfg)?;
    let pages = pack_catalog(&mut catalog, DEFAULT_PAGE_CAPACITY)?;
    let sr = storage_report(&catalog, &pages)?;

    println!("deduplicated {} model directories at threshold {threshold:e}", models.len());
    print_storage_report(&sr);
    if let Some(p) = report {
        let mut json = serde_json::to_vec_pretty(&sr)?;
        json.push(b'\n');
        fs::write(p, json)?;
        println!("report written to {}", p.display());
    }
    Ok(())
}

/// Repack a model directory's store with a new page capacity, in place.
pub fn cmd_pack(model: &Path, page_size: usize) -> Result<()> {
    let (mut catalog, _) = read_store(model)?;
    let pages = pack_catalog(&mut catalog, page_size)?;
    remove_page_files(model)?;
    write_store(model, &catalog, &pages)?;
    let sr = storage_report(&catalog, &pages)?;
    println!("repacked {} with page capacity {page_size} B", model.display());
    print_storage_report(&sr);
    Ok(())
}
