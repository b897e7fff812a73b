//! The `blockformer` command-line driver: argument parsing and dispatch.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or config error,
//! 3 IO or corruption.

pub mod commands;
pub mod io;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Result;

pub use commands::{
    cmd_bench, cmd_dedup, cmd_infer, cmd_init, cmd_pack, cmd_verify, DEFAULT_INPUT_SEED,
    INTERMEDIATES_DIR,
};

#[derive(Debug, Parser)]
#[command(
    name = "blockformer",
    version,
    about = "Blocked transformer-encoder inference over a paged, deduplicated model store"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a model directory: config.json, weight files, packed page store
    Init {
        /// Config JSON to start from (defaults to the built-in config)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the config's weight seed
        #[arg(long)]
        seed: Option<u64>,
        /// Target directory
        #[arg(long)]
        out: PathBuf,
        /// Replace a non-empty target directory
        #[arg(long)]
        force: bool,
    },
    /// Run the blocked forward pass; prints the per-stage trace
    Infer {
        /// Model directory from `init`
        #[arg(long)]
        model: PathBuf,
        /// Input matrix (batch*seq_len stacked rows x embed_dim); seeded
        /// random input when omitted
        #[arg(long)]
        input: Option<PathBuf>,
        /// Where to write the output matrix (same format as the input)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write every stage output into <model>/intermediates
        #[arg(long)]
        materialize: bool,
    },
    /// Compare the blocked engine against the dense reference
    Verify {
        #[arg(long)]
        model: PathBuf,
        /// Max allowed element-wise absolute difference
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
    /// Time blocked vs dense forward passes; optionally write a JSON report
    Bench {
        #[arg(long)]
        model: PathBuf,
        /// Timed iterations per engine (after one warmup)
        #[arg(long, default_value_t = 5)]
        iters: usize,
        /// Report JSON path
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Deduplicate weight blocks across model directories
    Dedup {
        /// One or more model directories
        #[arg(long, num_args = 1.., required = true)]
        models: Vec<PathBuf>,
        /// Near-duplicate threshold (mean squared distance); 0 is exact-only
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        /// Storage report JSON path
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Repack a model's page store with a new page capacity
    Pack {
        #[arg(long)]
        model: PathBuf,
        /// Page capacity in bytes
        #[arg(long, default_value_t = crate::store::DEFAULT_PAGE_CAPACITY)]
        page_size: usize,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Init {
            config,
            seed,
            out,
            force,
        } => cmd_init(config.as_deref(), seed, &out, force),
        Command::Infer {
            model,
            input,
            out,
            materialize,
        } => cmd_infer(&model, input.as_deref(), out.as_deref(), materialize),
        Command::Verify { model, tolerance } => cmd_verify(&model, tolerance),
        Command::Bench {
            model,
            iters,
            report,
        } => cmd_bench(&model, iters, report.as_deref()),
        Command::Dedup {
            models,
            threshold,
            report,
        } => cmd_dedup(&models, threshold, report.as_deref()),
        Command::Pack { model, page_size } => cmd_pack(&model, page_size),
    }
}
