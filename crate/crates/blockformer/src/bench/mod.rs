//! Wall-clock benchmark harness comparing the blocked engine against the
//! dense reference, with per-stage timing for the blocked pipeline.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dense_params, model_forward, to_dense, EncoderWeights, ModelConfig};
use crate::oracle;
use crate::tensor::BatchedTensor;

/// Aggregates plus every raw sample, so statistics stay recomputable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStat {
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub samples_ms: Vec<f64>,
}

impl TimingStat {
    pub fn from_samples(samples_ms: Vec<f64>) -> Self {
        let n = samples_ms.len().max(1) as f64;
        let mean_ms = samples_ms.iter().sum::<f64>() / n;
        let min_ms = samples_ms.iter().copied().fold(f64::INFINITY, f64::min);
        let max_ms = samples_ms.iter().copied().fold(0.0, f64::max);
        TimingStat {
            mean_ms,
            min_ms: if min_ms.is_finite() { min_ms } else { 0.0 },
            max_ms,
            samples_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    #[serde(flatten)]
    pub timing: TimingStat,
}

/// One engine's measurements. The dense reference reports totals only; the
/// blocked engine also carries one entry per pipeline stage, each sample
/// being that stage's per-iteration time summed over batch items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineReport {
    pub engine: String,
    pub total: TimingStat,
    pub stages: Vec<StageTiming>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelBytes {
    pub naive: u64,
    pub deduped: u64,
    pub packed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: ModelConfig,
    pub engines: Vec<EngineReport>,
    pub model_bytes: ModelBytes,
    pub iterations: usize,
    pub seed: u64,
    pub timestamp: String,
}

pub const BLOCKED_ENGINE: &str = "blocked";
pub const ORACLE_ENGINE: &str = "dense-oracle";

/// Warm both engines once, then time `iterations` full forward passes of
/// each. Stage samples come from the blocked pipeline's traces.
pub fn run_bench(
    cfg: &ModelConfig,
    weights: &EncoderWeights,
    input: &BatchedTensor,
    iterations: usize,
    seed: u64,
    model_bytes: ModelBytes,
) -> Result<BenchReport> {
    if iterations == 0 {
        return Err(Error::InvalidArgument(
            "bench needs at least one iteration".into(),
        ));
    }
    let dense_weights = weights.to_dense()?;
    let params = dense_params(cfg);
    let dense_inputs: Vec<oracle::DenseMatrix> = input
        .items()
        .iter()
        .map(to_dense)
        .collect::<Result<_>>()?;

    // Warmup, untimed.
    model_forward(input, weights, cfg, None)?;
    for d in &dense_inputs {
        oracle::encoder_forward(d, &dense_weights, &params)?;
    }

    let mut blocked_totals = Vec::with_capacity(iterations);
    let mut stage_order: Vec<String> = Vec::new();
    let mut stage_samples: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for _ in 0..iterations {
        let start = Instant::now();
        let (_, traces) = model_forward(input, weights, cfg, None)?;
        blocked_totals.push(start.elapsed().as_secs_f64() * 1e3);
        let mut per_stage: std::collections::BTreeMap<&str, f64> = Default::default();
        for t in &traces {
            *per_stage.entry(t.stage_name.as_str()).or_default() +=
                t.wall_time.as_secs_f64() * 1e3;
            if !stage_order.iter().any(|s| s == &t.stage_name) {
                stage_order.push(t.stage_name.clone());
            }
        }
        for (stage, ms) in per_stage {
            stage_samples.entry(stage.to_string()).or_default().push(ms);
        }
    }

    let mut oracle_totals = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let start = Instant::now();
        for d in &dense_inputs {
            oracle::encoder_forward(d, &dense_weights, &params)?;
        }
        oracle_totals.push(start.elapsed().as_secs_f64() * 1e3);
    }

    let stages = stage_order
        .into_iter()
        .map(|stage| StageTiming {
            timing: TimingStat::from_samples(stage_samples.remove(&stage).unwrap_or_default()),
            stage,
        })
        .collect();

    Ok(BenchReport {
        config: cfg.clone(),
        engines: vec![
            EngineReport {
                engine: BLOCKED_ENGINE.to_string(),
                total: TimingStat::from_samples(blocked_totals),
                stages,
            },
            EngineReport {
                engine: ORACLE_ENGINE.to_string(),
                total: TimingStat::from_samples(oracle_totals),
                stages: Vec::new(),
            },
        ],
        model_bytes,
        iterations,
        seed,
        timestamp: chrono::Utc::now().to_rfc3339(),
    })
}
