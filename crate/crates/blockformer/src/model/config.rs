//! Model hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder hyperparameters plus engine knobs. Defaults follow the benchmarked
/// shape: batch 2, sequence 10, embedding 64, 4 heads, two encoder blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub batch: usize,
    pub seq_len: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub n_blocks: usize,
    /// Stored for completeness; inference applies no dropout.
    pub dropout_p: f32,
    pub layernorm_eps: f32,
    /// When true the unified heads go through an extra Wo projection,
    /// giving eight weight sets per block instead of seven.
    pub use_output_projection: bool,
    /// Apply a final ReLU after the second FFN layer.
    pub final_ffn_relu: bool,
    /// Alternate block topology: attention, post-norm, FFN, and a single
    /// residual joining the FFN output with the post-attention norm output.
    pub netsdb_dataflow: bool,
    pub block_dim: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            batch: 2,
            seq_len: 10,
            embed_dim: 64,
            heads: 4,
            ffn_hidden: 256,
            n_blocks: 2,
            dropout_p: 0.1,
            layernorm_eps: 1e-5,
            use_output_projection: false,
            final_ffn_relu: true,
            netsdb_dataflow: false,
            block_dim: 8,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch", self.batch),
            ("seq_len", self.seq_len),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden),
            ("block_dim", self.block_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed_dim divisible by heads required, got embed_dim {} and heads {}",
                self.embed_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.layernorm_eps <= 0.0 || !self.layernorm_eps.is_finite() {
            return Err(Error::Config(format!(
                "layernorm_eps must be a positive finite float, got {}",
                self.layernorm_eps
            )));
        }
        Ok(())
    }

    /// Number of weight sets per encoder block: seven, or eight with the
    /// output projection.
    pub fn weight_sets_per_block(&self) -> usize {
        if self.use_output_projection {
            8
        } else {
            7
        }
    }

    pub fn params_per_block(&self) -> usize {
        let e = self.embed_dim;
        let f = self.ffn_hidden;
        let proj = if self.use_output_projection { e * e } else { 0 };
        3 * e * e + proj + e * f + f + f * e + e
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_matches_benchmarked_model() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.head_dim(), 16);
        assert_eq!(cfg.weight_sets_per_block(), 7);
        assert_eq!(cfg.params_per_block(), 45_376);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            embed_dim: 63,
            ..ModelConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("embed_dim divisible by heads"));
    }

    #[test]
    fn rejects_bad_dropout_and_eps() {
        let cfg = ModelConfig {
            dropout_p: 1.0,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            layernorm_eps: 0.0,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_encoder_blocks_is_a_valid_config() {
        let cfg = ModelConfig {
            n_blocks: 0,
            ..ModelConfig::default()
        };
        cfg.validate().unwrap();
    }
}
