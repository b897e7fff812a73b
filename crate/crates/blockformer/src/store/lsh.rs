//! Sign-of-projection locality-sensitive hashing for tensor blocks.
//!
//! Blocks are flattened row-major and zero-extended to block_dim^2 so ragged
//! edge tiles share the hyperplane family with full tiles. Bits are grouped
//! into bands; two blocks are candidates when any band matches exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::TensorBlock;

/// Near-duplicate detection parameters. `threshold_t` bounds the mean-squared
/// element distance accepted for substitution; 0 means exact (byte-equal) only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupConfig {
    pub threshold_t: f64,
    pub hyperplanes: usize,
    pub bands: usize,
    pub seed: u64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            threshold_t: 0.0,
            hyperplanes: 64,
            bands: 8,
            seed: 0,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hyperplanes == 0 || self.bands == 0 {
            return Err(Error::Config(
                "hyperplanes and bands must be at least 1".into(),
            ));
        }
        if !self.hyperplanes.is_multiple_of(self.bands) {
            return Err(Error::Config(format!(
                "hyperplanes ({}) must be divisible by bands ({})",
                self.hyperplanes, self.bands
            )));
        }
        if self.rows_per_band() > 64 {
            return Err(Error::Config(format!(
                "band width {} exceeds 64 bits",
                self.rows_per_band()
            )));
        }
        if self.threshold_t < 0.0 || !self.threshold_t.is_finite() {
            return Err(Error::Config(format!(
                "threshold_t must be a non-negative finite float, got {}",
                self.threshold_t
            )));
        }
        Ok(())
    }

    pub fn rows_per_band(&self) -> usize {
        self.hyperplanes / self.bands
    }
}

/// A seeded family of unit hyperplanes over block_dim^2 dimensions.
#[derive(Debug, Clone)]
pub struct LshIndex {
    dim: usize,
    bands: usize,
    rows_per_band: usize,
    planes: Vec<Vec<f32>>,
}

impl LshIndex {
    /// Draw `cfg.hyperplanes` isotropic unit vectors from `cfg.seed`.
    pub fn new(cfg: &DedupConfig, block_dim: usize) -> Result<LshIndex> {
        cfg.validate()?;
        if block_dim == 0 {
            return Err(Error::InvalidArgument("block_dim must be at least 1".into()));
        }
        let dim = block_dim * block_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let planes = (0..cfg.hyperplanes)
            .map(|_| {
                let mut v: Vec<f32> = (0..dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                // A zero draw over >= 1 dims has probability 0; guard anyway.
                let norm = if norm == 0.0 { 1.0 } else { norm };
                for x in &mut v {
                    *x = (*x as f64 / norm) as f32;
                }
                v
            })
            .collect();
        Ok(LshIndex {
            dim,
            bands: cfg.bands,
            rows_per_band: cfg.rows_per_band(),
            planes,
        })
    }

    /// One bit per hyperplane: true iff the projection of the zero-extended
    /// block is >= 0.
    pub fn signature(&self, b: &TensorBlock) -> Result<Vec<bool>> {
        if b.data.len() > self.dim {
            return Err(Error::InvalidArgument(format!(
                "block has {} elements, hyperplanes cover {}",
                b.data.len(),
                self.dim
            )));
        }
        Ok(self
            .planes
            .iter()
            .map(|plane| {
                let dot: f64 = b
                    .data
                    .iter()
                    .zip(plane)
                    .map(|(x, w)| *x as f64 * *w as f64)
                    .sum();
                dot >= 0.0
            })
            .collect())
    }

    /// Pack each band of the signature into a u64 key; equal keys in any band
    /// make two blocks candidates.
    pub fn band_keys(&self, signature: &[bool]) -> Result<Vec<u64>> {
        if signature.len() != self.planes.len() {
            return Err(Error::InvalidArgument(format!(
                "signature has {} bits, expected {}",
                signature.len(),
                self.planes.len()
            )));
        }
        Ok((0..self.bands)
            .map(|band| {
                signature[band * self.rows_per_band..(band + 1) * self.rows_per_band]
                    .iter()
                    .fold(0u64, |acc, &bit| (acc << 1) | bit as u64)
            })
            .collect())
    }

    pub fn bands(&self) -> usize {
        self.bands
    }
}
