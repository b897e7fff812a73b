//! The catalog: which stored block backs each (set, block-key) reference,
//! what is shared versus private, and where each stored block lives once the
//! pages are packed.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::store::block_codec::serialized_len;
use crate::tensor::{block_span, BlockedMatrix, TensorBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sharing {
    /// Referenced by at least two sets.
    Shared,
    Private,
}

/// One physically stored block: the representative content of its cluster.
#[derive(Debug, Clone)]
pub struct StoredBlock {
    /// Representative content; grid coordinates are the representative
    /// instance's block key.
    pub content: TensorBlock,
    /// Set name of the representative instance.
    pub rep_set: String,
    /// Packing equivalence class (weight-role suffix of the representative).
    pub class: String,
    pub fingerprint: u64,
    /// Distinct sets referencing this block.
    pub ref_sets: usize,
    /// Total (set, key) references.
    pub ref_count: usize,
    pub sharing: Sharing,
}

/// Where a stored block landed after packing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLocation {
    pub page_id: u64,
    pub byte_offset: usize,
    pub byte_len: usize,
}

/// One set's mapping: row-major stored-block id per grid slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetMap {
    pub logical_rows: usize,
    pub logical_cols: usize,
    pub stored_ids: Vec<usize>,
}

/// Dedup outcome plus (after packing) physical locations. Every block of
/// every set resolves to exactly one stored block; reading a set reconstructs
/// it bit-exactly at threshold 0 and within the distance bound otherwise.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub block_dim: usize,
    pub threshold_t: f64,
    pub stored: Vec<StoredBlock>,
    pub sets: BTreeMap<String, SetMap>,
    /// Parallel to `stored`; `None` until the pages are packed.
    pub locations: Vec<Option<BlockLocation>>,
}

impl Catalog {
    /// Grid shape of one set under this catalog's block_dim.
    pub fn set_grid(&self, sm: &SetMap) -> (usize, usize) {
        (
            sm.logical_rows.div_ceil(self.block_dim),
            sm.logical_cols.div_ceil(self.block_dim),
        )
    }

    /// Structural checks independent of packing: ids in range, grids complete,
    /// every referenced content's dims match its slot span.
    pub fn validate_consistency(&self) -> Result<()> {
        if self.locations.len() != self.stored.len() {
            return Err(Error::Corruption(
                "catalog locations out of step with stored blocks".into(),
            ));
        }
        for (name, sm) in &self.sets {
            let (gr, gc) = self.set_grid(sm);
            if sm.stored_ids.len() != gr * gc {
                return Err(Error::Corruption(format!(
                    "set {name} maps {} slots, grid needs {}",
                    sm.stored_ids.len(),
                    gr * gc
                )));
            }
            for (slot, &id) in sm.stored_ids.iter().enumerate() {
                let Some(stored) = self.stored.get(id) else {
                    return Err(Error::Corruption(format!(
                        "set {name} slot {slot} references stored block {id}, only {} exist",
                        self.stored.len()
                    )));
                };
                let (bi, bj) = (slot / gc, slot % gc);
                let span = (
                    block_span(sm.logical_rows, self.block_dim, bi),
                    block_span(sm.logical_cols, self.block_dim, bj),
                );
                if (stored.content.rows, stored.content.cols) != span {
                    return Err(Error::Corruption(format!(
                        "set {name} slot ({bi}, {bj}) needs a {}x{} block, stored {id} is {}x{}",
                        span.0, span.1, stored.content.rows, stored.content.cols
                    )));
                }
            }
        }
        Ok(())
    }

    /// Rebuild one set from stored contents, restoring slot coordinates.
    pub fn reconstruct_set(&self, name: &str) -> Result<BlockedMatrix> {
        let sm = self
            .sets
            .get(name)
            .ok_or_else(|| Error::Corruption(format!("set '{name}' not in catalog")))?;
        let (_, gc) = self.set_grid(sm);
        let mut blocks = Vec::with_capacity(sm.stored_ids.len());
        for (slot, &id) in sm.stored_ids.iter().enumerate() {
            let stored = self.stored.get(id).ok_or_else(|| {
                Error::Corruption(format!("set '{name}' references missing stored block {id}"))
            })?;
            let mut b = stored.content.clone();
            b.block_row = slot / gc;
            b.block_col = slot % gc;
            blocks.push(b);
        }
        BlockedMatrix::from_block_list(sm.logical_rows, sm.logical_cols, self.block_dim, blocks)
    }

    /// Physical location per slot of one set: (block key, page, offset).
    /// Dangling (unpacked) blocks are corruption.
    pub fn set_locations(&self, name: &str) -> Result<Vec<((usize, usize), BlockLocation)>> {
        let sm = self
            .sets
            .get(name)
            .ok_or_else(|| Error::Corruption(format!("set '{name}' not in catalog")))?;
        let (_, gc) = self.set_grid(sm);
        sm.stored_ids
            .iter()
            .enumerate()
            .map(|(slot, &id)| {
                let loc = self
                    .locations
                    .get(id)
                    .and_then(|l| l.clone())
                    .ok_or_else(|| {
                        Error::Corruption(format!(
                            "set '{name}' slot {slot} references unplaced stored block {id}"
                        ))
                    })?;
                Ok(((slot / gc, slot % gc), loc))
            })
            .collect()
    }

    pub fn shared_count(&self) -> usize {
        self.stored
            .iter()
            .filter(|s| s.sharing == Sharing::Shared)
            .count()
    }

    pub fn private_count(&self) -> usize {
        self.stored.len() - self.shared_count()
    }

    /// Shared stored blocks over all stored blocks; 0 for an empty catalog.
    pub fn shared_fraction(&self) -> f64 {
        if self.stored.is_empty() {
            0.0
        } else {
            self.shared_count() as f64 / self.stored.len() as f64
        }
    }

    pub fn instance_count(&self) -> usize {
        self.sets.values().map(|s| s.stored_ids.len()).sum()
    }

    /// Serialized bytes if every reference stored its own copy. Substituted
    /// contents share dims with the originals, so this equals the ingest size.
    pub fn naive_bytes(&self) -> usize {
        self.sets
            .values()
            .flat_map(|sm| sm.stored_ids.iter())
            .map(|&id| serialized_len(&self.stored[id].content))
            .sum()
    }

    /// Serialized bytes of the deduplicated store (page payload total).
    pub fn stored_bytes(&self) -> usize {
        self.stored
            .iter()
            .map(|s| serialized_len(&s.content))
            .sum()
    }
}
