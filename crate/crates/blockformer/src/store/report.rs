//! Storage accounting over a packed catalog.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::catalog::Catalog;
use crate::store::model_dir::encode_catalog;
use crate::store::page::Page;

/// Byte and block accounting for one packed store. `naive_bytes` counts every
/// reference as its own copy; `stored_bytes` counts deduplicated page payload;
/// `packed_bytes` adds the catalog index on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub sets: usize,
    pub block_instances: usize,
    pub stored_blocks: usize,
    pub shared_blocks: usize,
    pub private_blocks: usize,
    pub shared_fraction: f64,
    pub naive_bytes: u64,
    pub stored_bytes: u64,
    pub catalog_bytes: u64,
    pub packed_bytes: u64,
    pub dedup_savings_bytes: u64,
    pub pages_used: usize,
    pub page_capacity_bytes: u64,
    pub fill_ratio: f64,
    pub threshold_t: f64,
}

/// Build the accounting record; any dangling reference is corruption.
pub fn storage_report(catalog: &Catalog, pages: &[Page]) -> Result<StorageReport> {
    catalog.validate_consistency()?;
    for name in catalog.sets.keys() {
        catalog.set_locations(name)?;
    }
    for page in pages {
        if page.used() > page.capacity_bytes {
            return Err(Error::Corruption(format!(
                "page {} exceeds its capacity",
                page.page_id
            )));
        }
    }

    let naive_bytes = catalog.naive_bytes() as u64;
    let stored_bytes = catalog.stored_bytes() as u64;
    let catalog_bytes = encode_catalog(catalog, pages)?.len() as u64;
    let used: u64 = pages.iter().map(|p| p.used() as u64).sum();
    let capacity = pages
        .first()
        .map(|p| p.capacity_bytes as u64)
        .unwrap_or(crate::store::page::DEFAULT_PAGE_CAPACITY as u64);
    let fill_ratio = if pages.is_empty() {
        1.0
    } else {
        used as f64 / (pages.len() as u64 * capacity) as f64
    };
    Ok(StorageReport {
        sets: catalog.sets.len(),
        block_instances: catalog.instance_count(),
        stored_blocks: catalog.stored.len(),
        shared_blocks: catalog.shared_count(),
        private_blocks: catalog.private_count(),
        shared_fraction: catalog.shared_fraction(),
        naive_bytes,
        stored_bytes,
        catalog_bytes,
        packed_bytes: stored_bytes + catalog_bytes,
        dedup_savings_bytes: naive_bytes - stored_bytes,
        pages_used: pages.len(),
        page_capacity_bytes: capacity,
        fill_ratio,
        threshold_t: catalog.threshold_t,
    })
}
