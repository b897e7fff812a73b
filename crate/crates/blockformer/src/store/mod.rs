//! Paged persistence for tensor-block sets: serialization, content
//! fingerprints, LSH-assisted deduplication, two-stage page packing, and the
//! catalog that maps every set back to its stored blocks.

mod block_codec;
mod catalog;
mod dedup;
mod lsh;
mod model_dir;
mod page;
mod report;

pub use block_codec::{
    deserialize_block, deserialize_block_prefix, fingerprint_block, serialize_block,
    serialized_len, BLOCK_MAGIC, BLOCK_VERSION,
};
pub use catalog::{BlockLocation, Catalog, SetMap, Sharing, StoredBlock};
pub use dedup::{
    brute_force_clusters, deduplicate, find_near_duplicates, mean_squared_distance, role_class,
    SetBlocks,
};
pub use lsh::{DedupConfig, LshIndex};
pub use model_dir::{
    encode_catalog, page_file_name, read_store, write_store, FsSetStore, CATALOG_FILE,
};
pub use page::{pack_catalog, pack_two_stage, Page, PageEntry, PackItem, DEFAULT_PAGE_CAPACITY};
pub use report::{storage_report, StorageReport};
