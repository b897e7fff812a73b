//! On-disk layout of a packed model store and the filesystem-backed set store
//! used for materialized pipeline intermediates.
//!
//! A store directory holds `catalog.json` plus binary page files
//! `page_<id>.pg`. Page files are concatenations of self-describing block
//! records, so the index only needs per-set id arrays: stored-block ids are
//! implicit in page-scan order (pages ascending, records front to back).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::SetStore;
use crate::store::block_codec::{deserialize_block_prefix, fingerprint_block, serialize_block};
use crate::store::catalog::{BlockLocation, Catalog, SetMap, Sharing, StoredBlock};
use crate::store::dedup::role_class;
use crate::store::page::{Page, PageEntry, DEFAULT_PAGE_CAPACITY};
use crate::tensor::{BlockedMatrix, TensorBlock};

pub const CATALOG_FILE: &str = "catalog.json";

pub fn page_file_name(page_id: u64) -> String {
    format!("page_{page_id}.pg")
}

#[derive(Serialize, Deserialize)]
struct CatalogFile {
    version: u32,
    block_dim: usize,
    threshold_t: f64,
    page_capacity_bytes: usize,
    pages: u64,
    sets: BTreeMap<String, SetFile>,
}

#[derive(Serialize, Deserialize)]
struct SetFile {
    rows: usize,
    cols: usize,
    ids: Vec<usize>,
}

/// Stored-id permutation: catalog id -> page-scan position.
fn scan_order(catalog: &Catalog, pages: &[Page]) -> Result<Vec<usize>> {
    let mut order = vec![usize::MAX; catalog.stored.len()];
    let mut pos = 0usize;
    for page in pages {
        for e in &page.entries {
            let slot = order.get_mut(e.stored_id).ok_or_else(|| {
                Error::Corruption(format!("page entry references stored block {}", e.stored_id))
            })?;
            if *slot != usize::MAX {
                return Err(Error::Corruption(format!(
                    "stored block {} placed twice",
                    e.stored_id
                )));
            }
            *slot = pos;
            pos += 1;
        }
    }
    if order.contains(&usize::MAX) {
        return Err(Error::Corruption(
            "catalog has stored blocks missing from the pages".into(),
        ));
    }
    Ok(order)
}

/// The catalog index as written to disk (ids remapped to page-scan order).
pub fn encode_catalog(catalog: &Catalog, pages: &[Page]) -> Result<Vec<u8>> {
    let order = scan_order(catalog, pages)?;
    let sets = catalog
        .sets
        .iter()
        .map(|(name, sm)| {
            (
                name.clone(),
                SetFile {
                    rows: sm.logical_rows,
                    cols: sm.logical_cols,
                    ids: sm.stored_ids.iter().map(|&id| order[id]).collect(),
                },
            )
        })
        .collect();
    let file = CatalogFile {
        version: 1,
        block_dim: catalog.block_dim,
        threshold_t: catalog.threshold_t,
        page_capacity_bytes: pages
            .first()
            .map(|p| p.capacity_bytes)
            .unwrap_or(DEFAULT_PAGE_CAPACITY),
        pages: pages.len() as u64,
        sets,
    };
    Ok(serde_json::to_vec(&file)?)
}

/// Write `catalog.json` and every page file into `dir` (created if missing).
pub fn write_store(dir: &Path, catalog: &Catalog, pages: &[Page]) -> Result<()> {
    catalog.validate_consistency()?;
    let index = encode_catalog(catalog, pages)?;
    fs::create_dir_all(dir)?;
    for page in pages {
        fs::write(dir.join(page_file_name(page.page_id)), &page.payload)?;
    }
    fs::write(dir.join(CATALOG_FILE), index)?;
    Ok(())
}

/// Page scan intermediate: id, raw payload, (offset, len) spans in scan order.
type RawPage = (u64, Vec<u8>, Vec<(usize, usize)>);

/// Load a store directory back into a catalog and its pages.
///
/// Sharing, classes, reference counts, and fingerprints are recomputed from
/// the set maps; representative identity is the smallest (set_name, block_key)
/// reference, which matches what dedup chose at write time.
pub fn read_store(dir: &Path) -> Result<(Catalog, Vec<Page>)> {
    let index_path = dir.join(CATALOG_FILE);
    let file: CatalogFile = serde_json::from_slice(&fs::read(&index_path)?)?;
    if file.version != 1 {
        return Err(Error::Corruption(format!(
            "unsupported catalog version {}",
            file.version
        )));
    }
    if file.block_dim == 0 {
        return Err(Error::Corruption("catalog block_dim is zero".into()));
    }

    // Scan every page front to back; record contents and locations in order.
    let mut contents: Vec<TensorBlock> = Vec::new();
    let mut locations: Vec<BlockLocation> = Vec::new();
    let mut raw_pages: Vec<RawPage> = Vec::new();
    for page_id in 0..file.pages {
        let bytes = fs::read(dir.join(page_file_name(page_id)))?;
        if bytes.len() > file.page_capacity_bytes {
            return Err(Error::Corruption(format!(
                "page {page_id} holds {} bytes, capacity is {}",
                bytes.len(),
                file.page_capacity_bytes
            )));
        }
        let mut offset = 0usize;
        let mut spans = Vec::new();
        while offset < bytes.len() {
            let (block, used) = deserialize_block_prefix(&bytes[offset..])
                .map_err(|e| match e {
                    Error::Corruption(msg) => {
                        Error::Corruption(format!("page {page_id} offset {offset}: {msg}"))
                    }
                    other => other,
                })?;
            contents.push(block);
            locations.push(BlockLocation {
                page_id,
                byte_offset: offset,
                byte_len: used,
            });
            spans.push((offset, used));
            offset += used;
        }
        raw_pages.push((page_id, bytes, spans));
    }

    // Rebuild stored-block metadata from the references.
    struct Meta {
        rep: Option<(String, (usize, usize))>,
        ref_sets: std::collections::BTreeSet<String>,
        ref_count: usize,
    }
    let mut meta: Vec<Meta> = (0..contents.len())
        .map(|_| Meta {
            rep: None,
            ref_sets: Default::default(),
            ref_count: 0,
        })
        .collect();
    let mut sets = BTreeMap::new();
    for (name, sf) in &file.sets {
        let gc = sf.cols.div_ceil(file.block_dim);
        for (slot, &id) in sf.ids.iter().enumerate() {
            let m = meta.get_mut(id).ok_or_else(|| {
                Error::Corruption(format!(
                    "set {name} references stored block {id}, pages hold {}",
                    contents.len()
                ))
            })?;
            if m.rep.is_none() {
                m.rep = Some((name.clone(), (slot / gc, slot % gc)));
            }
            m.ref_sets.insert(name.clone());
            m.ref_count += 1;
        }
        sets.insert(
            name.clone(),
            SetMap {
                logical_rows: sf.rows,
                logical_cols: sf.cols,
                stored_ids: sf.ids.clone(),
            },
        );
    }

    let stored: Vec<StoredBlock> = contents
        .into_iter()
        .zip(&meta)
        .enumerate()
        .map(|(id, (content, m))| {
            let (rep_set, _) = m.rep.clone().ok_or_else(|| {
                Error::Corruption(format!("page block {id} is referenced by no set"))
            })?;
            Ok(StoredBlock {
                fingerprint: fingerprint_block(&content),
                class: role_class(&rep_set),
                rep_set,
                ref_sets: m.ref_sets.len(),
                ref_count: m.ref_count,
                sharing: if m.ref_sets.len() >= 2 {
                    Sharing::Shared
                } else {
                    Sharing::Private
                },
                content,
            })
        })
        .collect::<Result<_>>()?;

    let catalog = Catalog {
        block_dim: file.block_dim,
        threshold_t: file.threshold_t,
        locations: locations.iter().cloned().map(Some).collect(),
        stored,
        sets,
    };
    catalog.validate_consistency()?;

    // Reassemble Page values with entries pointing at the recomputed identity.
    let mut scan = 0usize;
    let pages = raw_pages
        .into_iter()
        .map(|(page_id, payload, spans)| {
            let entries = spans
                .into_iter()
                .map(|(byte_offset, byte_len)| {
                    let s = &catalog.stored[scan];
                    let e = PageEntry {
                        stored_id: scan,
                        set_name: s.rep_set.clone(),
                        block_key: (s.content.block_row, s.content.block_col),
                        byte_offset,
                        byte_len,
                    };
                    scan += 1;
                    e
                })
                .collect();
            Page {
                page_id,
                capacity_bytes: file.page_capacity_bytes,
                entries,
                payload,
            }
        })
        .collect();
    Ok((catalog, pages))
}

const SET_MAGIC: [u8; 4] = *b"TSET";

/// Filesystem [`SetStore`]: one `<name>.tset` file per materialized set, block
/// records appended after a small header.
#[derive(Debug)]
pub struct FsSetStore {
    dir: PathBuf,
}

impl FsSetStore {
    /// Open (and create) `dir`, keeping existing sets.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    /// Open `dir` after clearing any previous contents.
    pub fn create_fresh(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn path_for(&self, name: &str) -> Result<PathBuf> {
        if name.is_empty() || name.contains('/') || name.contains('\\') || name.contains("..") {
            return Err(Error::InvalidArgument(format!(
                "set name '{name}' is not a valid file stem"
            )));
        }
        Ok(self.dir.join(format!("{name}.tset")))
    }
}

impl SetStore for FsSetStore {
    fn write_set(&mut self, name: &str, value: &BlockedMatrix) -> Result<()> {
        let path = self.path_for(name)?;
        if path.exists() {
            return Err(Error::NameCollision(name.to_string()));
        }
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&SET_MAGIC);
        bytes.extend_from_slice(&(value.logical_rows() as u32).to_le_bytes());
        bytes.extend_from_slice(&(value.logical_cols() as u32).to_le_bytes());
        bytes.extend_from_slice(&(value.block_dim() as u32).to_le_bytes());
        bytes.extend_from_slice(&(value.num_blocks() as u32).to_le_bytes());
        for block in value.blocks() {
            bytes.extend_from_slice(&serialize_block(block));
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    fn read_set(&self, name: &str) -> Result<BlockedMatrix> {
        let path = self.path_for(name)?;
        let bytes = fs::read(&path)
            .map_err(|_| Error::Corruption(format!("set '{name}' not found in store")))?;
        if bytes.len() < 20 || bytes[0..4] != SET_MAGIC {
            return Err(Error::Corruption(format!("set file '{name}' is malformed")));
        }
        let u32_at =
            |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (rows, cols, bd, n) = (u32_at(4), u32_at(8), u32_at(12), u32_at(16));
        let mut blocks = Vec::with_capacity(n);
        let mut offset = 20usize;
        for _ in 0..n {
            let (block, used) = deserialize_block_prefix(&bytes[offset..])?;
            blocks.push(block);
            offset += used;
        }
        if offset != bytes.len() {
            return Err(Error::Corruption(format!(
                "set file '{name}' has trailing bytes"
            )));
        }
        BlockedMatrix::from_block_list(rows, cols, bd, blocks)
    }

    fn contains_set(&self, name: &str) -> bool {
        self.path_for(name).map(|p| p.exists()).unwrap_or(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::dedup::{deduplicate, SetBlocks};
    use crate::store::lsh::DedupConfig;
    use crate::store::page::pack_catalog;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(seed: u64, rows: usize, cols: usize, bd: usize) -> BlockedMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense: Vec<f32> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        BlockedMatrix::partition(&dense, rows, cols, bd).unwrap()
    }

    #[test]
    fn store_round_trip_is_bit_exact() {
        let tmp = tempfile::tempdir().unwrap();
        let sets = vec![
            SetBlocks::from_matrix("blk0.wq", &random_matrix(1, 10, 13, 4)),
            SetBlocks::from_matrix("blk0.w0", &random_matrix(2, 13, 6, 4)),
        ];
        let mut catalog = deduplicate(&sets, &DedupConfig::default()).unwrap();
        let pages = pack_catalog(&mut catalog, 512).unwrap();
        write_store(tmp.path(), &catalog, &pages).unwrap();

        let (back, back_pages) = read_store(tmp.path()).unwrap();
        assert_eq!(back.stored.len(), catalog.stored.len());
        assert_eq!(back_pages.len(), pages.len());
        for s in &sets {
            let a = catalog.reconstruct_set(&s.set_name).unwrap();
            let b = back.reconstruct_set(&s.set_name).unwrap();
            let abits: Vec<u32> = a.reassemble().unwrap().iter().map(|v| v.to_bits()).collect();
            let bbits: Vec<u32> = b.reassemble().unwrap().iter().map(|v| v.to_bits()).collect();
            assert_eq!(abits, bbits);
        }
        // Ids are permuted to scan order, so compare stored sets by fingerprint.
        let mut want: Vec<u64> = catalog.stored.iter().map(|s| s.fingerprint).collect();
        let mut got: Vec<u64> = back.stored.iter().map(|s| s.fingerprint).collect();
        want.sort_unstable();
        got.sort_unstable();
        assert_eq!(want, got);
    }

    #[test]
    fn page_bit_flip_is_detected_on_read() {
        let tmp = tempfile::tempdir().unwrap();
        let sets = vec![SetBlocks::from_matrix("blk0.wq", &random_matrix(3, 8, 8, 4))];
        let mut catalog = deduplicate(&sets, &DedupConfig::default()).unwrap();
        let pages = pack_catalog(&mut catalog, 4096).unwrap();
        write_store(tmp.path(), &catalog, &pages).unwrap();

        let page_path = tmp.path().join(page_file_name(0));
        let mut bytes = fs::read(&page_path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(&page_path, bytes).unwrap();

        match read_store(tmp.path()) {
            Err(Error::Corruption(msg)) => assert!(msg.contains("page 0"), "{msg}"),
            other => panic!("expected corruption, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn missing_page_file_is_io_error() {
        let tmp = tempfile::tempdir().unwrap();
        let sets = vec![SetBlocks::from_matrix("blk0.wq", &random_matrix(4, 8, 8, 4))];
        let mut catalog = deduplicate(&sets, &DedupConfig::default()).unwrap();
        let pages = pack_catalog(&mut catalog, 4096).unwrap();
        write_store(tmp.path(), &catalog, &pages).unwrap();
        fs::remove_file(tmp.path().join(page_file_name(0))).unwrap();
        assert!(matches!(read_store(tmp.path()), Err(Error::Io(_))));
    }

    #[test]
    fn fs_set_store_round_trip_and_collision() {
        let tmp = tempfile::tempdir().unwrap();
        let mut store = FsSetStore::open(tmp.path().join("intermediates")).unwrap();
        let m = random_matrix(5, 7, 9, 4);
        store.write_set("i0.blk0.q", &m).unwrap();
        assert!(store.contains_set("i0.blk0.q"));
        let back = store.read_set("i0.blk0.q").unwrap();
        assert_eq!(m, back);
        assert!(matches!(
            store.write_set("i0.blk0.q", &m),
            Err(Error::NameCollision(_))
        ));
        assert!(matches!(
            store.read_set("nope"),
            Err(Error::Corruption(_))
        ));
        assert!(store.write_set("bad/name", &m).is_err());

        let fresh = FsSetStore::create_fresh(tmp.path().join("intermediates")).unwrap();
        assert!(!fresh.contains_set("i0.blk0.q"));
    }
}
