//! Block-level deduplication across model versions: exact content pre-pass,
//! banded-LSH candidate generation, distance verification, and union-find
//! clustering into a catalog of stored representatives.

use std::collections::{BTreeSet, HashMap, HashSet};

use petgraph::unionfind::UnionFind;

use crate::error::{Error, Result};
use crate::store::block_codec::fingerprint_block;
use crate::store::catalog::{Catalog, SetMap, Sharing, StoredBlock};
use crate::store::lsh::{DedupConfig, LshIndex};
use crate::tensor::{BlockedMatrix, TensorBlock};

/// One named weight set offered to dedup: a complete row-major tiling plus the
/// packing class it belongs to.
#[derive(Debug, Clone)]
pub struct SetBlocks {
    pub set_name: String,
    pub class: String,
    pub logical_rows: usize,
    pub logical_cols: usize,
    pub block_dim: usize,
    pub blocks: Vec<TensorBlock>,
}

impl SetBlocks {
    pub fn from_matrix(set_name: impl Into<String>, m: &BlockedMatrix) -> SetBlocks {
        let set_name = set_name.into();
        SetBlocks {
            class: role_class(&set_name),
            set_name,
            logical_rows: m.logical_rows(),
            logical_cols: m.logical_cols(),
            block_dim: m.block_dim(),
            blocks: m.blocks().cloned().collect(),
        }
    }

    fn grid(&self) -> (usize, usize) {
        (
            self.logical_rows.div_ceil(self.block_dim),
            self.logical_cols.div_ceil(self.block_dim),
        )
    }

    fn validate(&self) -> Result<()> {
        let (gr, gc) = self.grid();
        if self.blocks.len() != gr * gc {
            return Err(Error::Corruption(format!(
                "set {} has {} blocks, grid needs {}",
                self.set_name,
                self.blocks.len(),
                gr * gc
            )));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if (b.block_row, b.block_col) != (i / gc, i % gc) {
                return Err(Error::Corruption(format!(
                    "set {} blocks are not in row-major order at index {i}",
                    self.set_name
                )));
            }
        }
        Ok(())
    }
}

/// Packing class of a weight set: every set sharing a role suffix (wq, wk, wv,
/// wo, w0, b0, w1, b1) across model versions lands in the same class.
pub fn role_class(set_name: &str) -> String {
    set_name
        .rsplit('.')
        .next()
        .unwrap_or(set_name)
        .to_string()
}

/// Mean-squared element distance; `None` when dims differ.
pub fn mean_squared_distance(a: &TensorBlock, b: &TensorBlock) -> Option<f64> {
    if a.rows != b.rows || a.cols != b.cols {
        return None;
    }
    let n = a.data.len().max(1) as f64;
    Some(
        a.data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| {
                let d = *x as f64 - *y as f64;
                d * d
            })
            .sum::<f64>()
            / n,
    )
}

/// Byte identity of a block's content (shape + payload, not coordinates).
fn content_key(b: &TensorBlock) -> Vec<u8> {
    let mut key = Vec::with_capacity(4 + b.data.len() * 4);
    key.extend_from_slice(&(b.rows as u16).to_le_bytes());
    key.extend_from_slice(&(b.cols as u16).to_le_bytes());
    for v in &b.data {
        key.extend_from_slice(&v.to_le_bytes());
    }
    key
}

/// Distinct contents with their member indices, in first-occurrence order.
fn content_groups(blocks: &[TensorBlock]) -> Vec<Vec<usize>> {
    let mut by_content: HashMap<Vec<u8>, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, b) in blocks.iter().enumerate() {
        match by_content.entry(content_key(b)) {
            std::collections::hash_map::Entry::Occupied(e) => groups[*e.get()].push(i),
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(groups.len());
                groups.push(vec![i]);
            }
        }
    }
    groups
}

fn partition_from_unionfind(
    mut uf: UnionFind<usize>,
    groups: &[Vec<usize>],
) -> Vec<Vec<usize>> {
    let mut clusters: HashMap<usize, Vec<usize>> = HashMap::new();
    for (g, members) in groups.iter().enumerate() {
        clusters
            .entry(uf.find_mut(g))
            .or_default()
            .extend(members.iter().copied());
    }
    let mut out: Vec<Vec<usize>> = clusters
        .into_values()
        .map(|mut members| {
            members.sort_unstable();
            members
        })
        .collect();
    out.sort_unstable_by_key(|members| members[0]);
    out
}

/// Cluster blocks into verified near-duplicate groups.
///
/// Byte-identical contents always merge (hash pre-pass, independent of LSH).
/// With `threshold_t > 0`, banded-LSH candidates with equal dims are verified
/// by exact mean-squared distance and merged through a union-find; the result
/// partitions every index, singletons included.
pub fn find_near_duplicates(
    blocks: &[TensorBlock],
    cfg: &DedupConfig,
) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    let groups = content_groups(blocks);
    let mut uf = UnionFind::<usize>::new(groups.len());

    if cfg.threshold_t > 0.0 && groups.len() > 1 {
        let max_side = blocks
            .iter()
            .map(|b| b.rows.max(b.cols))
            .max()
            .unwrap_or(1);
        let index = LshIndex::new(cfg, max_side)?;
        // Delegate block per distinct content.
        let delegates: Vec<&TensorBlock> = groups.iter().map(|g| &blocks[g[0]]).collect();
        let keys: Vec<Vec<u64>> = delegates
            .iter()
            .map(|b| index.band_keys(&index.signature(b)?))
            .collect::<Result<_>>()?;
        let mut verified: HashSet<(usize, usize)> = HashSet::new();
        // `band` picks one column across all per-delegate key rows.
        #[allow(clippy::needless_range_loop)]
        for band in 0..index.bands() {
            let mut buckets: HashMap<(u64, usize, usize), Vec<usize>> = HashMap::new();
            for (g, d) in delegates.iter().enumerate() {
                buckets
                    .entry((keys[g][band], d.rows, d.cols))
                    .or_default()
                    .push(g);
            }
            for bucket in buckets.values() {
                for (i, &a) in bucket.iter().enumerate() {
                    for &b in &bucket[i + 1..] {
                        if !verified.insert((a, b)) {
                            continue;
                        }
                        if let Some(d) = mean_squared_distance(delegates[a], delegates[b]) {
                            if d <= cfg.threshold_t {
                                uf.union(a, b);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(partition_from_unionfind(uf, &groups))
}

/// Reference clustering: identical semantics to [`find_near_duplicates`] with
/// exhaustive candidate generation instead of banding. Used to validate the
/// banded path on small instances.
pub fn brute_force_clusters(
    blocks: &[TensorBlock],
    cfg: &DedupConfig,
) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    let groups = content_groups(blocks);
    let mut uf = UnionFind::<usize>::new(groups.len());
    if cfg.threshold_t > 0.0 {
        let delegates: Vec<&TensorBlock> = groups.iter().map(|g| &blocks[g[0]]).collect();
        for a in 0..delegates.len() {
            for b in a + 1..delegates.len() {
                if let Some(d) = mean_squared_distance(delegates[a], delegates[b]) {
                    if d <= cfg.threshold_t {
                        uf.union(a, b);
                    }
                }
            }
        }
    }
    Ok(partition_from_unionfind(uf, &groups))
}

struct Instance<'a> {
    set_idx: usize,
    key: (usize, usize),
    block: &'a TensorBlock,
}

/// Deduplicate several model versions' weight sets into a catalog.
///
/// One representative is stored per cluster; a stored block is shared when at
/// least two sets reference it. Every substituted block stays within
/// `threshold_t` mean-squared distance of its original: cluster members whose
/// distance to the representative exceeds the bound (possible through
/// transitive merges) are split out and stored separately.
pub fn deduplicate(sets: &[SetBlocks], cfg: &DedupConfig) -> Result<Catalog> {
    cfg.validate()?;
    let mut names = BTreeSet::new();
    for s in sets {
        if !names.insert(s.set_name.as_str()) {
            return Err(Error::NameCollision(s.set_name.clone()));
        }
        s.validate()?;
    }
    let block_dim = sets.first().map(|s| s.block_dim).unwrap_or(1);
    if sets.iter().any(|s| s.block_dim != block_dim) {
        return Err(Error::InvalidArgument(
            "all sets in one store must share block_dim".into(),
        ));
    }

    let mut instances: Vec<Instance> = Vec::new();
    let mut all_blocks: Vec<TensorBlock> = Vec::new();
    for (set_idx, s) in sets.iter().enumerate() {
        for b in &s.blocks {
            instances.push(Instance {
                set_idx,
                key: (b.block_row, b.block_col),
                block: b,
            });
            all_blocks.push(b.clone());
        }
    }

    let clusters = find_near_duplicates(&all_blocks, cfg)?;

    // Representative = member with the smallest (set_name, block_key); members
    // out of distance bound from it get their own stored block.
    let rep_order = |i: &usize| {
        let inst = &instances[*i];
        (sets[inst.set_idx].set_name.as_str(), inst.key)
    };
    let mut stored_members: Vec<(usize, Vec<usize>)> = Vec::new(); // (rep instance, members)
    for cluster in clusters {
        let rep = *cluster.iter().min_by_key(|i| rep_order(i)).unwrap();
        let rep_block = instances[rep].block;
        let mut kept = Vec::new();
        let mut rejected: Vec<usize> = Vec::new();
        for &m in &cluster {
            let within = match mean_squared_distance(instances[m].block, rep_block) {
                Some(d) if cfg.threshold_t > 0.0 => d <= cfg.threshold_t,
                Some(_) => content_key(instances[m].block) == content_key(rep_block),
                None => false,
            };
            if within {
                kept.push(m);
            } else {
                rejected.push(m);
            }
        }
        stored_members.push((rep, kept));
        // Rejected members regroup by exact content, each group stored once.
        for group in content_groups(&rejected.iter().map(|&m| instances[m].block.clone()).collect::<Vec<_>>()) {
            let members: Vec<usize> = group.iter().map(|&gi| rejected[gi]).collect();
            let rep = *members.iter().min_by_key(|i| rep_order(i)).unwrap();
            stored_members.push((rep, members));
        }
    }
    stored_members.sort_by(|a, b| rep_order(&a.0).cmp(&rep_order(&b.0)));

    let mut stored = Vec::with_capacity(stored_members.len());
    let mut instance_to_stored = vec![usize::MAX; instances.len()];
    for (id, (rep, members)) in stored_members.iter().enumerate() {
        let rep_inst = &instances[*rep];
        let ref_sets: BTreeSet<usize> = members.iter().map(|&m| instances[m].set_idx).collect();
        for &m in members {
            instance_to_stored[m] = id;
        }
        stored.push(StoredBlock {
            content: rep_inst.block.clone(),
            rep_set: sets[rep_inst.set_idx].set_name.clone(),
            class: sets[rep_inst.set_idx].class.clone(),
            fingerprint: fingerprint_block(rep_inst.block),
            ref_sets: ref_sets.len(),
            ref_count: members.len(),
            sharing: if ref_sets.len() >= 2 {
                Sharing::Shared
            } else {
                Sharing::Private
            },
        });
    }
    debug_assert!(instance_to_stored.iter().all(|&id| id != usize::MAX));

    let mut set_maps = std::collections::BTreeMap::new();
    let mut cursor = 0usize;
    for s in sets {
        let n = s.blocks.len();
        let stored_ids = instance_to_stored[cursor..cursor + n].to_vec();
        cursor += n;
        set_maps.insert(
            s.set_name.clone(),
            SetMap {
                logical_rows: s.logical_rows,
                logical_cols: s.logical_cols,
                stored_ids,
            },
        );
    }

    let catalog = Catalog {
        block_dim,
        threshold_t: cfg.threshold_t,
        locations: vec![None; stored.len()],
        stored,
        sets: set_maps,
    };
    catalog.validate_consistency()?;
    Ok(catalog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_block(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> TensorBlock {
        TensorBlock {
            block_row: 0,
            block_col: 0,
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn role_class_extracts_suffix() {
        assert_eq!(role_class("blk0.wq"), "wq");
        assert_eq!(role_class("m1/blk1.b0"), "b0");
        assert_eq!(role_class("plain"), "plain");
    }

    #[test]
    fn distance_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_block(&mut rng, 3, 3);
        assert_eq!(mean_squared_distance(&a, &a), Some(0.0));
        let b = random_block(&mut rng, 3, 4);
        assert_eq!(mean_squared_distance(&a, &b), None);
        let mut c = a.clone();
        for v in &mut c.data {
            *v += 0.1;
        }
        let d = mean_squared_distance(&a, &c).unwrap();
        assert!((d - 0.01).abs() < 1e-6, "d = {d}");
    }

    #[test]
    fn exact_twins_cluster_without_lsh() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut blocks: Vec<TensorBlock> = (0..10).map(|_| random_block(&mut rng, 4, 4)).collect();
        let twins: Vec<TensorBlock> = blocks.clone();
        blocks.extend(twins);
        let cfg = DedupConfig::default(); // threshold 0: exact only
        let clusters = find_near_duplicates(&blocks, &cfg).unwrap();
        assert_eq!(clusters.len(), 10);
        for c in &clusters {
            assert_eq!(c.len(), 2);
            assert_eq!(c[1], c[0] + 10);
        }
    }

    #[test]
    fn threshold_zero_keeps_distinct_blocks_apart() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let blocks: Vec<TensorBlock> = (0..30).map(|_| random_block(&mut rng, 4, 4)).collect();
        let clusters = find_near_duplicates(&blocks, &DedupConfig::default()).unwrap();
        assert_eq!(clusters.len(), 30);
        assert!(clusters.iter().all(|c| c.len() == 1));
    }

    #[test]
    fn banded_clustering_equals_brute_force() {
        // 50 random blocks plus 10 perturbed copies, perturbation well under
        // the threshold radius.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut blocks: Vec<TensorBlock> = (0..50).map(|_| random_block(&mut rng, 8, 8)).collect();
        for i in 0..10 {
            let mut p = blocks[i * 5].clone();
            for v in &mut p.data {
                *v += rng.gen_range(-1e-4f32..1e-4);
            }
            blocks.push(p);
        }
        let cfg = DedupConfig {
            threshold_t: 1e-6,
            ..DedupConfig::default()
        };
        let banded = find_near_duplicates(&blocks, &cfg).unwrap();
        let brute = brute_force_clusters(&blocks, &cfg).unwrap();
        assert_eq!(banded, brute);
        assert_eq!(banded.iter().filter(|c| c.len() == 2).count(), 10);
        assert_eq!(banded.len(), 50);
    }

    fn model_sets(prefix: &str, seed: u64, perturb: f32) -> Vec<SetBlocks> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dense: Vec<f32> = (0..16 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if perturb != 0.0 {
            let mut prng = ChaCha8Rng::seed_from_u64(seed + 1000);
            for v in &mut dense {
                *v += prng.gen_range(-perturb..perturb);
            }
        }
        let m = BlockedMatrix::partition(&dense, 16, 16, 4).unwrap();
        vec![SetBlocks::from_matrix(format!("{prefix}/blk0.wq"), &m)]
    }

    #[test]
    fn identical_models_share_everything() {
        let mut sets = model_sets("m0", 7, 0.0);
        sets.extend(model_sets("m1", 7, 0.0));
        let catalog = deduplicate(&sets, &DedupConfig::default()).unwrap();
        assert_eq!(catalog.stored.len(), 16);
        assert!(catalog
            .stored
            .iter()
            .all(|s| matches!(s.sharing, Sharing::Shared)));
        assert!((catalog.shared_fraction() - 1.0).abs() < f64::EPSILON);
        // Reconstruction is bit-exact for both versions.
        for s in &sets {
            let m = catalog.reconstruct_set(&s.set_name).unwrap();
            let original: Vec<u32> = s.blocks.iter().flat_map(|b| b.data.iter().map(|v| v.to_bits())).collect();
            let got: Vec<u32> = m.blocks().flat_map(|b| b.data.iter().map(|v| v.to_bits())).collect();
            assert_eq!(original, got);
        }
    }

    #[test]
    fn single_model_threshold_zero_is_identity() {
        let sets = model_sets("m0", 8, 0.0);
        let catalog = deduplicate(&sets, &DedupConfig::default()).unwrap();
        assert_eq!(catalog.stored.len(), 16);
        assert!(catalog
            .stored
            .iter()
            .all(|s| matches!(s.sharing, Sharing::Private)));
        assert_eq!(catalog.shared_fraction(), 0.0);
        let ids = &catalog.sets["m0/blk0.wq"].stored_ids;
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 16, "identity mapping, no sharing");
    }

    #[test]
    fn perturbed_model_shares_under_threshold() {
        let mut sets = model_sets("m0", 9, 0.0);
        sets.extend(model_sets("m1", 9, 1e-4));
        let cfg = DedupConfig {
            threshold_t: 1e-6,
            ..DedupConfig::default()
        };
        let catalog = deduplicate(&sets, &cfg).unwrap();
        assert_eq!(catalog.stored.len(), 16, "every pair merged");
        assert!(catalog
            .stored
            .iter()
            .all(|s| matches!(s.sharing, Sharing::Shared)));
        // Reconstructed m1 deviates from its original by at most threshold_t
        // per block (mean-squared).
        let m1 = catalog.reconstruct_set("m1/blk0.wq").unwrap();
        for (orig, got) in sets[1].blocks.iter().zip(m1.blocks()) {
            let d = mean_squared_distance(orig, got).unwrap();
            assert!(d <= cfg.threshold_t, "distortion {d}");
        }
        // Representatives come from m0 (lexicographically smaller).
        assert!(catalog.stored.iter().all(|s| s.rep_set.starts_with("m0/")));
    }

    #[test]
    fn duplicate_set_names_are_rejected() {
        let mut sets = model_sets("m0", 10, 0.0);
        sets.extend(model_sets("m0", 10, 0.0));
        assert!(matches!(
            deduplicate(&sets, &DedupConfig::default()),
            Err(Error::NameCollision(_))
        ));
    }

    #[test]
    fn transitive_chain_distortion_is_bounded() {
        // a-b and b-c verify pairwise, but a-c exceeds the bound; the cluster
        // must not substitute c (or a) with a representative farther than t.
        // The three blocks are positive multiples of one direction, so their
        // sign signatures coincide and every pair is an LSH candidate.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let mean_sq = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>() / 16.0;
        let threshold = 1e-4f64;
        // msd(a, b) = alpha^2 * mean_sq ~= 0.8 t; msd(a, c) = 4 alpha^2 * mean_sq > t.
        let alpha = (0.8 * threshold / mean_sq).sqrt() as f32;
        let mk = |scale: f32| TensorBlock {
            block_row: 0,
            block_col: 0,
            rows: 4,
            cols: 4,
            data: v.iter().map(|x| x * scale).collect(),
        };
        let blocks = vec![mk(1.0), mk(1.0 + alpha), mk(1.0 + 2.0 * alpha)];
        let cfg = DedupConfig {
            threshold_t: threshold,
            ..DedupConfig::default()
        };
        let clusters = find_near_duplicates(&blocks, &cfg).unwrap();
        assert_eq!(clusters.len(), 1, "union-find chains all three");

        let sets = vec![SetBlocks {
            set_name: "m0/blk0.wq".into(),
            class: "wq".into(),
            logical_rows: 4,
            logical_cols: 12,
            block_dim: 4,
            blocks: blocks
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let mut b = b.clone();
                    b.block_col = i;
                    b
                })
                .collect(),
        }];
        let catalog = deduplicate(&sets, &cfg).unwrap();
        let m = catalog.reconstruct_set("m0/blk0.wq").unwrap();
        for (orig, got) in sets[0].blocks.iter().zip(m.blocks()) {
            let d = mean_squared_distance(orig, got).unwrap();
            assert!(d <= cfg.threshold_t, "distortion {d} exceeds bound");
        }
        assert_eq!(catalog.stored.len(), 2, "chain split into rep + outlier");
    }
}
