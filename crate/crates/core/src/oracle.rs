//! Exact kNN ground truth and the per-query partition statistics derived
//! from it: kNN count distributions, probing labels, optimal and
//! distance-rank fan-out, and long-tail structure.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::codec::{self, IdMatrix, VecFormat};
use crate::dataset::{l2_sq, Dataset};
use crate::error::{invalid, Error, Result};
use crate::partition::{LayoutKind, PartitionLayout};

/// Ids and squared distances of a neighbor list, nearest first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnnResult {
    pub ids: Vec<u32>,
    pub dists: Vec<f32>,
}

impl KnnResult {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist: f32,
    id: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Distance first, then id: equal distances resolve to the smaller id.
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.id.cmp(&other.id))
    }
}

/// Bounded max-heap keeping the `k` smallest `(dist, id)` pairs.
#[derive(Debug, Clone)]
pub struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn admits(&self, cand: &Candidate) -> bool {
        self.heap.len() < self.k || self.heap.peek().is_some_and(|top| cand < top)
    }

    #[inline]
    pub fn push(&mut self, id: u32, dist: f32) {
        let cand = Candidate { dist, id };
        if self.admits(&cand) {
            if self.heap.len() == self.k {
                self.heap.pop();
            }
            self.heap.push(cand);
        }
    }

    /// Like `push`, but ignores an id already held. A replica of a stored
    /// point has the same distance, so a rejected or evicted copy can never
    /// re-enter and only the held entries need checking.
    #[inline]
    pub fn push_unique(&mut self, id: u32, dist: f32) {
        let cand = Candidate { dist, id };
        if self.admits(&cand) && !self.heap.iter().any(|c| c.id == id) {
            if self.heap.len() == self.k {
                self.heap.pop();
            }
            self.heap.push(cand);
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.heap.iter().map(|c| c.id)
    }

    pub fn into_result(self) -> KnnResult {
        let sorted = self.heap.into_sorted_vec();
        KnnResult {
            ids: sorted.iter().map(|c| c.id).collect(),
            dists: sorted.iter().map(|c| c.dist).collect(),
        }
    }
}

fn check_query(dataset: &Dataset, query: &[f32], k: usize) -> Result<()> {
    if query.len() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            actual: query.len(),
        });
    }
    if k == 0 || k > dataset.len() {
        return Err(invalid(format!(
            "k={k} must be in 1..={} (dataset size)",
            dataset.len()
        )));
    }
    Ok(())
}

pub(crate) fn scan_knn(dataset: &Dataset, query: &[f32], k: usize, exclude: Option<u32>) -> KnnResult {
    let mut top = TopK::new(k);
    for (id, row) in dataset.rows().enumerate() {
        let id = id as u32;
        if Some(id) == exclude {
            continue;
        }
        top.push(id, l2_sq(query, row));
    }
    top.into_result()
}

/// The exact `k` nearest rows to `query`, nearest first, ties to smaller id.
pub fn brute_force_knn(dataset: &Dataset, query: &[f32], k: usize) -> Result<KnnResult> {
    check_query(dataset, query, k)?;
    Ok(scan_knn(dataset, query, k, None))
}

/// kNN of a stored row among the other rows (the row itself is excluded).
pub fn brute_force_knn_of_row(dataset: &Dataset, row: u32, k: usize) -> Result<KnnResult> {
    if row as usize >= dataset.len() {
        return Err(Error::UnknownId(row));
    }
    if k == 0 || k >= dataset.len() {
        return Err(invalid(format!(
            "k={k} must be in 1..{} when excluding the query row",
            dataset.len()
        )));
    }
    Ok(scan_knn(dataset, dataset.row(row as usize), k, Some(row)))
}

/// Ground truth for every row of `queries`. Each worker holds only its own
/// `k`-bounded heap, so memory stays `O(queries * k)`.
pub fn brute_force_knn_batch(dataset: &Dataset, queries: &Dataset, k: usize) -> Result<Vec<KnnResult>> {
    check_query(dataset, queries.row(0), k)?;
    Ok((0..queries.len())
        .into_par_iter()
        .map(|i| scan_knn(dataset, queries.row(i), k, None))
        .collect())
}

/// Per-partition counts of a query's true kNN over a single-home layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnCountDistribution {
    pub counts: Vec<u32>,
    pub k: usize,
}

impl KnnCountDistribution {
    pub fn partitions(&self) -> usize {
        self.counts.len()
    }
}

/// Binary mask of the partitions holding at least one kNN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbingLabel {
    pub mask: Vec<bool>,
}

impl ProbingLabel {
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }
}

pub fn knn_count_distribution(layout: &PartitionLayout, knn_ids: &[u32]) -> Result<KnnCountDistribution> {
    if layout.kind() == LayoutKind::Fuzzy2 {
        return Err(invalid("kNN count distributions need a single-home layout"));
    }
    let mut counts = vec![0u32; layout.partitions()];
    for &id in knn_ids {
        let home = layout.home(id).ok_or(Error::UnknownId(id))?;
        counts[home as usize] += 1;
    }
    Ok(KnnCountDistribution {
        counts,
        k: knn_ids.len(),
    })
}

pub fn probing_label(dist: &KnnCountDistribution) -> ProbingLabel {
    ProbingLabel {
        mask: dist.counts.iter().map(|&c| c > 0).collect(),
    }
}

/// Minimum number of partitions covering all kNN: the label's popcount.
pub fn optimal_nprobe(label: &ProbingLabel) -> usize {
    label.mask.iter().filter(|&&m| m).count()
}

/// Fan-out needed when probing strictly in centroid-distance order: the
/// 1-based rank of the worst-ranked kNN partition.
pub fn distance_rank_nprobe(dist: &KnnCountDistribution, centroid_order: &[u32]) -> usize {
    centroid_order
        .iter()
        .rposition(|&p| dist.counts[p as usize] > 0)
        .map_or(0, |pos| pos + 1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LongTailStats {
    pub min_nonzero: u32,
    /// Partitions holding exactly one of the kNN.
    pub long_tail_partitions: Vec<u32>,
}

pub fn long_tail_stats(dist: &KnnCountDistribution) -> Result<LongTailStats> {
    let min_nonzero = dist
        .counts
        .iter()
        .copied()
        .filter(|&c| c > 0)
        .min()
        .ok_or_else(|| invalid("all-zero kNN count distribution"))?;
    let long_tail_partitions = dist
        .counts
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| (c == 1).then_some(i as u32))
        .collect();
    Ok(LongTailStats {
        min_nonzero,
        long_tail_partitions,
    })
}

/// kNN lists for a query set, with an on-disk form of sibling
/// `ivecs` (ids) and `fvecs` (squared distances) files.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub k: usize,
    pub results: Vec<KnnResult>,
}

impl GroundTruth {
    pub fn compute(dataset: &Dataset, queries: &Dataset, k: usize) -> Result<Self> {
        Ok(Self {
            k,
            results: brute_force_knn_batch(dataset, queries, k)?,
        })
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    /// Content key over `(dataset, queries, k)` used to name cache files.
    pub fn cache_key(dataset: &Dataset, queries: &Dataset, k: usize) -> String {
        let mut h = Sha256::new();
        h.update(dataset.fingerprint().to_le_bytes());
        h.update(queries.fingerprint().to_le_bytes());
        h.update((k as u64).to_le_bytes());
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cache_paths(dir: &Path, key: &str) -> (PathBuf, PathBuf) {
        (
            dir.join(format!("gt_{key}.ivecs")),
            dir.join(format!("gt_{key}.fvecs")),
        )
    }

    pub fn save(&self, ids_path: &Path, dists_path: &Path) -> Result<()> {
        let ids = IdMatrix {
            cols: self.k,
            data: self
                .results
                .iter()
                .flat_map(|r| r.ids.iter().map(|&i| i as i32))
                .collect(),
        };
        codec::write_ivecs(&ids, ids_path)?;
        let dists = Dataset::new(
            self.k,
            self.results.iter().flat_map(|r| r.dists.iter().copied()).collect(),
        )?;
        codec::write_vectors(&dists, dists_path, VecFormat::Fvecs)
    }

    pub fn load(ids_path: &Path, dists_path: &Path) -> Result<Self> {
        let ids = codec::read_ivecs(ids_path)?;
        let dists = codec::read_vectors(dists_path, VecFormat::Fvecs)?;
        if ids.cols != dists.dim() || ids.rows() != dists.len() {
            return Err(invalid("ground-truth id and distance files disagree in shape"));
        }
        let results = (0..ids.rows())
            .map(|i| {
                let row = ids.row(i);
                if let Some(&bad) = row.iter().find(|&&v| v < 0) {
                    return Err(invalid(format!("negative id {bad} in ground truth")));
                }
                Ok(KnnResult {
                    ids: row.iter().map(|&v| v as u32).collect(),
                    dists: dists.row(i).to_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { k: ids.cols, results })
    }

    /// Loads the cached ground truth for `(dataset, queries, k)` from `dir`,
    /// computing and writing it on a miss. The flag reports a cache hit.
    pub fn load_or_compute(dir: &Path, dataset: &Dataset, queries: &Dataset, k: usize) -> Result<(Self, bool)> {
        let key = Self::cache_key(dataset, queries, k);
        let (ids_path, dists_path) = Self::cache_paths(dir, &key);
        if ids_path.exists() && dists_path.exists() {
            let gt = Self::load(&ids_path, &dists_path)?;
            if gt.k == k && gt.len() == queries.len() {
                return Ok((gt, true));
            }
        }
        let gt = Self::compute(dataset, queries, k)?;
        gt.save(&ids_path, &dists_path)?;
        Ok((gt, false))
    }
}
