//! K-Means partitioning and the hard, fuzzy and redundant partition layouts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{l2_sq, l2_sq_f64, Dataset};
use crate::error::{invalid, Error, Result};

/// Rows per parallel work unit. Fixed so reductions happen in the same order
/// regardless of the thread count.
const CHUNK_ROWS: usize = 1024;

pub const DEFAULT_KMEANS_ITERS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutKind {
    /// Every point stored once, in its nearest partition.
    Hard,
    /// Every point stored in its two nearest partitions.
    Fuzzy2,
    /// Hard layout plus one replica for each picked point.
    Redundant,
}

impl LayoutKind {
    pub fn code(self) -> u32 {
        match self {
            LayoutKind::Hard => 0,
            LayoutKind::Fuzzy2 => 1,
            LayoutKind::Redundant => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(LayoutKind::Hard),
            1 => Some(LayoutKind::Fuzzy2),
            2 => Some(LayoutKind::Redundant),
            _ => None,
        }
    }
}

/// Centroids plus per-partition member id lists.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionLayout {
    kind: LayoutKind,
    centroids: Dataset,
    members: Vec<Vec<u32>>,
    homes: Vec<u32>,
}

impl PartitionLayout {
    /// Puts every point in its nearest partition (ties to the lower index).
    pub fn assign_hard(dataset: &Dataset, centroids: &Dataset) -> Result<Self> {
        check_dims(dataset, centroids)?;
        let homes: Vec<u32> = nearest_assignments(dataset, centroids)
            .into_iter()
            .map(|(c, _)| c)
            .collect();
        let mut members = vec![Vec::new(); centroids.len()];
        for (id, &h) in homes.iter().enumerate() {
            members[h as usize].push(id as u32);
        }
        Ok(Self {
            kind: LayoutKind::Hard,
            centroids: centroids.clone(),
            members,
            homes,
        })
    }

    /// Puts every point in its two nearest partitions.
    pub fn assign_fuzzy(dataset: &Dataset, centroids: &Dataset) -> Result<Self> {
        check_dims(dataset, centroids)?;
        if centroids.len() < 2 {
            return Err(invalid("fuzzy assignment needs at least 2 partitions"));
        }
        let pairs: Vec<(u32, u32)> = dataset
            .as_slice()
            .par_chunks(CHUNK_ROWS * dataset.dim())
            .flat_map_iter(|chunk| {
                chunk
                    .chunks_exact(dataset.dim())
                    .map(|row| two_nearest(row, centroids))
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut members = vec![Vec::new(); centroids.len()];
        for (id, &(a, b)) in pairs.iter().enumerate() {
            members[a as usize].push(id as u32);
            members[b as usize].push(id as u32);
        }
        for list in &mut members {
            list.sort_unstable();
        }
        Ok(Self {
            kind: LayoutKind::Fuzzy2,
            centroids: centroids.clone(),
            members,
            homes: pairs.into_iter().map(|(a, _)| a).collect(),
        })
    }

    /// Rebuilds a layout from stored parts, checking the kind's invariants.
    pub fn from_parts(
        kind: LayoutKind,
        centroids: Dataset,
        members: Vec<Vec<u32>>,
        homes: Vec<u32>,
    ) -> Result<Self> {
        let layout = Self {
            kind,
            centroids,
            members,
            homes,
        };
        layout.validate()?;
        Ok(layout)
    }

    /// Returns a redundant layout with `id` appended to partition `target`
    /// for every `(id, target)` pair. Homes are untouched.
    pub(crate) fn with_replicas(&self, replicas: &[(u32, u32)]) -> Result<Self> {
        if self.kind != LayoutKind::Hard {
            return Err(invalid("replicas can only be added to a hard layout"));
        }
        let mut members = self.members.clone();
        for &(id, target) in replicas {
            members[target as usize].push(id);
        }
        Self::from_parts(LayoutKind::Redundant, self.centroids.clone(), members, self.homes.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.centroids.len();
        if self.members.len() != b {
            return Err(Error::Invariant(format!(
                "{} member lists for {b} centroids",
                self.members.len()
            )));
        }
        let n = self.homes.len();
        let mut seen = vec![0u8; n];
        let mut in_home = vec![false; n];
        for (p, list) in self.members.iter().enumerate() {
            for &id in list {
                let slot = seen
                    .get_mut(id as usize)
                    .ok_or(Error::UnknownId(id))?;
                *slot = slot.saturating_add(1);
                if self.homes[id as usize] as usize == p {
                    in_home[id as usize] = true;
                }
                if self.kind == LayoutKind::Hard && self.homes[id as usize] as usize != p {
                    return Err(Error::Invariant(format!(
                        "id {id} stored in partition {p} but its home is {}",
                        self.homes[id as usize]
                    )));
                }
            }
        }
        let expected = |c: u8| match self.kind {
            LayoutKind::Hard => c == 1,
            LayoutKind::Fuzzy2 => c == 2,
            LayoutKind::Redundant => c == 1 || c == 2,
        };
        if let Some(id) = seen.iter().position(|&c| !expected(c)) {
            return Err(Error::Invariant(format!(
                "id {id} stored {} times in a {:?} layout",
                seen[id], self.kind
            )));
        }
        if let Some(id) = in_home.iter().position(|&found| !found) {
            return Err(Error::Invariant(format!(
                "id {id} missing from home partition {}",
                self.homes[id]
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> LayoutKind {
        self.kind
    }

    pub fn partitions(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    pub fn centroids(&self) -> &Dataset {
        &self.centroids
    }

    pub fn members(&self, partition: usize) -> &[u32] {
        &self.members[partition]
    }

    pub fn all_members(&self) -> &[Vec<u32>] {
        &self.members
    }

    /// Number of distinct points indexed.
    pub fn num_points(&self) -> usize {
        self.homes.len()
    }

    /// Stored entries across all partitions, replicas included.
    pub fn total_entries(&self) -> usize {
        self.members.iter().map(Vec::len).sum()
    }

    /// The nearest-centroid partition of `id`.
    pub fn home(&self, id: u32) -> Option<u32> {
        self.homes.get(id as usize).copied()
    }

    pub fn homes(&self) -> &[u32] {
        &self.homes
    }

    /// Squared distances from `query` to every centroid.
    pub fn centroid_distances(&self, query: &[f32]) -> Result<Vec<f32>> {
        centroid_distances(query, &self.centroids)
    }
}

fn check_dims(dataset: &Dataset, centroids: &Dataset) -> Result<()> {
    if dataset.dim() != centroids.dim() {
        return Err(Error::DimensionMismatch {
            expected: centroids.dim(),
            actual: dataset.dim(),
        });
    }
    Ok(())
}

/// Squared L2 distance from `query` to each centroid.
pub fn centroid_distances(query: &[f32], centroids: &Dataset) -> Result<Vec<f32>> {
    if query.len() != centroids.dim() {
        return Err(Error::DimensionMismatch {
            expected: centroids.dim(),
            actual: query.len(),
        });
    }
    Ok(centroids.rows().map(|c| l2_sq(query, c)).collect())
}

#[inline]
fn nearest(row: &[f32], centroids: &Dataset) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (c, centroid) in centroids.rows().enumerate() {
        let d = l2_sq_f64(row, centroid);
        if d < best.1 {
            best = (c as u32, d);
        }
    }
    best
}

#[inline]
fn two_nearest(row: &[f32], centroids: &Dataset) -> (u32, u32) {
    let (mut first, mut second) = ((u32::MAX, f64::INFINITY), (u32::MAX, f64::INFINITY));
    for (c, centroid) in centroids.rows().enumerate() {
        let d = l2_sq_f64(row, centroid);
        if d < first.1 {
            second = first;
            first = (c as u32, d);
        } else if d < second.1 {
            second = (c as u32, d);
        }
    }
    (first.0, second.0)
}

fn nearest_assignments(dataset: &Dataset, centroids: &Dataset) -> Vec<(u32, f64)> {
    dataset
        .as_slice()
        .par_chunks(CHUNK_ROWS * dataset.dim())
        .flat_map_iter(|chunk| {
            chunk
                .chunks_exact(dataset.dim())
                .map(|row| nearest(row, centroids))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Result of a K-Means run.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: Dataset,
    /// Inertia (sum of squared distances to the assigned centroid) after the
    /// assignment step of each iteration.
    pub inertia: Vec<f64>,
    pub iterations: usize,
    /// Whether an iteration left every assignment unchanged.
    pub converged: bool,
}

/// Lloyd's algorithm with k-means++ seeding. Stops after `max_iters`
/// assignment steps or at an assignment fixpoint. Empty clusters are
/// re-seeded with the farthest point of the largest cluster.
pub fn kmeans(dataset: &Dataset, partitions: usize, max_iters: usize, seed: u64) -> Result<KMeans> {
    let n = dataset.len();
    let dim = dataset.dim();
    if partitions == 0 || partitions > n {
        return Err(invalid(format!("B={partitions} must be in 1..={n}")));
    }
    if max_iters == 0 {
        return Err(invalid("max_iters must be at least 1"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(dataset, partitions, &mut rng);
    let mut assignment: Vec<u32> = Vec::new();
    let mut inertia = Vec::with_capacity(max_iters);
    let mut converged = false;

    for _ in 0..max_iters {
        let cents = Dataset::new(dim, centroids.clone())?;
        let next = nearest_assignments(dataset, &cents);
        inertia.push(chunked_sum(next.iter().map(|&(_, d)| d)));
        let labels: Vec<u32> = next.iter().map(|&(c, _)| c).collect();
        if labels == assignment {
            converged = true;
            break;
        }
        assignment = labels;
        centroids = update_centroids(dataset, &assignment, partitions);
        repair_empty(dataset, &assignment, &mut centroids, partitions);
    }

    Ok(KMeans {
        centroids: Dataset::new(dim, centroids)?,
        iterations: inertia.len(),
        inertia,
        converged,
    })
}

fn chunked_sum(values: impl Iterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.collect();
    values
        .chunks(CHUNK_ROWS)
        .map(|c| c.iter().sum::<f64>())
        .sum()
}

fn plus_plus_seeds(dataset: &Dataset, partitions: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = dataset.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut seeds = dataset.row(first).to_vec();
    let mut min_d: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| l2_sq_f64(dataset.row(i), dataset.row(first)))
        .collect();

    for _ in 1..partitions {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &d) in min_d.iter().enumerate() {
                if d > 0.0 {
                    if target < d {
                        pick = Some(i);
                        break;
                    }
                    target -= d;
                }
            }
            // Rounding can exhaust `target` past the last positive weight.
            pick.unwrap_or_else(|| min_d.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            // Every remaining point coincides with a seed.
            chosen.iter().position(|&c| !c).expect("partitions <= n")
        };
        chosen[pick] = true;
        let seed_row = dataset.row(pick);
        seeds.extend_from_slice(seed_row);
        min_d
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, d)| *d = d.min(l2_sq_f64(dataset.row(i), seed_row)));
    }
    seeds
}

fn update_centroids(dataset: &Dataset, assignment: &[u32], partitions: usize) -> Vec<f32> {
    let dim = dataset.dim();
    let partials: Vec<(Vec<f64>, Vec<usize>)> = dataset
        .as_slice()
        .par_chunks(CHUNK_ROWS * dim)
        .zip(assignment.par_chunks(CHUNK_ROWS))
        .map(|(rows, labels)| {
            let mut sums = vec![0.0f64; partitions * dim];
            let mut counts = vec![0usize; partitions];
            for (row, &c) in rows.chunks_exact(dim).zip(labels) {
                let c = c as usize;
                counts[c] += 1;
                for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row) {
                    *s += f64::from(v);
                }
            }
            (sums, counts)
        })
        .collect();

    let mut sums = vec![0.0f64; partitions * dim];
    let mut counts = vec![0usize; partitions];
    for (s, c) in partials {
        sums.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        counts.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
    }
    let mut out = vec![0.0f32; partitions * dim];
    for c in 0..partitions {
        if counts[c] == 0 {
            // Marked with NaN, then re-seeded by `repair_empty`.
            out[c * dim..(c + 1) * dim].fill(f32::NAN);
            continue;
        }
        for j in 0..dim {
            out[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
        }
    }
    out
}

fn repair_empty(dataset: &Dataset, assignment: &[u32], centroids: &mut [f32], partitions: usize) {
    let dim = dataset.dim();
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); partitions];
    let empty: Vec<usize> = (0..partitions)
        .filter(|&c| centroids[c * dim].is_nan())
        .collect();
    if empty.is_empty() {
        return;
    }
    for (id, &c) in assignment.iter().enumerate() {
        members[c as usize].push(id as u32);
    }
    for e in empty {
        let largest = (0..partitions)
            .max_by(|&a, &b| members[a].len().cmp(&members[b].len()).then(b.cmp(&a)))
            .expect("partitions >= 1");
        let centre = centroids[largest * dim..(largest + 1) * dim].to_vec();
        let (pos, _) = members[largest]
            .iter()
            .enumerate()
            .map(|(pos, &id)| (pos, l2_sq_f64(dataset.row(id as usize), &centre)))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        let moved = members[largest].swap_remove(pos);
        centroids[e * dim..(e + 1) * dim].copy_from_slice(dataset.row(moved as usize));
        members[e].push(moved);

        let mut mean = vec![0.0f64; dim];
        for &id in &members[largest] {
            for (m, &v) in mean.iter_mut().zip(dataset.row(id as usize)) {
                *m += f64::from(v);
            }
        }
        let cnt = members[largest].len() as f64;
        for (j, m) in mean.into_iter().enumerate() {
            centroids[largest * dim + j] = (m / cnt) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{gen_mixture, SyntheticSpec};

    #[test]
    fn hard_assignment_tie_goes_to_lower_index() {
        let centroids = Dataset::from_rows(&[[5.0f32], [-1.0], [1.0], [9.0]]).unwrap();
        let ds = Dataset::from_rows(&[[0.0f32], [1.0], [9.0]]).unwrap();
        let layout = PartitionLayout::assign_hard(&ds, &centroids).unwrap();
        assert_eq!(layout.homes(), &[1, 2, 3]);
        assert_eq!(layout.total_entries(), 3);
        assert_eq!(layout.kind(), LayoutKind::Hard);
    }

    #[test]
    fn fuzzy_with_two_partitions_stores_everything_twice() {
        let centroids = Dataset::from_rows(&[[0.0f32], [10.0]]).unwrap();
        let ds = Dataset::from_rows(&[[0.0f32], [3.0], [8.0]]).unwrap();
        let layout = PartitionLayout::assign_fuzzy(&ds, &centroids).unwrap();
        assert_eq!(layout.members(0), &[0, 1, 2]);
        assert_eq!(layout.members(1), &[0, 1, 2]);
        assert_eq!(layout.total_entries(), 6);
        assert_eq!(layout.homes(), &[0, 0, 1]);

        let single = Dataset::from_rows(&[[0.0f32]]).unwrap();
        assert!(PartitionLayout::assign_fuzzy(&ds, &single).is_err());
    }

    #[test]
    fn fuzzy_uses_the_two_nearest() {
        let centroids =
            Dataset::from_rows(&[[0.0f32], [10.0], [20.0], [3.0], [30.0], [40.0], [50.0], [6.0]])
                .unwrap();
        let ds = Dataset::from_rows(&[[4.4f32]]).unwrap();
        let layout = PartitionLayout::assign_fuzzy(&ds, &centroids).unwrap();
        let holders: Vec<usize> = (0..8).filter(|&p| !layout.members(p).is_empty()).collect();
        assert_eq!(holders, vec![3, 7]);
    }

    #[test]
    fn centroid_distance_vector() {
        let centroids = Dataset::from_rows(&[[1.0f32, 1.0], [0.0, 0.0]]).unwrap();
        let d = centroid_distances(&[1.0, 1.0], &centroids).unwrap();
        assert_eq!(d, vec![0.0, 2.0]);
        let one = Dataset::from_rows(&[[0.0f32, 0.0]]).unwrap();
        assert_eq!(centroid_distances(&[1.0, 0.0], &one).unwrap().len(), 1);
        assert!(centroid_distances(&[1.0], &one).is_err());
    }

    #[test]
    fn kmeans_two_blobs() {
        let m = gen_mixture(&SyntheticSpec {
            n: 2000,
            dim: 2,
            clusters: 2,
            spread: 0.01,
            seed: 3,
        })
        .unwrap();
        let km = kmeans(&m.data, 2, 25, 1).unwrap();
        for mean in m.means.rows() {
            let best = km
                .centroids
                .rows()
                .map(|c| l2_sq(c, mean).sqrt())
                .fold(f32::INFINITY, f32::min);
            assert!(best < 0.05, "centroid off by {best}");
        }
        assert!(km.converged);
    }

    #[test]
    fn kmeans_with_b_equal_n() {
        let ds = Dataset::from_rows(&[[0.0f32, 1.0], [5.0, 5.0], [2.0, -1.0], [9.0, 0.0]]).unwrap();
        let km = kmeans(&ds, 4, 10, 9).unwrap();
        assert_eq!(*km.inertia.last().unwrap(), 0.0);
        let layout = PartitionLayout::assign_hard(&ds, &km.centroids).unwrap();
        assert!(layout.all_members().iter().all(|m| m.len() == 1));
    }

    #[test]
    fn kmeans_deterministic_and_validated() {
        let ds = crate::synthetic::gen_synthetic(3000, 4, 5, 0.05, 2).unwrap();
        let a = kmeans(&ds, 8, 25, 5).unwrap();
        let b = kmeans(&ds, 8, 25, 5).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.inertia, b.inertia);
        assert!(kmeans(&ds, 3001, 25, 5).is_err());
    }

    #[test]
    fn empty_cluster_reseeded_from_farthest_point_of_largest() {
        let ds = Dataset::from_rows(&[[0.0f32], [1.0], [2.0], [10.0]]).unwrap();
        let assignment = vec![0u32; 4];
        let mut centroids = update_centroids(&ds, &assignment, 2);
        assert!(centroids[1].is_nan());
        repair_empty(&ds, &assignment, &mut centroids, 2);
        assert_eq!(centroids, vec![1.0, 10.0]);
    }

    #[test]
    fn validate_rejects_broken_layouts() {
        let c = Dataset::from_rows(&[[0.0f32], [1.0]]).unwrap();
        assert!(PartitionLayout::from_parts(LayoutKind::Hard, c.clone(), vec![vec![0], vec![1]], vec![0, 1]).is_ok());
        assert!(PartitionLayout::from_parts(LayoutKind::Hard, c.clone(), vec![vec![0, 1], vec![1]], vec![0, 1]).is_err());
        assert!(PartitionLayout::from_parts(LayoutKind::Fuzzy2, c.clone(), vec![vec![0], vec![1]], vec![0, 1]).is_err());
        assert!(PartitionLayout::from_parts(LayoutKind::Hard, c, vec![vec![0], vec![2]], vec![0, 1]).is_err());
    }
}
