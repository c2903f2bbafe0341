//! Learned redundancy: pick the points whose predicted fan-out is largest
//! (likely long-tail neighbors of some query) and store one replica of each
//! in the partition the probing model ranks highest after its home.
//!
//! The replica-partition oracle and the curves at the bottom of this module
//! are brute-force analyses for desk-scale data only.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{argsort, argsort_desc, Dataset};
use crate::error::{invalid, Error, Result};
use crate::model::{predicted_nprobe, ProbingModel};
use crate::oracle::{knn_count_distribution, scan_knn};
use crate::partition::{centroid_distances, LayoutKind, PartitionLayout};

/// Threshold used to score candidates, independent of the query-time sigma.
pub const PICK_SIGMA: f32 = 0.5;

/// Points to duplicate and the partition receiving each replica.
#[derive(Debug, Clone, PartialEq)]
pub struct RedundancyPlan {
    pub picks: Vec<u32>,
    pub targets: Vec<u32>,
    /// Percentage of points duplicated.
    pub eta: f64,
}

impl RedundancyPlan {
    pub fn len(&self) -> usize {
        self.picks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.picks.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.picks.iter().copied().zip(self.targets.iter().copied())
    }
}

/// `floor(eta / 100 * n)`, at least 1 for any `eta > 0`.
pub fn pick_count(n: usize, eta: f64) -> Result<usize> {
    if !(eta > 0.0 && eta <= 100.0) {
        return Err(invalid(format!("eta={eta} must be in (0, 100]")));
    }
    let raw = (eta * n as f64 / 100.0).floor() as usize;
    Ok(raw.clamp(1, n))
}

/// Model probabilities for every dataset row (row-major `n x B`).
pub fn predict_rows(model: &ProbingModel, dataset: &Dataset, layout: &PartitionLayout) -> Result<Vec<f32>> {
    if dataset.dim() != layout.dim() {
        return Err(Error::DimensionMismatch {
            expected: layout.dim(),
            actual: dataset.dim(),
        });
    }
    let centroids = layout.centroids();
    let dists: Vec<f32> = dataset
        .as_slice()
        .par_chunks(dataset.dim() * 1024)
        .flat_map_iter(|chunk| {
            chunk
                .chunks_exact(dataset.dim())
                .flat_map(|row| centroid_distances(row, centroids).expect("dims checked by layout"))
                .collect::<Vec<_>>()
        })
        .collect();
    model.predict_batch(dataset.as_slice(), &dists)
}

/// Ranks rows by predicted nprobe at [`PICK_SIGMA`] (descending), then by
/// probability mass (descending), then by id, and keeps the top `count`.
pub fn pick_from_probs(probs: &[f32], partitions: usize, count: usize) -> Vec<u32> {
    let mut scored: Vec<(usize, f64, u32)> = probs
        .chunks_exact(partitions)
        .enumerate()
        .map(|(id, p)| {
            let mass: f64 = p.iter().map(|&v| f64::from(v)).sum();
            (predicted_nprobe(p, PICK_SIGMA), mass, id as u32)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(b.1.total_cmp(&a.1))
            .then(a.2.cmp(&b.2))
    });
    scored.truncate(count);
    scored.into_iter().map(|(_, _, id)| id).collect()
}

/// The ids within the upper `eta` percentile of predicted nprobe.
pub fn pick_candidates(model: &ProbingModel, dataset: &Dataset, layout: &PartitionLayout, eta: f64) -> Result<Vec<u32>> {
    let count = pick_count(dataset.len(), eta)?;
    let probs = predict_rows(model, dataset, layout)?;
    Ok(pick_from_probs(&probs, layout.partitions(), count))
}

/// The highest-probability partition unless it is `home`, in which case the
/// second highest. Ties go to the lower index.
pub fn choose_replica_partition(probs: &[f32], home: u32) -> Result<u32> {
    if probs.len() < 2 {
        return Err(invalid("replica choice needs at least 2 partitions"));
    }
    let (mut first, mut second) = (usize::MAX, usize::MAX);
    for (i, &p) in probs.iter().enumerate() {
        if first == usize::MAX || p > probs[first] {
            second = first;
            first = i;
        } else if second == usize::MAX || p > probs[second] {
            second = i;
        }
    }
    Ok(if first as u32 != home { first as u32 } else { second as u32 })
}

/// Picks candidates and chooses one replica partition for each.
pub fn plan_redundancy(model: &ProbingModel, dataset: &Dataset, layout: &PartitionLayout, eta: f64) -> Result<RedundancyPlan> {
    if layout.kind() != LayoutKind::Hard {
        return Err(invalid("redundancy is planned over a hard layout"));
    }
    if layout.partitions() < 2 {
        return Err(invalid("redundancy needs at least 2 partitions"));
    }
    let count = pick_count(dataset.len(), eta)?;
    let b = layout.partitions();
    let probs = predict_rows(model, dataset, layout)?;
    let picks = pick_from_probs(&probs, b, count);
    let targets = picks
        .iter()
        .map(|&id| {
            let home = layout.home(id).ok_or(Error::UnknownId(id))?;
            choose_replica_partition(&probs[id as usize * b..(id as usize + 1) * b], home)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RedundancyPlan { picks, targets, eta })
}

/// Adds one replica per pick. Home assignments are never moved, so the
/// result stores `N + |picks|` entries.
pub fn apply_redundancy(layout: &PartitionLayout, plan: &RedundancyPlan) -> Result<PartitionLayout> {
    if layout.kind() != LayoutKind::Hard {
        return Err(invalid("redundancy applies to a hard layout"));
    }
    if plan.picks.len() != plan.targets.len() {
        return Err(invalid("plan picks and targets differ in length"));
    }
    let mut seen = vec![false; layout.num_points()];
    for (id, target) in plan.pairs() {
        let home = layout.home(id).ok_or(Error::UnknownId(id))?;
        if std::mem::replace(&mut seen[id as usize], true) {
            return Err(invalid(format!("id {id} picked twice")));
        }
        if target as usize >= layout.partitions() {
            return Err(invalid(format!("target partition {target} out of range")));
        }
        if target == home {
            return Err(invalid(format!("replica target of id {id} equals its home {home}")));
        }
    }
    let pairs: Vec<(u32, u32)> = plan.pairs().collect();
    layout.with_replicas(&pairs)
}

/// Long-tail points found from sampled queries, each with the partitions
/// that held more than one kNN of a query for which it was long-tail.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplicaOracle {
    pub points: Vec<u32>,
    pub replicas: Vec<Vec<u32>>,
}

impl ReplicaOracle {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// For each query row `w` in `query_ids` (a data point; its own row is
/// excluded from its kNN), every kNN `v` alone in its partition is a
/// long-tail point, and the partitions with count > 1 are replica partitions
/// of `v`. Sets are unioned over queries.
pub fn replica_partitions(dataset: &Dataset, layout: &PartitionLayout, query_ids: &[u32], k: usize) -> Result<ReplicaOracle> {
    if layout.kind() != LayoutKind::Hard {
        return Err(invalid("replica partitions are defined over a hard layout"));
    }
    if k == 0 || k >= dataset.len() {
        return Err(invalid(format!("k={k} out of range")));
    }
    type Found = Vec<(u32, Vec<u32>)>;
    let per_query: Vec<Result<Found>> = query_ids
        .par_iter()
        .map(|&w| {
            if w as usize >= dataset.len() {
                return Err(Error::UnknownId(w));
            }
            let knn = scan_knn(dataset, dataset.row(w as usize), k, Some(w));
            let dist = knn_count_distribution(layout, &knn.ids)?;
            let rich: Vec<u32> = dist
                .counts
                .iter()
                .enumerate()
                .filter_map(|(i, &c)| (c > 1).then_some(i as u32))
                .collect();
            Ok(knn
                .ids
                .iter()
                .filter(|&&v| dist.counts[layout.home(v).unwrap() as usize] == 1)
                .map(|&v| (v, rich.clone()))
                .collect())
        })
        .collect();
    let mut merged: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for entries in per_query {
        for (v, parts) in entries? {
            merged.entry(v).or_default().extend(parts);
        }
    }
    let mut oracle = ReplicaOracle::default();
    for (v, mut parts) in merged {
        parts.sort_unstable();
        parts.dedup();
        oracle.points.push(v);
        oracle.replicas.push(parts);
    }
    Ok(oracle)
}

/// Which ranking of partitions to evaluate.
#[derive(Debug, Clone, Copy)]
pub enum RankSource<'a> {
    Model(&'a ProbingModel),
    Distance,
}

fn rankings(source: RankSource<'_>, dataset: &Dataset, layout: &PartitionLayout, ids: &[u32]) -> Result<Vec<Vec<u32>>> {
    let rows = dataset.select(ids)?;
    let b = layout.partitions();
    let dists: Vec<f32> = rows
        .rows()
        .map(|r| centroid_distances(r, layout.centroids()))
        .collect::<Result<Vec<_>>>()?
        .concat();
    Ok(match source {
        RankSource::Distance => dists.chunks_exact(b).map(argsort).collect(),
        RankSource::Model(model) => model
            .predict_batch(rows.as_slice(), &dists)?
            .chunks_exact(b)
            .map(argsort_desc)
            .collect(),
    })
}

/// Mean replica recall at each top-M cutoff for one source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub m: usize,
    pub value: f64,
}

fn non_empty(oracle: &ReplicaOracle) -> (Vec<u32>, Vec<&Vec<u32>>) {
    oracle
        .points
        .iter()
        .zip(&oracle.replicas)
        .filter(|(_, r)| !r.is_empty())
        .map(|(&p, r)| (p, r))
        .unzip()
}

/// `|top-M ∩ replicas| / |replicas|` averaged over long-tail points, for the
/// given ranking and for a seeded random ranking control. Points with an
/// empty replica set are skipped.
pub fn replica_recall_curve(
    source: RankSource<'_>,
    dataset: &Dataset,
    layout: &PartitionLayout,
    oracle: &ReplicaOracle,
    ms: &[usize],
    seed: u64,
) -> Result<(Vec<CurvePoint>, Vec<CurvePoint>)> {
    let (points, replicas) = non_empty(oracle);
    if points.is_empty() {
        return Err(invalid("no long-tail points with replica partitions"));
    }
    let ranked = rankings(source, dataset, layout, &points)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random: Vec<Vec<u32>> = points
        .iter()
        .map(|_| {
            let mut perm: Vec<u32> = (0..layout.partitions() as u32).collect();
            perm.shuffle(&mut rng);
            perm
        })
        .collect();
    let curve = |orders: &[Vec<u32>]| {
        ms.iter()
            .map(|&m| {
                let total: f64 = orders
                    .iter()
                    .zip(&replicas)
                    .map(|(order, rep)| {
                        let top = &order[..m.min(order.len())];
                        let hit = rep.iter().filter(|p| top.contains(p)).count();
                        hit as f64 / rep.len() as f64
                    })
                    .sum();
                CurvePoint {
                    m,
                    value: total / orders.len() as f64,
                }
            })
            .collect::<Vec<_>>()
    };
    Ok((curve(&ranked), curve(&random)))
}

/// Fraction of long-tail points whose top-M partitions contain at least one
/// replica partition.
pub fn hit_rate_curve(
    source: RankSource<'_>,
    dataset: &Dataset,
    layout: &PartitionLayout,
    oracle: &ReplicaOracle,
    ms: &[usize],
) -> Result<Vec<CurvePoint>> {
    let (points, replicas) = non_empty(oracle);
    if points.is_empty() {
        return Err(invalid("no long-tail points with replica partitions"));
    }
    let ranked = rankings(source, dataset, layout, &points)?;
    Ok(ms
        .iter()
        .map(|&m| {
            let hits = ranked
                .iter()
                .zip(&replicas)
                .filter(|(order, rep)| order[..m.min(order.len())].iter().any(|p| rep.contains(p)))
                .count();
            CurvePoint {
                m,
                value: hits as f64 / ranked.len() as f64,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pick_count_sizes() {
        assert_eq!(pick_count(1_000_000, 3.0).unwrap(), 30_000);
        assert_eq!(pick_count(100_000, 3.0).unwrap(), 3_000);
        assert_eq!(pick_count(10, 100.0).unwrap(), 10);
        assert_eq!(pick_count(10, 0.01).unwrap(), 1);
        assert!(pick_count(10, 0.0).is_err());
        assert!(pick_count(10, 100.5).is_err());
    }

    #[test]
    fn replica_rule() {
        let probs = [0.9, 0.7, 0.1];
        assert_eq!(choose_replica_partition(&probs, 0).unwrap(), 1);
        assert_eq!(choose_replica_partition(&probs, 2).unwrap(), 0);
        assert_eq!(choose_replica_partition(&[0.5, 0.5, 0.5], 0).unwrap(), 1);
        assert_eq!(choose_replica_partition(&[0.5, 0.5, 0.5], 1).unwrap(), 0);
        assert_eq!(choose_replica_partition(&[0.1, 0.2, 0.9], 2).unwrap(), 1);
        assert!(choose_replica_partition(&[1.0], 0).is_err());
    }

    #[test]
    fn picks_order_by_fanout_then_mass_then_id() {
        let probs = [
            0.9, 0.1, 0.1, // id 0: nprobe 1
            0.9, 0.6, 0.1, // id 1: nprobe 2, mass 1.6
            0.9, 0.6, 0.3, // id 2: nprobe 2, mass 1.8
            0.9, 0.6, 0.1, // id 3: same as id 1
        ];
        assert_eq!(pick_from_probs(&probs, 3, 4), vec![2, 1, 3, 0]);
        assert_eq!(pick_from_probs(&probs, 3, 2), vec![2, 1]);
    }

    fn hard() -> PartitionLayout {
        let centroids = Dataset::from_rows(&[[0.0f32], [10.0], [20.0]]).unwrap();
        let ds = Dataset::from_rows(&[[0.0f32], [1.0], [9.0], [11.0], [19.0]]).unwrap();
        PartitionLayout::assign_hard(&ds, &centroids).unwrap()
    }

    #[test]
    fn apply_keeps_homes_and_adds_one_entry_per_pick() {
        let layout = hard();
        let empty = RedundancyPlan { picks: vec![], targets: vec![], eta: 0.0 };
        let same = apply_redundancy(&layout, &empty).unwrap();
        assert_eq!(same.all_members(), layout.all_members());

        let plan = RedundancyPlan { picks: vec![2], targets: vec![0], eta: 20.0 };
        let red = apply_redundancy(&layout, &plan).unwrap();
        assert_eq!(red.kind(), LayoutKind::Redundant);
        assert_eq!(red.total_entries(), layout.total_entries() + 1);
        assert_eq!(red.members(0), &[0, 1, 2]);
        assert_eq!(red.members(1), layout.members(1));
        assert_eq!(red.homes(), layout.homes());
    }

    #[test]
    fn apply_rejects_inconsistent_plans() {
        let layout = hard();
        let home = RedundancyPlan { picks: vec![2], targets: vec![1], eta: 1.0 };
        assert!(apply_redundancy(&layout, &home).is_err());
        let dup = RedundancyPlan { picks: vec![2, 2], targets: vec![0, 2], eta: 1.0 };
        assert!(apply_redundancy(&layout, &dup).is_err());
        let range = RedundancyPlan { picks: vec![2], targets: vec![3], eta: 1.0 };
        assert!(apply_redundancy(&layout, &range).is_err());
        let unknown = RedundancyPlan { picks: vec![7], targets: vec![0], eta: 1.0 };
        assert!(apply_redundancy(&layout, &unknown).is_err());
    }

    #[test]
    fn replica_oracle_on_a_line() {
        // Partition 0 holds {0,1,2}, partition 1 holds {3}; the kNN (k=3) of
        // point 2 are {1, 3, 0}: counts [2, 1] so 3 is long-tail with
        // replica partition 0.
        let centroids = Dataset::from_rows(&[[0.0f32], [10.0]]).unwrap();
        let ds = Dataset::from_rows(&[[0.0f32], [2.0], [4.0], [6.0]]).unwrap();
        let layout = PartitionLayout::assign_hard(&ds, &centroids).unwrap();
        assert_eq!(layout.homes(), &[0, 0, 0, 1]);
        let oracle = replica_partitions(&ds, &layout, &[2], 3).unwrap();
        assert_eq!(oracle.points, vec![3]);
        assert_eq!(oracle.replicas, vec![vec![0]]);

        let ms = [1, 2];
        let hits = hit_rate_curve(RankSource::Distance, &ds, &layout, &oracle, &ms).unwrap();
        // Point 3 ranks partition 1 (its home) first, partition 0 second.
        assert_eq!(hits[0].value, 0.0);
        assert_eq!(hits[1].value, 1.0);
        let (dist_curve, random) =
            replica_recall_curve(RankSource::Distance, &ds, &layout, &oracle, &ms, 0).unwrap();
        assert_eq!(dist_curve[1].value, 1.0);
        assert_eq!(random[1].value, 1.0);
    }

    fn line_setup(partitions: usize) -> (Dataset, PartitionLayout, ProbingModel) {
        let rows: Vec<[f32; 1]> = (0..200).map(|i| [i as f32 * 0.5]).collect();
        let ds = Dataset::from_rows(&rows).unwrap();
        let cents: Vec<[f32; 1]> = (0..partitions).map(|i| [i as f32 * 100.0 / partitions as f32]).collect();
        let layout = PartitionLayout::assign_hard(&ds, &Dataset::from_rows(&cents).unwrap()).unwrap();
        let meta = crate::model::ModelMeta {
            dim: 1,
            partitions,
            arch: crate::model::Architecture { query_widths: vec![4], dist_widths: vec![4], head_hidden: vec![] },
            sigma_train: 0.5,
        };
        (ds, layout, ProbingModel::new(meta, 5).unwrap())
    }

    #[test]
    fn model_top_one_hits_its_argmax() {
        let (ds, layout, model) = line_setup(4);
        let points: Vec<u32> = (0..200).step_by(7).collect();
        let probs = predict_rows(&model, &ds.select(&points).unwrap(), &layout).unwrap();
        let oracle = ReplicaOracle {
            replicas: probs.chunks_exact(4).map(|p| vec![argsort_desc(p)[0]]).collect(),
            points,
        };
        let ms = [1, 4];
        let hits = hit_rate_curve(RankSource::Model(&model), &ds, &layout, &oracle, &ms).unwrap();
        assert_eq!(hits[0].value, 1.0);
        assert_eq!(hits[1].value, 1.0);
        let (curve, _) = replica_recall_curve(RankSource::Model(&model), &ds, &layout, &oracle, &ms, 1).unwrap();
        assert_eq!(curve[0].value, 1.0);
    }

    #[test]
    fn random_control_tracks_m_over_b() {
        let (ds, layout, model) = line_setup(20);
        let points: Vec<u32> = (0..200).collect();
        let oracle = ReplicaOracle { replicas: points.iter().map(|&p| vec![p % 20]).collect(), points };
        let ms = [1, 5, 10, 20];
        let (_, random) = replica_recall_curve(RankSource::Model(&model), &ds, &layout, &oracle, &ms, 3).unwrap();
        for p in &random {
            let expect = p.m as f64 / 20.0;
            assert!((p.value - expect).abs() < 0.1, "M={} got {}", p.m, p.value);
        }
        assert_eq!(random[3].value, 1.0);
        let full = hit_rate_curve(RankSource::Distance, &ds, &layout, &oracle, &[20]).unwrap();
        assert_eq!(full[0].value, 1.0);
    }
}
