//! Query planning and execution over a partition layout, plus the index
//! file that persists a layout with its redundancy plan and model.

use std::collections::HashSet;
use std::path::Path;

use crate::codec::write_all;
use crate::dataset::{argsort, argsort_desc, l2_sq, Dataset};
use crate::error::{format_err, invalid, Error, Result};
use crate::model::{decode_model, encode_model, ProbingModel};
use crate::oracle::{KnnResult, TopK};
use crate::partition::{centroid_distances, LayoutKind, PartitionLayout};
use crate::redundancy::RedundancyPlan;

/// Default query-time probability threshold.
pub const DEFAULT_SIGMA: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// Partitions whose probability exceeds the threshold.
    LiraSigma(f32),
    /// The `n` most probable partitions.
    LiraTopN(usize),
    /// The `n` nearest centroids.
    Ivf(usize),
    /// Every partition.
    Exhaustive,
}

/// Partitions to probe, in probing order.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub partitions: Vec<u32>,
    /// Model probabilities for every partition, when a model planned it.
    pub probs: Option<Vec<f32>>,
    pub strategy: Strategy,
}

impl QueryPlan {
    pub fn nprobe(&self) -> usize {
        self.partitions.len()
    }
}

/// Threshold plan from precomputed probabilities: partitions with
/// `p > sigma`, most probable first, falling back to the argmax when none
/// clears the threshold.
pub fn plan_from_probs(probs: Vec<f32>, sigma: f32) -> QueryPlan {
    let order = argsort_desc(&probs);
    let keep = order.iter().take_while(|&&b| probs[b as usize] > sigma).count().max(1);
    QueryPlan {
        partitions: order[..keep].to_vec(),
        probs: Some(probs),
        strategy: Strategy::LiraSigma(sigma),
    }
}

pub fn plan_lira(model: &ProbingModel, query: &[f32], centroids: &Dataset, sigma: f32) -> Result<QueryPlan> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(invalid(format!("sigma={sigma} must be in (0, 1)")));
    }
    let dists = centroid_distances(query, centroids)?;
    Ok(plan_from_probs(model.forward(query, &dists)?, sigma))
}

pub fn plan_lira_topn(model: &ProbingModel, query: &[f32], centroids: &Dataset, nprobe: usize) -> Result<QueryPlan> {
    check_nprobe(nprobe, centroids.len())?;
    let dists = centroid_distances(query, centroids)?;
    let probs = model.forward(query, &dists)?;
    let mut order = argsort_desc(&probs);
    order.truncate(nprobe);
    Ok(QueryPlan {
        partitions: order,
        probs: Some(probs),
        strategy: Strategy::LiraTopN(nprobe),
    })
}

/// The `nprobe` nearest centroids, nearest first.
pub fn plan_ivf(query: &[f32], centroids: &Dataset, nprobe: usize) -> Result<QueryPlan> {
    check_nprobe(nprobe, centroids.len())?;
    let mut order = argsort(&centroid_distances(query, centroids)?);
    order.truncate(nprobe);
    Ok(QueryPlan {
        partitions: order,
        probs: None,
        strategy: Strategy::Ivf(nprobe),
    })
}

pub fn plan_exhaustive(partitions: usize) -> QueryPlan {
    QueryPlan {
        partitions: (0..partitions as u32).collect(),
        probs: None,
        strategy: Strategy::Exhaustive,
    }
}

fn check_nprobe(nprobe: usize, partitions: usize) -> Result<()> {
    if nprobe == 0 || nprobe > partitions {
        return Err(invalid(format!("nprobe={nprobe} must be in 1..={partitions}")));
    }
    Ok(())
}

/// Intra-partition search. Implementations push candidates from one
/// partition into the shared collector and report how many stored entries
/// they visited.
pub trait PartitionSearcher: Sync {
    fn search_partition(&self, dataset: &Dataset, members: &[u32], query: &[f32], dedup: bool, top: &mut TopK) -> usize;
}

/// Scans every member of the partition.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExhaustiveScan;

impl PartitionSearcher for ExhaustiveScan {
    #[inline]
    fn search_partition(&self, dataset: &Dataset, members: &[u32], query: &[f32], dedup: bool, top: &mut TopK) -> usize {
        if dedup {
            for &id in members {
                top.push_unique(id, l2_sq(query, dataset.row(id as usize)));
            }
        } else {
            for &id in members {
                top.push(id, l2_sq(query, dataset.row(id as usize)));
            }
        }
        members.len()
    }
}

/// Work done by one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScanStats {
    /// Stored entries visited, replicas counted per visit.
    pub cmp: usize,
    pub nprobe: usize,
}

/// Per-query evaluation record.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QueryMetrics {
    pub recall_at_k: f64,
    pub cmp: usize,
    pub nprobe: usize,
}

impl QueryMetrics {
    pub fn measure(result: &KnnResult, stats: ScanStats, gt: &KnnResult, k: usize) -> Result<Self> {
        Ok(Self {
            recall_at_k: recall_at_k(result, gt, k)?,
            cmp: stats.cmp,
            nprobe: stats.nprobe,
        })
    }
}

fn check_plan(layout: &PartitionLayout, plan: &QueryPlan) -> Result<()> {
    if plan.partitions.is_empty() {
        return Err(invalid("empty query plan"));
    }
    let mut seen = vec![false; layout.partitions()];
    for &p in &plan.partitions {
        let slot = seen
            .get_mut(p as usize)
            .ok_or_else(|| invalid(format!("plan names partition {p} of {}", layout.partitions())))?;
        if std::mem::replace(slot, true) {
            return Err(invalid(format!("plan probes partition {p} twice")));
        }
    }
    Ok(())
}

/// Scans the planned partitions with `searcher` and returns the top-`k`
/// distinct ids (fewer if fewer candidates exist).
pub fn search_with<S: PartitionSearcher>(
    searcher: &S,
    layout: &PartitionLayout,
    dataset: &Dataset,
    plan: &QueryPlan,
    query: &[f32],
    k: usize,
) -> Result<(KnnResult, ScanStats)> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if query.len() != dataset.dim() || layout.dim() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            actual: query.len(),
        });
    }
    check_plan(layout, plan)?;
    let dedup = layout.kind() != LayoutKind::Hard;
    let mut top = TopK::new(k);
    let mut cmp = 0;
    for &p in &plan.partitions {
        cmp += searcher.search_partition(dataset, layout.members(p as usize), query, dedup, &mut top);
    }
    Ok((
        top.into_result(),
        ScanStats {
            cmp,
            nprobe: plan.partitions.len(),
        },
    ))
}

pub fn search(
    layout: &PartitionLayout,
    dataset: &Dataset,
    plan: &QueryPlan,
    query: &[f32],
    k: usize,
) -> Result<(KnnResult, ScanStats)> {
    search_with(&ExhaustiveScan, layout, dataset, plan, query, k)
}

/// `|ids(result) ∩ ids(gt[..k])| / k`.
pub fn recall_at_k(result: &KnnResult, gt: &KnnResult, k: usize) -> Result<f64> {
    if k == 0 || gt.ids.len() < k {
        return Err(invalid(format!(
            "ground truth has {} ids, k={k}",
            gt.ids.len()
        )));
    }
    let truth: HashSet<u32> = gt.ids[..k].iter().copied().collect();
    let hits = result.ids.iter().take(k).filter(|id| truth.contains(id)).count();
    Ok(hits as f64 / k as f64)
}

/// A layout with its provenance: the dataset fingerprint, the redundancy
/// plan that produced it (if any) and an embedded probing model (if any).
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    pub fingerprint: u64,
    pub layout: PartitionLayout,
    pub plan: Option<RedundancyPlan>,
    pub model: Option<ProbingModel>,
}

pub const INDEX_MAGIC: &[u8; 4] = b"LIRA";
pub const INDEX_VERSION: u32 = 1;

impl Index {
    /// Serializes as:
    ///
    /// ```text
    /// "LIRA" | version u32 | fingerprint u64 | B u32 | d u32 | kind u32 | N u32
    /// | B x (i32 d | d x f32)                  centroids, fvecs-style
    /// | B x (u32 len | len x u32)              member lists
    /// | N x u32                                home partition per id
    /// | u32 has_plan [| f64 eta | u32 n | n x (u32 id, u32 target)]
    /// | u32 has_model [| u64 len | len bytes of a model file]
    /// ```
    pub fn encode(&self) -> Vec<u8> {
        let layout = &self.layout;
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        for v in [
            layout.partitions() as u32,
            layout.dim() as u32,
            layout.kind().code(),
            layout.num_points() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for row in layout.centroids().rows() {
            out.extend_from_slice(&(row.len() as i32).to_le_bytes());
            row.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        for list in layout.all_members() {
            out.extend_from_slice(&(list.len() as u32).to_le_bytes());
            list.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        layout.homes().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        match &self.plan {
            Some(plan) => {
                out.extend_from_slice(&1u32.to_le_bytes());
                out.extend_from_slice(&plan.eta.to_le_bytes());
                out.extend_from_slice(&(plan.len() as u32).to_le_bytes());
                for (id, target) in plan.pairs() {
                    out.extend_from_slice(&id.to_le_bytes());
                    out.extend_from_slice(&target.to_le_bytes());
                }
            }
            None => out.extend_from_slice(&0u32.to_le_bytes()),
        }
        match &self.model {
            Some(model) => {
                let blob = encode_model(model);
                out.extend_from_slice(&1u32.to_le_bytes());
                out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
                out.extend_from_slice(&blob);
            }
            None => out.extend_from_slice(&0u32.to_le_bytes()),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != INDEX_MAGIC {
            return Err(format_err(0, "bad magic, not an index file"));
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::Version {
                found: version,
                expected: INDEX_VERSION,
            });
        }
        let fingerprint = r.u64()?;
        let b = r.u32()? as usize;
        let d = r.u32()? as usize;
        let at = r.pos;
        let kind = LayoutKind::from_code(r.u32()?).ok_or_else(|| format_err(at as u64, "unknown layout kind"))?;
        let n = r.u32()? as usize;

        let mut centroids = Vec::with_capacity(b.saturating_mul(d).min(1 << 24));
        for _ in 0..b {
            let at = r.pos;
            if r.u32()? as usize != d {
                return Err(format_err(at as u64, "centroid row dimension mismatch"));
            }
            for _ in 0..d {
                centroids.push(r.f32()?);
            }
        }
        let centroids = Dataset::new(d, centroids).map_err(|e| format_err(r.pos as u64, e.to_string()))?;
        let mut members = Vec::with_capacity(b.min(1 << 20));
        for _ in 0..b {
            let len = r.u32()? as usize;
            members.push(r.u32s(len)?);
        }
        let homes = r.u32s(n)?;
        let at = r.pos;
        let layout = PartitionLayout::from_parts(kind, centroids, members, homes)
            .map_err(|e| format_err(at as u64, e.to_string()))?;

        let plan = match r.u32()? {
            0 => None,
            1 => {
                let eta = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
                let len = r.u32()? as usize;
                let pairs = r.u32s(len.checked_mul(2).ok_or_else(|| format_err(r.pos as u64, "overflow"))?)?;
                Some(RedundancyPlan {
                    picks: pairs.iter().step_by(2).copied().collect(),
                    targets: pairs.iter().skip(1).step_by(2).copied().collect(),
                    eta,
                })
            }
            other => return Err(format_err(r.pos as u64 - 4, format!("bad plan flag {other}"))),
        };
        let model = match r.u32()? {
            0 => None,
            1 => {
                let len = r.u64()? as usize;
                let at = r.pos;
                let blob = r.take(len)?;
                Some(decode_model(blob).map_err(|e| format_err(at as u64, e.to_string()))?)
            }
            other => return Err(format_err(r.pos as u64 - 4, format!("bad model flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(format_err(r.pos as u64, "trailing bytes"));
        }
        Ok(Self {
            fingerprint,
            layout,
            plan,
            model,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_all(path.as_ref(), &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        match self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format_err(self.pos as u64, format!("truncated: need {n} more bytes"))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| format_err(self.pos as u64, "overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
