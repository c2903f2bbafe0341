//! Experiment harness: trade-off sweeps, probing-waste and long-tail studies,
//! per-query comparisons and training convergence, with CSV writers.
//!
//! Sweeps rely on one fact: every plan a method can produce is a prefix of a
//! single per-query partition ordering (nearest centroids first for rank
//! methods, most probable first for the model). Scanning that ordering once
//! and recording recall and cmp after each partition gives every grid point
//! at the price of one full scan per query.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::{argsort, argsort_desc, Dataset};
use crate::error::{invalid, Error, Result};
use crate::model::{ProbingModel, TrainLog};
use crate::oracle::{
    distance_rank_nprobe, knn_count_distribution, long_tail_stats, optimal_nprobe, probing_label, GroundTruth,
    KnnResult, TopK,
};
use crate::partition::{centroid_distances, kmeans, LayoutKind, PartitionLayout};
use crate::redundancy::CurvePoint;
use crate::retrieval::{plan_from_probs, search, QueryPlan, Strategy};

/// Version tag written into every CSV header line.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Per-query probing knob grid for threshold methods, largest first.
pub fn default_sigma_grid() -> Vec<f32> {
    (1..=19).rev().map(|i| i as f32 * 0.05).collect()
}

/// `1..=partitions`.
pub fn default_nprobe_grid(partitions: usize) -> Vec<usize> {
    (1..=partitions).collect()
}

/// How a method orders partitions for a query.
#[derive(Debug, Clone, Copy)]
pub enum Planner<'a> {
    /// Nearest centroid first.
    Rank,
    /// Most probable partition first.
    Model(&'a ProbingModel),
}

#[derive(Debug, Clone)]
pub struct Method<'a> {
    pub name: String,
    pub layout: &'a PartitionLayout,
    pub planner: Planner<'a>,
}

impl<'a> Method<'a> {
    pub fn new(name: impl Into<String>, layout: &'a PartitionLayout, planner: Planner<'a>) -> Self {
        Self {
            name: name.into(),
            layout,
            planner,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Knob {
    Nprobe(usize),
    Sigma(f32),
}

impl Knob {
    pub fn value(self) -> f64 {
        match self {
            Knob::Nprobe(n) => n as f64,
            Knob::Sigma(s) => f64::from(s),
        }
    }
}

/// Everything a sweep needs from one query under one method: its full
/// partition ordering and the recall and cmp after probing each prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryProfile {
    pub order: Vec<u32>,
    pub probs: Option<Vec<f32>>,
    /// `recall[i]` after probing `order[..=i]`.
    pub recall: Vec<f64>,
    /// `cmp[i]` after probing `order[..=i]`.
    pub cmp: Vec<usize>,
}

impl QueryProfile {
    /// Number of partitions the knob probes.
    pub fn prefix_len(&self, knob: Knob) -> Result<usize> {
        match knob {
            Knob::Nprobe(n) if n >= 1 && n <= self.order.len() => Ok(n),
            Knob::Nprobe(n) => Err(invalid(format!("nprobe={n} out of 1..={}", self.order.len()))),
            Knob::Sigma(s) => match &self.probs {
                Some(p) => Ok(plan_from_probs(p.clone(), s).partitions.len()),
                None => Err(invalid("sigma knob needs a model planner")),
            },
        }
    }

    /// The plan the knob produces, identical to what the retrieval planners
    /// return for this query.
    pub fn plan(&self, knob: Knob) -> Result<QueryPlan> {
        let n = self.prefix_len(knob)?;
        let strategy = match (knob, &self.probs) {
            (Knob::Sigma(s), _) => Strategy::LiraSigma(s),
            (Knob::Nprobe(n), Some(_)) => Strategy::LiraTopN(n),
            (Knob::Nprobe(n), None) => Strategy::Ivf(n),
        };
        Ok(QueryPlan {
            partitions: self.order[..n].to_vec(),
            probs: self.probs.clone(),
            strategy,
        })
    }
}

fn check_gt(gt: &GroundTruth, queries: &Dataset, k: usize) -> Result<()> {
    if gt.len() != queries.len() {
        return Err(invalid(format!("{} ground-truth rows for {} queries", gt.len(), queries.len())));
    }
    if k == 0 || gt.k < k {
        return Err(invalid(format!("ground truth holds k={}, asked for k={k}", gt.k)));
    }
    Ok(())
}

fn order_for(method: &Method<'_>, query: &[f32], dists: &[f32]) -> Result<(Vec<u32>, Option<Vec<f32>>)> {
    Ok(match method.planner {
        Planner::Rank => (argsort(dists), None),
        Planner::Model(model) => {
            let probs = model.forward(query, dists)?;
            (argsort_desc(&probs), Some(probs))
        }
    })
}

fn profile_one(method: &Method<'_>, dataset: &Dataset, query: &[f32], truth: &KnnResult, k: usize) -> Result<QueryProfile> {
    let layout = method.layout;
    let dists = centroid_distances(query, layout.centroids())?;
    let (order, probs) = order_for(method, query, &dists)?;
    let truth: HashSet<u32> = truth.ids[..k].iter().copied().collect();
    let dedup = layout.kind() != LayoutKind::Hard;
    let mut top = TopK::new(k);
    let mut recall = Vec::with_capacity(order.len());
    let mut cmp = Vec::with_capacity(order.len());
    let mut visited = 0;
    for &p in &order {
        let members = layout.members(p as usize);
        for &id in members {
            let d = crate::l2_sq(query, dataset.row(id as usize));
            if dedup {
                top.push_unique(id, d);
            } else {
                top.push(id, d);
            }
        }
        visited += members.len();
        let hits = top.ids().filter(|id| truth.contains(id)).count();
        recall.push(hits as f64 / k as f64);
        cmp.push(visited);
    }
    Ok(QueryProfile {
        order,
        probs,
        recall,
        cmp,
    })
}

/// Profiles every query under `method`.
pub fn profile_queries(method: &Method<'_>, dataset: &Dataset, queries: &Dataset, gt: &GroundTruth, k: usize) -> Result<Vec<QueryProfile>> {
    check_gt(gt, queries, k)?;
    if method.layout.dim() != dataset.dim() || queries.dim() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            actual: queries.dim(),
        });
    }
    if method.layout.num_points() != dataset.len() {
        return Err(invalid(format!(
            "method {} indexes {} points, dataset has {}",
            method.name,
            method.layout.num_points(),
            dataset.len()
        )));
    }
    (0..queries.len())
        .into_par_iter()
        .map(|i| profile_one(method, dataset, queries.row(i), &gt.results[i], k))
        .collect()
}

/// One row of a trade-off sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub method: String,
    pub knob: f64,
    pub mean_recall: f64,
    pub mean_cmp: f64,
    pub mean_nprobe: f64,
    /// Mean seconds per query for plan plus search, measured on the timing
    /// sample by running the real retrieval path.
    pub wall_clock_s: f64,
}

/// Aggregates profiles at each knob. Fails with [`Error::Invariant`] if
/// per-query recall drops as a rank method's nprobe grows, or the probed set
/// grows as sigma rises.
pub fn sweep_profiles(name: &str, profiles: &[QueryProfile], knobs: &[Knob]) -> Result<Vec<SweepRecord>> {
    if profiles.is_empty() {
        return Err(invalid("no queries to sweep"));
    }
    let mut out = Vec::with_capacity(knobs.len());
    for &knob in knobs {
        let (mut recall, mut cmp, mut nprobe) = (0.0, 0.0, 0.0);
        for p in profiles {
            let n = p.prefix_len(knob)?;
            recall += p.recall[n - 1];
            cmp += p.cmp[n - 1] as f64;
            nprobe += n as f64;
        }
        let q = profiles.len() as f64;
        out.push(SweepRecord {
            method: name.to_string(),
            knob: knob.value(),
            mean_recall: recall / q,
            mean_cmp: cmp / q,
            mean_nprobe: nprobe / q,
            wall_clock_s: 0.0,
        });
    }
    check_monotone(profiles, knobs)?;
    Ok(out)
}

fn check_monotone(profiles: &[QueryProfile], knobs: &[Knob]) -> Result<()> {
    for (qi, p) in profiles.iter().enumerate() {
        if p.recall.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Invariant(format!("query {qi}: recall fell as nprobe grew")));
        }
        let mut sigmas: Vec<f32> = knobs
            .iter()
            .filter_map(|k| match k {
                Knob::Sigma(s) => Some(*s),
                Knob::Nprobe(_) => None,
            })
            .collect();
        sigmas.sort_by(|a, b| a.total_cmp(b));
        let mut last = usize::MAX;
        for s in sigmas {
            let n = p.prefix_len(Knob::Sigma(s))?;
            if n > last {
                return Err(Error::Invariant(format!("query {qi}: probed set grew as sigma rose to {s}")));
            }
            last = n;
        }
    }
    Ok(())
}

/// Times plan plus search over `sample` queries for one knob. Returns mean
/// seconds per query.
fn time_knob(method: &Method<'_>, dataset: &Dataset, queries: &Dataset, sample: &[usize], knob: Knob, k: usize) -> Result<f64> {
    if sample.is_empty() {
        return Ok(0.0);
    }
    let start = Instant::now();
    for &i in sample {
        let q = queries.row(i);
        let plan = match (knob, method.planner) {
            (Knob::Sigma(s), Planner::Model(m)) => crate::retrieval::plan_lira(m, q, method.layout.centroids(), s)?,
            (Knob::Nprobe(n), Planner::Model(m)) => crate::retrieval::plan_lira_topn(m, q, method.layout.centroids(), n)?,
            (Knob::Nprobe(n), Planner::Rank) => crate::retrieval::plan_ivf(q, method.layout.centroids(), n)?,
            (Knob::Sigma(_), Planner::Rank) => return Err(invalid("sigma knob needs a model planner")),
        };
        std::hint::black_box(search(method.layout, dataset, &plan, q, k)?);
    }
    Ok(start.elapsed().as_secs_f64() / sample.len() as f64)
}

/// Evaluates each method over its knob grid. `timing_sample` queries (chosen
/// with `seed`) are re-run through the retrieval path to measure wall clock.
/// Rows are sorted by method name, then knob.
pub fn tradeoff_sweep(
    methods: &[(Method<'_>, Vec<Knob>)],
    dataset: &Dataset,
    queries: &Dataset,
    gt: &GroundTruth,
    k: usize,
    timing_sample: usize,
    seed: u64,
) -> Result<Vec<SweepRecord>> {
    let sample = sample_indices(queries.len(), timing_sample, seed);
    let mut out = Vec::new();
    for (method, knobs) in methods {
        if knobs.is_empty() {
            return Err(invalid(format!("empty knob grid for {}", method.name)));
        }
        let profiles = profile_queries(method, dataset, queries, gt, k)?;
        let mut rows = sweep_profiles(&method.name, &profiles, knobs)?;
        for (row, &knob) in rows.iter_mut().zip(knobs) {
            row.wall_clock_s = time_knob(method, dataset, queries, &sample, knob, k)?;
        }
        out.extend(rows);
    }
    out.sort_by(|a, b| a.method.cmp(&b.method).then(a.knob.total_cmp(&b.knob)));
    Ok(out)
}

/// Smallest mean cmp over the records of `method` whose mean recall reaches
/// `target`, with its knob. Grid points only, no interpolation.
pub fn min_cmp_at_recall(records: &[SweepRecord], method: &str, target: f64) -> Option<(f64, f64)> {
    records
        .iter()
        .filter(|r| r.method == method && r.mean_recall >= target)
        .map(|r| (r.knob, r.mean_cmp))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
}

/// Distinct indices in `0..n`, `min(count, n)` of them, ascending.
pub fn sample_indices(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.truncate(count.min(n));
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WasteRow {
    pub query: usize,
    pub nprobe_star: usize,
    pub nprobe_star_dist: usize,
    pub extra: usize,
}

/// Empirical CDF: `(value, fraction of rows <= value)` at each distinct value.
pub fn cdf(values: &[usize]) -> Vec<(usize, f64)> {
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len() as f64;
    let mut out: Vec<(usize, f64)> = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = (i + 1) as f64 / n,
            _ => out.push((x, (i + 1) as f64 / n)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct WasteReport {
    pub rows: Vec<WasteRow>,
    pub cdf_star: Vec<(usize, f64)>,
    pub cdf_dist: Vec<(usize, f64)>,
}

/// Per query: the fewest partitions covering its kNN, the partitions a
/// centroid-distance scan needs to cover them, and the difference.
pub fn probing_waste_report(queries: &Dataset, gt: &GroundTruth, layout: &PartitionLayout, k: usize) -> Result<WasteReport> {
    check_gt(gt, queries, k)?;
    let rows = (0..queries.len())
        .into_par_iter()
        .map(|i| {
            let dist = knn_count_distribution(layout, &gt.results[i].ids[..k])?;
            let order = argsort(&centroid_distances(queries.row(i), layout.centroids())?);
            let star = optimal_nprobe(&probing_label(&dist));
            let by_dist = distance_rank_nprobe(&dist, &order);
            Ok(WasteRow {
                query: i,
                nprobe_star: star,
                nprobe_star_dist: by_dist,
                extra: by_dist - star,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let stars: Vec<usize> = rows.iter().map(|r| r.nprobe_star).collect();
    let dists: Vec<usize> = rows.iter().map(|r| r.nprobe_star_dist).collect();
    Ok(WasteReport {
        cdf_star: cdf(&stars),
        cdf_dist: cdf(&dists),
        rows,
    })
}

/// Histogram of the smallest non-zero kNN count per query for one B.
/// `bins[c]` counts queries whose minimum is `c`; `bins[0]` is always 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTailHistogram {
    pub partitions: usize,
    pub bins: Vec<usize>,
}

/// Rebuilds K-Means and a hard layout for each B in `b_list`, then bins
/// every query's smallest non-zero kNN count.
pub fn long_tail_report(
    queries: &Dataset,
    gt: &GroundTruth,
    dataset: &Dataset,
    k: usize,
    b_list: &[usize],
    kmeans_iters: usize,
    seed: u64,
) -> Result<Vec<LongTailHistogram>> {
    check_gt(gt, queries, k)?;
    b_list
        .iter()
        .map(|&b| {
            let km = kmeans(dataset, b, kmeans_iters, seed)?;
            let layout = PartitionLayout::assign_hard(dataset, &km.centroids)?;
            let mut bins = vec![0usize; k + 1];
            for r in &gt.results {
                let dist = knn_count_distribution(&layout, &r.ids[..k])?;
                bins[long_tail_stats(&dist)?.min_nonzero as usize] += 1;
            }
            Ok(LongTailHistogram { partitions: b, bins })
        })
        .collect()
}

/// Minimal knob reaching `target` for one query, searched over `knobs`
/// ordered by increasing probe count. Returns `(knob, nprobe, cmp)`.
fn minimal_knob(profile: &QueryProfile, knobs: &[(Knob, usize)], target: f64) -> Option<(Knob, usize, usize)> {
    let reach = |n: usize| profile.recall[n - 1] >= target;
    let i = knobs.partition_point(|&(_, n)| !reach(n));
    knobs.get(i).map(|&(k, n)| (k, n, profile.cmp[n - 1]))
}

/// Knob grid sorted by the probe count it yields for this query.
fn sorted_knobs(profile: &QueryProfile, knobs: &[Knob]) -> Result<Vec<(Knob, usize)>> {
    let mut v = knobs
        .iter()
        .map(|&k| Ok((k, profile.prefix_len(k)?)))
        .collect::<Result<Vec<_>>>()?;
    v.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.value().total_cmp(&b.0.value())));
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub query: usize,
    pub knob_a: f64,
    pub knob_b: f64,
    pub nprobe_a: usize,
    pub nprobe_b: usize,
    pub cmp_a: usize,
    pub cmp_b: usize,
    /// `cmp_b / cmp_a`.
    pub cmp_ratio: f64,
    /// `nprobe_b / nprobe_a`.
    pub nprobe_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Queries for which either method misses the target at every knob.
    pub excluded: Vec<usize>,
}

impl Comparison {
    /// Up to `count` rows chosen with `seed`, in query order.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<ComparisonRow> {
        sample_indices(self.rows.len(), count, seed)
            .into_iter()
            .map(|i| self.rows[i])
            .collect()
    }
}

/// For each query, finds each method's cheapest knob reaching `target`
/// recall and reports method b relative to method a.
pub fn per_query_comparison(
    a: &[QueryProfile],
    knobs_a: &[Knob],
    b: &[QueryProfile],
    knobs_b: &[Knob],
    target: f64,
) -> Result<Comparison> {
    if a.len() != b.len() {
        return Err(invalid(format!("{} vs {} query profiles", a.len(), b.len())));
    }
    let mut out = Comparison {
        rows: Vec::new(),
        excluded: Vec::new(),
    };
    for (query, (pa, pb)) in a.iter().zip(b).enumerate() {
        let ma = minimal_knob(pa, &sorted_knobs(pa, knobs_a)?, target);
        let mb = minimal_knob(pb, &sorted_knobs(pb, knobs_b)?, target);
        match (ma, mb) {
            (Some((ka, na, ca)), Some((kb, nb, cb))) => out.rows.push(ComparisonRow {
                query,
                knob_a: ka.value(),
                knob_b: kb.value(),
                nprobe_a: na,
                nprobe_b: nb,
                cmp_a: ca,
                cmp_b: cb,
                cmp_ratio: cb as f64 / ca.max(1) as f64,
                nprobe_ratio: nb as f64 / na as f64,
            }),
            _ => out.excluded.push(query),
        }
    }
    Ok(out)
}

/// Short hex digest of a configuration description, stamped into CSV headers.
pub fn config_hash(config: &str) -> String {
    let digest = Sha256::digest(config.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// A CSV report: a `# schema=... config=...` comment line, then the header
/// and rows.
pub struct CsvReport<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> CsvReport<W> {
    pub fn new(mut sink: W, report: &str, config_hash: &str, extra: &str, header: &[&str]) -> Result<Self> {
        write!(sink, "# schema=lira-{report}/v{CSV_SCHEMA_VERSION} config={config_hash}")?;
        if !extra.is_empty() {
            write!(sink, " {extra}")?;
        }
        writeln!(sink)?;
        let mut inner = csv::Writer::from_writer(sink);
        inner.write_record(header)?;
        Ok(Self { inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Integers print as-is; sigma values print at `f32` precision, the
/// precision they were given in.
fn fmt_knob(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v}")
    } else {
        format!("{}", v as f32)
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn write_sweep_csv(path: &Path, records: &[SweepRecord], hash: &str) -> Result<()> {
    let mut w = CsvReport::new(
        create(path)?,
        "sweep",
        hash,
        "",
        &["method", "knob", "mean_recall", "mean_cmp", "mean_nprobe", "wall_clock_s"],
    )?;
    for r in records {
        w.row([
            r.method.clone(),
            fmt_knob(r.knob),
            format!("{:.6}", r.mean_recall),
            format!("{:.3}", r.mean_cmp),
            format!("{:.4}", r.mean_nprobe),
            format!("{:.3e}", r.wall_clock_s),
        ])?;
    }
    w.finish()
}

/// Long-format `x,y,series` rows of recall against cmp, one series per method.
pub fn write_sweep_series(path: &Path, records: &[SweepRecord], hash: &str) -> Result<()> {
    let mut w = CsvReport::new(create(path)?, "sweep-series", hash, "", &["x", "y", "series"])?;
    for r in records {
        w.row([format!("{:.3}", r.mean_cmp), format!("{:.6}", r.mean_recall), r.method.clone()])?;
    }
    w.finish()
}

pub fn write_waste_csv(path: &Path, report: &WasteReport, hash: &str) -> Result<()> {
    let mut w = CsvReport::new(
        create(path)?,
        "probing-waste",
        hash,
        "",
        &["query", "nprobe_star", "nprobe_star_dist", "extra"],
    )?;
    for r in &report.rows {
        w.row([r.query, r.nprobe_star, r.nprobe_star_dist, r.extra].map(|v| v.to_string()))?;
    }
    w.finish()?;
    let cdf_path = path.with_extension("cdf.csv");
    let mut w = CsvReport::new(create(&cdf_path)?, "probing-waste-cdf", hash, "", &["x", "y", "series"])?;
    for (series, points) in [("nprobe_star", &report.cdf_star), ("nprobe_star_dist", &report.cdf_dist)] {
        for &(x, y) in points {
            w.row([x.to_string(), format!("{y:.6}"), series.to_string()])?;
        }
    }
    w.finish()
}

pub fn write_long_tail_csv(path: &Path, hists: &[LongTailHistogram], hash: &str) -> Result<()> {
    let mut w = CsvReport::new(create(path)?, "long-tail", hash, "", &["partitions", "min_nonzero", "queries"])?;
    for h in hists {
        for (c, &n) in h.bins.iter().enumerate().skip(1) {
            if n > 0 {
                w.row([h.partitions, c, n].map(|v| v.to_string()))?;
            }
        }
    }
    w.finish()
}

pub fn write_comparison_csv(path: &Path, cmp: &Comparison, rows: &[ComparisonRow], hash: &str) -> Result<()> {
    let extra = format!("compared={} excluded={}", cmp.rows.len(), cmp.excluded.len());
    let mut w = CsvReport::new(
        create(path)?,
        "per-query",
        hash,
        &extra,
        &["query", "knob_a", "knob_b", "nprobe_a", "nprobe_b", "cmp_a", "cmp_b", "cmp_ratio", "nprobe_ratio"],
    )?;
    for r in rows {
        w.row([
            r.query.to_string(),
            fmt_knob(r.knob_a),
            fmt_knob(r.knob_b),
            r.nprobe_a.to_string(),
            r.nprobe_b.to_string(),
            r.cmp_a.to_string(),
            r.cmp_b.to_string(),
            format!("{:.6}", r.cmp_ratio),
            format!("{:.6}", r.nprobe_ratio),
        ])?;
    }
    w.finish()
}

/// One row per training log step.
pub fn convergence_report(path: &Path, log: &TrainLog, hash: &str) -> Result<()> {
    let mut w = CsvReport::new(
        create(path)?,
        "convergence",
        hash,
        "",
        &["step", "epoch", "loss", "recall", "mean_nprobe", "hit_rate"],
    )?;
    for r in &log.rows {
        w.row([
            r.step.to_string(),
            r.epoch.to_string(),
            format!("{:.6}", r.loss),
            format!("{:.6}", r.recall),
            format!("{:.4}", r.mean_nprobe),
            format!("{:.6}", r.hit_rate),
        ])?;
    }
    w.finish()
}

pub fn write_curves_csv(path: &Path, series: &[(&str, &[CurvePoint])], hash: &str) -> Result<()> {
    let mut w = CsvReport::new(create(path)?, "curves", hash, "", &["x", "y", "series"])?;
    for (name, points) in series {
        for p in *points {
            w.row([p.m.to_string(), format!("{:.6}", p.value), name.to_string()])?;
        }
    }
    w.finish()
}
