//! The pipeline stages. Each reads the artifacts of the stages before it
//! from the output directory and writes its own.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, ValueEnum};
use lira::bench::{
    config_hash, convergence_report, default_nprobe_grid, default_sigma_grid, long_tail_report, min_cmp_at_recall,
    per_query_comparison, probing_waste_report, profile_queries, sample_indices, tradeoff_sweep, write_comparison_csv,
    write_curves_csv, write_long_tail_csv, write_sweep_csv, write_sweep_series, write_waste_csv, Knob, Method, Planner,
    SweepRecord,
};
use lira::codec::{read_ivecs, read_vectors, write_ivecs, IdMatrix};
use lira::model::{build_training_set, load_model, save_model, train as train_model, Architecture, TrainConfig};
use lira::oracle::brute_force_knn;
use lira::partition::kmeans;
use lira::redundancy::{apply_redundancy, hit_rate_curve, plan_redundancy, replica_partitions, replica_recall_curve, RankSource};
use lira::retrieval::{plan_ivf, plan_lira, plan_lira_topn, search, Index, QueryMetrics, DEFAULT_SIGMA};
use lira::synthetic::gen_synthetic;
use lira::{Dataset, GroundTruth, PartitionLayout, ProbingModel};

use crate::config::{DataSource, RunConfig};

pub const HARD_INDEX: &str = "index_hard.lira";
pub const FUZZY_INDEX: &str = "index_fuzzy.lira";
pub const LIRA_INDEX: &str = "index_lira.lira";
pub const TRAIN_IDS: &str = "train_ids.ivecs";
pub const MODEL: &str = "model.lirm";
pub const CONVERGENCE: &str = "convergence.csv";
pub const GT_DIR: &str = "gt";

/// nprobe for centroid-rank methods when no knob is given.
pub const DEFAULT_NPROBE: usize = 8;

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    hash: String,
}

impl Ctx {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let hash = config_hash(&cfg.describe());
        Ok(Self { cfg, out, hash })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

struct Data {
    base: Dataset,
    queries: Dataset,
}

fn load_data(cfg: &RunConfig) -> Result<Data> {
    let (base, queries) = match &cfg.data {
        DataSource::Synthetic {
            n,
            dim,
            clusters,
            spread,
            holdout,
        } => gen_synthetic(n + holdout, *dim, *clusters, *spread, cfg.seed)?.split_tail(*holdout)?,
        DataSource::Files { base, queries, .. } => {
            let b = read_vectors(base, cfg.format_for(base)?).with_context(|| format!("reading {}", base.display()))?;
            let q = read_vectors(queries, cfg.format_for(queries)?)
                .with_context(|| format!("reading {}", queries.display()))?;
            (b, q)
        }
    };
    ensure!(
        base.dim() == queries.dim(),
        "base vectors have d={} but queries have d={}",
        base.dim(),
        queries.dim()
    );
    ensure!(!queries.is_empty(), "no queries");
    Ok(Data { base, queries })
}

fn ground_truth(ctx: &Ctx, data: &Data) -> Result<(GroundTruth, bool)> {
    let dir = ctx.path(GT_DIR);
    std::fs::create_dir_all(&dir)?;
    Ok(GroundTruth::load_or_compute(&dir, &data.base, &data.queries, ctx.cfg.k)?)
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if !path.exists() {
        bail!("{} not found; run stage `{stage}` first", path.display());
    }
    Ok(())
}

fn load_index(ctx: &Ctx, name: &str, stage: &str, data: &Data) -> Result<Index> {
    let path = ctx.path(name);
    require(&path, stage)?;
    let index = Index::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let fp = data.base.fingerprint();
    if index.fingerprint != fp {
        bail!(
            "{} was built for a different dataset (fingerprint {:016x}, current data {:016x}); rerun stage `build`",
            path.display(),
            index.fingerprint,
            fp
        );
    }
    Ok(index)
}

fn load_trained_model(ctx: &Ctx, layout: &PartitionLayout) -> Result<ProbingModel> {
    let path = ctx.path(MODEL);
    require(&path, "train")?;
    let model = load_model(&path).with_context(|| format!("loading {}", path.display()))?;
    if model.dim() != layout.dim() || model.partitions() != layout.partitions() {
        bail!(
            "{} expects d={} B={} but the index has d={} B={}; rerun stage `train`",
            path.display(),
            model.dim(),
            model.partitions(),
            layout.dim(),
            layout.partitions()
        );
    }
    Ok(model)
}

fn save_index(ctx: &Ctx, name: &str, index: &Index) -> Result<()> {
    let path = ctx.path(name);
    index.save(&path).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn groundtruth(ctx: &Ctx) -> Result<()> {
    let data = load_data(&ctx.cfg)?;
    let (gt, hit) = ground_truth(ctx, &data)?;
    let key = GroundTruth::cache_key(&data.base, &data.queries, ctx.cfg.k);
    println!(
        "ground truth {key}: {} ({} queries, k={})",
        if hit { "cache hit" } else { "computed" },
        gt.len(),
        gt.k
    );
    // Spot-check 1% of the rows against a fresh brute-force scan.
    let audit = sample_indices(gt.len(), gt.len().div_ceil(100), ctx.cfg.seed);
    for &i in &audit {
        let fresh = brute_force_knn(&data.base, data.queries.row(i), ctx.cfg.k)?;
        if fresh != gt.results[i] {
            bail!("ground truth audit failed at query {i}: stored row differs from a fresh scan");
        }
    }
    println!("audit: {} of {} rows re-checked, all match", audit.len(), gt.len());
    Ok(())
}

pub fn build(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let data = load_data(cfg)?;
    let ids: Vec<u32> = sample_indices(data.base.len(), cfg.sample_size, cfg.seed)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    let km = kmeans(&data.base.select(&ids)?, cfg.partitions, cfg.kmeans_iters, cfg.seed)?;
    println!(
        "k-means: B={} on {} points, {} iterations{}, inertia {:.4e}",
        cfg.partitions,
        ids.len(),
        km.iterations,
        if km.converged { " (converged)" } else { "" },
        km.inertia.last().copied().unwrap_or(0.0)
    );
    let fingerprint = data.base.fingerprint();
    for (name, layout) in [
        (HARD_INDEX, PartitionLayout::assign_hard(&data.base, &km.centroids)?),
        (FUZZY_INDEX, PartitionLayout::assign_fuzzy(&data.base, &km.centroids)?),
    ] {
        println!("{name}: {} points, {} entries", layout.num_points(), layout.total_entries());
        save_index(
            ctx,
            name,
            &Index {
                fingerprint,
                layout,
                plan: None,
                model: None,
            },
        )?;
    }
    let path = ctx.path(TRAIN_IDS);
    write_ivecs(
        &IdMatrix {
            cols: 1,
            data: ids.iter().map(|&i| i as i32).collect(),
        },
        &path,
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

fn read_train_ids(ctx: &Ctx, n: usize) -> Result<Vec<u32>> {
    let path = ctx.path(TRAIN_IDS);
    require(&path, "build")?;
    let m = read_ivecs(&path)?;
    ensure!(m.cols == 1, "{}: expected one id per row", path.display());
    m.data
        .iter()
        .map(|&v| {
            ensure!(v >= 0 && (v as usize) < n, "{}: id {v} out of range", path.display());
            Ok(v as u32)
        })
        .collect()
}

pub fn train(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let data = load_data(cfg)?;
    let hard = load_index(ctx, HARD_INDEX, "build", &data)?;
    let ids = read_train_ids(ctx, data.base.len())?;
    let ts = build_training_set(&data.base, &ids, &hard.layout, cfg.k)?;
    println!("training set: {} examples, mean nprobe* {:.2}", ts.len(), ts.mean_optimal_nprobe());

    let tc = TrainConfig {
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        lr: cfg.lr,
        seed: cfg.seed,
        sigma_train: DEFAULT_SIGMA,
        ..TrainConfig::default()
    };
    let mut model = ProbingModel::for_training_set(&ts, Architecture::default(), tc.sigma_train, cfg.seed)?;
    let log = train_model(&mut model, &ts, &tc)?;
    for (epoch, loss) in log.epoch_loss.iter().enumerate() {
        println!("epoch {:>3}: loss {loss:.5}", epoch + 1);
    }
    if let Some(r) = log.rows.last() {
        println!(
            "final: loss {:.5} recall {:.4} mean nprobe {:.2} hit rate {:.4}",
            r.loss, r.recall, r.mean_nprobe, r.hit_rate
        );
    }
    let path = ctx.path(MODEL);
    save_model(&model, &path)?;
    println!("wrote {}", path.display());
    let path = ctx.path(CONVERGENCE);
    convergence_report(&path, &log, &ctx.hash)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn redundancy(ctx: &Ctx) -> Result<()> {
    let data = load_data(&ctx.cfg)?;
    let hard = load_index(ctx, HARD_INDEX, "build", &data)?;
    let model = load_trained_model(ctx, &hard.layout)?;
    let plan = plan_redundancy(&model, &data.base, &hard.layout, ctx.cfg.eta)?;
    let layout = apply_redundancy(&hard.layout, &plan)?;
    println!(
        "redundancy: eta={}% duplicated {} points, {} entries",
        ctx.cfg.eta,
        plan.len(),
        layout.total_entries()
    );
    save_index(
        ctx,
        LIRA_INDEX,
        &Index {
            fingerprint: hard.fingerprint,
            layout,
            plan: Some(plan),
            model: Some(model),
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QueryMethod {
    /// Learned probing over the redundant layout
    Lira,
    /// Nearest-centroid probing over the hard layout
    Ivf,
    /// Nearest-centroid probing over the two-home layout
    Fuzzy,
}

#[derive(Debug, Clone, Args)]
pub struct QueryArgs {
    /// Index and probing strategy
    #[arg(long, value_enum, default_value = "lira")]
    pub method: QueryMethod,

    /// Run only the first N queries [default: all]
    #[arg(long)]
    pub limit: Option<usize>,

    /// Neighbours printed per query
    #[arg(long, default_value_t = 10)]
    pub show: usize,
}

pub fn query(ctx: &Ctx, args: &QueryArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let data = load_data(cfg)?;
    let (index, model) = match args.method {
        QueryMethod::Lira => {
            let index = load_index(ctx, LIRA_INDEX, "redundancy", &data)?;
            let model = index.model.clone().context("index_lira.lira carries no model; rerun stage `redundancy`")?;
            (index, Some(model))
        }
        QueryMethod::Ivf => (load_index(ctx, HARD_INDEX, "build", &data)?, None),
        QueryMethod::Fuzzy => (load_index(ctx, FUZZY_INDEX, "build", &data)?, None),
    };
    if model.is_none() && cfg.sigma.is_some() {
        bail!("--sigma applies to method lira only; use --nprobe");
    }
    let (gt, _) = ground_truth(ctx, &data)?;
    let centroids = index.layout.centroids();
    let n = args.limit.unwrap_or(data.queries.len()).min(data.queries.len());
    let (mut recall, mut cmp, mut nprobe) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let q = data.queries.row(i);
        let plan = match (&model, cfg.nprobe) {
            (Some(m), Some(np)) => plan_lira_topn(m, q, centroids, np)?,
            (Some(m), None) => plan_lira(m, q, centroids, cfg.sigma.unwrap_or(DEFAULT_SIGMA))?,
            (None, np) => plan_ivf(q, centroids, np.unwrap_or(DEFAULT_NPROBE))?,
        };
        let (result, stats) = search(&index.layout, &data.base, &plan, q, cfg.k)?;
        let m = QueryMetrics::measure(&result, stats, &gt.results[i], cfg.k)?;
        println!(
            "query {i}: recall@{}={:.4} cmp={} nprobe={}",
            cfg.k, m.recall_at_k, m.cmp, m.nprobe
        );
        for (rank, (id, d)) in result.ids.iter().zip(&result.dists).take(args.show).enumerate() {
            println!("  {:>3}. id={id} dist={d:.6}", rank + 1);
        }
        recall += m.recall_at_k;
        cmp += m.cmp as f64;
        nprobe += m.nprobe as f64;
    }
    if n > 0 {
        let n = n as f64;
        println!(
            "mean over {n} queries: recall@{}={:.4} cmp={:.1} nprobe={:.2}",
            cfg.k,
            recall / n,
            cmp / n,
            nprobe / n
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Queries re-run per grid point to time the search path; 0 disables timing
    #[arg(long, default_value_t = 50)]
    pub timing_queries: usize,

    /// Recall target of the per-query comparison
    #[arg(long, default_value_t = 0.98)]
    pub target: f64,

    /// Rows kept in per_query.csv
    #[arg(long, default_value_t = 100)]
    pub compare_sample: usize,
}

fn print_summary(records: &[SweepRecord], methods: &[&str]) {
    let targets = [0.9, 0.95, 0.98];
    println!("{:<20} {}", "min cmp at recall", targets.map(|t| format!("{t:>16.2}")).join(""));
    let baseline: Vec<Option<(f64, f64)>> = targets.iter().map(|&t| min_cmp_at_recall(records, "ivf", t)).collect();
    for name in methods {
        let cells: String = targets
            .iter()
            .zip(&baseline)
            .map(|(&t, base)| match (min_cmp_at_recall(records, name, t), base) {
                (Some((_, c)), Some((_, b))) if *name != "ivf" => {
                    format!("{:>16}", format!("{c:.0} ({:+.1}%)", 100.0 * (c - b) / b))
                }
                (Some((_, c)), _) => format!("{c:>16.0}"),
                (None, _) => format!("{:>16}", "-"),
            })
            .collect();
        println!("{name:<20} {cells}");
    }
}

pub fn bench(ctx: &Ctx, args: &BenchArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let data = load_data(cfg)?;
    let hard = load_index(ctx, HARD_INDEX, "build", &data)?;
    let fuzzy = load_index(ctx, FUZZY_INDEX, "build", &data)?;
    let lira = load_index(ctx, LIRA_INDEX, "redundancy", &data)?;
    let model = lira.model.as_ref().context("index_lira.lira carries no model; rerun stage `redundancy`")?;
    let (gt, _) = ground_truth(ctx, &data)?;

    let nprobes: Vec<Knob> = default_nprobe_grid(hard.layout.partitions()).into_iter().map(Knob::Nprobe).collect();
    let sigmas: Vec<Knob> = default_sigma_grid().into_iter().map(Knob::Sigma).collect();
    let ivf = Method::new("ivf", &hard.layout, Planner::Rank);
    let lira_method = Method::new("lira", &lira.layout, Planner::Model(model));
    let methods = [
        (ivf.clone(), nprobes.clone()),
        (Method::new("ivf_fuzzy", &fuzzy.layout, Planner::Rank), nprobes.clone()),
        (lira_method.clone(), sigmas.clone()),
        (Method::new("lira_meta_only", &hard.layout, Planner::Model(model)), sigmas.clone()),
    ];
    let records = tradeoff_sweep(&methods, &data.base, &data.queries, &gt, cfg.k, args.timing_queries, cfg.seed)?;
    for (name, write) in [
        ("sweep.csv", write_sweep_csv as fn(&Path, &[SweepRecord], &str) -> lira::Result<()>),
        ("sweep_series.csv", write_sweep_series),
    ] {
        let path = ctx.path(name);
        write(&path, &records, &ctx.hash)?;
        println!("wrote {}", path.display());
    }

    let a = profile_queries(&ivf, &data.base, &data.queries, &gt, cfg.k)?;
    let b = profile_queries(&lira_method, &data.base, &data.queries, &gt, cfg.k)?;
    let cmp = per_query_comparison(&a, &nprobes, &b, &sigmas, args.target)?;
    let path = ctx.path("per_query.csv");
    write_comparison_csv(&path, &cmp, &cmp.sample(args.compare_sample, cfg.seed), &ctx.hash)?;
    println!(
        "wrote {} ({} queries compared at recall {}, {} excluded)",
        path.display(),
        cmp.rows.len(),
        args.target,
        cmp.excluded.len()
    );

    print_summary(&records, &["ivf", "ivf_fuzzy", "lira", "lira_meta_only"]);
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Partition counts for the long-tail histogram
    #[arg(long, value_delimiter = ',', default_value = "64,32,16,8")]
    pub b_list: Vec<usize>,

    /// Data points used as queries when locating replica partitions
    #[arg(long, default_value_t = 4000)]
    pub replica_sample: usize,
}

pub fn analyze(ctx: &Ctx, args: &AnalyzeArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let data = load_data(cfg)?;
    let hard = load_index(ctx, HARD_INDEX, "build", &data)?;
    let model = load_trained_model(ctx, &hard.layout)?;
    let (gt, _) = ground_truth(ctx, &data)?;

    let waste = probing_waste_report(&data.queries, &gt, &hard.layout, cfg.k)?;
    let n = waste.rows.len() as f64;
    let mean = |f: fn(&lira::bench::WasteRow) -> usize| waste.rows.iter().map(f).sum::<usize>() as f64 / n;
    println!(
        "probing waste: mean nprobe* {:.2}, by centroid distance {:.2}, extra {:.2}",
        mean(|r| r.nprobe_star),
        mean(|r| r.nprobe_star_dist),
        mean(|r| r.extra)
    );
    let path = ctx.path("waste.csv");
    write_waste_csv(&path, &waste, &ctx.hash)?;
    println!("wrote {} and {}", path.display(), path.with_extension("cdf.csv").display());

    let hists = long_tail_report(&data.queries, &gt, &data.base, cfg.k, &args.b_list, cfg.kmeans_iters, cfg.seed)?;
    for h in &hists {
        let total: usize = h.bins.iter().sum();
        println!(
            "long tail B={}: {:.1}% of queries have a partition holding exactly one kNN",
            h.partitions,
            100.0 * h.bins.get(1).copied().unwrap_or(0) as f64 / total.max(1) as f64
        );
    }
    let path = ctx.path("long_tail.csv");
    write_long_tail_csv(&path, &hists, &ctx.hash)?;
    println!("wrote {}", path.display());

    let points: Vec<u32> = sample_indices(data.base.len(), args.replica_sample, cfg.seed)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    let oracle = replica_partitions(&data.base, &hard.layout, &points, cfg.k)?;
    let ms: Vec<usize> = (0..)
        .map(|e| 1usize << e)
        .take_while(|&m| m <= hard.layout.partitions())
        .collect();
    let (model_recall, random_recall) =
        replica_recall_curve(RankSource::Model(&model), &data.base, &hard.layout, &oracle, &ms, cfg.seed)?;
    let (dist_recall, _) = replica_recall_curve(RankSource::Distance, &data.base, &hard.layout, &oracle, &ms, cfg.seed)?;
    let model_hits = hit_rate_curve(RankSource::Model(&model), &data.base, &hard.layout, &oracle, &ms)?;
    let dist_hits = hit_rate_curve(RankSource::Distance, &data.base, &hard.layout, &oracle, &ms)?;
    println!("replica partitions: {} long-tail points", oracle.len());
    println!("{:>5} {:>12} {:>12} {:>12} {:>12} {:>12}", "M", "recall/model", "recall/dist", "recall/rand", "hit/model", "hit/dist");
    for i in 0..ms.len() {
        println!(
            "{:>5} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
            ms[i], model_recall[i].value, dist_recall[i].value, random_recall[i].value, model_hits[i].value, dist_hits[i].value
        );
    }
    let path = ctx.path("replica_curves.csv");
    write_curves_csv(
        &path,
        &[
            ("recall_model", &model_recall),
            ("recall_distance", &dist_recall),
            ("recall_random", &random_recall),
            ("hit_rate_model", &model_hits),
            ("hit_rate_distance", &dist_hits),
        ],
        &ctx.hash,
    )?;
    println!("wrote {}", path.display());
    Ok(())
}
