//! Learned probing against centroid-rank probing on a seeded Gaussian
//! mixture, followed by the redundancy diagnostics.
//!
//! ```text
//! cargo run --release -p lira-core --example desk_scale -- [spread] [seed] [epochs]
//! ```

use std::collections::HashSet;
use std::time::Instant;

use lira::bench::{default_nprobe_grid, min_cmp_at_recall, sample_indices, tradeoff_sweep, Knob, Method, Planner};
use lira::model::{build_training_set, train, Architecture, TrainConfig};
use lira::oracle::{brute_force_knn_of_row, knn_count_distribution, optimal_nprobe, probing_label};
use lira::partition::{kmeans, DEFAULT_KMEANS_ITERS};
use lira::redundancy::{hit_rate_curve, plan_redundancy, replica_partitions, RankSource};
use lira::synthetic::gen_synthetic;
use lira::{GroundTruth, PartitionLayout, ProbingModel};

const K: usize = 100;
const B: usize = 64;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> lira::Result<()> {
    let spread: f32 = arg(1, 0.3);
    let seed: u64 = arg(2, 7);
    let epochs: usize = arg(3, 10);
    let t = Instant::now();

    let data = gen_synthetic(101_000, 32, 64, spread, seed)?;
    let (base, queries) = data.split_tail(1000)?;
    let train_ids: Vec<u32> = sample_indices(base.len(), 20_000, seed).into_iter().map(|i| i as u32).collect();
    let km = kmeans(&base.select(&train_ids)?, B, DEFAULT_KMEANS_ITERS, seed)?;
    let layout = PartitionLayout::assign_hard(&base, &km.centroids)?;
    let gt = GroundTruth::compute(&base, &queries, K)?;
    let ts = build_training_set(&base, &train_ids, &layout, K)?;
    eprintln!("[{:5.1}s] labels ready, mean nprobe* {:.2}", t.elapsed().as_secs_f64(), ts.mean_optimal_nprobe());

    let mut model = ProbingModel::for_training_set(&ts, Architecture::default(), 0.5, seed)?;
    let log = train(&mut model, &ts, &TrainConfig { seed, epochs, ..TrainConfig::default() })?;
    if let Some(last) = log.rows.last() {
        eprintln!(
            "[{:5.1}s] trained: loss {:.3} recall {:.4} nprobe {:.2} hit rate {:.4}",
            t.elapsed().as_secs_f64(),
            last.loss,
            last.recall,
            last.mean_nprobe,
            last.hit_rate
        );
    }

    let sigmas = (2..=19).rev().map(|i| Knob::Sigma(i as f32 * 0.05));
    let rows = tradeoff_sweep(
        &[
            (Method::new("ivf", &layout, Planner::Rank), default_nprobe_grid(B).into_iter().map(Knob::Nprobe).collect()),
            (Method::new("lira", &layout, Planner::Model(&model)), sigmas.collect()),
        ],
        &base,
        &queries,
        &gt,
        K,
        50,
        seed,
    )?;
    for target in [0.9, 0.95, 0.98] {
        let ivf = min_cmp_at_recall(&rows, "ivf", target);
        let lira = min_cmp_at_recall(&rows, "lira", target);
        match (ivf, lira) {
            (Some((kn, a)), Some((sn, b))) => println!(
                "recall {target:.2}: ivf nprobe={kn} cmp={a:.0}  lira sigma={sn:.2} cmp={b:.0}  ({:+.1}%)",
                100.0 * (b - a) / a
            ),
            _ => println!("recall {target:.2}: not reached on the grid"),
        }
    }

    let plan = plan_redundancy(&model, &base, &layout, 3.0)?;
    let picked: HashSet<u32> = plan.picks.iter().copied().collect();
    let mean_nprobe_star = |ids: &[u32]| -> lira::Result<f64> {
        let mut total = 0.0;
        for &v in ids {
            let knn = brute_force_knn_of_row(&base, v, K)?;
            total += optimal_nprobe(&probing_label(&knn_count_distribution(&layout, &knn.ids)?)) as f64;
        }
        Ok(total / ids.len() as f64)
    };
    let sample: Vec<u32> = sample_indices(base.len(), 6000, seed + 1).into_iter().map(|i| i as u32).collect();
    let unpicked: Vec<u32> = sample.iter().copied().filter(|v| !picked.contains(v)).take(2000).collect();
    println!(
        "mean nprobe*: picked {:.2} unpicked {:.2}",
        mean_nprobe_star(&plan.picks[..2000.min(plan.len())])?,
        mean_nprobe_star(&unpicked)?
    );

    let oracle = replica_partitions(&base, &layout, &sample[..4000], K)?;
    let ms = [1, 2, 4, 8, 16];
    let by_model = hit_rate_curve(RankSource::Model(&model), &base, &layout, &oracle, &ms)?;
    let by_dist = hit_rate_curve(RankSource::Distance, &base, &layout, &oracle, &ms)?;
    println!("replica hit rate over {} long-tail points", oracle.len());
    for (m, d) in by_model.iter().zip(&by_dist) {
        println!("  M={:2}  model {:.4}  distance {:.4}", m.m, m.value, d.value);
    }
    eprintln!("[{:5.1}s] done", t.elapsed().as_secs_f64());
    Ok(())
}
