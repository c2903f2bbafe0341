#![allow(dead_code)]

use lira::model::{build_training_set, TrainingSet};
use lira::partition::kmeans;
use lira::synthetic::gen_synthetic;
use lira::{Dataset, PartitionLayout};

/// Two tight, far-apart blobs split by a two-way K-Means. Every point's
/// kNN sit in its own blob, so each label is a single partition.
pub fn separable_task(n: usize, seed: u64) -> (Dataset, PartitionLayout, TrainingSet) {
    let mut data = gen_synthetic(n, 4, 1, 0.05, seed).unwrap().into_vec();
    for row in data.chunks_exact_mut(4).skip(n / 2) {
        row.iter_mut().for_each(|v| *v += 10.0);
    }
    let ds = Dataset::new(4, data).unwrap();
    let km = kmeans(&ds, 2, 25, seed).unwrap();
    let layout = PartitionLayout::assign_hard(&ds, &km.centroids).unwrap();
    let ids: Vec<u32> = (0..n as u32).collect();
    let ts = build_training_set(&ds, &ids, &layout, 10).unwrap();
    (ds, layout, ts)
}

/// Exact squared distance in f64 with no shared code path.
pub fn l2_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

/// kNN by sorting every `(distance, id)` pair.
pub fn sorted_knn(ds: &Dataset, q: &[f32], k: usize, exclude: Option<u32>) -> Vec<u32> {
    let mut all: Vec<(f64, u32)> = (0..ds.len() as u32)
        .filter(|&i| Some(i) != exclude)
        .map(|i| (l2_f64(ds.row(i as usize), q), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(_, i)| i).collect()
}

/// Outcome of comparing analytic parameter gradients with central finite
/// differences of an independently computed loss.
pub struct GradCheck {
    pub checked: usize,
    pub per_tower: [usize; 3],
    pub max_rel: f64,
    pub worst: usize,
}

/// Mean summed binary cross-entropy in f64, clamped like training.
fn reference_loss(model: &lira::ProbingModel<f64>, ts: &TrainingSet, idx: &[usize]) -> f64 {
    let eps = lira::model::PROB_EPS;
    let mut total = 0.0;
    for &r in idx {
        let probs = model.forward(ts.queries().row(r), ts.dists(r)).unwrap();
        for (&p, &c) in probs.iter().zip(ts.counts(r)) {
            let p = p.clamp(eps, 1.0 - eps);
            total -= if c > 0 { p.ln() } else { (1.0 - p).ln() };
        }
    }
    total / idx.len() as f64
}

pub fn gradient_check(samples_per_tower: usize, step: f64, seed: u64) -> GradCheck {
    use lira::model::{loss_gradients, Architecture, TowerKind};
    use rand::{Rng, SeedableRng};

    let ds = gen_synthetic(600, 8, 6, 0.3, seed).unwrap();
    let km = kmeans(&ds, 6, 10, seed).unwrap();
    let layout = PartitionLayout::assign_hard(&ds, &km.centroids).unwrap();
    let ids: Vec<u32> = (0..600).step_by(5).collect();
    let ts = build_training_set(&ds, &ids, &layout, 8).unwrap();
    let model = lira::ProbingModel::for_training_set(&ts, Architecture::default(), 0.5, seed)
        .unwrap()
        .cast::<f64>();
    let batch: Vec<usize> = (0..12).collect();
    let (_, analytic) = loss_gradients(&model, &ts, &batch).unwrap();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck {
        checked: 0,
        per_tower: [0; 3],
        max_rel: 0.0,
        worst: 0,
    };
    for (t, tower) in [TowerKind::Query, TowerKind::Distance, TowerKind::Head].into_iter().enumerate() {
        let range = model.tower_params(tower);
        for _ in 0..samples_per_tower {
            let p = rng.gen_range(range.clone());
            let mut plus = model.clone();
            plus.params_mut()[p] += step;
            let mut minus = model.clone();
            minus.params_mut()[p] -= step;
            let numeric = (reference_loss(&plus, &ts, &batch) - reference_loss(&minus, &ts, &batch)) / (2.0 * step);
            let a = analytic[p];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > out.max_rel {
                out.max_rel = rel;
                out.worst = p;
            }
            out.checked += 1;
            out.per_tower[t] += 1;
        }
    }
    out
}
