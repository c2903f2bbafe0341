mod common;

use std::collections::HashSet;
use std::sync::OnceLock;

use lira::model::{build_training_set, train, Architecture, TrainConfig};
use lira::oracle::brute_force_knn;
use lira::partition::kmeans;
use lira::redundancy::{apply_redundancy, plan_redundancy};
use lira::retrieval::{plan_exhaustive, plan_ivf, plan_lira, recall_at_k, search, QueryPlan, Strategy as Probe};
use lira::synthetic::gen_synthetic;
use lira::{Dataset, PartitionLayout, ProbingModel};
use proptest::prelude::*;

const B: usize = 12;
const K: usize = 20;

struct Fixture {
    data: Dataset,
    hard: PartitionLayout,
    model: ProbingModel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let data = gen_synthetic(3000, 8, 10, 0.15, 21).unwrap();
        let km = kmeans(&data, B, 25, 21).unwrap();
        let hard = PartitionLayout::assign_hard(&data, &km.centroids).unwrap();
        let ids: Vec<u32> = (0..3000).step_by(3).collect();
        let ts = build_training_set(&data, &ids, &hard, K).unwrap();
        let mut model = ProbingModel::for_training_set(&ts, Architecture::default(), 0.5, 21).unwrap();
        train(&mut model, &ts, &TrainConfig { epochs: 3, batch_size: 128, ..TrainConfig::default() }).unwrap();
        Fixture { data, hard, model }
    })
}

fn query() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-0.2f32..1.2, 8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn raising_sigma_never_grows_the_plan(q in query(), lo in 0.01f32..0.98, gap in 0.0f32..0.5) {
        let f = fixture();
        let hi = (lo + gap).min(0.99);
        let wide = plan_lira(&f.model, &q, f.hard.centroids(), lo).unwrap();
        let narrow = plan_lira(&f.model, &q, f.hard.centroids(), hi).unwrap();
        let wide_set: HashSet<u32> = wide.partitions.iter().copied().collect();
        prop_assert!(narrow.partitions.iter().all(|p| wide_set.contains(p)));
        prop_assert!(narrow.nprobe() <= wide.nprobe());
    }

    #[test]
    fn ivf_recall_and_cmp_grow_with_nprobe(q in query()) {
        let f = fixture();
        let gt = brute_force_knn(&f.data, &q, K).unwrap();
        let (mut last_recall, mut last_cmp) = (0.0, 0);
        for n in 1..=B {
            let plan = plan_ivf(&q, f.hard.centroids(), n).unwrap();
            let (res, stats) = search(&f.hard, &f.data, &plan, &q, K).unwrap();
            let r = recall_at_k(&res, &gt, K).unwrap();
            prop_assert!(r >= last_recall);
            prop_assert!(stats.cmp > last_cmp);
            last_recall = r;
            last_cmp = stats.cmp;
        }
        prop_assert_eq!(last_recall, 1.0);
    }

    #[test]
    fn exhaustive_probe_is_exact_for_every_layout(q in query()) {
        let f = fixture();
        let gt = brute_force_knn(&f.data, &q, K).unwrap();
        let fuzzy = PartitionLayout::assign_fuzzy(&f.data, f.hard.centroids()).unwrap();
        for layout in [&f.hard, &fuzzy] {
            let (res, _) = search(layout, &f.data, &plan_exhaustive(B), &q, K).unwrap();
            prop_assert_eq!(&res.ids, &gt.ids);
        }
    }
}

#[test]
fn replica_and_home_yield_one_result() {
    let f = fixture();
    let plan = plan_redundancy(&f.model, &f.data, &f.hard, 3.0).unwrap();
    let red = apply_redundancy(&f.hard, &plan).unwrap();
    for (id, target) in plan.pairs().take(40) {
        let home = red.home(id).unwrap();
        let probe = QueryPlan { partitions: vec![home, target], probs: None, strategy: Probe::Ivf(2) };
        let q = f.data.row(id as usize);
        let (res, stats) = search(&red, &f.data, &probe, q, 5).unwrap();
        assert_eq!(res.ids.iter().filter(|&&i| i == id).count(), 1);
        assert_eq!(res.ids[0], id);
        assert_eq!(stats.cmp, red.members(home as usize).len() + red.members(target as usize).len());
    }
}

#[test]
fn kmeans_inertia_never_rises() {
    let data = gen_synthetic(10_000, 8, 16, 0.2, 4).unwrap();
    for seed in 0..3 {
        let km = kmeans(&data, 32, 25, seed).unwrap();
        for w in km.inertia.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6), "{:?}", km.inertia);
        }
    }
}
