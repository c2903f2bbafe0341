mod common;

use common::{l2_f64, sorted_knn};
use lira::oracle::{brute_force_knn, brute_force_knn_batch, brute_force_knn_of_row, knn_count_distribution};
use lira::partition::kmeans;
use lira::synthetic::gen_synthetic;
use lira::{GroundTruth, PartitionLayout};

/// Sets agree, or differ only where the f32 and f64 distance orders disagree
/// on near-equal distances.
fn same_neighbours(ds: &lira::Dataset, q: &[f32], got: &[u32], want: &[u32]) {
    if got == want {
        return;
    }
    let kth = l2_f64(ds.row(*want.last().unwrap() as usize), q);
    for (g, w) in got.iter().zip(want) {
        if g != w {
            let (dg, dw) = (l2_f64(ds.row(*g as usize), q), l2_f64(ds.row(*w as usize), q));
            assert!((dg - dw).abs() <= 1e-5 * kth.max(1e-12), "ids {g} vs {w}: {dg} vs {dw}");
        }
    }
}

#[test]
fn brute_force_matches_full_sort() {
    let ds = gen_synthetic(3000, 12, 8, 0.2, 5).unwrap();
    let qs = gen_synthetic(50, 12, 8, 0.2, 6).unwrap();
    let batch = brute_force_knn_batch(&ds, &qs, 25).unwrap();
    for (i, res) in batch.iter().enumerate() {
        let q = qs.row(i);
        assert_eq!(res, &brute_force_knn(&ds, q, 25).unwrap());
        same_neighbours(&ds, q, &res.ids, &sorted_knn(&ds, q, 25, None));
        assert!(res.dists.windows(2).all(|w| w[0] <= w[1]));
        for (&id, &d) in res.ids.iter().zip(&res.dists) {
            let exact = l2_f64(ds.row(id as usize), q);
            assert!((f64::from(d) - exact).abs() <= 1e-5 * exact.max(1.0));
        }
    }
}

#[test]
fn row_queries_exclude_themselves() {
    let ds = gen_synthetic(800, 6, 4, 0.3, 9).unwrap();
    for row in [0u32, 17, 799] {
        let res = brute_force_knn_of_row(&ds, row, 10).unwrap();
        assert!(!res.ids.contains(&row));
        same_neighbours(&ds, ds.row(row as usize), &res.ids, &sorted_knn(&ds, ds.row(row as usize), 10, Some(row)));
    }
}

#[test]
fn k_equal_one_on_a_stored_row_returns_it() {
    let ds = gen_synthetic(500, 8, 3, 0.5, 2).unwrap();
    for row in [3usize, 250, 499] {
        assert_eq!(brute_force_knn(&ds, ds.row(row), 1).unwrap().ids, vec![row as u32]);
    }
    assert!(brute_force_knn(&ds, ds.row(0), 501).is_err());
}

#[test]
fn count_distribution_sums_to_k() {
    let ds = gen_synthetic(2000, 8, 6, 0.2, 3).unwrap();
    let km = kmeans(&ds, 6, 10, 3).unwrap();
    let layout = PartitionLayout::assign_hard(&ds, &km.centroids).unwrap();
    let qs = gen_synthetic(20, 8, 6, 0.2, 4).unwrap();
    for q in qs.rows() {
        let knn = brute_force_knn(&ds, q, 40).unwrap();
        let dist = knn_count_distribution(&layout, &knn.ids).unwrap();
        assert_eq!(dist.counts.iter().sum::<u32>(), 40);
        // Recount by hand from home partitions.
        let mut manual = vec![0u32; 6];
        for id in &knn.ids {
            manual[layout.homes()[*id as usize] as usize] += 1;
        }
        assert_eq!(dist.counts, manual);
    }
}

#[test]
fn ground_truth_cache_hits_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_synthetic(400, 4, 2, 0.5, 1).unwrap();
    let qs = gen_synthetic(30, 4, 2, 0.5, 2).unwrap();
    let (first, hit) = GroundTruth::load_or_compute(dir.path(), &ds, &qs, 7).unwrap();
    assert!(!hit);
    let (second, hit) = GroundTruth::load_or_compute(dir.path(), &ds, &qs, 7).unwrap();
    assert!(hit);
    assert_eq!(first, second);
    // A different k is a different key.
    let (_, hit) = GroundTruth::load_or_compute(dir.path(), &ds, &qs, 6).unwrap();
    assert!(!hit);
}
