use lira::codec::{decode_ivecs, decode_vectors, encode_ivecs, encode_vectors, read_vectors, write_vectors, IdMatrix, VecFormat};
use lira::model::{load_model, save_model, Architecture, ModelMeta};
use lira::partition::kmeans;
use lira::redundancy::{apply_redundancy, plan_redundancy};
use lira::retrieval::{plan_lira, search, Index};
use lira::synthetic::gen_synthetic;
use lira::{Dataset, PartitionLayout, ProbingModel};
use proptest::prelude::*;

fn small_model(dim: usize, partitions: usize, seed: u64) -> ProbingModel {
    let arch = Architecture { query_widths: vec![16, 8], dist_widths: vec![8], head_hidden: vec![16] };
    ProbingModel::new(ModelMeta { dim, partitions, arch, sigma_train: 0.5 }, seed).unwrap()
}

proptest! {
    #[test]
    fn fvecs_bytes_survive_a_round_trip(dim in 1usize..6, rows in prop::collection::vec(any::<f32>(), 1..40)) {
        let n = rows.len() / dim;
        prop_assume!(n > 0);
        let ds = Dataset::new(dim, rows[..n * dim].to_vec()).unwrap();
        let bytes = encode_vectors(&ds, VecFormat::Fvecs).unwrap();
        let back = decode_vectors(&bytes, VecFormat::Fvecs).unwrap();
        prop_assert_eq!(encode_vectors(&back, VecFormat::Fvecs).unwrap(), bytes);
    }

    #[test]
    fn ivecs_bytes_survive_a_round_trip(cols in 1usize..5, data in prop::collection::vec(any::<i32>(), 1..40)) {
        let n = data.len() / cols;
        prop_assume!(n > 0);
        let m = IdMatrix { cols, data: data[..n * cols].to_vec() };
        let bytes = encode_ivecs(&m).unwrap();
        let back = decode_ivecs(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(encode_ivecs(&back).unwrap(), bytes);
    }
}

#[test]
fn bvecs_files_widen_to_floats() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.bvecs");
    let ds = Dataset::from_rows(&[[0.0f32, 255.0, 7.0], [1.0, 2.0, 3.0]]).unwrap();
    write_vectors(&ds, &path, VecFormat::Bvecs).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 2 * (4 + 3));
    assert_eq!(read_vectors(&path, VecFormat::Bvecs).unwrap(), ds);
}

#[test]
fn reloaded_index_and_model_answer_identically() {
    let data = gen_synthetic(2000, 6, 5, 0.2, 8).unwrap();
    let (base, queries) = data.split_tail(50).unwrap();
    let km = kmeans(&base, 8, 10, 8).unwrap();
    let hard = PartitionLayout::assign_hard(&base, &km.centroids).unwrap();
    let model = small_model(6, 8, 3);
    let plan = plan_redundancy(&model, &base, &hard, 5.0).unwrap();
    let index = Index {
        fingerprint: base.fingerprint(),
        layout: apply_redundancy(&hard, &plan).unwrap(),
        plan: Some(plan),
        model: Some(model.clone()),
    };

    let dir = tempfile::tempdir().unwrap();
    index.save(dir.path().join("index.lira")).unwrap();
    save_model(&model, dir.path().join("model.lirm")).unwrap();
    let index2 = Index::load(dir.path().join("index.lira")).unwrap();
    let model2 = load_model(dir.path().join("model.lirm")).unwrap();
    assert_eq!(index2, index);
    assert_eq!(index2.model.as_ref(), Some(&model2));

    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    for q in queries.rows() {
        let p1 = plan_lira(&model, q, index.layout.centroids(), 0.3).unwrap();
        let p2 = plan_lira(&model2, q, index2.layout.centroids(), 0.3).unwrap();
        assert_eq!(p1, p2);
        let (r1, s1) = search(&index.layout, &base, &p1, q, 10).unwrap();
        let (r2, s2) = search(&index2.layout, &base, &p2, q, 10).unwrap();
        assert_eq!(r1.ids, r2.ids);
        assert_eq!(bits(&r1.dists), bits(&r2.dists));
        assert_eq!(s1, s2);
    }
}

#[test]
fn fuzzy_and_redundant_entry_counts() {
    let data = gen_synthetic(5000, 6, 5, 0.2, 2).unwrap();
    let km = kmeans(&data, 10, 10, 2).unwrap();
    let hard = PartitionLayout::assign_hard(&data, &km.centroids).unwrap();
    let fuzzy = PartitionLayout::assign_fuzzy(&data, &km.centroids).unwrap();
    assert_eq!(hard.total_entries(), 5000);
    assert_eq!(fuzzy.total_entries(), 10_000);
    for id in 0..5000u32 {
        let holders = fuzzy.all_members().iter().filter(|m| m.contains(&id)).count();
        assert_eq!(holders, 2);
    }
    let plan = plan_redundancy(&small_model(6, 10, 1), &data, &hard, 3.0).unwrap();
    assert_eq!(plan.len(), 150);
    let red = apply_redundancy(&hard, &plan).unwrap();
    assert_eq!(red.total_entries(), 5150);
    for (id, target) in plan.pairs() {
        assert_ne!(Some(target), hard.home(id));
        assert_eq!(red.home(id), hard.home(id));
        assert!(red.members(target as usize).contains(&id));
    }
}
