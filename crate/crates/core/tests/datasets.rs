use std::collections::HashSet;

use hmip_core::datasets::{
    dataset_dir, fmt_f64, generate_dataset, label_config, parse_f64, split, split_indices, Dataset, SplitIndices,
    SplitSpec,
};
use hmip_core::problems::{FamilyDims, FamilyKind, HierarchicalFamily};
use hmip_core::Error;
use proptest::prelude::*;

fn small_dataset(n: usize, seed: u64) -> Dataset {
    let fam = HierarchicalFamily::generate(FamilyDims::facility(4, 5).with_param_dim(6), seed).unwrap();
    generate_dataset(&fam, n, seed, &label_config()).unwrap()
}

#[test]
fn desk_split_sizes() {
    let s = SplitSpec::desk(0);
    assert_eq!((s.train, s.eval, s.calib, s.test), (500, 50, 50, 100));
    assert_eq!(s.total(), 700);
}

#[test]
fn tiny_split_is_a_partition() {
    let ds = small_dataset(5, 1);
    let spec = SplitSpec { train: 2, eval: 1, calib: 1, test: 1, seed: 3 };
    let parts = split(&ds, &spec).unwrap();
    assert_eq!(parts.train.len(), 2);
    let mut ids: Vec<usize> = [&parts.train, &parts.eval, &parts.calib, &parts.test]
        .iter()
        .flat_map(|p| p.iter().map(|s| s.theta_id))
        .collect();
    ids.sort();
    let mut all: Vec<usize> = ds.samples.iter().map(|s| s.theta_id).collect();
    all.sort();
    assert_eq!(ids, all);
}

#[test]
fn split_is_seeded() {
    let spec = SplitSpec { train: 20, eval: 5, calib: 5, test: 10, seed: 0 };
    assert_eq!(split_indices(40, &spec).unwrap(), split_indices(40, &spec).unwrap());
    let base = split_indices(40, &spec).unwrap();
    for seed in 1..=10 {
        let other = split_indices(40, &SplitSpec { seed, ..spec }).unwrap();
        assert_ne!(other, base);
    }
}

#[test]
fn split_rejects_oversized_requests() {
    let spec = SplitSpec { train: 20, eval: 5, calib: 5, test: 10, seed: 0 };
    assert!(matches!(
        split_indices(39, &spec),
        Err(Error::InsufficientSamples { needed: 40, available: 39 })
    ));
}

#[test]
fn generation_is_reproducible_and_round_trips() {
    let a = small_dataset(12, 4);
    let b = small_dataset(12, 4);
    assert_eq!(a.to_text(), b.to_text());
    let dir = tempfile::tempdir().unwrap();
    let path = dataset_dir(dir.path(), FamilyKind::FacilityLocation, 4).join("dataset.txt");
    a.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, a);
    assert_eq!(back.to_text(), std::fs::read_to_string(&path).unwrap());
}

#[test]
fn stored_samples_satisfy_label_invariants() {
    let ds = small_dataset(15, 6);
    let fam = ds.family().unwrap();
    for s in &ds.samples {
        s.check(&fam).unwrap();
        assert!(s.l <= s.z + 1e-6);
    }
    assert_eq!(ds.header.attempts, 15);
    assert_eq!(ds.header.discarded, 0);
}

#[test]
fn corrupted_records_fail_to_load() {
    let ds = small_dataset(3, 2);
    let text = ds.to_text().replacen(" | ", " | 1", 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dataset.txt");
    std::fs::write(&path, text).unwrap();
    assert!(Dataset::load(&path).is_err());
}

#[test]
fn split_file_round_trip() {
    let spec = SplitSpec { train: 6, eval: 2, calib: 2, test: 2, seed: 9 };
    let idx = split_indices(12, &spec).unwrap();
    let (spec2, idx2) = SplitIndices::from_text(&idx.to_text(&spec)).unwrap();
    assert_eq!(spec, spec2);
    assert_eq!(idx, idx2);
}

proptest! {
    #[test]
    fn numbers_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(parse_f64(&fmt_f64(v)).unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn splits_are_disjoint(n in 4usize..200, seed in any::<u64>(), cuts in prop::collection::vec(1usize..50, 4)) {
        let spec = SplitSpec { train: cuts[0], eval: cuts[1], calib: cuts[2], test: cuts[3], seed };
        match split_indices(n, &spec) {
            Ok(idx) => {
                let all: Vec<usize> = [&idx.train, &idx.eval, &idx.calib, &idx.test].into_iter().flatten().copied().collect();
                let set: HashSet<usize> = all.iter().copied().collect();
                prop_assert_eq!(set.len(), all.len());
                prop_assert_eq!(all.len(), spec.total());
                prop_assert!(all.iter().all(|&i| i < n));
            }
            Err(_) => prop_assert!(spec.total() > n),
        }
    }
}
