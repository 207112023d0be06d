use std::collections::BTreeSet;

use craftkit::store::xor::{parity, reconstruct};
use craftkit::store::{CrashPlan, StagedFile, StoreConfig, StoreMetadata};
use craftkit::VersionStore;
use proptest::prelude::*;

fn staged(tag: u8, sizes: &[usize]) -> Vec<StagedFile> {
    sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| StagedFile {
            rank: 0,
            node: 0,
            name: format!("e{i}"),
            bytes: (0..n).map(|k| tag.wrapping_mul(31).wrapping_add(k as u8)).collect(),
        })
        .collect()
}

fn node0() -> BTreeSet<u32> {
    [0].into_iter().collect()
}

type Files = Vec<(String, Vec<u8>)>;

fn latest_files(store: &VersionStore) -> Option<(u64, Files)> {
    store
        .load_latest(&|_| true, &node0())
        .unwrap()
        .map(|l| (l.version, l.files.into_iter().collect()))
}

fn as_pairs(files: &[StagedFile]) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = files.iter().map(|f| (f.name.clone(), f.bytes.clone())).collect();
    v.sort();
    v
}

/// Units a clean publish of version 3 costs, measured with a counting plan.
fn publish_cost(sizes: &[usize]) -> u64 {
    let dir = tempfile::tempdir().unwrap();
    let cfg = StoreConfig::global(dir.path(), "cp");
    let store = VersionStore::open(cfg.clone()).unwrap();
    store.publish_version(1, staged(1, sizes), &[]).unwrap();
    store.publish_version(2, staged(2, sizes), &[]).unwrap();
    let plan = CrashPlan::counting();
    let store = VersionStore::open_with(cfg, Some(plan.clone())).unwrap();
    store.publish_version(3, staged(3, sizes), &[]).unwrap();
    plan.consumed()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn crash_during_publish_keeps_a_valid_version(
        sizes in prop::collection::vec(0usize..300, 1..4),
        frac in 0.0f64..1.0,
    ) {
        let cost = publish_cost(&sizes);
        let kill = (frac * cost as f64) as u64;
        let dir = tempfile::tempdir().unwrap();
        let cfg = StoreConfig::global(dir.path(), "cp");
        let store = VersionStore::open(cfg.clone()).unwrap();
        store.publish_version(1, staged(1, &sizes), &[]).unwrap();
        store.publish_version(2, staged(2, &sizes), &[]).unwrap();

        let plan = CrashPlan::after(kill);
        let doomed = VersionStore::open_with(cfg.clone(), Some(plan.clone())).unwrap();
        let res = doomed.publish_version(3, staged(3, &sizes), &[]);
        prop_assert!(res.is_err());
        prop_assert!(plan.crashed());

        // a fresh process looks at the directory
        let store = VersionStore::open(cfg).unwrap();
        let meta_names_3 = store.global_metadata().map(|m: StoreMetadata| m.latest) == Some(3);
        let (v, files) = latest_files(&store).expect("some version survives");
        if meta_names_3 {
            prop_assert_eq!(v, 3);
            prop_assert_eq!(files, as_pairs(&staged(3, &sizes)));
        } else {
            prop_assert_eq!(v, 2);
            prop_assert_eq!(files, as_pairs(&staged(2, &sizes)));
        }
        // leftovers never block the next version
        store.gc_staging().unwrap();
        store.publish_version(v + 1, staged(9, &sizes), &[]).unwrap();
        prop_assert_eq!(latest_files(&store).unwrap(), (v + 1, as_pairs(&staged(9, &sizes))));
    }

    #[test]
    fn xor_rebuilds_any_single_erasure(
        payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..200), 2..=8),
        pick in any::<prop::sample::Index>(),
    ) {
        let lost = pick.index(payloads.len());
        let block = parity(&payloads);
        let members: Vec<Option<&[u8]>> =
            payloads.iter().enumerate().map(|(i, p)| (i != lost).then_some(p.as_slice())).collect();
        let (idx, bytes) = reconstruct(&members, &block).unwrap().unwrap();
        prop_assert_eq!(idx, lost);
        prop_assert_eq!(&bytes, &payloads[lost]);
    }
}

#[test]
fn crash_before_any_version_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = StoreConfig::global(dir.path(), "cp");
    let plan = CrashPlan::after(5);
    let doomed = VersionStore::open_with(cfg.clone(), Some(plan)).unwrap();
    assert!(doomed.publish_version(1, staged(1, &[100]), &[]).is_err());
    let store = VersionStore::open(cfg).unwrap();
    assert!(latest_files(&store).is_none());
    assert_eq!(store.latest(&node0()), 0);
}
