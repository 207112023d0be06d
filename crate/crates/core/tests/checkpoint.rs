use std::collections::BTreeMap;
use std::path::Path;

use craftkit::store::{CrashPlan, StagedFile, StoreConfig};
use craftkit::types::{serialize_entry, Element};
use craftkit::{
    Array, Checkpoint, CraftEnv, CraftError, CustomEntry, FormatError, MultiArray, ProcessGroup, Scalar, VersionStore,
    WriteMode,
};
use proptest::prelude::*;

fn env(dir: &Path) -> CraftEnv {
    CraftEnv::default().with_path(dir)
}

/// Files of the newest loadable version of `name`, read straight from disk.
fn published(dir: &Path, name: &str) -> Option<(u64, BTreeMap<String, Vec<u8>>)> {
    let store = VersionStore::open(StoreConfig::global(dir, name)).unwrap();
    store.load_latest(&|_| true, &[0].into_iter().collect()).unwrap().map(|l| (l.version, l.files))
}

#[test]
fn create_rejects_path_separators() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    assert!(matches!(Checkpoint::new("a/b", &g, &env(dir.path())), Err(CraftError::InvalidName(_))));
    let cp = Checkpoint::new("myCP", &g, &env(dir.path())).unwrap();
    assert!(!cp.is_committed());
    assert_eq!(cp.version(), 0);
    assert_eq!(cp.directory(), dir.path().join("myCP"));
}

#[test]
fn second_checkpoint_with_the_same_name_is_rejected_until_the_first_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    let a = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
    assert!(matches!(Checkpoint::new("cp", &g, &env(dir.path())), Err(CraftError::DuplicateCheckpoint(_))));
    drop(a);
    Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
}

#[test]
fn add_and_commit_rules() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    let mut cp = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
    assert!(matches!(cp.commit(), Err(CraftError::EmptyCheckpoint(_))));
    assert!(matches!(cp.update_and_write(), Err(CraftError::NotCommitted(_))));
    cp.add("iteration", Scalar::new(0i32)).unwrap();
    assert!(matches!(cp.add("iteration", Scalar::new(1i32)), Err(CraftError::DuplicateKey(_))));
    assert!(matches!(cp.add("bad/key", Scalar::new(1i32)), Err(CraftError::InvalidKey(_))));
    cp.add("x", Array::new(vec![1.0f64, 2.0, 3.0])).unwrap();
    cp.add("m", MultiArray::new(2, 2, vec![1i64, 2, 3, 4], Some(1))).unwrap();
    assert_eq!(cp.keys(), vec!["iteration", "x", "m"]);
    cp.commit().unwrap();
    cp.commit().unwrap();
    assert!(cp.is_committed());
    assert!(matches!(cp.add("late", Scalar::new(1i32)), Err(CraftError::AlreadyCommitted(_))));
}

#[test]
fn write_decisions_follow_the_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    let mut cp = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
    cp.add("i", Scalar::new(0i64)).unwrap();
    cp.commit().unwrap();
    let skip = cp.update_and_write_at(7, 10).unwrap();
    assert!(!skip.should_write);
    let w = cp.update_and_write_at(500, 500).unwrap();
    assert!(w.should_write);
    assert_eq!(w.version_to_write, 1);
    assert!(matches!(cp.update_and_write_at(3, 0), Err(CraftError::Config(_))));
    assert!(matches!(cp.update_and_write_at(3, -2), Err(CraftError::Config(_))));
    assert_eq!(cp.update_and_write().unwrap().version_to_write, 2);
    assert_eq!(cp.version(), 2);
}

#[test]
fn version_counter_is_initialized_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    {
        let mut cp = Checkpoint::new("myCP", &g, &env(dir.path())).unwrap();
        cp.add("i", Scalar::new(0i64)).unwrap();
        cp.commit().unwrap();
        cp.update_and_write().unwrap();
        cp.update_and_write().unwrap();
    }
    let cp = Checkpoint::new("myCP", &g, &env(dir.path())).unwrap();
    assert_eq!(cp.version(), 2);
}

#[test]
fn restart_restores_the_latest_version_once() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    {
        let mut cp = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
        let it = cp.add("iteration", Scalar::new(0i64)).unwrap();
        let x = cp.add("x", Array::new(vec![0.0f64; 4])).unwrap();
        cp.commit().unwrap();
        assert!(!cp.restart_if_needed().unwrap());
        for i in 1..=3 {
            it.write().set(i);
            x.write()[0] = i as f64 * 0.5;
            cp.update_and_write().unwrap();
        }
        // progress after the last write is lost
        it.write().set(99);
    }
    let mut cp = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
    let it = cp.add("iteration", Scalar::new(0i64)).unwrap();
    let x = cp.add("x", Array::new(vec![0.0f64; 4])).unwrap();
    cp.commit().unwrap();
    assert!(cp.restart_if_needed().unwrap());
    assert_eq!(it.read().get(), 3);
    assert_eq!(x.read()[0], 1.5);
    it.write().set(42);
    assert!(!cp.restart_if_needed().unwrap());
    assert_eq!(it.read().get(), 42);
}

#[test]
fn read_on_restart_disabled_skips_restore() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    {
        let mut cp = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
        cp.add("i", Scalar::new(5i64)).unwrap();
        cp.commit().unwrap();
        cp.update_and_write().unwrap();
    }
    let mut e = env(dir.path());
    e.read_on_restart = false;
    let mut cp = Checkpoint::new("cp", &g, &e).unwrap();
    let i = cp.add("i", Scalar::new(0i64)).unwrap();
    cp.commit().unwrap();
    assert!(!cp.restart_if_needed().unwrap());
    assert_eq!(i.read().get(), 0);
}

#[test]
fn disabled_library_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    let mut e = env(dir.path());
    e.enable = false;
    let mut cp = Checkpoint::new("cp", &g, &e).unwrap();
    cp.add("i", Scalar::new(5i64)).unwrap();
    cp.commit().unwrap();
    assert!(cp.update_and_write().unwrap().should_write);
    assert!(!dir.path().join("cp").exists());
    assert!(!cp.restart_if_needed().unwrap());
}

#[test]
fn corrupt_latest_version_falls_back_to_the_previous_one() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    {
        let mut cp = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
        let i = cp.add("i", Scalar::new(0i64)).unwrap();
        cp.commit().unwrap();
        for v in 1..=2 {
            i.write().set(v * 10);
            cp.update_and_write().unwrap();
        }
    }
    let f = dir.path().join("cp/v-2/i");
    let mut bytes = std::fs::read(&f).unwrap();
    let last = bytes.len() - 5;
    bytes[last] ^= 0x40;
    std::fs::write(&f, bytes).unwrap();
    let mut cp = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
    let i = cp.add("i", Scalar::new(0i64)).unwrap();
    cp.commit().unwrap();
    assert!(cp.restart_if_needed().unwrap());
    assert_eq!(i.read().get(), 10);
    assert_eq!(cp.version(), 1);
}

#[test]
fn crash_inside_a_write_restarts_from_the_previous_version() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    let i = {
        let mut cp = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
        let i = cp.add("i", Scalar::new(0i64)).unwrap();
        cp.commit().unwrap();
        i.write().set(7);
        cp.update_and_write().unwrap();
        i
    };
    // a process dies half way through publishing version 2
    i.write().set(8);
    let plan = CrashPlan::after(30);
    let doomed = VersionStore::open_with(StoreConfig::global(dir.path(), "cp"), Some(plan.clone())).unwrap();
    let file = StagedFile { rank: 0, node: 0, name: "i".into(), bytes: serialize_entry(&*i.read()) };
    assert!(doomed.publish_version(2, vec![file], &[]).is_err());
    assert!(plan.crashed());

    let mut cp = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
    let j = cp.add("i", Scalar::new(0i64)).unwrap();
    cp.commit().unwrap();
    assert!(cp.restart_if_needed().unwrap());
    assert_eq!(j.read().get(), 7);
    // the interrupted staging area does not get in the way
    j.write().set(9);
    assert_eq!(cp.update_and_write().unwrap().version_to_write, 2);
}

#[test]
fn nesting_rejects_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    let a = Checkpoint::new("a", &g, &env(dir.path())).unwrap();
    let b = Checkpoint::new("b", &g, &env(dir.path())).unwrap();
    let c = Checkpoint::new("c", &g, &env(dir.path())).unwrap();
    assert!(matches!(a.register_child(&a), Err(CraftError::Cycle { .. })));
    a.register_child(&b).unwrap();
    b.register_child(&c).unwrap();
    assert!(matches!(c.register_child(&a), Err(CraftError::Cycle { .. })));
}

#[test]
fn parent_write_invalidates_the_child() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    let mut p = Checkpoint::new("p", &g, &env(dir.path())).unwrap();
    let mut c = Checkpoint::new("c", &g, &env(dir.path())).unwrap();
    c.sub_cp(&p).unwrap();
    p.add("x", Scalar::new(1i32)).unwrap();
    c.add("y", Scalar::new(2i32)).unwrap();
    p.commit().unwrap();
    c.commit().unwrap();
    c.update_and_write().unwrap();
    assert_eq!(published(dir.path(), "c").unwrap().0, 1);
    p.update_and_write().unwrap();
    assert!(published(dir.path(), "c").is_none());
    // the files stay, only the metadata forgets them
    assert!(dir.path().join("c/v-1/y").is_file());
}

/// rectDomain-style user type: a grid with its dimensions.
#[derive(Debug, Clone, PartialEq)]
struct Rect {
    length: u32,
    width: u32,
    values: Vec<f64>,
}

fn rect_entry(r: Rect) -> CustomEntry<Rect> {
    CustomEntry::new(
        r,
        |r, out| {
            out.extend_from_slice(&r.length.to_le_bytes());
            out.extend_from_slice(&r.width.to_le_bytes());
            for v in &r.values {
                v.put(out);
            }
        },
        |r, bytes| {
            if bytes.len() != 8 + 8 * r.values.len() {
                return Err(FormatError::Malformed("rect size".into()));
            }
            r.length = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
            r.width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
            r.values = bytes[8..].chunks_exact(8).map(f64::get).collect();
            Ok(())
        },
    )
}

#[test]
fn custom_type_round_trips_through_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    let rect = Rect { length: 3, width: 2, values: (0..6).map(|v| v as f64 / 3.0).collect() };
    {
        let mut cp = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
        cp.add("dom", rect_entry(rect.clone())).unwrap();
        cp.commit().unwrap();
        cp.update_and_write().unwrap();
    }
    let mut cp = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
    let dom = cp.add("dom", rect_entry(Rect { length: 0, width: 0, values: vec![0.0; 6] })).unwrap();
    cp.commit().unwrap();
    assert!(cp.restart_if_needed().unwrap());
    assert_eq!(**dom.read(), rect);
}

#[test]
fn async_copy_requires_an_update_function() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    let r = Rect { length: 1, width: 1, values: vec![1.0] };
    let e = env(dir.path()).with_write_mode(WriteMode::AsyncCopy);
    let mut cp = Checkpoint::new("cp", &g, &e).unwrap();
    cp.add("dom", rect_entry(r.clone())).unwrap();
    assert!(matches!(cp.commit(), Err(CraftError::Config(_))));
    drop(cp);
    let mut cp = Checkpoint::new("cp", &g, &e).unwrap();
    cp.add("dom", rect_entry(r.clone()).with_update(Rect::clone)).unwrap();
    cp.commit().unwrap();
    // synchronous mode never needs it
    let mut cp = Checkpoint::new("sync", &g, &env(dir.path())).unwrap();
    cp.add("dom", rect_entry(r)).unwrap();
    cp.commit().unwrap();
}

#[test]
fn async_copy_publishes_the_state_at_update_time() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    let e = env(dir.path()).with_write_mode(WriteMode::AsyncCopy);
    let mut cp = Checkpoint::new("cp", &g, &e).unwrap();
    let x = cp.add("x", Array::new(vec![1.0f64; 1000])).unwrap();
    cp.commit().unwrap();
    let snapshot = serialize_entry(&Array::new(vec![1.0f64; 1000]));
    cp.update_and_write().unwrap();
    for v in x.write().iter_mut() {
        *v = -1.0;
    }
    cp.wait().unwrap();
    assert_eq!(published(dir.path(), "cp").unwrap().1["x"], snapshot);
}

#[test]
fn zero_copy_publishes_the_state_before_wait() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    let mut e = env(dir.path()).with_write_mode(WriteMode::AsyncZeroCopy);
    e.debug_zero_copy = true;
    let mut cp = Checkpoint::new("cp", &g, &e).unwrap();
    let x = cp.add("x", Array::new((0..1000).map(f64::from).collect::<Vec<_>>())).unwrap();
    cp.commit().unwrap();
    let snapshot = serialize_entry(&*x.read());
    cp.update_and_write().unwrap();
    cp.wait().unwrap();
    x.write()[0] = 1e9;
    assert_eq!(published(dir.path(), "cp").unwrap().1["x"], snapshot);
}

#[test]
fn failed_background_write_surfaces_at_wait() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    let e = env(dir.path()).with_write_mode(WriteMode::AsyncCopy);
    let mut cp = Checkpoint::new("cp", &g, &e).unwrap();
    cp.add("x", Scalar::new(1i32)).unwrap();
    cp.commit().unwrap();
    cp.update_and_write().unwrap();
    cp.wait().unwrap();
    assert_eq!(cp.version(), 1);
    // make the next staging directory impossible to create
    std::fs::write(dir.path().join("cp/v-2.tmp"), b"in the way").unwrap();
    cp.update_and_write().unwrap();
    assert!(cp.wait().is_err());
    assert_eq!(cp.version(), 1);
    assert_eq!(published(dir.path(), "cp").unwrap().0, 1);
}

/// Run one fixed program trace and return every published file.
fn trace(dir: &Path, mode: WriteMode) -> BTreeMap<String, Vec<u8>> {
    let g = ProcessGroup::solo();
    let mut cp = Checkpoint::new("cp", &g, &env(dir).with_write_mode(mode)).unwrap();
    let i = cp.add("i", Scalar::new(0i64)).unwrap();
    let x = cp.add("x", Array::new(vec![0.0f64; 50])).unwrap();
    let m = cp.add("m", MultiArray::new(5, 4, vec![0i32; 20], Some(2))).unwrap();
    cp.commit().unwrap();
    for it in 1..=12i64 {
        cp.wait().unwrap();
        i.write().set(it);
        for (k, v) in x.write().iter_mut().enumerate() {
            *v = (it as f64).sin() * k as f64;
        }
        m.write()[(it as usize % 5, 2)] = it as i32;
        cp.update_and_write_at(it, 4).unwrap();
    }
    cp.wait().unwrap();
    drop(cp);
    let mut out = BTreeMap::new();
    for v in [2u64, 3] {
        for f in ["i", "x", "m"] {
            out.insert(format!("v-{v}/{f}"), std::fs::read(dir.join(format!("cp/v-{v}/{f}"))).unwrap());
        }
    }
    out
}

#[test]
fn all_write_modes_publish_identical_bytes() {
    let runs: Vec<_> = [WriteMode::Sync, WriteMode::AsyncCopy, WriteMode::AsyncZeroCopy]
        .into_iter()
        .map(|m| {
            let dir = tempfile::tempdir().unwrap();
            trace(dir.path(), m)
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn frequency_law(n in 1i64..60, f in 1i64..15) {
        let dir = tempfile::tempdir().unwrap();
        let g = ProcessGroup::solo();
        let mut cp = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
        cp.add("i", Scalar::new(0i64)).unwrap();
        cp.commit().unwrap();
        let mut written = 0;
        for it in 1..=n {
            written += cp.update_and_write_at(it, f).unwrap().should_write as i64;
        }
        prop_assert_eq!(written, n / f);
        prop_assert_eq!(cp.version() as i64, n / f);
    }

    #[test]
    fn write_then_read_reproduces_live_data(v in prop::collection::vec(any::<i64>(), 1..100)) {
        let dir = tempfile::tempdir().unwrap();
        let g = ProcessGroup::solo();
        {
            let mut cp = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
            cp.add("v", Array::new(v.clone())).unwrap();
            cp.commit().unwrap();
            cp.update_and_write().unwrap();
        }
        let mut cp = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
        let w = cp.add("v", Array::<i64>::zeroed(v.len())).unwrap();
        cp.commit().unwrap();
        prop_assert!(cp.restart_if_needed().unwrap());
        prop_assert_eq!(&**w.read(), &v[..]);
    }
}

#[test]
fn restore_that_fails_partway_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let g = ProcessGroup::solo();
    {
        let mut cp = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
        cp.add("a", Scalar::new(7i64)).unwrap();
        cp.add("b", Array::new(vec![1.0f64; 3])).unwrap();
        cp.commit().unwrap();
        cp.update_and_write().unwrap();
    }
    // "a" still fits and is read first; "b" changed shape
    let mut cp = Checkpoint::new("cp", &g, &env(dir.path())).unwrap();
    let a = cp.add("a", Scalar::new(-1i64)).unwrap();
    let b = cp.add("b", Array::new(vec![2.0f64; 4])).unwrap();
    cp.commit().unwrap();
    assert!(!cp.restart_if_needed().unwrap());
    assert_eq!(a.read().get(), -1);
    assert_eq!(&b.read()[..], &[2.0; 4]);
}
