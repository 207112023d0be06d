//! End-to-end acceptance checks. Runs every criterion in order, prints one
//! PASS or FAIL line each and fails if any criterion failed.
//!
//! Set `CRAFTKIT_BLESS=1` to (re)write the golden reports.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use craftkit::apps::barrier::{simulate_barrier, BarrierConfig};
use craftkit::apps::lanczos::{simulate_lanczos, LanczosConfig};
use craftkit::apps::matrix::{MatrixSpec, Operator};
use craftkit::apps::nested::{crash_and_restart, expected_result, NestedParams, Stage};
use craftkit::apps::report::{read_csv, OverheadReport};
use craftkit::store::xor::{parity, reconstruct};
use craftkit::store::{CrashPlan, StagedFile, StoreConfig};
use craftkit::types::{deserialize_entry, serialize_entry, Element};
use craftkit::{
    Array, ClusterSpec, CraftEnv, FailureTarget, MultiArray, Packed, ProcessGroup, RecoveryConfig, RecoveryPolicy,
    Scalar, SpawnPolicy, VersionStore, WriteMode,
};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAUNCH: &str = env!("CARGO_BIN_EXE_craftkit-launch");
const BENCH: &str = env!("CARGO_BIN_EXE_craftkit-bench");

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let criteria: [(&str, u64, Check); 9] = [
        ("1 nested checkpoint consistency", 10, nested_consistency),
        ("2 crash-atomic versioning", 60, crash_atomic_versioning),
        ("3 serialization round trip", 30, serialization_round_trip),
        ("4 XOR recovery", 30, xor_recovery),
        ("5 recovery policy correctness", 120, recovery_policies),
        ("6 multi-process kill", 30, multi_process_kill),
        ("7 Lanczos end to end", 60, lanczos_end_to_end),
        ("8 overhead ordering", 120, overhead_ordering),
        ("9 report determinism", 30, report_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, limit, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        let r = r.and_then(|d| {
            ensure(secs < limit as f64, || format!("took {secs:.1} s, limit {limit} s"))?;
            Ok(d)
        });
        match r {
            Ok(detail) => println!("PASS criterion {name} ({secs:.1} s): {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.1} s): {e}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// 1 ------------------------------------------------------------------------

fn nested_consistency() -> Result<String, String> {
    // Restored (outer, inner) iterations per stage.
    let table = [
        (Stage::I, None, None),
        (Stage::II, None, Some(10)),
        (Stage::III, None, Some(20)),
        (Stage::IV, Some(1), None),
        (Stage::V, Some(1), Some(10)),
    ];
    let p = NestedParams { l1_iters: 2, l1_freq: 1, l2_iters: 30, l2_freq: 10 };
    let modes = [WriteMode::Sync, WriteMode::AsyncCopy, WriteMode::AsyncZeroCopy];
    for mode in modes {
        for (stage, l1, l2) in table {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let env = CraftEnv::default().with_path(dir.path()).with_write_mode(mode);
            let (first, second) =
                crash_and_restart(&ProcessGroup::solo(), &env, &p, stage).map_err(|e| e.to_string())?;
            ensure(first.crashed, || format!("{mode:?} stage {}: first run did not stop", stage.as_str()))?;
            ensure((second.restored_l1, second.restored_l2) == (l1, l2), || {
                format!(
                    "{mode:?} stage {}: restored {:?}, want {:?}",
                    stage.as_str(),
                    (second.restored_l1, second.restored_l2),
                    (l1, l2)
                )
            })?;
            ensure(second.result == expected_result(&p), || format!("{mode:?} stage {}: wrong result", stage.as_str()))?;
        }
    }
    Ok(format!("5 stages x {} write modes match the table", modes.len()))
}

// 2 ------------------------------------------------------------------------

fn staged(tag: u8, sizes: &[usize], rng: &mut ChaCha8Rng) -> Vec<StagedFile> {
    let salt: u8 = rng.gen();
    sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| StagedFile {
            rank: 0,
            node: 0,
            name: format!("e{i}"),
            bytes: (0..n).map(|k| tag.wrapping_mul(31).wrapping_add(salt).wrapping_add(k as u8)).collect(),
        })
        .collect()
}

fn pairs(files: &[StagedFile]) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = files.iter().map(|f| (f.name.clone(), f.bytes.clone())).collect();
    v.sort();
    v
}

fn crash_atomic_versioning() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let node0: BTreeSet<u32> = [0].into_iter().collect();
    let (mut kept_old, mut kept_new) = (0, 0);
    for trial in 0..500 {
        let sizes: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..400)).collect();
        let v1 = staged(1, &sizes, &mut rng);
        let v2 = staged(2, &sizes, &mut rng);
        let v3 = staged(3, &sizes, &mut rng);

        // cost of a clean publish, counted on a scratch directory
        let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = StoreConfig::global(scratch.path(), "cp");
        let s = VersionStore::open(cfg.clone()).map_err(|e| e.to_string())?;
        s.publish_version(1, v1.clone(), &[]).map_err(|e| e.to_string())?;
        s.publish_version(2, v2.clone(), &[]).map_err(|e| e.to_string())?;
        let count = CrashPlan::counting();
        VersionStore::open_with(cfg, Some(count.clone()))
            .and_then(|s| s.publish_version(3, v3.clone(), &[]))
            .map_err(|e| e.to_string())?;
        let kill = rng.gen_range(0..count.consumed());

        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = StoreConfig::global(dir.path(), "cp");
        let s = VersionStore::open(cfg.clone()).map_err(|e| e.to_string())?;
        s.publish_version(1, v1, &[]).map_err(|e| e.to_string())?;
        s.publish_version(2, v2.clone(), &[]).map_err(|e| e.to_string())?;
        let plan = CrashPlan::after(kill);
        let doomed = VersionStore::open_with(cfg.clone(), Some(plan.clone())).map_err(|e| e.to_string())?;
        ensure(doomed.publish_version(3, v3.clone(), &[]).is_err() && plan.crashed(), || {
            format!("trial {trial}: publish survived a crash after {kill} units")
        })?;

        let fresh = VersionStore::open(cfg).map_err(|e| e.to_string())?;
        let published = fresh.global_metadata().map(|m| m.latest);
        let loaded = fresh.load_latest(&|_| true, &node0).map_err(|e| e.to_string())?;
        let loaded = loaded.ok_or_else(|| format!("trial {trial}: nothing loadable"))?;
        let files: Vec<(String, Vec<u8>)> = loaded.files.into_iter().collect();
        // The new version counts only once its metadata is in place.
        if published == Some(3) {
            ensure(loaded.version == 3 && files == pairs(&v3), || format!("trial {trial}: v3 published but not loaded"))?;
            kept_new += 1;
        } else {
            ensure(loaded.version == 2 && files == pairs(&v2), || {
                format!("trial {trial}: crash at unit {kill} gave version {} instead of 2", loaded.version)
            })?;
            kept_old += 1;
        }
    }
    Ok(format!("500 kill points: {kept_old} kept the previous version, {kept_new} crashed after publication"))
}

// 3 ------------------------------------------------------------------------

fn random_elems<T: Element>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| {
            let raw: Vec<u8> = (0..T::SIZE).map(|_| rng.gen()).collect();
            T::get(&raw)
        })
        .collect()
}

fn same<T: Element>(a: &[T], b: &[T]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bit_eq(y))
}

fn round_trips<T: Element>(rng: &mut ChaCha8Rng, cases: usize) -> Result<(), String>
where
    Scalar<T>: craftkit::Checkpointable,
    Array<T>: craftkit::Checkpointable,
    MultiArray<T>: craftkit::Checkpointable,
{
    let ty = std::any::type_name::<T>();
    for case in 0..cases {
        let v = random_elems::<T>(rng, 1)[0];
        let x = Scalar::new(v);
        let mut y = Scalar::new(T::default());
        deserialize_entry(&serialize_entry(&x), &mut y).map_err(|e| e.to_string())?;
        ensure(y.get().bit_eq(&v), || format!("{ty} scalar case {case}"))?;

        let len = rng.gen_range(1..80);
        let data = random_elems::<T>(rng, len);
        let x = Array::new(data.clone());
        let mut y = Array::<T>::zeroed(len);
        deserialize_entry(&serialize_entry(&x), &mut y).map_err(|e| e.to_string())?;
        ensure(same(&y, &data), || format!("{ty} array case {case}"))?;

        let (rows, cols) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let data = random_elems::<T>(rng, rows * cols);
        let x = MultiArray::new(rows, cols, data.clone(), None);
        let mut y = MultiArray::<T>::zeroed(rows, cols, None);
        deserialize_entry(&serialize_entry(&x), &mut y).map_err(|e| e.to_string())?;
        ensure(same(y.as_slice(), &data), || format!("{ty} multi-array case {case}"))?;

        let c = rng.gen_range(0..cols);
        let before = random_elems::<T>(rng, rows * cols);
        let x = MultiArray::new(rows, cols, data.clone(), Some(c));
        let mut y = MultiArray::new(rows, cols, before.clone(), Some(c));
        deserialize_entry(&serialize_entry(&x), &mut y).map_err(|e| e.to_string())?;
        for r in 0..rows {
            for k in 0..cols {
                let want = if k == c { data[r * cols + k] } else { before[r * cols + k] };
                ensure(y[(r, k)].bit_eq(&want), || format!("{ty} column {c} case {case}: element ({r},{k})"))?;
            }
        }
    }
    Ok(())
}

fn serialization_round_trip() -> Result<String, String> {
    const CASES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    round_trips::<i32>(&mut rng, CASES)?;
    round_trips::<i64>(&mut rng, CASES)?;
    round_trips::<f32>(&mut rng, CASES)?;
    round_trips::<f64>(&mut rng, CASES)?;
    round_trips::<Complex32>(&mut rng, CASES)?;
    round_trips::<Complex64>(&mut rng, CASES)?;
    for case in 0..CASES {
        let len = rng.gen_range(0..300);
        let src: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let out = Arc::new(Mutex::new(Vec::new()));
        let data = src.clone();
        let x = Packed::new(300, move || data.clone(), |_| Ok(()));
        let sink = out.clone();
        let mut y = Packed::new(300, Vec::new, move |b| {
            *sink.lock().unwrap() = b.to_vec();
            Ok(())
        });
        deserialize_entry(&serialize_entry(&x), &mut y).map_err(|e| e.to_string())?;
        ensure(*out.lock().unwrap() == src, || format!("packed case {case}"))?;
    }
    Ok(format!("{CASES} cases each for scalar, array, multi-array and column selection of 6 element types, plus packed"))
}

// 4 ------------------------------------------------------------------------

fn xor_recovery() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let trials = 700;
    for trial in 0..trials {
        let size = 2 + trial % 7;
        let payloads: Vec<Vec<u8>> =
            (0..size).map(|_| (0..rng.gen_range(0..500)).map(|_| rng.gen()).collect()).collect();
        let block = parity(&payloads);
        let lost = rng.gen_range(0..size);
        let members: Vec<Option<&[u8]>> =
            payloads.iter().enumerate().map(|(i, p)| (i != lost).then_some(p.as_slice())).collect();
        let rebuilt = reconstruct(&members, &block).map_err(|e| e.to_string())?;
        ensure(rebuilt.as_ref() == Some(&(lost, payloads[lost].clone())), || {
            format!("trial {trial}: group of {size} lost member {lost}")
        })?;
    }
    Ok(format!("{trials} trials over group sizes 2 to 8"))
}

// 5 ------------------------------------------------------------------------

fn recovery_policies() -> Result<String, String> {
    let spec = ClusterSpec::new(6, 4).with_reserve(1);
    let initial = spec.initial_members();
    let reserve = spec.reserve().next().expect("one reserve node");
    let configs = [
        RecoveryConfig::new(RecoveryPolicy::Shrinking, SpawnPolicy::NoReuse),
        RecoveryConfig::new(RecoveryPolicy::NonShrinking, SpawnPolicy::NoReuse),
        RecoveryConfig::new(RecoveryPolicy::NonShrinking, SpawnPolicy::Reuse),
    ];
    let mut runs = 0;
    for at in 0..=50u64 {
        let node = (at % 6) as u32;
        let lost: Vec<usize> = (0..initial.len()).filter(|&r| initial[r].node == node).collect();
        for rc in configs {
            let cfg = BarrierConfig::new(60).fail_at(at, FailureTarget::Node(node));
            let run = simulate_barrier(spec, rc, cfg);
            let ctx = || format!("{} {} failing node {node} at barrier {at}", rc.policy.as_str(), rc.spawn.as_str());
            ensure(!run.deadlocked, || format!("{}: deadlock", ctx()))?;
            let outs: Vec<_> = run
                .survivors()
                .map(|r| r.value.as_ref().map_err(|e| format!("{}: {e}", ctx())))
                .collect::<Result<_, _>>()?;
            let want_size = if rc.policy == RecoveryPolicy::Shrinking { 20 } else { 24 };
            ensure(outs.len() == want_size, || format!("{}: {} processes finished", ctx(), outs.len()))?;
            let members = outs[0].members.clone();
            for o in &outs {
                ensure(o.size == want_size && o.members == members && o.epoch == 1, || {
                    format!("{}: rank {} ended with size {} epoch {}", ctx(), o.rank, o.size, o.epoch)
                })?;
                ensure(members[o.rank] == o.me, || format!("{}: rank {} is not its own slot", ctx(), o.rank))?;
                ensure(o.barriers > 0 && o.zone.completions == 1, || format!("{}: zone did not finish", ctx()))?;
            }
            let ranks: BTreeSet<usize> = outs.iter().map(|o| o.rank).collect();
            ensure(ranks == (0..want_size).collect(), || format!("{}: ranks {ranks:?}", ctx()))?;
            match (rc.policy, rc.spawn) {
                (RecoveryPolicy::Shrinking, _) => {
                    let want: Vec<_> = initial.iter().copied().filter(|m| m.node != node).collect();
                    ensure(members == want, || format!("{}: survivors out of order", ctx()))?;
                }
                (RecoveryPolicy::NonShrinking, spawn) => {
                    let home = if spawn == SpawnPolicy::NoReuse { reserve } else { node };
                    for (r, m) in members.iter().enumerate() {
                        if lost.contains(&r) {
                            ensure(m.node == home && !initial.contains(m), || {
                                format!("{}: rank {r} replaced by {m:?}, want a new process on node {home}", ctx())
                            })?;
                        } else {
                            ensure(*m == initial[r], || format!("{}: rank {r} changed owner", ctx()))?;
                        }
                    }
                    let replaced: BTreeSet<usize> = outs.iter().filter(|o| o.replacement).map(|o| o.rank).collect();
                    ensure(replaced == lost.iter().copied().collect(), || format!("{}: replacements at {replaced:?}", ctx()))?;
                }
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} simulated runs, failure before every barrier 0 to 50"))
}

// 6 ------------------------------------------------------------------------

fn unix_micros() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).unwrap().as_micros() as u64
}

fn multi_process_kill() -> Result<String, String> {
    let mut child = Command::new(LAUNCH)
        .args(["--nodes", "4", "--ranks-per-node", "1", "--reserve", "1", "--announce", "--", BENCH])
        .args(["barrier", "--iters", "100", "--delay-ms", "30", "--policy", "nonshrink", "--spawn", "no-reuse"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut stdout = child.stdout.take().unwrap();
    let out_reader = thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    let stderr = child.stderr.take().unwrap();
    let (tx, rx) = std::sync::mpsc::channel();
    let err_reader = thread::spawn(move || {
        let mut all = String::new();
        for line in BufReader::new(stderr).lines().map_while(Result::ok) {
            let _ = tx.send(line.clone());
            all.push_str(&line);
            all.push('\n');
        }
        all
    });

    // "craftkit-launch: endpoint E node N pid P"
    let mut pids = Vec::new();
    while pids.len() < 4 {
        let line = rx.recv_timeout(Duration::from_secs(10)).map_err(|_| "workers did not start".to_string())?;
        if let Some(rest) = line.strip_prefix("craftkit-launch: endpoint ") {
            let w: Vec<&str> = rest.split_whitespace().collect();
            pids.push((w[0].parse::<u64>().unwrap(), w[4].parse::<i32>().unwrap()));
        }
    }
    // let the loop run for a while, then kill endpoint 2
    thread::sleep(Duration::from_millis(800));
    let victim = pids.iter().find(|(e, _)| *e == 2).unwrap().1;
    let killed_at = unix_micros();
    // SAFETY: signalling a child of this test.
    unsafe {
        libc::kill(victim, libc::SIGKILL);
    }

    let deadline = Instant::now() + Duration::from_secs(25);
    let status = loop {
        if let Some(s) = child.try_wait().map_err(|e| e.to_string())? {
            break s;
        }
        if Instant::now() > deadline {
            let _ = child.kill();
            return Err("job did not finish".into());
        }
        thread::sleep(Duration::from_millis(20));
    };
    let out = out_reader.join().unwrap();
    let err = err_reader.join().unwrap();
    ensure(status.success(), || format!("launcher exited with {status}\n{out}{err}"))?;

    let mut detections = Vec::new();
    let mut finished = Vec::new();
    for line in out.lines() {
        let w: Vec<&str> = line.split_whitespace().collect();
        match w.get(4) {
            Some(&"detected") => detections.push((w[1].to_string(), w[5].parse::<u64>().unwrap())),
            Some(&"finished") => finished.push(line.to_string()),
            _ => {}
        }
    }
    let survivors: BTreeSet<&str> = ["ep0", "ep1", "ep3"].into_iter().collect();
    let detected: BTreeSet<&str> = detections.iter().map(|(e, _)| e.as_str()).collect();
    ensure(detected == survivors, || format!("detections {detections:?}\n{out}"))?;
    let worst = detections.iter().map(|(_, t)| t.saturating_sub(killed_at)).max().unwrap();
    ensure(worst < 2_000_000, || format!("slowest detection {worst} us after the kill"))?;
    ensure(finished.len() == 4 && finished.iter().all(|l| l.contains("size 4 epoch 1")), || {
        format!("unexpected ends:\n{out}")
    })?;
    ensure(finished.iter().any(|l| l.contains("replacement true") && l.contains("node 4")), || {
        format!("no replacement on the spare node:\n{out}")
    })?;
    Ok(format!("3 survivors detected the kill within {:.1} ms, group rebuilt to 4 processes", worst as f64 / 1000.0))
}

// 7 ------------------------------------------------------------------------

fn lanczos_end_to_end() -> Result<String, String> {
    let m = MatrixSpec::new(200, 7, 42);
    let spec = ClusterSpec::new(4, 2).with_reserve(1);
    let run = |cfg: LanczosConfig| -> Result<Vec<f64>, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let env = CraftEnv::default().with_path(dir.path());
        let r = simulate_lanczos(spec, RecoveryConfig::default(), cfg, env, "sync");
        ensure(!r.deadlocked, || "deadlock".into())?;
        r.survivors()
            .map(|p| match &p.value {
                Ok(o) if o.steps == 200 => Ok(o.min_eigenvalue),
                Ok(o) => Err(format!("stopped after {} steps", o.steps)),
                Err(e) => Err(e.to_string()),
            })
            .collect()
    };
    let clean = run(LanczosConfig::new(m, 200, 20))?;
    let failed = run(LanczosConfig::new(m, 200, 20).fail(2, 30))?;
    ensure(failed.len() == 8, || format!("{} ranks finished after the failure", failed.len()))?;
    let a = m.dense();
    let oracle = SymmetricEigen::new(DMatrix::from_fn(200, 200, |i, j| a[i][j]))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let diff_clean = failed.iter().map(|v| (v - clean[0]).abs()).fold(0.0, f64::max);
    let diff_oracle = (failed[0] - oracle).abs();
    ensure(diff_clean <= 1e-10, || format!("recovered run differs from the failure-free one by {diff_clean:e}"))?;
    ensure(diff_oracle <= 1e-8, || format!("differs from the dense oracle by {diff_oracle:e}"))?;
    Ok(format!("min eigenvalue {:.12}, |recovered - clean| = {diff_clean:e}, |recovered - dense| = {diff_oracle:e}", failed[0]))
}

// 8 ------------------------------------------------------------------------

fn bench_csv(out: &Path) -> Result<Vec<OverheadReport>, String> {
    let f = std::fs::File::open(out).map_err(|e| format!("{}: {e}", out.display()))?;
    read_csv(f).map_err(|e| e.to_string())
}

fn overhead_ordering() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cp = Vec::new();
    for mode in ["sync", "async", "node"] {
        let out = dir.path().join(format!("{mode}.csv"));
        let o = Command::new(LAUNCH)
            .args(["--nodes", "2", "--ranks-per-node", "2", "--", BENCH, "lanczos"])
            .args(["--iters", "60", "--cp-freq", "10", "--delay-us", "10000"])
            .args(["--global-latency-us", "30000", "--node-latency-us", "500", "--mode", mode])
            .arg("--cp-path")
            .arg(dir.path().join(mode))
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), || format!("{mode} run failed: {}", String::from_utf8_lossy(&o.stderr)))?;
        let rows = bench_csv(&out)?;
        ensure(rows.len() == 1 && rows[0].checkpoints == 6, || format!("{mode}: unexpected report {rows:?}"))?;
        cp.push((mode, rows[0].oh_cp));
    }
    let (sync, asy, node) = (cp[0].1, cp[1].1, cp[2].1);
    ensure(node < asy && asy < sync, || format!("OH_cp in us: {cp:?}"))?;
    Ok(format!("OH_cp node {node} us < async {asy} us < sync {sync} us"))
}

// 9 ------------------------------------------------------------------------

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn bench_to_bytes(args: &[&str], out: &Path) -> Result<Vec<u8>, String> {
    let o = Command::new(BENCH)
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("CRAFT_CP_PATH")
        .env_remove("CRAFTKIT_HUB")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)))?;
    std::fs::read(out).map_err(|e| e.to_string())
}

fn report_determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cases: [(&str, &[&str]); 3] = [
        ("lanczos.csv", &["lanczos", "--n", "120", "--iters", "80", "--cp-freq", "10", "--fail", "1@15,3@47"]),
        ("barrier.csv", &["barrier", "--nodes", "6", "--ranks-per-node", "4", "--fail-node", "2", "--fail-at", "17"]),
        ("barrier-shrink.csv", &["barrier", "--policy", "shrink", "--fail-node", "1", "--fail-at", "5"]),
    ];
    let bless = std::env::var_os("CRAFTKIT_BLESS").is_some();
    for (name, args) in cases {
        let a = bench_to_bytes(args, &dir.path().join(format!("a-{name}")))?;
        let b = bench_to_bytes(args, &dir.path().join(format!("b-{name}")))?;
        ensure(a == b, || format!("{name}: two runs differ"))?;
        let golden = golden_dir().join(name);
        if bless {
            std::fs::create_dir_all(golden_dir()).map_err(|e| e.to_string())?;
            std::fs::write(&golden, &a).map_err(|e| e.to_string())?;
        }
        let want = std::fs::read(&golden).map_err(|e| format!("{}: {e}", golden.display()))?;
        ensure(a == want, || format!("{name} differs from the golden file"))?;
    }
    Ok("3 simulated reports byte-identical across runs and to the golden files".into())
}
