//! Benchmark driver. Runs on a simulated cluster by default; when started by
//! `craftkit-launch` every process runs one rank over the launcher's hub.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use craftkit::apps::barrier::{phase_rows, run_barrier_loop, simulate_barrier, BarrierConfig, BarrierOutcome};
use craftkit::apps::lanczos::{run_lanczos, simulate_lanczos, LanczosConfig, LanczosOutcome};
use craftkit::apps::matrix::MatrixSpec;
use craftkit::apps::nested::{crash_and_restart, expected_result, NestedParams, Stage};
use craftkit::apps::report::{emit_report, Format, OverheadReport, PhaseRow};
use craftkit::transport::process::ProcessTransport;
use craftkit::{
    ClusterSpec, CraftEnv, CraftError, FailureTarget, NodeId, NodeTierSettings, ProcessGroup, RecoveryConfig,
    RecoveryPolicy, Result, Scheme, SpawnPolicy, WriteMode,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "craftkit-bench", version, about = "Checkpoint and recovery benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Distributed Lanczos solver with checkpoints and injected node failures.
    Lanczos(LanczosArgs),
    /// Barrier loop with one injected failure; reports recovery phases.
    Barrier(BarrierArgs),
    /// Nested checkpoints crashed at stages I to V and restarted.
    Nested(NestedArgs),
}

#[derive(Args, Clone, Copy)]
struct ClusterArgs {
    /// Working nodes (simulation only).
    #[arg(long, default_value_t = 4)]
    nodes: u32,
    #[arg(long, default_value_t = 2)]
    ranks_per_node: u32,
    /// Spare nodes for replacements.
    #[arg(long, default_value_t = 1)]
    reserve: u32,
    #[arg(long, default_value_t = 0)]
    sim_seed: u64,
}

impl ClusterArgs {
    fn spec(&self) -> ClusterSpec {
        ClusterSpec::new(self.nodes, self.ranks_per_node).with_reserve(self.reserve).with_seed(self.sim_seed)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Shrink,
    Nonshrink,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpawnArg {
    Reuse,
    NoReuse,
}

#[derive(Args, Clone, Copy)]
struct PolicyArgs {
    /// Defaults to CRAFT_COMM_RECOVERY_POLICY.
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Defaults to CRAFT_COMM_SPAWN_POLICY.
    #[arg(long, value_enum)]
    spawn: Option<SpawnArg>,
}

impl PolicyArgs {
    fn apply(&self, env: &mut CraftEnv) {
        if let Some(p) = self.policy {
            env.recovery_policy = match p {
                PolicyArg::Shrink => RecoveryPolicy::Shrinking,
                PolicyArg::Nonshrink => RecoveryPolicy::NonShrinking,
            };
        }
        if let Some(s) = self.spawn {
            env.spawn_policy = match s {
                SpawnArg::Reuse => SpawnPolicy::Reuse,
                SpawnArg::NoReuse => SpawnPolicy::NoReuse,
            };
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Sync,
    Async,
    ZeroCopy,
    /// Synchronous writes to node-local storage with partner copies.
    Node,
    /// Node-local storage with XOR parity.
    NodeXor,
}

#[derive(Args, Clone)]
struct StorageArgs {
    /// Checkpoint directory; defaults to CRAFT_CP_PATH, or a fresh temporary
    /// directory in simulation. Must not hold checkpoints of another run.
    #[arg(long)]
    cp_path: Option<PathBuf>,
    /// Defaults to the mode selected by CRAFT_WRITE_ASYNC*.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Extra time spent on every global-tier file write.
    #[arg(long, default_value_t = 0)]
    global_latency_us: u64,
    /// Extra time spent on every node-tier file write.
    #[arg(long, default_value_t = 0)]
    node_latency_us: u64,
}

impl StorageArgs {
    fn mode_name(&self, env: &CraftEnv) -> &'static str {
        match self.mode {
            Some(ModeArg::Sync) => "sync",
            Some(ModeArg::Async) => "async",
            Some(ModeArg::ZeroCopy) => "zero-copy",
            Some(ModeArg::Node) => "node",
            Some(ModeArg::NodeXor) => "node-xor",
            None => match env.write_mode {
                WriteMode::Sync => "sync",
                WriteMode::AsyncCopy => "async",
                WriteMode::AsyncZeroCopy => "zero-copy",
            },
        }
    }

    fn apply(&self, env: &mut CraftEnv) {
        if let Some(p) = &self.cp_path {
            env.cp_path = p.clone();
        }
        env.global_write_latency = Duration::from_micros(self.global_latency_us);
        env.node_write_latency = Duration::from_micros(self.node_latency_us);
        let node = |scheme| NodeTierSettings { scheme, flush_every: 0, xor_group_size: 4 };
        match self.mode {
            None => {}
            Some(ModeArg::Sync) => env.write_mode = WriteMode::Sync,
            Some(ModeArg::Async) => env.write_mode = WriteMode::AsyncCopy,
            Some(ModeArg::ZeroCopy) => env.write_mode = WriteMode::AsyncZeroCopy,
            Some(ModeArg::Node) => {
                env.write_mode = WriteMode::Sync;
                env.node_tier = Some(node(Scheme::Partner));
            }
            Some(ModeArg::NodeXor) => {
                env.write_mode = WriteMode::Sync;
                env.node_tier = Some(node(Scheme::PartnerXor));
            }
        }
    }
}

#[derive(Args)]
struct LanczosArgs {
    /// Matrix rows.
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    nnz_per_row: usize,
    /// Matrix and start vector seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    iters: u64,
    #[arg(long, default_value_t = 20)]
    cp_freq: i64,
    /// Node failures as `node@iteration`, comma separated, in order.
    #[arg(long, value_parser = parse_failures, default_value = "")]
    fail: Failures,
    /// Busy time per iteration.
    #[arg(long, default_value_t = 0)]
    delay_us: u64,
    #[command(flatten)]
    cluster: ClusterArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    #[command(flatten)]
    storage: StorageArgs,
    /// Report file, CSV or `.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
struct Failures(Vec<(NodeId, u64)>);

fn parse_failures(s: &str) -> std::result::Result<Failures, String> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (node, iter) = p.split_once('@').ok_or_else(|| format!("{p:?} is not node@iteration"))?;
            let node = node.trim().parse().map_err(|_| format!("bad node in {p:?}"))?;
            let iter = iter.trim().parse().map_err(|_| format!("bad iteration in {p:?}"))?;
            Ok((node, iter))
        })
        .collect::<std::result::Result<_, _>>()
        .map(Failures)
}

#[derive(Args)]
struct BarrierArgs {
    #[arg(long, default_value_t = 50)]
    iters: u64,
    /// Kill this node before barrier `--fail-at`.
    #[arg(long)]
    fail_node: Option<NodeId>,
    /// Kill this single process (endpoint id) before barrier `--fail-at`.
    #[arg(long, conflicts_with = "fail_node")]
    fail_rank: Option<u64>,
    #[arg(long, default_value_t = 10)]
    fail_at: u64,
    /// Pause before every barrier.
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
    #[command(flatten)]
    cluster: ClusterArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Phase breakdown file, CSV or `.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NestedArgs {
    /// Parent of the per-stage checkpoint directories; temporary when unset.
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sync")]
    mode: ModeArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct NestedRow {
    stage: &'static str,
    restored_l1: String,
    restored_l2: String,
    expected_l1: String,
    expected_l2: String,
    result_ok: bool,
    pass: bool,
}

fn show(v: Option<i64>) -> String {
    v.map_or_else(|| "-".into(), |v| v.to_string())
}

fn emit<T: Serialize>(rows: &[T], out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(p) => emit_report(rows, Format::for_path(p), p),
        None => Ok(()),
    }
}

/// The launcher's transport, if this process was started by one.
fn worker_group(recovery: RecoveryConfig) -> Result<Option<ProcessGroup>> {
    match ProcessTransport::from_env()? {
        Some(t) => Ok(Some(ProcessGroup::new(Box::new(t), recovery)?)),
        None => Ok(None),
    }
}

fn temp_dir() -> Result<tempfile::TempDir> {
    tempfile::tempdir().map_err(|e| CraftError::Io { path: std::env::temp_dir(), source: e })
}

/// Keeps a temporary checkpoint directory alive for the run.
fn sim_path(env: &mut CraftEnv, explicit: bool) -> Result<Option<tempfile::TempDir>> {
    if explicit || std::env::var_os(craftkit::env::CP_PATH).is_some() {
        return Ok(None);
    }
    let dir = temp_dir()?;
    env.cp_path = dir.path().to_path_buf();
    Ok(Some(dir))
}

fn print_report(r: &OverheadReport) {
    println!(
        "total {} {unit}: baseline {} cp {} ({} writes) res {} rec {} redo {}; recoveries {}; min eigenvalue {:.15e}",
        r.total,
        r.baseline,
        r.oh_cp,
        r.checkpoints,
        r.oh_res,
        r.oh_rec,
        r.oh_redo,
        r.recoveries,
        r.min_eigenvalue,
        unit = r.unit,
    );
}

fn lanczos(a: LanczosArgs) -> Result<()> {
    let mut env = CraftEnv::from_env()?;
    a.policy.apply(&mut env);
    a.storage.apply(&mut env);
    let mode = a.storage.mode_name(&env);
    let mut cfg = LanczosConfig::new(MatrixSpec::new(a.n, a.nnz_per_row, a.seed), a.iters, a.cp_freq);
    cfg.failures = a.fail.0.clone();
    cfg.iteration_delay_us = a.delay_us;
    let recovery = RecoveryConfig::from_env(&env);

    if let Some(group) = worker_group(recovery)? {
        let out: LanczosOutcome = run_lanczos(&group, &cfg, &env, mode)?;
        if out.rank == 0 {
            print_report(&out.report);
            emit(&[out.report], &a.out)?;
        }
        return Ok(());
    }

    let _tmp = sim_path(&mut env, a.storage.cp_path.is_some())?;
    let run = simulate_lanczos(a.cluster.spec(), recovery, cfg, env, mode);
    if run.deadlocked {
        return Err(CraftError::Unrecoverable("simulation deadlocked".into()));
    }
    let mut reports = Vec::new();
    for r in run.survivors() {
        match &r.value {
            Ok(o) => reports.push((o.rank, o.report.clone())),
            Err(e) => return Err(CraftError::Unrecoverable(format!("endpoint {}: {e}", r.member.endpoint))),
        }
    }
    reports.sort_by_key(|(rank, _)| *rank);
    let rows: Vec<OverheadReport> = reports.into_iter().map(|(_, r)| r).collect();
    if let Some(r) = rows.first() {
        print_report(r);
    }
    emit(&rows, &a.out)
}

fn print_barrier(o: &BarrierOutcome) {
    for at in &o.zone.detections {
        println!("endpoint {} rank {} detected {at}", o.me.endpoint, o.rank);
    }
    println!(
        "endpoint {} rank {} finished size {} epoch {} node {} replacement {} barriers {}",
        o.me.endpoint, o.rank, o.size, o.epoch, o.me.node, o.replacement, o.barriers
    );
}

fn barrier(a: BarrierArgs) -> Result<()> {
    let mut env = CraftEnv::from_env()?;
    a.policy.apply(&mut env);
    let recovery = RecoveryConfig::from_env(&env);
    let mut cfg = BarrierConfig::new(a.iters);
    cfg.delay_ms = a.delay_ms;
    if let Some(n) = a.fail_node {
        cfg = cfg.fail_at(a.fail_at, FailureTarget::Node(n));
    } else if let Some(e) = a.fail_rank {
        cfg = cfg.fail_at(a.fail_at, FailureTarget::Rank(craftkit::EndpointId(e)));
    }

    if let Some(group) = worker_group(recovery)? {
        let out = run_barrier_loop(&group, &cfg)?;
        print_barrier(&out);
        if out.rank == 0 {
            emit(&phase_rows(&out, recovery, group.clock_unit()), &a.out)?;
        }
        return Ok(());
    }

    let run = simulate_barrier(a.cluster.spec(), recovery, cfg);
    if run.deadlocked {
        return Err(CraftError::Unrecoverable("simulation deadlocked".into()));
    }
    let mut root: Option<BarrierOutcome> = None;
    for r in run.survivors() {
        match &r.value {
            Ok(o) if o.rank == 0 => root = Some(o.clone()),
            Ok(_) => {}
            Err(e) => return Err(CraftError::Unrecoverable(format!("endpoint {}: {e}", r.member.endpoint))),
        }
    }
    let root = root.ok_or_else(|| CraftError::Unrecoverable("no rank 0 at the end".into()))?;
    let rows: Vec<PhaseRow> = phase_rows(&root, recovery, "deliveries");
    println!("final size {} epoch {} after {} deliveries", root.size, root.epoch, run.deliveries);
    for r in &rows {
        println!("epoch {} {:<20} {:>8} {}", r.epoch, r.phase, r.duration, r.unit);
    }
    emit(&rows, &a.out)
}

fn nested(a: NestedArgs) -> Result<()> {
    let tmp;
    let base: &Path = match &a.dir {
        Some(d) => d,
        None => {
            tmp = temp_dir()?;
            tmp.path()
        }
    };
    let p = NestedParams::default();
    let mut rows = Vec::new();
    for stage in Stage::ALL {
        let mut env = CraftEnv::from_env()?;
        let storage =
            StorageArgs { cp_path: Some(base.join(stage.as_str())), mode: Some(a.mode), global_latency_us: 0, node_latency_us: 0 };
        storage.apply(&mut env);
        let (_, second) = crash_and_restart(&ProcessGroup::solo(), &env, &p, stage)?;
        let (e1, e2) = stage.expected_restore();
        let result_ok = second.result == expected_result(&p);
        let pass = (second.restored_l1, second.restored_l2) == (e1, e2) && result_ok;
        println!(
            "stage {:<3} restored ({},{}) expected ({},{}) {}",
            stage.as_str(),
            show(second.restored_l1),
            show(second.restored_l2),
            show(e1),
            show(e2),
            if pass { "ok" } else { "MISMATCH" }
        );
        rows.push(NestedRow {
            stage: stage.as_str(),
            restored_l1: show(second.restored_l1),
            restored_l2: show(second.restored_l2),
            expected_l1: show(e1),
            expected_l2: show(e2),
            result_ok,
            pass,
        });
    }
    emit(&rows, &a.out)?;
    if rows.iter().all(|r| r.pass) {
        Ok(())
    } else {
        Err(CraftError::Unrecoverable("restored iterations differ from the expected table".into()))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Lanczos(a) => lanczos(a),
        Cmd::Barrier(a) => barrier(a),
        Cmd::Nested(a) => nested(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("craftkit-bench: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failure_lists() {
        assert_eq!(parse_failures("").unwrap().0, vec![]);
        assert_eq!(parse_failures("2@30, 0@7").unwrap().0, vec![(2, 30), (0, 7)]);
        assert!(parse_failures("2:30").is_err());
        assert!(parse_failures("x@1").is_err());
    }
}
