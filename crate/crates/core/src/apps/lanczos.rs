//! Distributed Lanczos iteration for the smallest eigenvalue of a sparse
//! symmetric matrix, checkpointed and run inside a fault-tolerant zone.
//!
//! Vectors are split into contiguous row blocks, one per rank. Each step
//! does one halo-exchanging product and two global sums. The checkpoint holds
//! the two current Lanczos vectors, the coefficients so far and the step
//! counter, which is all the recurrence needs to continue.

use serde::{Deserialize, Serialize};

use super::matrix::{block_range, LocalMatrix, MatrixSpec, Operator};
use super::report::OverheadReport;
use super::tridiag::min_eigenvalue;
use crate::aft::{run_aft_zone, ProcessGroup, RecoveryConfig, ZoneOutcome};
use crate::checkpoint::Checkpoint;
use crate::env::{CraftEnv, WriteMode};
use crate::error::{CraftError, Result};
use crate::transport::sim::{SimCluster, SimRun};
use crate::transport::{ClusterSpec, FailureTarget, NodeId};
use crate::types::{Array, Scalar};

pub const CHECKPOINT_NAME: &str = "lanczos";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanczosConfig {
    pub matrix: MatrixSpec,
    pub iterations: u64,
    pub cp_freq: i64,
    /// `(node, iteration)`: the k-th entry kills `node` right before that
    /// iteration, once the group has recovered k times.
    pub failures: Vec<(NodeId, u64)>,
    /// Start vector; a seeded pseudo-random one when `None`.
    pub start: Option<Vec<f64>>,
    /// Busy time added to every iteration, for runs with real processes.
    pub iteration_delay_us: u64,
}

impl LanczosConfig {
    pub fn new(matrix: MatrixSpec, iterations: u64, cp_freq: i64) -> Self {
        LanczosConfig { matrix, iterations, cp_freq, failures: Vec::new(), start: None, iteration_delay_us: 0 }
    }

    pub fn fail(mut self, node: NodeId, iteration: u64) -> Self {
        self.failures.push((node, iteration));
        self
    }
}

/// Unit-norm start vector over all `n` rows.
pub fn start_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            let h = (i as u64 ^ seed.rotate_left(32)).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            0.5 + ((h >> 11) as f64 / (1u64 << 53) as f64)
        })
        .collect();
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v {
        *x /= norm;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanczosOutcome {
    pub rank: usize,
    pub size: usize,
    pub replacement: bool,
    /// Steps taken; fewer than configured after an exact breakdown.
    pub steps: u64,
    pub alpha: Vec<f64>,
    /// Off-diagonal coefficients `beta_2 ..= beta_steps`.
    pub beta: Vec<f64>,
    pub min_eigenvalue: f64,
    pub report: OverheadReport,
    pub zone: ZoneOutcome,
}

#[derive(Debug, Default)]
struct Clock {
    cp: u64,
    res: u64,
    rec: u64,
    redo: u64,
    checkpoints: u64,
}

/// Run the solver on `group` with the matrix of `cfg`.
pub fn run_lanczos(group: &ProcessGroup, cfg: &LanczosConfig, env: &CraftEnv, mode: &str) -> Result<LanczosOutcome> {
    run_lanczos_on(group, &cfg.matrix, cfg, env, mode)
}

/// Run the solver on `group` for an arbitrary operator.
pub fn run_lanczos_on(
    group: &ProcessGroup,
    op: &dyn Operator,
    cfg: &LanczosConfig,
    env: &CraftEnv,
    mode: &str,
) -> Result<LanczosOutcome> {
    if cfg.iterations == 0 || cfg.start.as_ref().is_some_and(|s| s.len() != op.n()) {
        return Err(CraftError::Config("need at least one iteration and a start vector of matrix size".into()));
    }
    let start = match &cfg.start {
        Some(s) => {
            let mut s = s.clone();
            normalize(&mut s);
            s
        }
        None => start_vector(op.n(), cfg.matrix.seed),
    };
    let t0 = group.now();
    let mut clock = Clock::default();
    let mut furthest = 0u64;
    let mut failed_at: Option<u64> = None;

    let ((steps, alpha, beta), zone) = run_aft_zone(group, |g| {
        if let Some(at) = failed_at.take() {
            clock.rec += g.now().saturating_sub(at);
        }
        let r = body(g, op, cfg, env, &start, &mut clock, &mut furthest);
        if r.is_err() {
            failed_at = Some(g.now());
        }
        r
    })?;
    let total = group.now() - t0;
    let min = min_eigenvalue(&alpha, &beta);
    let overhead = clock.cp + clock.res + clock.rec + clock.redo;
    let report = OverheadReport {
        scenario: "lanczos".into(),
        mode: mode.into(),
        unit: group.clock_unit().into(),
        ranks: group.size(),
        iterations: cfg.iterations,
        cp_freq: cfg.cp_freq,
        total,
        baseline: total.saturating_sub(overhead),
        oh_cp: clock.cp,
        oh_res: clock.res,
        oh_rec: clock.rec,
        oh_redo: clock.redo,
        checkpoints: clock.checkpoints,
        cp_avg: if clock.checkpoints > 0 { clock.cp as f64 / clock.checkpoints as f64 } else { 0.0 },
        recoveries: zone.recoveries.len() as u64,
        min_eigenvalue: min,
    };
    Ok(LanczosOutcome {
        rank: group.rank(),
        size: group.size(),
        replacement: group.is_replacement(),
        steps,
        alpha,
        beta,
        min_eigenvalue: min,
        report,
        zone,
    })
}

/// One entry of the zone: restore or start, then iterate to the end.
fn body(
    g: &ProcessGroup,
    op: &dyn Operator,
    cfg: &LanczosConfig,
    env: &CraftEnv,
    start: &[f64],
    clock: &mut Clock,
    furthest: &mut u64,
) -> Result<(u64, Vec<f64>, Vec<f64>)> {
    let n = op.n();
    let iters = cfg.iterations as usize;
    *furthest = g.allreduce_max(*furthest)?;
    let local = LocalMatrix::new(op, g.size(), g.rank());
    let range = block_range(n, g.size(), g.rank());

    let mut cp = Checkpoint::new(CHECKPOINT_NAME, g, env)?;
    let v = cp.add("v", Array::new(start[range.clone()].to_vec()))?;
    let v_prev = cp.add("v_prev", Array::<f64>::zeroed(range.len()))?;
    let alpha = cp.add("alpha", Array::<f64>::zeroed(iters.max(1)))?;
    let beta = cp.add("beta", Array::<f64>::zeroed(iters + 1))?;
    let done = cp.add("j", Scalar::new(0i64))?;
    let stopped = cp.add("stopped", Scalar::new(0i64))?;
    cp.commit()?;
    let t = g.now();
    if cp.restart_if_needed()? {
        clock.res += g.now() - t;
    }

    while (done.read().get() as usize) < iters && stopped.read().get() == 0 {
        let jn = done.read().get() as u64 + 1;
        for (k, &(node, at)) in cfg.failures.iter().enumerate() {
            let injector = g.members().iter().position(|m| m.node != node);
            if k as u64 == g.epoch() && at == jn && injector == Some(g.rank()) {
                log::info!("rank {} kills node {node} before iteration {jn}", g.rank());
                g.inject_failure(FailureTarget::Node(node))?;
            }
        }
        if env.write_mode == WriteMode::AsyncZeroCopy {
            let t = g.now();
            cp.wait()?;
            clock.cp += g.now() - t;
        }

        let t = g.now();
        let x = v.read().to_vec();
        let mut w = local.matvec(g, &x, jn)?;
        let a = g.allreduce_sum(&[dot(&w, &x)])?[0];
        let bj = beta.read()[jn as usize - 1];
        {
            let vp = v_prev.read();
            for i in 0..w.len() {
                w[i] -= a * x[i] + bj * vp[i];
            }
        }
        let b = g.allreduce_sum(&[dot(&w, &w)])?[0].sqrt();
        alpha.write()[jn as usize - 1] = a;
        beta.write()[jn as usize] = b;
        if b <= 1e-14 * (a.abs() + bj) {
            stopped.write().set(1);
        } else {
            v_prev.write().copy_from_slice(&x);
            let mut vw = v.write();
            for (dst, wi) in vw.iter_mut().zip(&w) {
                *dst = wi / b;
            }
        }
        done.write().set(jn as i64);
        if cfg.iteration_delay_us > 0 {
            std::thread::sleep(std::time::Duration::from_micros(cfg.iteration_delay_us));
        }
        if jn <= *furthest {
            clock.redo += g.now() - t;
        }
        *furthest = (*furthest).max(jn);

        let t = g.now();
        if cp.update_and_write_at(jn as i64, cfg.cp_freq)?.should_write {
            clock.checkpoints += 1;
        }
        clock.cp += g.now() - t;
    }
    let t = g.now();
    cp.wait()?;
    clock.cp += g.now() - t;

    let steps = done.read().get() as usize;
    let a = alpha.read()[..steps].to_vec();
    let b = beta.read()[1..steps].to_vec();
    Ok((steps as u64, a, b))
}

/// Run the solver on a simulated cluster.
pub fn simulate_lanczos(
    spec: ClusterSpec,
    recovery: RecoveryConfig,
    cfg: LanczosConfig,
    env: CraftEnv,
    mode: &str,
) -> SimRun<Result<LanczosOutcome>> {
    let mode = mode.to_string();
    SimCluster::new(spec).run(move |t| {
        let group = ProcessGroup::new(Box::new(t), recovery)?;
        run_lanczos(&group, &cfg, &env, &mode)
    })
}
