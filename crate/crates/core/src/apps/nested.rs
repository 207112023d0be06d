//! Two nested checkpoint levels: an outer loop checkpointed by `CL1` and an
//! inner loop checkpointed by `CL2`, declared as a child of `CL1`.
//!
//! A run can be cut short at a chosen point to mimic a job failure. The next
//! run on the same directory restarts from whatever the checkpoints hold and
//! reports which iteration values it restored.

use serde::{Deserialize, Serialize};

use crate::aft::ProcessGroup;
use crate::checkpoint::Checkpoint;
use crate::env::CraftEnv;
use crate::error::Result;
use crate::types::{Array, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedParams {
    pub l1_iters: i64,
    pub l1_freq: i64,
    pub l2_iters: i64,
    pub l2_freq: i64,
}

impl Default for NestedParams {
    fn default() -> Self {
        NestedParams { l1_iters: 2, l1_freq: 1, l2_iters: 30, l2_freq: 10 }
    }
}

/// Failure stages of the default scenario, in program order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    I,
    II,
    III,
    IV,
    V,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::I, Stage::II, Stage::III, Stage::IV, Stage::V];

    /// Iteration pair (outer, inner) at whose start the job dies. Every stage
    /// sits between two consecutive checkpoint writes.
    pub fn crash_point(self) -> (i64, i64) {
        match self {
            Stage::I => (1, 5),
            Stage::II => (1, 15),
            Stage::III => (1, 25),
            Stage::IV => (2, 5),
            Stage::V => (2, 15),
        }
    }

    /// Iterations a restart after this stage should restore with the
    /// default parameters: (outer, inner).
    pub fn expected_restore(self) -> (Option<i64>, Option<i64>) {
        match self {
            Stage::I => (None, None),
            Stage::II => (None, Some(10)),
            Stage::III => (None, Some(20)),
            Stage::IV => (Some(1), None),
            Stage::V => (Some(1), Some(10)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::I => "I",
            Stage::II => "II",
            Stage::III => "III",
            Stage::IV => "IV",
            Stage::V => "V",
        }
    }
}

/// Result of one run of the nested loops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedRun {
    /// Outer iteration restored by `CL1`, if it restored anything.
    pub restored_l1: Option<i64>,
    /// Inner iteration restored by the first `CL2` read, if any.
    pub restored_l2: Option<i64>,
    /// Times `CL2` actually read from disk.
    pub l2_reads: u64,
    pub crashed: bool,
    /// Final value of the outer accumulator (meaningful if not crashed).
    pub result: i64,
}

fn inner_term(l1: i64, l2: i64) -> i64 {
    l1 * 1000 + l2 * l2
}

/// Outer accumulator of a run without failures.
pub fn expected_result(p: &NestedParams) -> i64 {
    (1..=p.l1_iters).map(|l1| (1..=p.l2_iters).map(|l2| inner_term(l1, l2)).sum::<i64>()).sum()
}

/// Run the nested loops once. With `crash = Some((l1, l2))` the run stops
/// at the start of that inner iteration, leaving the checkpoints as they are.
pub fn run_nested(group: &ProcessGroup, env: &CraftEnv, p: &NestedParams, crash: Option<(i64, i64)>) -> Result<NestedRun> {
    let mut cl1 = Checkpoint::new("CL1", group, env)?;
    let mut cl2 = Checkpoint::new("CL2", group, env)?;
    cl2.sub_cp(&cl1)?;
    let l1 = cl1.add("l1iter", Scalar::new(0i64))?;
    let acc1 = cl1.add("acc1", Array::new(vec![0i64; 2]))?;
    let l2 = cl2.add("l2iter", Scalar::new(0i64))?;
    let acc2 = cl2.add("acc2", Scalar::new(0i64))?;
    cl1.disable_scr();
    cl1.commit()?;
    cl2.commit()?;

    let mut run = NestedRun { restored_l1: None, restored_l2: None, l2_reads: 0, crashed: false, result: 0 };
    if cl1.restart_if_needed()? {
        run.restored_l1 = Some(l1.read().get());
    }
    let start = l1.read().get() + 1;
    for i in start..=p.l1_iters {
        l2.write().set(0);
        acc2.write().set(0);
        if cl2.restart_if_needed()? {
            run.l2_reads += 1;
            if run.restored_l2.is_none() {
                run.restored_l2 = Some(l2.read().get());
            }
        }
        let inner_start = l2.read().get() + 1;
        for j in inner_start..=p.l2_iters {
            if crash == Some((i, j)) {
                run.crashed = true;
                return Ok(run);
            }
            // zero-copy writes may still be reading the entries
            cl2.wait()?;
            let v = acc2.read().get() + inner_term(i, j);
            acc2.write().set(v);
            l2.write().set(j);
            cl2.update_and_write_at(j, p.l2_freq)?;
        }
        cl2.wait()?;
        {
            let mut a = acc1.write();
            a[0] += acc2.read().get();
            a[1] += 1;
        }
        l1.write().set(i);
        cl1.update_and_write_at(i, p.l1_freq)?;
        // The outer write invalidates the inner checkpoint once it lands;
        // it has to land before the inner level writes again.
        cl1.wait()?;
    }
    run.result = acc1.read()[0];
    Ok(run)
}

/// Crash at `stage`, then restart. Returns the crashed and the restarted run.
pub fn crash_and_restart(group: &ProcessGroup, env: &CraftEnv, p: &NestedParams, stage: Stage) -> Result<(NestedRun, NestedRun)> {
    let first = run_nested(group, env, p, Some(stage.crash_point()))?;
    let second = run_nested(group, env, p, None)?;
    Ok((first, second))
}
