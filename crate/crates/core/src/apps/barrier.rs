//! Barrier loop inside a fault-tolerant zone, used to measure recovery cost.

use serde::{Deserialize, Serialize};

use super::report::PhaseRow;
use crate::aft::{run_aft_zone, ProcessGroup, RecoveryConfig, RecoveryRecord, ZoneOutcome};
use crate::error::Result;
use crate::transport::sim::{SimCluster, SimRun};
use crate::transport::{ClusterSpec, FailureTarget, Member};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarrierConfig {
    pub iterations: u64,
    /// Rank 0 of the initial group injects `target` right before barrier
    /// number `at` (0-based) of the first epoch.
    pub failure: Option<(u64, FailureTarget)>,
    /// Sleep between barriers, for runs with real processes.
    pub delay_ms: u64,
}

impl BarrierConfig {
    pub fn new(iterations: u64) -> Self {
        BarrierConfig { iterations, failure: None, delay_ms: 0 }
    }

    pub fn fail_at(mut self, barrier: u64, target: FailureTarget) -> Self {
        self.failure = Some((barrier, target));
        self
    }
}

/// What one process saw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BarrierOutcome {
    pub me: Member,
    pub rank: usize,
    pub size: usize,
    pub epoch: u64,
    pub members: Vec<Member>,
    pub replacement: bool,
    pub barriers: u64,
    pub zone: ZoneOutcome,
}

impl BarrierOutcome {
    pub fn recoveries(&self) -> &[RecoveryRecord] {
        &self.zone.recoveries
    }
}

/// Run the barrier loop on `group`. Progress survives recoveries: on every
/// entry the members agree on the furthest barrier anyone completed.
pub fn run_barrier_loop(group: &ProcessGroup, cfg: &BarrierConfig) -> Result<BarrierOutcome> {
    let mut done = 0u64;
    let mut executed = 0u64;
    let (_, zone) = run_aft_zone(group, |g| {
        let start = g.allreduce_max(done)?;
        for k in start..cfg.iterations {
            if let Some((at, target)) = cfg.failure {
                if k == at && g.epoch() == 0 && g.rank() == 0 && !g.is_replacement() {
                    g.inject_failure(target)?;
                }
            }
            if cfg.delay_ms > 0 {
                std::thread::sleep(std::time::Duration::from_millis(cfg.delay_ms));
            }
            g.barrier()?;
            executed += 1;
            done = k + 1;
        }
        Ok(())
    })?;
    Ok(BarrierOutcome {
        me: group.me(),
        rank: group.rank(),
        size: group.size(),
        epoch: group.epoch(),
        members: group.members(),
        replacement: group.is_replacement(),
        barriers: executed,
        zone,
    })
}

/// Run the barrier loop on a simulated cluster.
pub fn simulate_barrier(spec: ClusterSpec, recovery: RecoveryConfig, cfg: BarrierConfig) -> SimRun<Result<BarrierOutcome>> {
    SimCluster::new(spec).run(move |t| {
        let group = ProcessGroup::new(Box::new(t), recovery)?;
        run_barrier_loop(&group, &cfg)
    })
}

/// One row per phase of every recovery `out` went through.
pub fn phase_rows(out: &BarrierOutcome, recovery: RecoveryConfig, unit: &str) -> Vec<PhaseRow> {
    out.recoveries()
        .iter()
        .flat_map(|rec| {
            rec.phases.iter().map(move |p| PhaseRow {
                scenario: "barrier".into(),
                policy: recovery.policy.as_str().into(),
                spawn: recovery.spawn.as_str().into(),
                unit: unit.into(),
                epoch: rec.epoch,
                failed_ranks: rec.failed_ranks.len(),
                downgraded: rec.downgraded,
                phase: p.phase.as_str().into(),
                duration: p.duration,
            })
        })
        .collect()
}
