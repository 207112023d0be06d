//! Automatic fault tolerance.
//!
//! A [`ProcessGroup`] detects fail-stop failures of its members and can be
//! revoked, shrunk, or rebuilt with freshly spawned replacements. The
//! [`run_aft_zone`] loop wraps an application body: whenever the body hits a
//! process failure, the group is repaired and the body runs again, usually
//! restoring its state from checkpoints.

mod codec;
mod group;
mod ledger;
mod zone;

use serde::{Deserialize, Serialize};

pub use codec::View;
pub use group::ProcessGroup;
pub use ledger::{NodeLedger, Placement};
pub use zone::{run_aft_zone, ZoneOutcome};

use crate::env::{CraftEnv, RecoveryPolicy, SpawnPolicy};
use crate::transport::{Member, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoveryConfig {
    pub policy: RecoveryPolicy,
    pub spawn: SpawnPolicy,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig { policy: RecoveryPolicy::NonShrinking, spawn: SpawnPolicy::NoReuse }
    }
}

impl RecoveryConfig {
    pub fn new(policy: RecoveryPolicy, spawn: SpawnPolicy) -> Self {
        RecoveryConfig { policy, spawn }
    }

    pub fn from_env(env: &CraftEnv) -> Self {
        RecoveryConfig { policy: env.recovery_policy, spawn: env.spawn_policy }
    }
}

/// Steps of a group recovery, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    RevokeShrink,
    SpawnInfo,
    SpawnMerge,
    RankRedistribution,
    ResourceManagement,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::RevokeShrink,
        Phase::SpawnInfo,
        Phase::SpawnMerge,
        Phase::RankRedistribution,
        Phase::ResourceManagement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::RevokeShrink => "revoke_shrink",
            Phase::SpawnInfo => "spawn_info",
            Phase::SpawnMerge => "spawn_merge",
            Phase::RankRedistribution => "rank_redistribution",
            Phase::ResourceManagement => "resource_management",
        }
    }
}

/// Duration of one phase in transport clock units (delivered messages in
/// simulation, microseconds otherwise), as measured by the deciding process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: Phase,
    pub duration: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    /// Epoch the group entered with this recovery.
    pub epoch: u64,
    /// Ranks lost, numbered in the previous epoch.
    pub failed_ranks: Vec<usize>,
    pub failed_nodes: Vec<NodeId>,
    /// Policy actually applied.
    pub policy: RecoveryPolicy,
    /// Non-shrinking recovery fell back to shrinking for lack of spare nodes.
    pub downgraded: bool,
    pub duration: u64,
    pub phases: Vec<PhaseTiming>,
    /// (rank, new process) for every spawned replacement.
    pub replacements: Vec<(usize, Member)>,
}
