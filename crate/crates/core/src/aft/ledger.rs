use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::env::SpawnPolicy;
use crate::transport::{Member, NodeId};

/// Bookkeeping of working, reserve and failed nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLedger {
    pub working: BTreeSet<NodeId>,
    /// Unused spare nodes, consumed front to back.
    pub reserve: Vec<NodeId>,
    pub failed: BTreeSet<NodeId>,
}

/// Where replacements go and the ledger afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    /// One target node per failed member, in the order given.
    pub nodes: Vec<NodeId>,
    pub next: NodeLedger,
}

impl NodeLedger {
    pub fn new(members: &[Member], reserve: impl IntoIterator<Item = NodeId>) -> Self {
        NodeLedger {
            working: members.iter().map(|m| m.node).collect(),
            reserve: reserve.into_iter().collect(),
            failed: BTreeSet::new(),
        }
    }

    /// Placement of replacements for `failed`, or `None` when NO-REUSE runs
    /// out of reserve nodes. `survivors` decides which nodes are dead: a node
    /// that still hosts a survivor is not.
    pub fn plan(&self, failed: &[Member], survivors: &[Member], spawn: SpawnPolicy) -> Option<Placement> {
        match spawn {
            SpawnPolicy::Reuse => Some(Placement { nodes: failed.iter().map(|m| m.node).collect(), next: self.clone() }),
            SpawnPolicy::NoReuse => {
                let lost: BTreeSet<NodeId> = failed.iter().map(|m| m.node).collect();
                if lost.len() > self.reserve.len() {
                    return None;
                }
                let map: BTreeMap<NodeId, NodeId> = lost.iter().copied().zip(self.reserve.iter().copied()).collect();
                let alive: BTreeSet<NodeId> = survivors.iter().map(|m| m.node).collect();
                let mut next = self.clone();
                next.reserve.drain(..lost.len());
                for (&old, &new) in &map {
                    next.working.insert(new);
                    if !alive.contains(&old) {
                        next.working.remove(&old);
                        next.failed.insert(old);
                    }
                }
                Some(Placement { nodes: failed.iter().map(|m| map[&m.node]).collect(), next })
            }
        }
    }

    pub fn after_shrink(&self, survivors: &[Member]) -> NodeLedger {
        let working: BTreeSet<NodeId> = survivors.iter().map(|m| m.node).collect();
        let mut failed = self.failed.clone();
        failed.extend(self.working.difference(&working));
        NodeLedger { working, reserve: self.reserve.clone(), failed }
    }

    /// The three partitions are pairwise disjoint.
    pub fn is_consistent(&self) -> bool {
        let reserve: BTreeSet<NodeId> = self.reserve.iter().copied().collect();
        reserve.len() == self.reserve.len()
            && self.working.is_disjoint(&reserve)
            && self.working.is_disjoint(&self.failed)
            && reserve.is_disjoint(&self.failed)
    }
}
