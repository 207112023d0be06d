//! Message transports underneath a [`ProcessGroup`](crate::aft::ProcessGroup).
//!
//! A transport moves opaque byte messages between endpoints and reports
//! fail-stop failures. Two implementations exist: [`sim`], a deterministic
//! in-memory cluster where every rank runs on its own thread under a single
//! scheduler, and [`process`], where every rank is an OS process connected to
//! the launcher's [`hub`] over a local socket.

pub mod hub;
pub mod process;
pub mod sim;
mod wire;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::CommError;

pub type NodeId = u32;

/// Globally unique process identity. Never reused, also not by replacements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EndpointId(pub u64);

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ep{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Member {
    pub endpoint: EndpointId,
    pub node: NodeId,
}

/// Shape of a cluster. Working nodes are `0..num_nodes`, reserve nodes
/// follow them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub num_nodes: u32,
    pub ranks_per_node: u32,
    pub reserve_nodes: u32,
    pub seed: u64,
}

impl ClusterSpec {
    pub fn new(num_nodes: u32, ranks_per_node: u32) -> Self {
        ClusterSpec { num_nodes, ranks_per_node, reserve_nodes: 0, seed: 0 }
    }

    pub fn with_reserve(mut self, reserve_nodes: u32) -> Self {
        self.reserve_nodes = reserve_nodes;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn total_ranks(&self) -> usize {
        (self.num_nodes * self.ranks_per_node) as usize
    }

    pub fn working_nodes(&self) -> impl Iterator<Item = NodeId> {
        0..self.num_nodes
    }

    pub fn reserve(&self) -> impl Iterator<Item = NodeId> {
        self.num_nodes..self.num_nodes + self.reserve_nodes
    }

    /// Initial placement: ranks fill nodes in order.
    pub fn initial_members(&self) -> Vec<Member> {
        (0..self.total_ranks() as u64)
            .map(|i| Member { endpoint: EndpointId(i), node: (i / self.ranks_per_node as u64) as NodeId })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureTarget {
    Rank(EndpointId),
    Node(NodeId),
}

/// How this process came to life.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Role {
    /// Started with the job; the initial world in rank order.
    Initial(Vec<Member>),
    /// Spawned as a replacement by `parent`.
    Spawned { parent: EndpointId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Incoming {
    Message { from: EndpointId, bytes: Vec<u8> },
    /// `EndpointId` has failed. Reported once per endpoint.
    Failed(EndpointId),
}

pub trait Transport: Send {
    fn me(&self) -> Member;

    fn role(&self) -> Role;

    fn cluster(&self) -> ClusterSpec;

    /// Send to `to`; fails with [`CommError::ProcFailed`] if `to` is known
    /// to have failed.
    fn send(&mut self, to: EndpointId, bytes: Vec<u8>) -> Result<(), CommError>;

    /// Block until the next message or failure notification.
    fn recv(&mut self) -> Result<Incoming, CommError>;

    /// Start one new process on each of `nodes`.
    fn spawn(&mut self, nodes: &[NodeId]) -> Result<Vec<Member>, CommError>;

    fn inject_failure(&mut self, target: FailureTarget) -> Result<(), CommError>;

    /// Monotonic clock: delivered messages in simulation, microseconds since
    /// the Unix epoch for real processes.
    fn now(&self) -> u64;

    /// Unit of [`Transport::now`].
    fn clock_unit(&self) -> &'static str {
        "us"
    }

    /// Leave as if crashed, so that peers observe a failure.
    fn abort(&mut self);
}

/// Transport of a single process with no peers.
#[derive(Debug, Clone)]
pub struct Solo {
    started: std::time::Instant,
}

impl Solo {
    pub fn new() -> Self {
        Solo { started: std::time::Instant::now() }
    }
}

impl Default for Solo {
    fn default() -> Self {
        Solo::new()
    }
}

impl Transport for Solo {
    fn me(&self) -> Member {
        Member { endpoint: EndpointId(0), node: 0 }
    }

    fn role(&self) -> Role {
        Role::Initial(vec![self.me()])
    }

    fn cluster(&self) -> ClusterSpec {
        ClusterSpec::new(1, 1)
    }

    fn send(&mut self, to: EndpointId, _bytes: Vec<u8>) -> Result<(), CommError> {
        Err(CommError::Protocol(format!("solo process cannot send to {to}")))
    }

    fn recv(&mut self) -> Result<Incoming, CommError> {
        Err(CommError::Deadlock)
    }

    fn spawn(&mut self, _nodes: &[NodeId]) -> Result<Vec<Member>, CommError> {
        Err(CommError::Protocol("solo process cannot spawn".into()))
    }

    fn inject_failure(&mut self, _target: FailureTarget) -> Result<(), CommError> {
        Err(CommError::Killed)
    }

    fn now(&self) -> u64 {
        self.started.elapsed().as_micros() as u64
    }

    fn abort(&mut self) {}
}
