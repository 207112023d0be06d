//! Application-level checkpoint/restart with automatic recovery from
//! process failures.
//!
//! A [`Checkpoint`] collects typed entries and writes them as numbered
//! versions, synchronously or in the background, to a global directory and
//! optionally to node-local storage protected by partner copies or XOR
//! parity. A [`ProcessGroup`] runs over a [`transport`] and recovers from
//! fail-stop failures by shrinking or by spawning replacements;
//! [`run_aft_zone`] re-runs application code after each recovery.

pub mod aft;
pub mod apps;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod store;
pub mod transport;
pub mod types;
pub mod writer;

pub use aft::{run_aft_zone, NodeLedger, Phase, PhaseTiming, ProcessGroup, RecoveryConfig, RecoveryRecord, ZoneOutcome};
pub use checkpoint::{Checkpoint, WriteDecision};
pub use env::{CraftEnv, NodeTierSettings, RecoveryPolicy, SpawnPolicy, WriteMode};
pub use error::{CommError, CraftError, FormatError, Result};
pub use store::{Scheme, Tier, VersionStore};
pub use transport::{ClusterSpec, EndpointId, FailureTarget, Member, NodeId};
pub use types::{Array, Checkpointable, CustomEntry, MultiArray, Packed, Scalar, Shared};
