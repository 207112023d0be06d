//! Runtime settings taken from `CRAFT_*` environment variables.
//!
//! Settings are snapshotted once into a [`CraftEnv`] value, either when a
//! checkpoint is created or when a fault-tolerant zone starts. Changing the
//! process environment afterwards has no effect on existing values.

use std::path::PathBuf;
use std::time::Duration;

use crate::error::{CraftError, Result};
use crate::store::Scheme;

pub const CP_PATH: &str = "CRAFT_CP_PATH";
pub const ENABLE: &str = "CRAFT_ENABLE";
pub const WRITE_ASYNC: &str = "CRAFT_WRITE_ASYNC";
pub const WRITE_ASYNC_ZERO_COPY: &str = "CRAFT_WRITE_ASYNC_ZERO_COPY";
pub const ASYNC_THREAD_PIN_CPULIST: &str = "CRAFT_ASYNC_THREAD_PIN_CPULIST";
pub const USE_SCR: &str = "CRAFT_USE_SCR";
pub const READ_CP_ON_RESTART: &str = "CRAFT_READ_CP_ON_RESTART";
pub const COMM_RECOVERY_POLICY: &str = "CRAFT_COMM_RECOVERY_POLICY";
pub const COMM_SPAWN_POLICY: &str = "CRAFT_COMM_SPAWN_POLICY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum WriteMode {
    Sync,
    AsyncCopy,
    AsyncZeroCopy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum RecoveryPolicy {
    Shrinking,
    NonShrinking,
}

impl RecoveryPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "SHRINKING" => Ok(RecoveryPolicy::Shrinking),
            "NON-SHRINKING" => Ok(RecoveryPolicy::NonShrinking),
            other => Err(CraftError::Config(format!("{COMM_RECOVERY_POLICY}={other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RecoveryPolicy::Shrinking => "SHRINKING",
            RecoveryPolicy::NonShrinking => "NON-SHRINKING",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum SpawnPolicy {
    Reuse,
    NoReuse,
}

impl SpawnPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "REUSE" => Ok(SpawnPolicy::Reuse),
            "NO-REUSE" => Ok(SpawnPolicy::NoReuse),
            other => Err(CraftError::Config(format!("{COMM_SPAWN_POLICY}={other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpawnPolicy::Reuse => "REUSE",
            SpawnPolicy::NoReuse => "NO-REUSE",
        }
    }
}

/// Node-local storage tier settings. Only present when the caller opts into
/// node-level checkpoints; `CRAFT_USE_SCR` can still switch it off.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeTierSettings {
    pub scheme: Scheme,
    /// Every `flush_every`-th version is also written to the global tier.
    /// Zero never flushes.
    pub flush_every: u64,
    /// Nodes per parity group for [`Scheme::PartnerXor`].
    pub xor_group_size: usize,
}

impl Default for NodeTierSettings {
    fn default() -> Self {
        NodeTierSettings { scheme: Scheme::Partner, flush_every: 0, xor_group_size: 4 }
    }
}

#[derive(Debug, Clone)]
pub struct CraftEnv {
    pub cp_path: PathBuf,
    pub enable: bool,
    pub write_mode: WriteMode,
    pub read_on_restart: bool,
    pub use_scr: bool,
    /// Parsed but unused; thread pinning is not implemented.
    pub pin_cpulist: Vec<usize>,
    pub recovery_policy: RecoveryPolicy,
    pub spawn_policy: SpawnPolicy,
    pub node_tier: Option<NodeTierSettings>,
    /// Artificial latency added to every global-tier file write.
    pub global_write_latency: Duration,
    /// Artificial latency added to every node-tier file write.
    pub node_write_latency: Duration,
    /// Checksum zero-copy payloads at submit and again at write time.
    pub debug_zero_copy: bool,
}

impl Default for CraftEnv {
    fn default() -> Self {
        CraftEnv {
            cp_path: PathBuf::from("."),
            enable: true,
            write_mode: WriteMode::Sync,
            read_on_restart: true,
            use_scr: true,
            pin_cpulist: Vec::new(),
            recovery_policy: RecoveryPolicy::NonShrinking,
            spawn_policy: SpawnPolicy::NoReuse,
            node_tier: None,
            global_write_latency: Duration::ZERO,
            node_write_latency: Duration::ZERO,
            debug_zero_copy: false,
        }
    }
}

fn parse_flag(name: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(CraftError::Config(format!("{name}={other:?}, expected 0 or 1"))),
    }
}

fn parse_cpulist(value: &str) -> Result<Vec<usize>> {
    value
        .split('_')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CraftError::Config(format!("{ASYNC_THREAD_PIN_CPULIST}={value:?}")))
        })
        .collect()
}

impl CraftEnv {
    /// Snapshot the process environment.
    pub fn from_env() -> Result<Self> {
        let cwd = std::env::current_dir().unwrap_or_else(|_| PathBuf::from("."));
        Self::from_lookup(cwd, |k| std::env::var(k).ok())
    }

    /// Build settings from an arbitrary variable lookup. `default_path` is used
    /// when `CRAFT_CP_PATH` is unset.
    pub fn from_lookup(
        default_path: PathBuf,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<Self> {
        let mut env = CraftEnv { cp_path: default_path, ..CraftEnv::default() };
        if let Some(p) = lookup(CP_PATH) {
            if !p.is_empty() {
                env.cp_path = PathBuf::from(p);
            }
        }
        if let Some(v) = lookup(ENABLE) {
            env.enable = parse_flag(ENABLE, &v)?;
        }
        let write_async = match lookup(WRITE_ASYNC) {
            Some(v) => parse_flag(WRITE_ASYNC, &v)?,
            None => false,
        };
        let zero_copy = match lookup(WRITE_ASYNC_ZERO_COPY) {
            Some(v) => parse_flag(WRITE_ASYNC_ZERO_COPY, &v)?,
            None => false,
        };
        env.write_mode = match (write_async, zero_copy) {
            (_, true) => WriteMode::AsyncZeroCopy,
            (true, false) => WriteMode::AsyncCopy,
            (false, false) => WriteMode::Sync,
        };
        if let Some(v) = lookup(READ_CP_ON_RESTART) {
            env.read_on_restart = parse_flag(READ_CP_ON_RESTART, &v)?;
        }
        if let Some(v) = lookup(USE_SCR) {
            env.use_scr = parse_flag(USE_SCR, &v)?;
        }
        if let Some(v) = lookup(ASYNC_THREAD_PIN_CPULIST) {
            env.pin_cpulist = parse_cpulist(&v)?;
            log::info!("async writer pin list {:?} ignored (pinning unsupported)", env.pin_cpulist);
        }
        if let Some(v) = lookup(COMM_RECOVERY_POLICY) {
            env.recovery_policy = RecoveryPolicy::parse(&v)?;
        }
        if let Some(v) = lookup(COMM_SPAWN_POLICY) {
            env.spawn_policy = SpawnPolicy::parse(&v)?;
        }
        Ok(env)
    }

    pub fn with_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.cp_path = path.into();
        self
    }

    pub fn with_write_mode(mut self, mode: WriteMode) -> Self {
        self.write_mode = mode;
        self
    }

    pub fn with_node_tier(mut self, settings: NodeTierSettings) -> Self {
        self.node_tier = Some(settings);
        self
    }

    /// Node tier settings if the tier is configured and not disabled.
    pub fn active_node_tier(&self) -> Option<&NodeTierSettings> {
        if self.use_scr {
            self.node_tier.as_ref()
        } else {
            None
        }
    }
}
