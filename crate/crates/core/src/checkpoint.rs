//! The checkpoint container.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::aft::ProcessGroup;
use crate::env::{CraftEnv, WriteMode};
use crate::error::{CraftError, Result};
use crate::store::{valid_name, NodeLayout, NodeTierConfig, StoreConfig, Tier, VersionStore};
use crate::transport::NodeId;
use crate::types::{serialize_entry, Checkpointable, Shared};
use crate::writer::{AsyncWriter, JobStatus, WriteJob};

/// Per-group record of live checkpoints, used to reject duplicate names and
/// to keep nested checkpoints consistent.
#[derive(Debug, Default)]
pub(crate) struct Registry {
    live: BTreeMap<PathBuf, Slot>,
}

#[derive(Debug, Default)]
struct Slot {
    children: BTreeSet<PathBuf>,
    parents: BTreeSet<PathBuf>,
    node_tier: bool,
}

impl Registry {
    fn descendants(&self, from: &Path) -> BTreeSet<PathBuf> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![from.to_path_buf()];
        while let Some(p) = stack.pop() {
            if let Some(s) = self.live.get(&p) {
                for c in &s.children {
                    if seen.insert(c.clone()) {
                        stack.push(c.clone());
                    }
                }
            }
        }
        seen
    }

    fn remove(&mut self, id: &PathBuf) {
        if let Some(slot) = self.live.remove(id) {
            for p in slot.parents {
                if let Some(s) = self.live.get_mut(&p) {
                    s.children.remove(id);
                }
            }
            for c in slot.children {
                if let Some(s) = self.live.get_mut(&c) {
                    s.parents.remove(id);
                }
            }
        }
    }
}

/// Outcome of [`Checkpoint::update_and_write_at`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteDecision {
    pub should_write: bool,
    /// The version written, or the one the next write would likely get.
    pub version_to_write: u64,
}

/// A named, versioned set of checkpointable entries owned by one process
/// of a group.
///
/// The checkpoint directory is `<CRAFT_CP_PATH>/<name>`. Writing and
/// restarting are collective over the group.
pub struct Checkpoint {
    name: String,
    id: PathBuf,
    group: ProcessGroup,
    env: CraftEnv,
    entries: Vec<(String, Shared<dyn Checkpointable>)>,
    committed: bool,
    version: u64,
    /// Writes started or versions read during this run.
    io_count: u64,
    scr_enabled: bool,
    attempts: u64,
    writer: AsyncWriter,
    pending: Option<u64>,
}

impl std::fmt::Debug for Checkpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Checkpoint")
            .field("name", &self.name)
            .field("keys", &self.keys())
            .field("committed", &self.committed)
            .field("version", &self.version)
            .finish()
    }
}

impl Checkpoint {
    /// Create a checkpoint with settings taken from the process environment.
    pub fn from_env(name: &str, group: &ProcessGroup) -> Result<Self> {
        Self::new(name, group, &CraftEnv::from_env()?)
    }

    /// Create a checkpoint. Collective: rank 0 removes staging leftovers of
    /// interrupted writes, then the group synchronizes.
    pub fn new(name: &str, group: &ProcessGroup, env: &CraftEnv) -> Result<Self> {
        if !valid_name(name) {
            return Err(CraftError::InvalidName(name.to_string()));
        }
        let id = env.cp_path.join(name);
        {
            let mut reg = group.registry();
            if reg.live.contains_key(&id) {
                return Err(CraftError::DuplicateCheckpoint(name.to_string()));
            }
            reg.live.insert(id.clone(), Slot::default());
        }
        let mut cp = Checkpoint {
            name: name.to_string(),
            id,
            group: group.clone(),
            env: env.clone(),
            entries: Vec::new(),
            committed: false,
            version: 0,
            io_count: 0,
            scr_enabled: true,
            attempts: 0,
            writer: AsyncWriter::new(),
            pending: None,
        };
        if env.enable {
            let store = cp.store()?;
            if group.rank() == 0 {
                store.gc_staging()?;
            }
            cp.version = store.latest(&cp.all_nodes());
            group.barrier()?;
        }
        Ok(cp)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_committed(&self) -> bool {
        self.committed
    }

    /// Latest version written or restored (0 = none).
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn keys(&self) -> Vec<&str> {
        self.entries.iter().map(|(k, _)| k.as_str()).collect()
    }

    pub fn write_mode(&self) -> WriteMode {
        self.env.write_mode
    }

    pub fn directory(&self) -> PathBuf {
        self.id.clone()
    }

    /// Register `value` under `key` and hand back the shared handle used to
    /// access it afterwards.
    pub fn add<T: Checkpointable>(&mut self, key: &str, value: T) -> Result<Shared<T>> {
        let shared = Shared::new(value);
        self.add_shared(key, &shared)?;
        Ok(shared)
    }

    pub fn add_shared<T: Checkpointable>(&mut self, key: &str, value: &Shared<T>) -> Result<()> {
        if self.committed {
            return Err(CraftError::AlreadyCommitted(self.name.clone()));
        }
        if !valid_name(key) || key.contains(".rank-") {
            return Err(CraftError::InvalidKey(key.to_string()));
        }
        if self.entries.iter().any(|(k, _)| k == key) {
            return Err(CraftError::DuplicateKey(key.to_string()));
        }
        if self.env.write_mode == WriteMode::AsyncCopy {
            value.write().enable_shadow();
        }
        self.entries.push((key.to_string(), value.erase()));
        Ok(())
    }

    /// Freeze the entry set.
    pub fn commit(&mut self) -> Result<()> {
        if self.committed {
            return Ok(());
        }
        if self.entries.is_empty() {
            return Err(CraftError::EmptyCheckpoint(self.name.clone()));
        }
        if self.env.write_mode == WriteMode::AsyncCopy {
            if let Some((k, _)) = self.entries.iter().find(|(_, e)| !e.read().supports_update()) {
                return Err(CraftError::Config(format!(
                    "entry {k:?} of {:?} has no update function, required for asynchronous copy mode",
                    self.name
                )));
            }
        }
        let uses = self.uses_node_tier();
        {
            let mut reg = self.group.registry();
            if uses {
                let slot = &reg.live[&self.id];
                let relatives: Vec<PathBuf> = slot.parents.iter().chain(&slot.children).cloned().collect();
                if relatives.iter().any(|r| reg.live.get(r).is_some_and(|s| s.node_tier)) {
                    return Err(CraftError::Config(format!(
                        "{:?}: only one checkpoint of a nested pair may use node-level storage",
                        self.name
                    )));
                }
            }
            if let Some(s) = reg.live.get_mut(&self.id) {
                s.node_tier = uses;
            }
        }
        self.committed = true;
        Ok(())
    }

    /// Keep this checkpoint out of the node-local tier.
    pub fn disable_scr(&mut self) {
        self.scr_enabled = false;
    }

    fn uses_node_tier(&self) -> bool {
        self.scr_enabled && self.env.enable && self.env.active_node_tier().is_some()
    }

    /// Make `child` a nested checkpoint of `self`: every version written by
    /// `self` invalidates the stored versions of `child`.
    pub fn register_child(&self, child: &Checkpoint) -> Result<()> {
        let cycle = || CraftError::Cycle { parent: self.name.clone(), child: child.name.clone() };
        if self.id == child.id {
            return Err(cycle());
        }
        let mut reg = self.group.registry();
        if reg.descendants(&child.id).contains(&self.id) {
            return Err(cycle());
        }
        if let Some(s) = reg.live.get_mut(&self.id) {
            s.children.insert(child.id.clone());
        }
        if let Some(s) = reg.live.get_mut(&child.id) {
            s.parents.insert(self.id.clone());
        }
        Ok(())
    }

    /// Declare `self` nested inside `parent`.
    pub fn sub_cp(&self, parent: &Checkpoint) -> Result<()> {
        parent.register_child(self)
    }

    fn child_names(&self) -> Vec<String> {
        let reg = self.group.registry();
        let base = &self.env.cp_path;
        reg.live
            .get(&self.id)
            .map(|s| {
                s.children
                    .iter()
                    .filter(|c| c.parent() == Some(base.as_path()))
                    .filter_map(|c| c.file_name().map(|n| n.to_string_lossy().into_owned()))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Nodes with a storage root for this job, reachable or not.
    fn all_nodes(&self) -> BTreeSet<NodeId> {
        let spec = self.group.cluster();
        spec.working_nodes().chain(spec.reserve()).chain(self.group.nodes()).collect()
    }

    fn store(&self) -> Result<VersionStore> {
        let mut cfg = StoreConfig::global(&self.env.cp_path, &self.name);
        cfg.global_latency = self.env.global_write_latency;
        cfg.node_latency = self.env.node_write_latency;
        if self.uses_node_tier() {
            let nt = self.env.active_node_tier().expect("node tier");
            cfg = cfg.with_node_tier(NodeTierConfig {
                scheme: nt.scheme,
                layout: NodeLayout::new(self.group.nodes(), nt.xor_group_size),
                flush_every: nt.flush_every,
            });
        }
        VersionStore::open(cfg)
    }

    fn file_name(&self, key: &str) -> String {
        if self.group.size() == 1 {
            key.to_string()
        } else {
            format!("{key}.rank-{}", self.group.rank())
        }
    }

    fn require_committed(&self) -> Result<()> {
        if self.committed {
            Ok(())
        } else {
            Err(CraftError::NotCommitted(self.name.clone()))
        }
    }

    /// Write a new version unconditionally.
    pub fn update_and_write(&mut self) -> Result<WriteDecision> {
        self.require_committed()?;
        self.write_version()
    }

    /// Write a new version if `iteration` is a multiple of `cp_freq`.
    pub fn update_and_write_at(&mut self, iteration: i64, cp_freq: i64) -> Result<WriteDecision> {
        self.require_committed()?;
        if cp_freq <= 0 {
            return Err(CraftError::Config(format!("checkpoint frequency must be at least 1, got {cp_freq}")));
        }
        if iteration % cp_freq != 0 {
            let next = self.pending.unwrap_or(self.version) + 1;
            return Ok(WriteDecision { should_write: false, version_to_write: next });
        }
        self.write_version()
    }

    /// Settle the previous asynchronous job. Returns whether it succeeded.
    fn settle(&mut self) -> std::result::Result<(), String> {
        let Some(v) = self.pending.take() else { return Ok(()) };
        match self.writer.wait() {
            Some(JobStatus::Failed(reason)) => Err(reason),
            _ => {
                self.version = self.version.max(v);
                Ok(())
            }
        }
    }

    fn write_version(&mut self) -> Result<WriteDecision> {
        if !self.env.enable {
            return Ok(WriteDecision { should_write: true, version_to_write: self.version + 1 });
        }
        let prior = self.settle();
        let store = self.store()?;
        let local_next = self.version.max(store.latest(&self.all_nodes())) + 1;
        let proposal = if prior.is_ok() { local_next } else { u64::MAX };
        let version = self.group.allreduce_max(proposal)?;
        if version == u64::MAX {
            let reason = prior.err().unwrap_or_else(|| "on another rank".into());
            return Err(CraftError::WriteFailed(reason));
        }
        self.attempts += 1;
        let token = (self.group.epoch() << 32) | (self.attempts & 0xffff_ffff);
        self.io_count += 1;
        let rank = self.group.rank();
        let node = self.group.node();
        let ranks = self.group.size();
        let children = self.child_names();
        let name = self.name.clone();

        match self.env.write_mode {
            WriteMode::Sync => {
                let files = self.serialize_all(true);
                let result = store
                    .stage(version, token, rank, node, &files)
                    .and_then(|()| store.try_commit(version, token, ranks, &children));
                if let Err(e) = &result {
                    log::warn!("{name}: writing version {version} failed: {e}");
                }
                let ok = self.group.allreduce_min(result.is_ok() as u64)?;
                match (ok, result) {
                    (1, _) => self.version = version,
                    (_, Err(e)) => return Err(e),
                    _ => return Err(CraftError::WriteFailed(format!("version {version} failed on another rank"))),
                }
            }
            mode => {
                let entries: Vec<(String, Shared<dyn Checkpointable>)> =
                    self.entries.iter().map(|(k, e)| (self.file_name(k), e.clone())).collect();
                if mode == WriteMode::AsyncCopy {
                    for (_, e) in &entries {
                        e.write().update();
                    }
                }
                let expected: Option<Vec<u32>> = (mode == WriteMode::AsyncZeroCopy && self.env.debug_zero_copy)
                    .then(|| entries.iter().map(|(_, e)| crc32fast::hash(&serialize_entry(&*e.read()))).collect());
                let job = WriteJob::new(name.clone(), version, move || {
                    let files: Vec<(String, Vec<u8>)> =
                        entries.iter().map(|(f, e)| (f.clone(), serialize_entry(&*e.read()))).collect();
                    if let Some(expected) = expected {
                        for ((f, bytes), crc) in files.iter().zip(expected) {
                            if crc32fast::hash(bytes) != crc {
                                return Err(CraftError::WriteFailed(format!(
                                    "{f} changed between submission and write; call wait() before modifying zero-copy data"
                                )));
                            }
                        }
                    }
                    store.stage(version, token, rank, node, &files)?;
                    store.try_commit(version, token, ranks, &children)?;
                    Ok(())
                });
                self.writer.submit(job);
                self.pending = Some(version);
            }
        }
        Ok(WriteDecision { should_write: true, version_to_write: version })
    }

    fn serialize_all(&self, refresh: bool) -> Vec<(String, Vec<u8>)> {
        self.entries
            .iter()
            .map(|(k, e)| {
                if refresh {
                    e.write().update();
                }
                (self.file_name(k), serialize_entry(&*e.read()))
            })
            .collect()
    }

    /// Wait for the in-flight asynchronous write, then synchronize with the
    /// group so that the version is known to be published everywhere.
    /// Returns immediately for synchronous checkpoints.
    pub fn wait(&mut self) -> Result<()> {
        if self.pending.is_none() {
            return Ok(());
        }
        let v = self.pending.unwrap_or(0);
        let mine = self.settle();
        let ok = self.group.allreduce_min(mine.is_ok() as u64)?;
        match (ok, mine) {
            (1, _) => Ok(()),
            (_, Err(reason)) => Err(CraftError::WriteFailed(reason)),
            _ => {
                // Published state is unknown; fall back to what is on disk.
                self.version = self.store()?.latest(&self.all_nodes()).min(v);
                Err(CraftError::WriteFailed(format!("version {v} failed on another rank")))
            }
        }
    }

    /// On the first call of a restarted run, restore every entry from the
    /// newest version all ranks can read and return `true`. Returns `false`
    /// when nothing was restored, and on every call after this run already
    /// wrote or read a version.
    pub fn restart_if_needed(&mut self) -> Result<bool> {
        self.require_committed()?;
        if !self.env.enable || !self.env.read_on_restart || self.io_count > 0 || self.pending.is_some() {
            return Ok(false);
        }
        let store = self.store()?;
        let accessible = self.group.nodes();
        let wanted: BTreeMap<String, usize> =
            self.entries.iter().enumerate().map(|(i, (k, _))| (self.file_name(k), i)).collect();
        let want = |f: &str| wanted.contains_key(f);
        let candidates = store.candidates(&accessible);
        // A restore either takes every entry from one version or leaves all
        // of them as they were.
        let mut snapshot: Option<Vec<Vec<u8>>> = None;
        let mut bound = u64::MAX;
        loop {
            let mut mine: Option<(u64, BTreeMap<String, Vec<u8>>)> = None;
            for &(v, tier) in candidates.iter().filter(|(v, _)| *v <= bound) {
                if let Some(files) = self.try_load(&store, v, tier, &want, &accessible) {
                    mine = Some((v, files));
                    break;
                }
            }
            let version = self.group.allreduce_min(mine.as_ref().map_or(0, |m| m.0))?;
            if version == 0 {
                return Ok(false);
            }
            let files = match mine {
                Some((v, files)) if v == version => Some(files),
                _ => [Tier::NodeLocal, Tier::Global]
                    .into_iter()
                    .find_map(|t| self.try_load(&store, version, t, &want, &accessible)),
            };
            let restored = match files {
                Some(files) => {
                    if snapshot.is_none() {
                        snapshot = Some(self.entries.iter().map(|(_, e)| serialize_entry(&*e.read())).collect());
                    }
                    self.restore(&files, &wanted)
                }
                None => false,
            };
            if self.group.allreduce_min(restored as u64)? == 1 {
                self.version = version;
                self.io_count += 1;
                log::info!("{}: restored version {version}", self.name);
                return Ok(true);
            }
            if let Some(saved) = &snapshot {
                for ((_, e), bytes) in self.entries.iter().zip(saved) {
                    e.write().read_from(bytes).expect("entry accepts its own serialization");
                }
            }
            bound = version - 1;
        }
    }

    fn try_load(
        &self,
        store: &VersionStore,
        version: u64,
        tier: Tier,
        want: &dyn Fn(&str) -> bool,
        accessible: &BTreeSet<NodeId>,
    ) -> Option<BTreeMap<String, Vec<u8>>> {
        match store.load_version(version, tier, want, accessible) {
            Ok(files) if files.len() == self.entries.len() => Some(files),
            Ok(_) => None,
            Err(e) => {
                log::debug!("{}: version {version} not loadable: {e}", self.name);
                None
            }
        }
    }

    fn restore(&self, files: &BTreeMap<String, Vec<u8>>, wanted: &BTreeMap<String, usize>) -> bool {
        for (f, bytes) in files {
            let entry = &self.entries[wanted[f]].1;
            if let Err(e) = entry.write().read_from(bytes) {
                log::warn!("{}: cannot restore {f}: {e}", self.name);
                return false;
            }
        }
        true
    }
}

impl Drop for Checkpoint {
    fn drop(&mut self) {
        if let Some(Some(JobStatus::Failed(reason))) = self.pending.take().map(|_| self.writer.wait()) {
            log::warn!("{}: last background write failed: {reason}", self.name);
        }
        if let Some(mut reg) = self.group.try_registry() {
            reg.remove(&self.id);
        }
    }
}
