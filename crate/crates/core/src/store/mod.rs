//! Versioned on-disk checkpoint storage.
//!
//! ```text
//! <base>/<name>/Metadata                 global tier
//! <base>/<name>/v-<k>/<key>[.rank-<r>]
//! <base>/node-<n>/<name>/Metadata        node-local tier, one root per node
//! <base>/node-<n>/<name>/v-<k>/...
//! ```
//!
//! A version is written in two steps. Every rank first *stages* its files
//! into `v-<k>.tmp` directories and drops a marker describing them. The rank
//! that completes the set of markers then *commits*: it renames the staging
//! directories, builds redundancy data, and finally rewrites the `Metadata`
//! files atomically. A version exists once a metadata file names it; a crash
//! at any earlier point leaves the previous version in charge and the stale
//! staging directories are removed by [`VersionStore::gc_staging`].

mod fsio;
mod layout;
mod metadata;
pub mod xor;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

pub use fsio::{CrashPlan, Fs};
pub use layout::NodeLayout;
pub use metadata::{CopyRecord, FileRecord, ParityRecord, StoreMetadata};

use crate::error::{CraftError, Result};
use crate::transport::NodeId;
use xor::ParityBlock;

pub const METADATA_FILE: &str = "Metadata";
const COMMIT_LOCK: &str = ".commit";
const MARKER_PREFIX: &str = ".staged.rank-";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Tier {
    Global,
    NodeLocal,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Global => "global",
            Tier::NodeLocal => "node",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "global" => Some(Tier::Global),
            "node" => Some(Tier::NodeLocal),
            _ => None,
        }
    }
}

/// Redundancy scheme of the node-local tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Scheme {
    Local,
    Partner,
    PartnerXor,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Local => "local",
            Scheme::Partner => "partner",
            Scheme::PartnerXor => "partner-xor",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "local" => Some(Scheme::Local),
            "partner" => Some(Scheme::Partner),
            "partner-xor" | "xor" => Some(Scheme::PartnerXor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeTierConfig {
    pub scheme: Scheme,
    pub layout: NodeLayout,
    /// Every `flush_every`-th version also goes to the global tier; 0 never.
    pub flush_every: u64,
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub base: PathBuf,
    pub name: String,
    pub retention: usize,
    pub node_tier: Option<NodeTierConfig>,
    pub global_latency: Duration,
    pub node_latency: Duration,
}

impl StoreConfig {
    pub fn global(base: impl Into<PathBuf>, name: impl Into<String>) -> Self {
        StoreConfig {
            base: base.into(),
            name: name.into(),
            retention: 2,
            node_tier: None,
            global_latency: Duration::ZERO,
            node_latency: Duration::ZERO,
        }
    }

    pub fn with_node_tier(mut self, tier: NodeTierConfig) -> Self {
        self.node_tier = Some(tier);
        self
    }
}

/// One file handed to [`VersionStore::publish_version`].
#[derive(Debug, Clone)]
pub struct StagedFile {
    pub rank: usize,
    pub node: NodeId,
    pub name: String,
    pub bytes: Vec<u8>,
}

/// Result of a successful load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Loaded {
    pub version: u64,
    pub tier: Tier,
    pub files: BTreeMap<String, Vec<u8>>,
}

/// Names usable as checkpoint directories and entry file stems.
pub fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && !name.starts_with("node-")
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

#[derive(Debug, Default)]
struct Marker {
    token: u64,
    global: Vec<(String, u32, u64)>,
    node: Vec<(String, u32, u64, NodeId)>,
    copies: Vec<(String, NodeId)>,
}

impl Marker {
    fn render(&self) -> String {
        let mut s = format!("token {}\n", self.token);
        for (n, crc, len) in &self.global {
            s.push_str(&format!("global name={n} crc={crc:08x} len={len}\n"));
        }
        for (n, crc, len, node) in &self.node {
            s.push_str(&format!("node name={n} crc={crc:08x} len={len} node={node}\n"));
        }
        for (n, at) in &self.copies {
            s.push_str(&format!("copy name={n} at={at}\n"));
        }
        s
    }

    fn parse(text: &str) -> Result<Self> {
        let bad = || CraftError::Storage(format!("malformed staging marker {text:?}"));
        let mut m = Marker::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split_whitespace();
            let kind = parts.next().ok_or_else(bad)?;
            if kind == "token" {
                m.token = parts.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
                continue;
            }
            let kv: BTreeMap<&str, &str> = parts.filter_map(|p| p.split_once('=')).collect();
            let name = kv.get("name").ok_or_else(bad)?.to_string();
            let crc = || kv.get("crc").and_then(|c| u32::from_str_radix(c, 16).ok()).ok_or_else(bad);
            let len = || kv.get("len").and_then(|l| l.parse().ok()).ok_or_else(bad);
            let node = |k: &str| kv.get(k).and_then(|n| n.parse().ok()).ok_or_else(bad);
            match kind {
                "global" => m.global.push((name, crc()?, len()?)),
                "node" => m.node.push((name, crc()?, len()?, node("node")?)),
                "copy" => m.copies.push((name, node("at")?)),
                _ => return Err(bad()),
            }
        }
        Ok(m)
    }
}

type NamedBytes = (String, Vec<u8>);

#[derive(Debug, Clone)]
pub struct VersionStore {
    cfg: StoreConfig,
    global_fs: Fs,
    node_fs: Fs,
    /// Global directory without the artificial latency, for staging markers
    /// and commit locks: they coordinate ranks and carry no checkpoint data.
    control_fs: Fs,
}

impl VersionStore {
    pub fn open(cfg: StoreConfig) -> Result<Self> {
        Self::open_with(cfg, None)
    }

    /// Open with a crash plan shared by every filesystem operation.
    pub fn open_with(cfg: StoreConfig, plan: Option<Arc<CrashPlan>>) -> Result<Self> {
        if !valid_name(&cfg.name) {
            return Err(CraftError::InvalidName(cfg.name.clone()));
        }
        let mut control_fs = Fs::new();
        if let Some(p) = plan {
            control_fs = control_fs.with_plan(p);
        }
        let global_fs = control_fs.clone().with_latency(cfg.global_latency);
        let node_fs = control_fs.clone().with_latency(cfg.node_latency);
        let store = VersionStore { cfg, global_fs, node_fs, control_fs };
        let dir = store.global_dir();
        fs::create_dir_all(&dir).map_err(|e| CraftError::io(&dir, e))?;
        Ok(store)
    }

    pub fn config(&self) -> &StoreConfig {
        &self.cfg
    }

    pub fn name(&self) -> &str {
        &self.cfg.name
    }

    pub fn global_dir(&self) -> PathBuf {
        self.cfg.base.join(&self.cfg.name)
    }

    pub fn node_root(base: &Path, node: NodeId) -> PathBuf {
        base.join(format!("node-{node}"))
    }

    pub fn node_dir(&self, node: NodeId) -> PathBuf {
        Self::node_root(&self.cfg.base, node).join(&self.cfg.name)
    }

    fn version_dir(root: &Path, version: u64) -> PathBuf {
        root.join(format!("v-{version}"))
    }

    fn staging_dir(root: &Path, version: u64) -> PathBuf {
        root.join(format!("v-{version}.tmp"))
    }

    fn goes_global(&self, version: u64) -> bool {
        match &self.cfg.node_tier {
            None => true,
            Some(nt) => nt.flush_every > 0 && version.is_multiple_of(nt.flush_every),
        }
    }

    /// Nodes holding a node-tier directory of checkpoint `name`.
    fn nodes_on_disk(&self, name: &str) -> Vec<NodeId> {
        let mut nodes = Vec::new();
        if let Ok(rd) = fs::read_dir(&self.cfg.base) {
            for e in rd.flatten() {
                let entry = e.file_name();
                let Some(id) = entry.to_str().and_then(|n| n.strip_prefix("node-")) else { continue };
                if let Ok(id) = id.parse::<NodeId>() {
                    if e.path().join(name).is_dir() {
                        nodes.push(id);
                    }
                }
            }
        }
        nodes.sort_unstable();
        nodes
    }

    fn read_meta_at(dir: &Path) -> Option<StoreMetadata> {
        let path = dir.join(METADATA_FILE);
        let text = fs::read_to_string(&path).ok()?;
        match StoreMetadata::parse(&text) {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("ignoring unreadable {}: {e}", path.display());
                None
            }
        }
    }

    pub fn global_metadata(&self) -> Option<StoreMetadata> {
        Self::read_meta_at(&self.global_dir())
    }

    /// The most advanced node-tier metadata among `accessible` nodes.
    pub fn node_metadata(&self, accessible: &BTreeSet<NodeId>) -> Option<StoreMetadata> {
        accessible
            .iter()
            .filter_map(|&n| Self::read_meta_at(&self.node_dir(n)))
            .max_by_key(|m| m.latest)
    }

    /// Latest published version over both tiers, 0 if none.
    pub fn latest(&self, accessible: &BTreeSet<NodeId>) -> u64 {
        let g = self.global_metadata().map_or(0, |m| m.latest);
        let n = self.node_metadata(accessible).map_or(0, |m| m.latest);
        g.max(n)
    }

    /// Remove staging directories left behind by interrupted writes.
    pub fn gc_staging(&self) -> Result<()> {
        let mut roots = vec![self.global_dir()];
        roots.extend(self.nodes_on_disk(&self.cfg.name).into_iter().map(|n| self.node_dir(n)));
        for root in roots {
            let Ok(rd) = fs::read_dir(&root) else { continue };
            for e in rd.flatten() {
                let name = e.file_name();
                let name = name.to_string_lossy();
                if name.starts_with("v-") && name.ends_with(".tmp") {
                    log::debug!("removing stale staging directory {}", e.path().display());
                    self.global_fs.remove_dir_all(&e.path())?;
                }
            }
        }
        Ok(())
    }

    /// Stage one rank's files for `version`. `token` identifies the write
    /// attempt; markers of other attempts are ignored by [`Self::try_commit`].
    pub fn stage(
        &self,
        version: u64,
        token: u64,
        rank: usize,
        node: NodeId,
        files: &[(String, Vec<u8>)],
    ) -> Result<()> {
        let marker_dir = Self::staging_dir(&self.global_dir(), version);
        self.control_fs.create_dir_all(&marker_dir)?;
        let mut marker = Marker { token, ..Marker::default() };
        if self.goes_global(version) {
            for (name, bytes) in files {
                self.global_fs.write_file(&marker_dir.join(name), bytes)?;
                marker.global.push((name.clone(), crc32fast::hash(bytes), bytes.len() as u64));
            }
        }
        if let Some(nt) = &self.cfg.node_tier {
            let own = Self::staging_dir(&self.node_dir(node), version);
            self.node_fs.create_dir_all(&own)?;
            for (name, bytes) in files {
                self.node_fs.write_file(&own.join(name), bytes)?;
                marker.node.push((name.clone(), crc32fast::hash(bytes), bytes.len() as u64, node));
            }
            if nt.scheme == Scheme::Partner {
                if let Some(p) = nt.layout.partner(node) {
                    let dir = Self::staging_dir(&self.node_dir(p), version);
                    self.node_fs.create_dir_all(&dir)?;
                    for (name, bytes) in files {
                        self.node_fs.write_file(&dir.join(name), bytes)?;
                        marker.copies.push((name.clone(), p));
                    }
                }
            }
        }
        let path = marker_dir.join(format!("{MARKER_PREFIX}{rank}"));
        self.control_fs.write_atomic(&path, marker.render().as_bytes())
    }

    /// Commit `version` if all `ranks` markers of attempt `token` are present
    /// and this caller wins the commit election. Returns whether this call
    /// committed.
    pub fn try_commit(&self, version: u64, token: u64, ranks: usize, children: &[String]) -> Result<bool> {
        let marker_dir = Self::staging_dir(&self.global_dir(), version);
        let mut markers = Vec::new();
        for r in 0..ranks {
            let path = marker_dir.join(format!("{MARKER_PREFIX}{r}"));
            match fsio::read_file(&path)? {
                Some(b) => match Marker::parse(&String::from_utf8_lossy(&b)) {
                    Ok(m) if m.token == token => markers.push(m),
                    _ => return Ok(false),
                },
                None => return Ok(false),
            }
        }
        // A missing staging directory means another rank already won and
        // renamed it.
        if !self.control_fs.create_new(&marker_dir.join(format!("{COMMIT_LOCK}-{token}")))? {
            return Ok(false);
        }
        self.commit(version, markers, children)?;
        Ok(true)
    }

    fn keep_set(&self, meta: &StoreMetadata, version: u64) -> BTreeSet<u64> {
        let mut versions: BTreeSet<u64> =
            meta.versions().into_iter().filter(|&v| v < version).collect();
        versions.insert(version);
        versions.into_iter().rev().take(self.cfg.retention.max(1)).collect()
    }

    fn commit(&self, version: u64, markers: Vec<Marker>, children: &[String]) -> Result<()> {
        let marker_dir = Self::staging_dir(&self.global_dir(), version);
        let to_global = self.goes_global(version);
        let mut retire: Vec<(PathBuf, BTreeSet<u64>)> = Vec::new();

        if to_global {
            let dst = Self::version_dir(&self.global_dir(), version);
            self.global_fs.remove_dir_all(&dst)?;
            self.global_fs.rename(&marker_dir, &dst)?;
        }

        let mut node_meta_out = None;
        if let Some(nt) = &self.cfg.node_tier {
            let mut records: Vec<FileRecord> = Vec::new();
            let mut copies: Vec<CopyRecord> = Vec::new();
            let mut touched: BTreeSet<NodeId> = BTreeSet::new();
            for m in &markers {
                for (name, crc, len, node) in &m.node {
                    records.push(FileRecord { version, name: name.clone(), crc: *crc, len: *len, node: Some(*node) });
                    touched.insert(*node);
                }
                for (name, at) in &m.copies {
                    copies.push(CopyRecord { version, name: name.clone(), at: *at });
                    touched.insert(*at);
                }
            }
            records.sort_by(|a, b| a.name.cmp(&b.name));
            for &n in &touched {
                let root = self.node_dir(n);
                let dst = Self::version_dir(&root, version);
                self.node_fs.remove_dir_all(&dst)?;
                self.node_fs.rename(&Self::staging_dir(&root, version), &dst)?;
            }
            let mut parity = Vec::new();
            if nt.scheme == Scheme::PartnerXor {
                for (gi, group) in nt.layout.xor_groups().into_iter().enumerate() {
                    let holder = NodeLayout::holder(&group, version);
                    let covered: Vec<NodeId> = group.iter().copied().filter(|&n| n != holder).collect();
                    let payloads = covered
                        .iter()
                        .map(|&m| self.node_payload(m, m, version, &records))
                        .collect::<Result<Vec<_>>>()?;
                    let block = xor::parity(&payloads);
                    let holder_dir = Self::version_dir(&self.node_dir(holder), version);
                    self.node_fs.create_dir_all(&holder_dir)?;
                    self.node_fs.write_file(&holder_dir.join(format!("xor.group-{gi}")), &block.bytes)?;
                    parity.push(ParityRecord {
                        version,
                        group: gi,
                        holder,
                        members: covered,
                        crc: crc32fast::hash(&block.bytes),
                        len: block.bytes.len() as u64,
                    });
                    // The holder's own files are not covered by its parity block.
                    let backup = NodeLayout::holder_backup(&group, version);
                    let backup_dir = Self::version_dir(&self.node_dir(backup), version);
                    self.node_fs.create_dir_all(&backup_dir)?;
                    for rec in records.iter().filter(|r| r.node == Some(holder)) {
                        let src = Self::version_dir(&self.node_dir(holder), version).join(&rec.name);
                        let bytes = fs::read(&src).map_err(|e| CraftError::io(&src, e))?;
                        self.node_fs.write_file(&backup_dir.join(&rec.name), &bytes)?;
                        copies.push(CopyRecord { version, name: rec.name.clone(), at: backup });
                    }
                }
            }
            let all: BTreeSet<NodeId> = nt.layout.nodes().iter().copied().chain(touched).collect();
            let mut meta = self
                .node_metadata(&all)
                .unwrap_or_else(|| StoreMetadata::empty(&self.cfg.name, Tier::NodeLocal, Some(nt.scheme), self.cfg.retention));
            meta.scheme = Some(nt.scheme);
            meta.retain_versions(&meta.versions().into_iter().filter(|&v| v != version).collect());
            let keep = self.keep_set(&meta, version);
            meta.retain_versions(&keep);
            meta.latest = version;
            meta.files.extend(records);
            meta.copies.extend(copies);
            meta.parity.extend(parity);
            for &n in &all {
                let root = self.node_dir(n);
                self.node_fs.create_dir_all(&root)?;
                self.node_fs.write_atomic(&root.join(METADATA_FILE), meta.render().as_bytes())?;
                retire.push((root, keep.clone()));
            }
            node_meta_out = Some(meta);
        }

        if to_global {
            let mut meta = self
                .global_metadata()
                .unwrap_or_else(|| StoreMetadata::empty(&self.cfg.name, Tier::Global, None, self.cfg.retention));
            meta.retain_versions(&meta.versions().into_iter().filter(|&v| v != version).collect());
            let keep = self.keep_set(&meta, version);
            meta.retain_versions(&keep);
            meta.latest = version;
            for m in &markers {
                for (name, crc, len) in &m.global {
                    meta.files.push(FileRecord { version, name: name.clone(), crc: *crc, len: *len, node: None });
                }
            }
            meta.files.sort_by(|a, b| b.version.cmp(&a.version).then(a.name.cmp(&b.name)));
            self.global_fs.write_atomic(&self.global_dir().join(METADATA_FILE), meta.render().as_bytes())?;
            retire.push((self.global_dir(), keep));
        } else {
            self.global_fs.remove_dir_all(&marker_dir)?;
        }
        let _ = node_meta_out;

        for child in children {
            let nodes = self.nodes_on_disk(child);
            invalidate_named(&self.global_fs, &self.cfg.base, child, &nodes)?;
        }
        for (root, keep) in retire {
            self.retire_versions(&root, &keep)?;
        }
        Ok(())
    }

    /// Delete version directories outside the retention window.
    fn retire_versions(&self, root: &Path, keep: &BTreeSet<u64>) -> Result<()> {
        let Ok(rd) = fs::read_dir(root) else { return Ok(()) };
        for e in rd.flatten() {
            let name = e.file_name();
            let Some(v) = name.to_str().and_then(|n| n.strip_prefix("v-")).and_then(|n| n.parse::<u64>().ok()) else {
                continue;
            };
            if !keep.contains(&v) {
                self.global_fs.remove_dir_all(&e.path())?;
            }
        }
        Ok(())
    }

    /// Concatenated files of `member` for `version`, read from `from`'s root.
    fn node_payload(&self, member: NodeId, from: NodeId, version: u64, records: &[FileRecord]) -> Result<Vec<u8>> {
        let dir = Self::version_dir(&self.node_dir(from), version);
        let mut out = Vec::new();
        for rec in records.iter().filter(|r| r.node == Some(member)) {
            let path = dir.join(&rec.name);
            let bytes = fs::read(&path).map_err(|e| CraftError::io(&path, e))?;
            if crc32fast::hash(&bytes) != rec.crc {
                return Err(CraftError::Storage(format!("checksum mismatch in {}", path.display())));
            }
            out.extend_from_slice(&bytes);
        }
        Ok(out)
    }

    /// Stage and commit a whole version in one call. `version` must be the
    /// successor of the latest published version.
    pub fn publish_version(&self, version: u64, files: Vec<StagedFile>, children: &[String]) -> Result<StoreMetadata> {
        let all_nodes: BTreeSet<NodeId> = self.nodes_on_disk(&self.cfg.name).into_iter().collect();
        let latest = self.latest(&all_nodes);
        if version != latest + 1 {
            return Err(CraftError::VersionOrder { latest, got: version });
        }
        let mut by_rank: BTreeMap<usize, (NodeId, Vec<NamedBytes>)> = BTreeMap::new();
        for f in files {
            by_rank.entry(f.rank).or_insert_with(|| (f.node, Vec::new())).1.push((f.name, f.bytes));
        }
        let ranks = by_rank.keys().next_back().map_or(0, |r| r + 1);
        if ranks != by_rank.len() {
            return Err(CraftError::Storage("ranks must be dense from 0".into()));
        }
        for (rank, (node, files)) in &by_rank {
            self.stage(version, 0, *rank, *node, files)?;
        }
        if !self.try_commit(version, 0, ranks, children)? {
            return Err(CraftError::Storage(format!("version {version} was committed concurrently")));
        }
        let meta = if self.goes_global(version) {
            self.global_metadata()
        } else {
            let nodes: BTreeSet<NodeId> = self.nodes_on_disk(&self.cfg.name).into_iter().collect();
            self.node_metadata(&nodes)
        };
        meta.ok_or_else(|| CraftError::Storage("metadata vanished after commit".into()))
    }

    /// Mark every version of this checkpoint invalid. Files stay on disk.
    pub fn invalidate(&self) -> Result<()> {
        invalidate_named(&self.global_fs, &self.cfg.base, &self.cfg.name, &self.nodes_on_disk(&self.cfg.name))
    }

    /// Loadable versions, newest first; node tier first at equal versions.
    pub fn candidates(&self, accessible: &BTreeSet<NodeId>) -> Vec<(u64, Tier)> {
        let mut out = Vec::new();
        if let Some(m) = self.node_metadata(accessible) {
            out.extend(m.versions().into_iter().filter(|&v| v <= m.latest).map(|v| (v, Tier::NodeLocal)));
        }
        if let Some(m) = self.global_metadata() {
            out.extend(m.versions().into_iter().filter(|&v| v <= m.latest).map(|v| (v, Tier::Global)));
        }
        out.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1).reverse()));
        out
    }

    /// Load the files of `version` from `tier` that pass `want`, verifying
    /// every checksum. Node-tier files missing from their home node are taken
    /// from partner copies or rebuilt from parity.
    pub fn load_version(
        &self,
        version: u64,
        tier: Tier,
        want: &dyn Fn(&str) -> bool,
        accessible: &BTreeSet<NodeId>,
    ) -> Result<BTreeMap<String, Vec<u8>>> {
        let missing = |what: &str| CraftError::Storage(format!("version {version} ({}) {what}", tier.as_str()));
        let mut out = BTreeMap::new();
        match tier {
            Tier::Global => {
                let meta = self.global_metadata().ok_or_else(|| missing("has no metadata"))?;
                if version > meta.latest || meta.files_of(version).next().is_none() {
                    return Err(missing("is not published"));
                }
                let dir = Self::version_dir(&self.global_dir(), version);
                for rec in meta.files_of(version).filter(|r| want(&r.name)) {
                    let bytes = read_verified(&dir.join(&rec.name), rec)
                        .ok_or_else(|| missing(&format!("file {} is missing or corrupt", rec.name)))?;
                    out.insert(rec.name.clone(), bytes);
                }
            }
            Tier::NodeLocal => {
                let meta = self.node_metadata(accessible).ok_or_else(|| missing("has no metadata"))?;
                if version > meta.latest || meta.files_of(version).next().is_none() {
                    return Err(missing("is not published"));
                }
                for rec in meta.files_of(version).filter(|r| want(&r.name)) {
                    let bytes = self
                        .load_node_file(&meta, rec, accessible)?
                        .ok_or_else(|| missing(&format!("file {} is unrecoverable", rec.name)))?;
                    out.insert(rec.name.clone(), bytes);
                }
            }
        }
        Ok(out)
    }

    fn load_node_file(
        &self,
        meta: &StoreMetadata,
        rec: &FileRecord,
        accessible: &BTreeSet<NodeId>,
    ) -> Result<Option<Vec<u8>>> {
        let version = rec.version;
        let mut locations: Vec<NodeId> = rec.node.into_iter().collect();
        locations.extend(meta.copies.iter().filter(|c| c.version == version && c.name == rec.name).map(|c| c.at));
        for loc in locations.iter().filter(|l| accessible.contains(l)) {
            let path = Self::version_dir(&self.node_dir(*loc), version).join(&rec.name);
            if let Some(b) = read_verified(&path, rec) {
                return Ok(Some(b));
            }
        }
        let Some(home) = rec.node else { return Ok(None) };
        let Some(p) = meta.parity.iter().find(|p| p.version == version && p.members.contains(&home)) else {
            return Ok(None);
        };
        if !accessible.contains(&p.holder) {
            return Ok(None);
        }
        let records: Vec<FileRecord> = meta.files_of(version).cloned().collect();
        let mut payloads: Vec<Option<Vec<u8>>> = Vec::with_capacity(p.members.len());
        let mut lengths = Vec::with_capacity(p.members.len());
        for &m in &p.members {
            lengths.push(records.iter().filter(|r| r.node == Some(m)).map(|r| r.len as usize).sum());
            if m == home || !accessible.contains(&m) {
                payloads.push(None);
            } else {
                payloads.push(self.node_payload(m, m, version, &records).ok());
            }
        }
        let parity_path = Self::version_dir(&self.node_dir(p.holder), version).join(format!("xor.group-{}", p.group));
        let Some(bytes) = fsio::read_file(&parity_path)? else { return Ok(None) };
        if crc32fast::hash(&bytes) != p.crc {
            return Ok(None);
        }
        let block = ParityBlock { bytes, lengths };
        let views: Vec<Option<&[u8]>> = payloads.iter().map(|p| p.as_deref()).collect();
        let Ok(Some((idx, bundle))) = xor::reconstruct(&views, &block) else { return Ok(None) };
        debug_assert_eq!(p.members[idx], home);
        let mut offset = 0usize;
        for r in records.iter().filter(|r| r.node == Some(home)) {
            let end = offset + r.len as usize;
            if r.name == rec.name {
                let bytes = bundle.get(offset..end).map(<[u8]>::to_vec);
                return Ok(bytes.filter(|b| crc32fast::hash(b) == rec.crc));
            }
            offset = end;
        }
        Ok(None)
    }

    /// Newest version whose selected files all load and verify.
    pub fn load_latest(&self, want: &dyn Fn(&str) -> bool, accessible: &BTreeSet<NodeId>) -> Result<Option<Loaded>> {
        for (version, tier) in self.candidates(accessible) {
            match self.load_version(version, tier, want, accessible) {
                Ok(files) => return Ok(Some(Loaded { version, tier, files })),
                Err(e) => log::warn!("{}: skipping version {version}: {e}", self.cfg.name),
            }
        }
        Ok(None)
    }
}

fn read_verified(path: &Path, rec: &FileRecord) -> Option<Vec<u8>> {
    let bytes = fs::read(path).ok()?;
    (bytes.len() as u64 == rec.len && crc32fast::hash(&bytes) == rec.crc).then_some(bytes)
}

/// Rewrite every metadata file of checkpoint `name` to "no valid version".
pub fn invalidate_named(fs_ops: &Fs, base: &Path, name: &str, nodes: &[NodeId]) -> Result<()> {
    let mut dirs = vec![base.join(name)];
    dirs.extend(nodes.iter().map(|&n| VersionStore::node_root(base, n).join(name)));
    for dir in dirs {
        if let Some(mut meta) = VersionStore::read_meta_at(&dir) {
            meta.latest = 0;
            meta.retain_versions(&BTreeSet::new());
            fs_ops.write_atomic(&dir.join(METADATA_FILE), meta.render().as_bytes())?;
        }
    }
    Ok(())
}
