//! The plain-text `Metadata` file kept next to the version directories.
//!
//! ```text
//! latest=3
//! retention=2
//! name=CP1
//! tier=global
//! scheme=none
//! file v=3 name=a crc=1c291ca3 len=52 node=-
//! copy v=3 name=a.rank-1 at=2
//! parity v=3 group=0 holder=1 members=0,2 crc=0e1f2a3b len=96
//! ```
//!
//! `file` lines form the per-version checksum manifest. `copy` lines list
//! partner replicas and `parity` lines the XOR blocks of the node tier.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{CraftError, Result};
use crate::store::{Scheme, Tier};
use crate::transport::NodeId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileRecord {
    pub version: u64,
    pub name: String,
    pub crc: u32,
    pub len: u64,
    /// Node whose local storage holds the primary copy (node tier only).
    pub node: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CopyRecord {
    pub version: u64,
    pub name: String,
    pub at: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityRecord {
    pub version: u64,
    pub group: usize,
    pub holder: NodeId,
    /// Members covered by the parity block, in payload order.
    pub members: Vec<NodeId>,
    pub crc: u32,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreMetadata {
    pub name: String,
    /// Latest fully published version; 0 when nothing valid exists.
    pub latest: u64,
    pub retention: usize,
    pub tier: Tier,
    pub scheme: Option<Scheme>,
    pub files: Vec<FileRecord>,
    pub copies: Vec<CopyRecord>,
    pub parity: Vec<ParityRecord>,
}

impl StoreMetadata {
    pub fn empty(name: &str, tier: Tier, scheme: Option<Scheme>, retention: usize) -> Self {
        StoreMetadata {
            name: name.to_string(),
            latest: 0,
            retention,
            tier,
            scheme,
            files: Vec::new(),
            copies: Vec::new(),
            parity: Vec::new(),
        }
    }

    /// Versions with manifest entries, newest first.
    pub fn versions(&self) -> Vec<u64> {
        let set: BTreeSet<u64> = self.files.iter().map(|f| f.version).collect();
        set.into_iter().rev().collect()
    }

    pub fn files_of(&self, version: u64) -> impl Iterator<Item = &FileRecord> {
        self.files.iter().filter(move |f| f.version == version)
    }

    /// Drop every manifest record except those of `keep`.
    pub fn retain_versions(&mut self, keep: &BTreeSet<u64>) {
        self.files.retain(|f| keep.contains(&f.version));
        self.copies.retain(|c| keep.contains(&c.version));
        self.parity.retain(|p| keep.contains(&p.version));
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "latest={}", self.latest);
        let _ = writeln!(s, "retention={}", self.retention);
        let _ = writeln!(s, "name={}", self.name);
        let _ = writeln!(s, "tier={}", self.tier.as_str());
        let _ = writeln!(s, "scheme={}", self.scheme.map_or("none", Scheme::as_str));
        for f in &self.files {
            let node = f.node.map_or_else(|| "-".to_string(), |n| n.to_string());
            let _ = writeln!(
                s,
                "file v={} name={} crc={:08x} len={} node={}",
                f.version, f.name, f.crc, f.len, node
            );
        }
        for c in &self.copies {
            let _ = writeln!(s, "copy v={} name={} at={}", c.version, c.name, c.at);
        }
        for p in &self.parity {
            let members: Vec<String> = p.members.iter().map(|m| m.to_string()).collect();
            let _ = writeln!(
                s,
                "parity v={} group={} holder={} members={} crc={:08x} len={}",
                p.version,
                p.group,
                p.holder,
                members.join(","),
                p.crc,
                p.len
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: &str| CraftError::Storage(format!("malformed metadata line {line:?}"));
        let mut meta = StoreMetadata::empty("", Tier::Global, None, 2);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix("file ") {
                let kv = Fields::new(rest);
                meta.files.push(FileRecord {
                    version: kv.num("v").ok_or_else(|| bad(line))?,
                    name: kv.get("name").ok_or_else(|| bad(line))?.to_string(),
                    crc: kv.hex("crc").ok_or_else(|| bad(line))?,
                    len: kv.num("len").ok_or_else(|| bad(line))?,
                    node: match kv.get("node") {
                        Some("-") | None => None,
                        Some(n) => Some(n.parse().map_err(|_| bad(line))?),
                    },
                });
            } else if let Some(rest) = line.strip_prefix("copy ") {
                let kv = Fields::new(rest);
                meta.copies.push(CopyRecord {
                    version: kv.num("v").ok_or_else(|| bad(line))?,
                    name: kv.get("name").ok_or_else(|| bad(line))?.to_string(),
                    at: kv.num("at").ok_or_else(|| bad(line))? as NodeId,
                });
            } else if let Some(rest) = line.strip_prefix("parity ") {
                let kv = Fields::new(rest);
                let members = kv
                    .get("members")
                    .ok_or_else(|| bad(line))?
                    .split(',')
                    .filter(|m| !m.is_empty())
                    .map(|m| m.parse::<NodeId>().map_err(|_| bad(line)))
                    .collect::<Result<Vec<_>>>()?;
                meta.parity.push(ParityRecord {
                    version: kv.num("v").ok_or_else(|| bad(line))?,
                    group: kv.num("group").ok_or_else(|| bad(line))? as usize,
                    holder: kv.num("holder").ok_or_else(|| bad(line))? as NodeId,
                    members,
                    crc: kv.hex("crc").ok_or_else(|| bad(line))?,
                    len: kv.num("len").ok_or_else(|| bad(line))?,
                });
            } else if let Some((k, v)) = line.split_once('=') {
                match k {
                    "latest" => meta.latest = v.parse().map_err(|_| bad(line))?,
                    "retention" => meta.retention = v.parse().map_err(|_| bad(line))?,
                    "name" => meta.name = v.to_string(),
                    "tier" => meta.tier = Tier::parse(v).ok_or_else(|| bad(line))?,
                    "scheme" => {
                        meta.scheme = match v {
                            "none" => None,
                            s => Some(Scheme::parse(s).ok_or_else(|| bad(line))?),
                        }
                    }
                    _ => return Err(bad(line)),
                }
            } else {
                return Err(bad(line));
            }
        }
        Ok(meta)
    }
}

struct Fields<'a>(Vec<(&'a str, &'a str)>);

impl<'a> Fields<'a> {
    fn new(s: &'a str) -> Self {
        Fields(s.split_whitespace().filter_map(|kv| kv.split_once('=')).collect())
    }

    fn get(&self, key: &str) -> Option<&'a str> {
        self.0.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    fn num(&self, key: &str) -> Option<u64> {
        self.get(key)?.parse().ok()
    }

    fn hex(&self, key: &str) -> Option<u32> {
        u32::from_str_radix(self.get(key)?, 16).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut m = StoreMetadata::empty("CP1", Tier::NodeLocal, Some(Scheme::PartnerXor), 2);
        m.latest = 3;
        m.files.push(FileRecord { version: 3, name: "a.rank-0".into(), crc: 0xdead_beef, len: 52, node: Some(1) });
        m.files.push(FileRecord { version: 2, name: "a.rank-0".into(), crc: 7, len: 52, node: Some(1) });
        m.copies.push(CopyRecord { version: 3, name: "a.rank-0".into(), at: 2 });
        m.parity.push(ParityRecord { version: 3, group: 0, holder: 0, members: vec![1, 2], crc: 1, len: 60 });
        let text = m.render();
        assert!(text.starts_with("latest=3\nretention=2\n"));
        assert_eq!(StoreMetadata::parse(&text).unwrap(), m);
        assert_eq!(m.versions(), vec![3, 2]);
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(StoreMetadata::parse("latest=x\n").is_err());
        assert!(StoreMetadata::parse("what is this\n").is_err());
    }
}
