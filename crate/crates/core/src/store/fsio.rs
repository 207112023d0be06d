//! Filesystem operations used by the store, with optional crash injection.
//!
//! A [`CrashPlan`] gives the store a budget of "units": every byte written
//! costs one unit and every create, rename, removal or sync costs one more.
//! When the budget runs out the operation in progress stops half way (a file
//! write leaves a truncated file behind) and every later operation fails with
//! [`CraftError::InjectedCrash`], as if the process had been killed.

use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::error::{CraftError, Result};

#[derive(Debug, Default)]
pub struct CrashPlan {
    remaining: AtomicU64,
    consumed: AtomicU64,
    limited: AtomicBool,
    crashed: AtomicBool,
}

impl CrashPlan {
    /// Crash once `units` units have been spent.
    pub fn after(units: u64) -> Arc<Self> {
        Arc::new(CrashPlan {
            remaining: AtomicU64::new(units),
            consumed: AtomicU64::new(0),
            limited: AtomicBool::new(true),
            crashed: AtomicBool::new(false),
        })
    }

    /// Never crash; only count units.
    pub fn counting() -> Arc<Self> {
        Arc::new(CrashPlan::default())
    }

    pub fn consumed(&self) -> u64 {
        self.consumed.load(Ordering::SeqCst)
    }

    pub fn crashed(&self) -> bool {
        self.crashed.load(Ordering::SeqCst)
    }

    /// Request `want` units; returns how many were granted.
    fn take(&self, want: u64) -> u64 {
        if self.crashed() {
            return 0;
        }
        if !self.limited.load(Ordering::SeqCst) {
            self.consumed.fetch_add(want, Ordering::SeqCst);
            return want;
        }
        let left = self.remaining.load(Ordering::SeqCst);
        let granted = want.min(left);
        self.remaining.store(left - granted, Ordering::SeqCst);
        self.consumed.fetch_add(granted, Ordering::SeqCst);
        if granted < want {
            self.crashed.store(true, Ordering::SeqCst);
        }
        granted
    }
}

#[derive(Debug, Clone, Default)]
pub struct Fs {
    plan: Option<Arc<CrashPlan>>,
    latency: Duration,
}

impl Fs {
    pub fn new() -> Self {
        Fs::default()
    }

    pub fn with_plan(mut self, plan: Arc<CrashPlan>) -> Self {
        self.plan = Some(plan);
        self
    }

    /// Sleep this long on every file write.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    fn op(&self) -> Result<()> {
        match &self.plan {
            Some(p) if p.take(1) < 1 => Err(CraftError::InjectedCrash),
            _ => Ok(()),
        }
    }

    /// Create or truncate `path`, write `bytes` and sync.
    pub fn write_file(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        self.op()?;
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let mut file = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)
            .map_err(|e| CraftError::io(path, e))?;
        let granted = match &self.plan {
            Some(p) => p.take(bytes.len() as u64) as usize,
            None => bytes.len(),
        };
        file.write_all(&bytes[..granted]).map_err(|e| CraftError::io(path, e))?;
        if granted < bytes.len() {
            return Err(CraftError::InjectedCrash);
        }
        self.op()?;
        file.sync_all().map_err(|e| CraftError::io(path, e))
    }

    /// Write through a sibling temp file and rename over `path`.
    pub fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        let tmp = tmp_sibling(path);
        self.write_file(&tmp, bytes)?;
        self.rename(&tmp, path)
    }

    pub fn rename(&self, from: &Path, to: &Path) -> Result<()> {
        self.op()?;
        fs::rename(from, to).map_err(|e| CraftError::io(from, e))?;
        if let Some(parent) = to.parent() {
            sync_dir(parent);
        }
        Ok(())
    }

    pub fn create_dir_all(&self, path: &Path) -> Result<()> {
        self.op()?;
        fs::create_dir_all(path).map_err(|e| CraftError::io(path, e))
    }

    /// Remove a directory tree; missing directories are fine.
    pub fn remove_dir_all(&self, path: &Path) -> Result<()> {
        self.op()?;
        match fs::remove_dir_all(path) {
            Err(e) if e.kind() != ErrorKind::NotFound => Err(CraftError::io(path, e)),
            _ => Ok(()),
        }
    }

    /// Atomically create `path`; returns false if it already existed or its
    /// directory is gone.
    pub fn create_new(&self, path: &Path) -> Result<bool> {
        self.op()?;
        match OpenOptions::new().write(true).create_new(true).open(path) {
            Ok(_) => Ok(true),
            Err(e) if matches!(e.kind(), ErrorKind::AlreadyExists | ErrorKind::NotFound) => Ok(false),
            Err(e) => Err(CraftError::io(path, e)),
        }
    }
}

pub fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

pub fn read_file(path: &Path) -> Result<Option<Vec<u8>>> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
        Err(e) => Err(CraftError::io(path, e)),
    }
}

#[cfg(unix)]
fn sync_dir(dir: &Path) {
    // Best effort; some filesystems refuse fsync on directories.
    if let Ok(f) = File::open(dir) {
        let _ = f.sync_all();
    }
}

#[cfg(not(unix))]
fn sync_dir(_dir: &Path) {}
