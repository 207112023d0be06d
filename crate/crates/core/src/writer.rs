//! Background checkpoint writer.
//!
//! Each asynchronous checkpoint owns one worker thread, started at its first
//! submission. Jobs run in submission order; a new submission first waits
//! for the previous job, so at most one job per checkpoint is in flight.
//! Jobs only touch the storage layer, never the process group.

use std::sync::mpsc::{self, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use parking_lot::{Condvar, Mutex};

use crate::error::Result;

/// Terminal state of a job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobStatus {
    Done,
    Failed(String),
}

#[derive(Debug, Default)]
struct Slot {
    state: Mutex<Option<JobStatus>>,
    cv: Condvar,
}

/// Completion handle of a submitted job. Cloning shares the slot.
#[derive(Debug, Clone)]
pub struct JobHandle {
    slot: Arc<Slot>,
    version: u64,
}

impl JobHandle {
    fn pending(version: u64) -> Self {
        JobHandle { slot: Arc::new(Slot::default()), version }
    }

    fn finished(version: u64, status: JobStatus) -> Self {
        let h = Self::pending(version);
        h.complete(status);
        h
    }

    fn complete(&self, status: JobStatus) {
        let mut s = self.slot.state.lock();
        if s.is_none() {
            *s = Some(status);
            self.slot.cv.notify_all();
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Block until the job is done or failed. Never raises; calling it again
    /// returns the same status.
    pub fn wait(&self) -> JobStatus {
        let mut s = self.slot.state.lock();
        while s.is_none() {
            self.slot.cv.wait(&mut s);
        }
        s.clone().unwrap()
    }

    pub fn is_finished(&self) -> bool {
        self.slot.state.lock().is_some()
    }
}

type Work = Box<dyn FnOnce() -> Result<()> + Send>;

/// A unit of background work publishing one checkpoint version.
pub struct WriteJob {
    pub name: String,
    pub version: u64,
    work: Work,
}

impl WriteJob {
    pub fn new(name: impl Into<String>, version: u64, work: impl FnOnce() -> Result<()> + Send + 'static) -> Self {
        WriteJob { name: name.into(), version, work: Box::new(work) }
    }

    fn run(self) -> JobStatus {
        match (self.work)() {
            Ok(()) => JobStatus::Done,
            Err(e) => {
                log::warn!("{}: writing version {} failed: {e}", self.name, self.version);
                JobStatus::Failed(e.to_string())
            }
        }
    }
}

struct Worker {
    tx: Sender<(WriteJob, JobHandle)>,
    thread: JoinHandle<()>,
}

#[derive(Default)]
pub struct AsyncWriter {
    worker: Option<Worker>,
    last: Option<JobHandle>,
}

impl AsyncWriter {
    pub fn new() -> Self {
        AsyncWriter::default()
    }

    /// Run `job` in the background. Waits for the previous job first.
    pub fn submit(&mut self, job: WriteJob) -> JobHandle {
        if let Some(prev) = &self.last {
            prev.wait();
        }
        let handle = JobHandle::pending(job.version);
        let worker = self.worker.get_or_insert_with(|| {
            let (tx, rx) = mpsc::channel::<(WriteJob, JobHandle)>();
            let thread = thread::Builder::new()
                .name(format!("craftkit-writer-{}", job.name))
                .spawn(move || {
                    for (job, handle) in rx {
                        handle.complete(job.run());
                    }
                })
                .expect("cannot start writer thread");
            Worker { tx, thread }
        });
        if let Err(mpsc::SendError((job, h))) = worker.tx.send((job, handle.clone())) {
            // The worker died (a job panicked); run inline instead.
            h.complete(job.run());
        }
        self.last = Some(handle.clone());
        handle
    }

    /// Run `job` on the calling thread.
    pub fn run_inline(&mut self, job: WriteJob) -> JobHandle {
        if let Some(prev) = &self.last {
            prev.wait();
        }
        let version = job.version;
        let handle = JobHandle::finished(version, job.run());
        self.last = Some(handle.clone());
        handle
    }

    /// Wait for the most recent job, if any.
    pub fn wait(&self) -> Option<JobStatus> {
        self.last.as_ref().map(JobHandle::wait)
    }

    pub fn last(&self) -> Option<&JobHandle> {
        self.last.as_ref()
    }
}

impl Drop for AsyncWriter {
    fn drop(&mut self) {
        if let Some(w) = self.worker.take() {
            drop(w.tx);
            let _ = w.thread.join();
        }
    }
}
