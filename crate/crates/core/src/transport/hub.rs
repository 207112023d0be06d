//! Launcher side of the multi-process transport.
//!
//! The hub starts one worker process per rank, routes their messages, starts
//! replacement workers on request, and turns process deaths into `Failed`
//! notifications. A worker is considered failed when its connection closes
//! without a preceding `Bye`, when it exits without ever connecting, or when
//! it misses [`MISSED_HEARTBEATS`] heartbeats in a row (it is then killed to
//! keep failures fail-stop).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::{self, BufReader};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::PathBuf;
use std::process::{Child, Command};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use super::process::{
    encode_cluster, encode_world, ENV_CLUSTER, ENV_ENDPOINT, ENV_GENERATION, ENV_HUB, ENV_NODE, ENV_PARENT,
    ENV_WORLD, HEARTBEAT_INTERVAL, MISSED_HEARTBEATS,
};
use super::wire::{read_frame, write_frame, Frame};
use super::{ClusterSpec, EndpointId, FailureTarget, Member};

#[derive(Debug, Clone)]
pub struct LaunchConfig {
    pub spec: ClusterSpec,
    pub program: PathBuf,
    pub args: Vec<OsString>,
    /// Directory for the hub socket; a temporary directory when `None`.
    pub socket_dir: Option<PathBuf>,
    /// Print one line per started worker to stderr.
    pub announce: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Starting,
    Connected,
    Failed,
    Exited,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerRecord {
    pub member: Member,
    pub pid: u32,
    pub spawned: bool,
    /// Exit code; `None` when terminated by a signal.
    pub exit_code: Option<i32>,
    /// The hub declared this worker failed.
    pub failed: bool,
}

#[derive(Debug, Clone)]
pub struct LaunchReport {
    pub workers: Vec<WorkerRecord>,
}

impl LaunchReport {
    /// Every worker that was not declared failed exited with status 0.
    pub fn success(&self) -> bool {
        let clean: Vec<_> = self.workers.iter().filter(|w| !w.failed).collect();
        !clean.is_empty() && clean.iter().all(|w| w.exit_code == Some(0))
    }
}

struct Worker {
    member: Member,
    pid: u32,
    spawned: bool,
    status: Status,
    conn: Option<Arc<Mutex<UnixStream>>>,
    outbox: Vec<Frame>,
    last_seen: Instant,
    bye: bool,
}

struct HubState {
    workers: BTreeMap<EndpointId, Worker>,
    children: Vec<(EndpointId, Child)>,
    next_id: u64,
    generation: u64,
}

struct Hub {
    cfg: LaunchConfig,
    socket: PathBuf,
    state: Mutex<HubState>,
}

impl Hub {
    fn start_worker(&self, st: &mut HubState, member: Member, parent: Option<EndpointId>, world: &[Member]) -> io::Result<()> {
        let mut cmd = Command::new(&self.cfg.program);
        cmd.args(&self.cfg.args)
            .env(ENV_HUB, &self.socket)
            .env(ENV_ENDPOINT, member.endpoint.0.to_string())
            .env(ENV_NODE, member.node.to_string())
            .env(ENV_GENERATION, st.generation.to_string())
            .env(ENV_CLUSTER, encode_cluster(&self.cfg.spec));
        match parent {
            Some(p) => {
                cmd.env(ENV_PARENT, p.0.to_string()).env_remove(ENV_WORLD);
            }
            None => {
                cmd.env(ENV_WORLD, encode_world(world)).env_remove(ENV_PARENT);
            }
        }
        let child = cmd.spawn()?;
        let pid = child.id();
        if self.cfg.announce {
            eprintln!("craftkit-launch: endpoint {} node {} pid {}", member.endpoint.0, member.node, pid);
        }
        st.workers.insert(
            member.endpoint,
            Worker {
                member,
                pid,
                spawned: parent.is_some(),
                status: Status::Starting,
                conn: None,
                outbox: Vec::new(),
                last_seen: Instant::now(),
                bye: false,
            },
        );
        st.children.push((member.endpoint, child));
        Ok(())
    }

    fn deliver(st: &mut HubState, to: EndpointId, frame: Frame) {
        let Some(w) = st.workers.get_mut(&to) else { return };
        match w.status {
            Status::Starting => w.outbox.push(frame),
            Status::Connected => {
                if let Some(c) = &w.conn {
                    let _ = write_frame(&mut *c.lock(), &frame);
                }
            }
            Status::Failed | Status::Exited => {}
        }
    }

    fn mark_failed(&self, st: &mut HubState, ep: EndpointId) {
        let Some(w) = st.workers.get_mut(&ep) else { return };
        if matches!(w.status, Status::Failed | Status::Exited) {
            return;
        }
        w.status = Status::Failed;
        w.conn = None;
        log::info!("worker {ep} failed");
        let others: Vec<EndpointId> = st.workers.keys().copied().filter(|&e| e != ep).collect();
        for o in others {
            Self::deliver(st, o, Frame::Failed { endpoint: ep });
        }
    }

    fn handle(self: &Arc<Self>, stream: UnixStream) {
        let mut reader = BufReader::new(match stream.try_clone() {
            Ok(s) => s,
            Err(_) => return,
        });
        let me = match read_frame(&mut reader) {
            Ok(Some(Frame::Hello { endpoint, .. })) => endpoint,
            _ => return,
        };
        {
            let mut st = self.state.lock();
            let failed: Vec<EndpointId> =
                st.workers.iter().filter(|(_, w)| w.status == Status::Failed).map(|(e, _)| *e).collect();
            let Some(w) = st.workers.get_mut(&me) else { return };
            if w.status != Status::Starting {
                return;
            }
            let conn = Arc::new(Mutex::new(stream));
            {
                let mut c = conn.lock();
                for f in failed.into_iter().map(|endpoint| Frame::Failed { endpoint }).chain(w.outbox.drain(..)) {
                    let _ = write_frame(&mut *c, &f);
                }
            }
            w.conn = Some(conn);
            w.status = Status::Connected;
            w.last_seen = Instant::now();
        }
        while let Ok(Some(frame)) = read_frame(&mut reader) {
            let mut st = self.state.lock();
            if let Some(w) = st.workers.get_mut(&me) {
                w.last_seen = Instant::now();
                if w.status != Status::Connected {
                    break;
                }
            }
            match frame {
                Frame::Data { peer, bytes } => {
                    let status = st.workers.get(&peer).map(|w| w.status);
                    match status {
                        Some(Status::Failed) | None => Self::deliver(&mut st, me, Frame::Failed { endpoint: peer }),
                        _ => Self::deliver(&mut st, peer, Frame::Data { peer: me, bytes }),
                    }
                }
                Frame::Heartbeat => {}
                Frame::SpawnRequest { request, nodes } => {
                    st.generation += 1;
                    let mut members = Vec::new();
                    for node in nodes {
                        let member = Member { endpoint: EndpointId(st.next_id), node };
                        st.next_id += 1;
                        match self.start_worker(&mut st, member, Some(me), &[]) {
                            Ok(()) => members.push(member),
                            Err(e) => log::error!("cannot start replacement on node {node}: {e}"),
                        }
                    }
                    Self::deliver(&mut st, me, Frame::SpawnReply { request, members });
                }
                Frame::Kill { target } => {
                    for w in st.workers.values() {
                        let hit = match target {
                            FailureTarget::Rank(ep) => w.member.endpoint == ep,
                            FailureTarget::Node(n) => w.member.node == n,
                        };
                        if hit && w.status != Status::Exited {
                            kill(w.pid);
                        }
                    }
                }
                Frame::Bye => {
                    if let Some(w) = st.workers.get_mut(&me) {
                        w.bye = true;
                    }
                }
                other => log::warn!("unexpected frame from {me}: {other:?}"),
            }
        }
        let mut st = self.state.lock();
        let bye = st.workers.get(&me).is_some_and(|w| w.bye);
        if bye {
            if let Some(w) = st.workers.get_mut(&me) {
                w.status = Status::Exited;
                w.conn = None;
            }
        } else {
            self.mark_failed(&mut st, me);
        }
    }
}

fn kill(pid: u32) {
    // SAFETY: plain syscall on a pid owned by this launcher.
    unsafe {
        libc::kill(pid as libc::pid_t, libc::SIGKILL);
    }
}

/// Run a job to completion and report how every worker ended.
pub fn launch(cfg: LaunchConfig) -> io::Result<LaunchReport> {
    let tmp;
    let dir = match &cfg.socket_dir {
        Some(d) => d.clone(),
        None => {
            tmp = std::env::temp_dir().join(format!("craftkit-{}-{}", std::process::id(), super::process::unix_micros()));
            std::fs::create_dir_all(&tmp)?;
            tmp.clone()
        }
    };
    let socket = dir.join("hub.sock");
    let _ = std::fs::remove_file(&socket);
    let listener = UnixListener::bind(&socket)?;
    let spec = cfg.spec;
    let hub = Arc::new(Hub {
        cfg,
        socket: socket.clone(),
        state: Mutex::new(HubState {
            workers: BTreeMap::new(),
            children: Vec::new(),
            next_id: spec.total_ranks() as u64,
            generation: 0,
        }),
    });

    {
        let hub = hub.clone();
        thread::Builder::new().name("hub-accept".into()).spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let hub = hub.clone();
                let _ = thread::Builder::new().name("hub-conn".into()).spawn(move || hub.handle(stream));
            }
        })?;
    }

    let world = spec.initial_members();
    {
        let mut st = hub.state.lock();
        for m in &world {
            hub.start_worker(&mut st, *m, None, &world)?;
        }
    }

    let timeout = HEARTBEAT_INTERVAL * MISSED_HEARTBEATS;
    let mut reaped: Vec<(EndpointId, Option<i32>, Instant)> = Vec::new();
    let mut records = Vec::new();
    loop {
        let mut st = hub.state.lock();
        let stale: Vec<EndpointId> = st
            .workers
            .iter()
            .filter(|(_, w)| w.status == Status::Connected && w.last_seen.elapsed() > timeout)
            .map(|(e, _)| *e)
            .collect();
        for ep in stale {
            kill(st.workers[&ep].pid);
            hub.mark_failed(&mut st, ep);
        }
        let mut i = 0;
        while i < st.children.len() {
            match st.children[i].1.try_wait()? {
                Some(status) => {
                    let (ep, _) = st.children.swap_remove(i);
                    reaped.push((ep, status.code(), Instant::now()));
                }
                None => i += 1,
            }
        }
        // The connection thread classifies a dead worker as exited or
        // failed; a worker that never connected is failed after a grace
        // period.
        let mut j = 0;
        while j < reaped.len() {
            let (ep, code, at) = reaped[j];
            let status = st.workers[&ep].status;
            let settled = matches!(status, Status::Exited | Status::Failed);
            if settled || at.elapsed() > Duration::from_millis(200) {
                if !settled {
                    hub.mark_failed(&mut st, ep);
                }
                records.push((ep, code));
                reaped.swap_remove(j);
            } else {
                j += 1;
            }
        }
        if st.children.is_empty() && reaped.is_empty() {
            break;
        }
        drop(st);
        thread::sleep(Duration::from_millis(10));
    }
    let st = hub.state.lock();
    let mut workers: Vec<WorkerRecord> = records
        .into_iter()
        .map(|(ep, code)| {
            let w = &st.workers[&ep];
            WorkerRecord { member: w.member, pid: w.pid, spawned: w.spawned, exit_code: code, failed: w.status == Status::Failed }
        })
        .collect();
    workers.sort_by_key(|w| w.member.endpoint);
    drop(st);
    let _ = std::fs::remove_file(&socket);
    if hub.cfg.socket_dir.is_none() {
        let _ = std::fs::remove_dir_all(&dir);
    }
    Ok(LaunchReport { workers })
}
