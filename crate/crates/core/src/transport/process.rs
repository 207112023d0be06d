//! Worker side of the multi-process transport.
//!
//! Each worker connects to the launcher hub over a Unix socket, announces
//! itself with a `Hello` frame and then exchanges `Data` frames routed by the
//! hub. A background thread sends a heartbeat every 100 ms; the hub declares
//! a worker failed when its connection drops without a `Bye` or when ten
//! heartbeats in a row are missing, and notifies every other worker.

use std::collections::{BTreeSet, VecDeque};
use std::env;
use std::io::BufReader;
use std::net::Shutdown;
use std::os::unix::net::UnixStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;

use super::wire::{read_frame, write_frame, Frame};
use super::{ClusterSpec, EndpointId, FailureTarget, Incoming, Member, NodeId, Role, Transport};
use crate::error::CommError;

pub const ENV_HUB: &str = "CRAFTKIT_HUB";
pub const ENV_ENDPOINT: &str = "CRAFTKIT_ENDPOINT";
pub const ENV_NODE: &str = "CRAFTKIT_NODE";
pub const ENV_GENERATION: &str = "CRAFTKIT_GENERATION";
pub const ENV_CLUSTER: &str = "CRAFTKIT_CLUSTER";
pub const ENV_WORLD: &str = "CRAFTKIT_WORLD";
pub const ENV_PARENT: &str = "CRAFTKIT_PARENT";

pub const HEARTBEAT_INTERVAL: Duration = Duration::from_millis(100);
pub const MISSED_HEARTBEATS: u32 = 10;

pub fn unix_micros() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_micros() as u64)
}

pub(crate) fn encode_world(members: &[Member]) -> String {
    members.iter().map(|m| format!("{}:{}", m.endpoint.0, m.node)).collect::<Vec<_>>().join(",")
}

fn decode_world(s: &str) -> Option<Vec<Member>> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (e, n) = p.split_once(':')?;
            Some(Member { endpoint: EndpointId(e.parse().ok()?), node: n.parse().ok()? })
        })
        .collect()
}

pub(crate) fn encode_cluster(spec: &ClusterSpec) -> String {
    format!("{},{},{},{}", spec.num_nodes, spec.ranks_per_node, spec.reserve_nodes, spec.seed)
}

fn decode_cluster(s: &str) -> Option<ClusterSpec> {
    let v: Vec<u64> = s.split(',').map(|p| p.parse().ok()).collect::<Option<_>>()?;
    match v.as_slice() {
        [n, r, k, seed] => Some(ClusterSpec::new(*n as u32, *r as u32).with_reserve(*k as u32).with_seed(*seed)),
        _ => None,
    }
}

pub struct ProcessTransport {
    me: Member,
    role: Role,
    spec: ClusterSpec,
    writer: Arc<Mutex<UnixStream>>,
    rx: Receiver<Option<Frame>>,
    pending: VecDeque<Frame>,
    failed: BTreeSet<EndpointId>,
    next_request: u64,
    stop: Arc<AtomicBool>,
    aborted: bool,
}

impl ProcessTransport {
    /// Connect using the variables set by the launcher. `Ok(None)` when the
    /// process was not started by a launcher.
    pub fn from_env() -> Result<Option<Self>, CommError> {
        let Ok(hub) = env::var(ENV_HUB) else { return Ok(None) };
        let bad = |v: &str| CommError::Protocol(format!("missing or malformed {v}"));
        let var = |v: &str| env::var(v).map_err(|_| bad(v));
        let endpoint = EndpointId(var(ENV_ENDPOINT)?.parse().map_err(|_| bad(ENV_ENDPOINT))?);
        let node: NodeId = var(ENV_NODE)?.parse().map_err(|_| bad(ENV_NODE))?;
        let generation: u64 = var(ENV_GENERATION)?.parse().map_err(|_| bad(ENV_GENERATION))?;
        let spec = decode_cluster(&var(ENV_CLUSTER)?).ok_or_else(|| bad(ENV_CLUSTER))?;
        let role = match env::var(ENV_PARENT) {
            Ok(p) => Role::Spawned { parent: EndpointId(p.parse().map_err(|_| bad(ENV_PARENT))?) },
            Err(_) => Role::Initial(decode_world(&var(ENV_WORLD)?).ok_or_else(|| bad(ENV_WORLD))?),
        };
        Self::connect(&hub, Member { endpoint, node }, generation, role, spec).map(Some)
    }

    pub fn connect(hub: &str, me: Member, generation: u64, role: Role, spec: ClusterSpec) -> Result<Self, CommError> {
        let disconnected = |e: std::io::Error| CommError::Disconnected(e.to_string());
        let stream = UnixStream::connect(hub).map_err(disconnected)?;
        let reader = stream.try_clone().map_err(disconnected)?;
        let writer = Arc::new(Mutex::new(stream));
        write_frame(&mut *writer.lock(), &Frame::Hello { endpoint: me.endpoint, node: me.node, generation })
            .map_err(disconnected)?;

        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name("craftkit-recv".into())
            .spawn(move || {
                let mut reader = BufReader::new(reader);
                loop {
                    match read_frame(&mut reader) {
                        Ok(Some(f)) => {
                            if tx.send(Some(f)).is_err() {
                                break;
                            }
                        }
                        _ => {
                            let _ = tx.send(None);
                            break;
                        }
                    }
                }
            })
            .map_err(disconnected)?;

        let stop = Arc::new(AtomicBool::new(false));
        {
            let writer = writer.clone();
            let stop = stop.clone();
            thread::Builder::new()
                .name("craftkit-heartbeat".into())
                .spawn(move || {
                    while !stop.load(Ordering::SeqCst) {
                        if write_frame(&mut *writer.lock(), &Frame::Heartbeat).is_err() {
                            break;
                        }
                        thread::sleep(HEARTBEAT_INTERVAL);
                    }
                })
                .map_err(disconnected)?;
        }
        Ok(ProcessTransport {
            me,
            role,
            spec,
            writer,
            rx,
            pending: VecDeque::new(),
            failed: BTreeSet::new(),
            next_request: 0,
            stop,
            aborted: false,
        })
    }

    fn write(&self, frame: &Frame) -> Result<(), CommError> {
        write_frame(&mut *self.writer.lock(), frame).map_err(|e| CommError::Disconnected(e.to_string()))
    }

    fn next_frame(&mut self) -> Result<Frame, CommError> {
        if let Some(f) = self.pending.pop_front() {
            return Ok(f);
        }
        match self.rx.recv() {
            Ok(Some(f)) => Ok(f),
            _ => Err(CommError::Disconnected("launcher hub closed the connection".into())),
        }
    }
}

impl Transport for ProcessTransport {
    fn me(&self) -> Member {
        self.me
    }

    fn role(&self) -> Role {
        self.role.clone()
    }

    fn cluster(&self) -> ClusterSpec {
        self.spec
    }

    fn send(&mut self, to: EndpointId, bytes: Vec<u8>) -> Result<(), CommError> {
        if self.failed.contains(&to) {
            return Err(CommError::ProcFailed(vec![to]));
        }
        self.write(&Frame::Data { peer: to, bytes })
    }

    fn recv(&mut self) -> Result<Incoming, CommError> {
        loop {
            match self.next_frame()? {
                Frame::Data { peer, bytes } => return Ok(Incoming::Message { from: peer, bytes }),
                Frame::Failed { endpoint } => {
                    if self.failed.insert(endpoint) {
                        return Ok(Incoming::Failed(endpoint));
                    }
                }
                other => log::debug!("ignoring unexpected frame {other:?}"),
            }
        }
    }

    fn spawn(&mut self, nodes: &[NodeId]) -> Result<Vec<Member>, CommError> {
        let request = self.next_request;
        self.next_request += 1;
        self.write(&Frame::SpawnRequest { request, nodes: nodes.to_vec() })?;
        let mut held = VecDeque::new();
        let result = loop {
            let f = match self.rx.recv() {
                Ok(Some(f)) => f,
                _ => break Err(CommError::Disconnected("launcher hub closed the connection".into())),
            };
            match f {
                Frame::SpawnReply { request: r, members } if r == request => break Ok(members),
                other => held.push_back(other),
            }
        };
        self.pending.extend(held);
        result
    }

    fn inject_failure(&mut self, target: FailureTarget) -> Result<(), CommError> {
        self.write(&Frame::Kill { target })?;
        let hits_me = match target {
            FailureTarget::Rank(ep) => ep == self.me.endpoint,
            FailureTarget::Node(n) => n == self.me.node,
        };
        if hits_me {
            // The hub is about to SIGKILL this process.
            loop {
                thread::sleep(Duration::from_secs(1));
            }
        }
        Ok(())
    }

    fn now(&self) -> u64 {
        unix_micros()
    }

    fn abort(&mut self) {
        self.aborted = true;
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.writer.lock().shutdown(Shutdown::Both);
    }
}

impl Drop for ProcessTransport {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if !self.aborted && !thread::panicking() {
            let _ = self.write(&Frame::Bye);
        }
        let _ = self.writer.lock().shutdown(Shutdown::Write);
    }
}
