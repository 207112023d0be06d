//! Deterministic simulated cluster.
//!
//! Every rank runs the same program on its own OS thread, but only the
//! thread holding the baton executes. The baton moves whenever the holder
//! waits for a message or exits; the next holder is drawn with a seeded RNG
//! from the ranks that can make progress. Given the same [`ClusterSpec`],
//! failure schedule and program, every run produces the same message trace.
//!
//! Logical time is the number of delivered messages. Failures fire either
//! at a delivery count ([`SimCluster::fail_at`]) or immediately when a
//! program calls [`Transport::inject_failure`]. A failed rank's thread is
//! frozen until the simulation ends, so it cannot touch shared state after
//! its failure point; then it observes [`CommError::Killed`] and unwinds.

use std::any::Any;
use std::collections::{BTreeMap, VecDeque};
use std::panic::{self, AssertUnwindSafe};
use std::sync::{Arc, OnceLock};
use std::thread::{self, JoinHandle};

use parking_lot::{Condvar, Mutex, MutexGuard};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClusterSpec, EndpointId, FailureTarget, Incoming, Member, NodeId, Role, Transport};
use crate::error::CommError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Deliver { step: u64, from: EndpointId, to: EndpointId, len: usize },
    Fail { step: u64, endpoint: EndpointId },
    Spawn { step: u64, parent: EndpointId, child: Member },
    Exit { step: u64, endpoint: EndpointId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Alive,
    Failed,
    Exited,
}

struct Ep {
    member: Member,
    status: Status,
    waiting: bool,
    queue: VecDeque<Incoming>,
    cv: Arc<Condvar>,
}

struct State {
    eps: BTreeMap<EndpointId, Ep>,
    current: Option<EndpointId>,
    rng: ChaCha8Rng,
    deliveries: u64,
    triggers: VecDeque<(u64, FailureTarget)>,
    trace: Vec<TraceEvent>,
    failures: Vec<(u64, EndpointId)>,
    next_id: u64,
    deadlock: bool,
    finished: bool,
}

type Spawner = Box<dyn Fn(Member, EndpointId) + Send + Sync>;

struct Inner {
    spec: ClusterSpec,
    state: Mutex<State>,
    spawner: OnceLock<Spawner>,
}

impl State {
    fn ep(&mut self, id: EndpointId) -> &mut Ep {
        self.eps.get_mut(&id).expect("unknown endpoint")
    }

    /// Hand the baton to a rank that can make progress.
    fn schedule(&mut self) {
        let runnable: Vec<EndpointId> = self
            .eps
            .iter()
            .filter(|(_, e)| e.status == Status::Alive && (!e.waiting || !e.queue.is_empty()))
            .map(|(id, _)| *id)
            .collect();
        if runnable.is_empty() {
            self.current = None;
            if self.eps.values().any(|e| e.status == Status::Alive && e.waiting) {
                self.deadlock = true;
            }
            self.finished = true;
            for e in self.eps.values() {
                e.cv.notify_all();
            }
        } else {
            let pick = runnable[self.rng.gen_range(0..runnable.len())];
            self.current = Some(pick);
            self.eps[&pick].cv.notify_all();
        }
    }

    fn fail(&mut self, target: FailureTarget) {
        let victims: Vec<EndpointId> = self
            .eps
            .iter()
            .filter(|(id, e)| {
                e.status == Status::Alive
                    && match target {
                        FailureTarget::Rank(r) => **id == r,
                        FailureTarget::Node(n) => e.member.node == n,
                    }
            })
            .map(|(id, _)| *id)
            .collect();
        for &v in &victims {
            self.ep(v).status = Status::Failed;
            self.trace.push(TraceEvent::Fail { step: self.deliveries, endpoint: v });
            self.failures.push((self.deliveries, v));
        }
        for e in self.eps.values_mut().filter(|e| e.status == Status::Alive) {
            e.queue.extend(victims.iter().map(|&v| Incoming::Failed(v)));
        }
    }

    fn fire_triggers(&mut self) {
        while let Some(&(at, target)) = self.triggers.front() {
            if at > self.deliveries {
                break;
            }
            self.triggers.pop_front();
            self.fail(target);
        }
    }
}

impl Inner {
    /// Block until `me` holds the baton.
    fn wait_turn(&self, st: &mut MutexGuard<'_, State>, me: EndpointId) -> Result<(), CommError> {
        loop {
            if st.deadlock {
                return Err(CommError::Deadlock);
            }
            let status = st.eps[&me].status;
            match status {
                Status::Failed if st.finished || st.current == Some(me) => return Err(CommError::Killed),
                Status::Alive if st.current == Some(me) => return Ok(()),
                Status::Exited => return Err(CommError::Protocol("endpoint already exited".into())),
                _ => {}
            }
            let cv = st.eps[&me].cv.clone();
            cv.wait(st);
        }
    }

    fn check_live(&self, st: &State, me: EndpointId) -> Result<(), CommError> {
        if st.deadlock {
            return Err(CommError::Deadlock);
        }
        match st.eps[&me].status {
            Status::Alive => Ok(()),
            _ => Err(CommError::Killed),
        }
    }

    fn exit(&self, me: EndpointId) -> bool {
        let mut st = self.state.lock();
        let step = st.deliveries;
        let e = st.ep(me);
        e.waiting = false;
        let failed = e.status == Status::Failed;
        if e.status == Status::Alive {
            e.status = Status::Exited;
            st.trace.push(TraceEvent::Exit { step, endpoint: me });
        }
        if st.current == Some(me) {
            st.schedule();
        }
        failed
    }
}

/// Per-rank handle into a simulated cluster.
pub struct SimTransport {
    inner: Arc<Inner>,
    me: Member,
    role: Role,
}

impl Transport for SimTransport {
    fn me(&self) -> Member {
        self.me
    }

    fn role(&self) -> Role {
        self.role.clone()
    }

    fn cluster(&self) -> ClusterSpec {
        self.inner.spec
    }

    fn send(&mut self, to: EndpointId, bytes: Vec<u8>) -> Result<(), CommError> {
        let mut st = self.inner.state.lock();
        self.inner.check_live(&st, self.me.endpoint)?;
        let status = match st.eps.get(&to) {
            Some(e) => e.status,
            None => return Err(CommError::Protocol(format!("unknown endpoint {to}"))),
        };
        match status {
            Status::Failed => return Err(CommError::ProcFailed(vec![to])),
            Status::Exited => return Ok(()),
            Status::Alive => {}
        }
        st.deliveries += 1;
        let step = st.deliveries;
        st.trace.push(TraceEvent::Deliver { step, from: self.me.endpoint, to, len: bytes.len() });
        st.ep(to).queue.push_back(Incoming::Message { from: self.me.endpoint, bytes });
        st.fire_triggers();
        Ok(())
    }

    fn recv(&mut self) -> Result<Incoming, CommError> {
        let me = self.me.endpoint;
        let mut st = self.inner.state.lock();
        self.inner.check_live(&st, me)?;
        loop {
            st.ep(me).waiting = true;
            st.schedule();
            let turn = self.inner.wait_turn(&mut st, me);
            st.ep(me).waiting = false;
            turn?;
            if let Some(m) = st.ep(me).queue.pop_front() {
                return Ok(m);
            }
        }
    }

    fn spawn(&mut self, nodes: &[NodeId]) -> Result<Vec<Member>, CommError> {
        let mut st = self.inner.state.lock();
        self.inner.check_live(&st, self.me.endpoint)?;
        let mut out = Vec::with_capacity(nodes.len());
        for &node in nodes {
            let id = EndpointId(st.next_id);
            st.next_id += 1;
            let member = Member { endpoint: id, node };
            st.eps.insert(
                id,
                Ep { member, status: Status::Alive, waiting: false, queue: VecDeque::new(), cv: Arc::new(Condvar::new()) },
            );
            let step = st.deliveries;
            st.trace.push(TraceEvent::Spawn { step, parent: self.me.endpoint, child: member });
            out.push(member);
        }
        drop(st);
        let spawner = self.inner.spawner.get().expect("simulation not running");
        for m in &out {
            spawner(*m, self.me.endpoint);
        }
        Ok(out)
    }

    fn inject_failure(&mut self, target: FailureTarget) -> Result<(), CommError> {
        let mut st = self.inner.state.lock();
        self.inner.check_live(&st, self.me.endpoint)?;
        st.fail(target);
        self.inner.check_live(&st, self.me.endpoint)
    }

    fn now(&self) -> u64 {
        self.inner.state.lock().deliveries
    }

    fn clock_unit(&self) -> &'static str {
        "deliveries"
    }

    fn abort(&mut self) {
        let mut st = self.inner.state.lock();
        if st.eps[&self.me.endpoint].status == Status::Alive {
            st.fail(FailureTarget::Rank(self.me.endpoint));
        }
    }
}

/// Outcome of one simulated process.
#[derive(Debug, Clone)]
pub struct ProcessResult<T> {
    pub member: Member,
    pub spawned: bool,
    /// The process failed (killed, aborted or panicked) before exiting.
    pub failed: bool,
    pub value: T,
}

#[derive(Debug)]
pub struct SimRun<T> {
    pub results: BTreeMap<EndpointId, ProcessResult<T>>,
    pub trace: Vec<TraceEvent>,
    /// Ground-truth failure log: (delivery step, endpoint).
    pub failures: Vec<(u64, EndpointId)>,
    pub deliveries: u64,
    pub deadlocked: bool,
}

impl<T> SimRun<T> {
    /// Results of processes that exited normally, in endpoint order.
    pub fn survivors(&self) -> impl Iterator<Item = &ProcessResult<T>> {
        self.results.values().filter(|r| !r.failed)
    }
}

#[derive(Debug, Clone)]
pub struct SimCluster {
    spec: ClusterSpec,
    triggers: Vec<(u64, FailureTarget)>,
}

impl SimCluster {
    pub fn new(spec: ClusterSpec) -> Self {
        SimCluster { spec, triggers: Vec::new() }
    }

    /// Fail `target` right after the `delivery`-th message is delivered.
    pub fn fail_at(mut self, delivery: u64, target: FailureTarget) -> Self {
        self.triggers.push((delivery, target));
        self
    }

    pub fn run<T, F>(self, program: F) -> SimRun<T>
    where
        T: Send + 'static,
        F: Fn(SimTransport) -> T + Send + Sync + 'static,
    {
        let initial = self.spec.initial_members();
        let mut triggers = self.triggers;
        triggers.sort_by_key(|t| t.0);
        let mut eps = BTreeMap::new();
        for m in &initial {
            eps.insert(
                m.endpoint,
                Ep { member: *m, status: Status::Alive, waiting: false, queue: VecDeque::new(), cv: Arc::new(Condvar::new()) },
            );
        }
        let inner = Arc::new(Inner {
            spec: self.spec,
            state: Mutex::new(State {
                eps,
                current: None,
                rng: ChaCha8Rng::seed_from_u64(self.spec.seed),
                deliveries: 0,
                triggers: triggers.into(),
                trace: Vec::new(),
                failures: Vec::new(),
                next_id: initial.len() as u64,
                deadlock: false,
                finished: false,
            }),
            spawner: OnceLock::new(),
        });

        type Results<T> = Arc<Mutex<BTreeMap<EndpointId, ProcessResult<T>>>>;
        let results: Results<T> = Arc::new(Mutex::new(BTreeMap::new()));
        let handles: Arc<Mutex<Vec<JoinHandle<()>>>> = Arc::new(Mutex::new(Vec::new()));
        let panics: Arc<Mutex<Vec<Box<dyn Any + Send>>>> = Arc::new(Mutex::new(Vec::new()));
        let program = Arc::new(program);

        let launch = {
            let inner = Arc::downgrade(&inner);
            let results = results.clone();
            let handles_ref = Arc::downgrade(&handles);
            let panics = panics.clone();
            Arc::new(move |member: Member, role: Role| {
                let inner = inner.upgrade().expect("simulation dropped");
                let results = results.clone();
                let panics = panics.clone();
                let program = program.clone();
                let h = thread::Builder::new()
                    .name(format!("sim-{}", member.endpoint))
                    .spawn(move || {
                        let me = member.endpoint;
                        let spawned = matches!(role, Role::Spawned { .. });
                        {
                            let mut st = inner.state.lock();
                            let _ = inner.wait_turn(&mut st, me);
                        }
                        let t = SimTransport { inner: inner.clone(), me: member, role };
                        match panic::catch_unwind(AssertUnwindSafe(|| program(t))) {
                            Ok(value) => {
                                let failed = inner.exit(me);
                                results.lock().insert(me, ProcessResult { member, spawned, failed, value });
                            }
                            Err(p) => {
                                inner.state.lock().fail(FailureTarget::Rank(me));
                                inner.exit(me);
                                panics.lock().push(p);
                            }
                        }
                    })
                    .expect("failed to start simulated rank");
                if let Some(handles) = handles_ref.upgrade() {
                    handles.lock().push(h);
                }
            })
        };
        {
            let launch = launch.clone();
            let spawner: Spawner = Box::new(move |m, parent| launch(m, Role::Spawned { parent }));
            let _ = inner.spawner.set(spawner);
        }
        inner.state.lock().schedule();
        for m in &initial {
            launch(*m, Role::Initial(initial.clone()));
        }
        loop {
            let next = handles.lock().pop();
            match next {
                Some(h) => {
                    let _ = h.join();
                }
                None => break,
            }
        }
        if let Some(p) = panics.lock().pop() {
            panic::resume_unwind(p);
        }
        let st = inner.state.lock();
        let results = std::mem::take(&mut *results.lock());
        SimRun {
            results,
            trace: st.trace.clone(),
            failures: st.failures.clone(),
            deliveries: st.deliveries,
            deadlocked: st.deadlock,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(mut t: SimTransport, rounds: usize) -> Result<usize, CommError> {
        let Role::Initial(world) = t.role() else { unreachable!() };
        let me = world.iter().position(|m| m.endpoint == t.me().endpoint).unwrap();
        let next = world[(me + 1) % world.len()].endpoint;
        let mut got = 0;
        for r in 0..rounds {
            t.send(next, vec![r as u8])?;
            match t.recv()? {
                Incoming::Message { .. } => got += 1,
                Incoming::Failed(ep) => return Err(CommError::ProcFailed(vec![ep])),
            }
        }
        Ok(got)
    }

    #[test]
    fn ring_exchange_completes() {
        let run = SimCluster::new(ClusterSpec::new(2, 2)).run(|t| ring(t, 5));
        assert_eq!(run.results.len(), 4);
        assert!(run.results.values().all(|r| r.value == Ok(5)));
        assert_eq!(run.deliveries, 20);
        assert!(!run.deadlocked);
    }

    #[test]
    fn same_seed_same_trace() {
        let spec = ClusterSpec::new(3, 2).with_seed(11);
        let a = SimCluster::new(spec).run(|t| ring(t, 4)).trace;
        let b = SimCluster::new(spec).run(|t| ring(t, 4)).trace;
        assert_eq!(a, b);
        let c = SimCluster::new(spec.with_seed(12)).run(|t| ring(t, 4)).trace;
        assert_eq!(a.len(), c.len());
    }

    #[test]
    fn node_failure_is_reported_to_survivors() {
        let spec = ClusterSpec::new(3, 2);
        let run = SimCluster::new(spec).fail_at(3, FailureTarget::Node(1)).run(|t| ring(t, 10));
        let failed: Vec<_> = run.failures.iter().map(|f| f.1).collect();
        assert_eq!(failed, vec![EndpointId(2), EndpointId(3)]);
        for r in run.results.values() {
            if r.member.node == 1 {
                assert!(r.failed);
                assert_eq!(r.value, Err(CommError::Killed));
            } else {
                assert!(!r.failed);
                assert!(matches!(r.value, Err(CommError::ProcFailed(_))));
            }
        }
    }

    #[test]
    fn single_rank_failure_spares_node_mates() {
        let run = SimCluster::new(ClusterSpec::new(1, 4))
            .fail_at(1, FailureTarget::Rank(EndpointId(2)))
            .run(|t| ring(t, 3));
        let failed: Vec<bool> = run.results.values().map(|r| r.failed).collect();
        assert_eq!(failed, vec![false, false, true, false]);
    }

    #[test]
    fn waiting_for_nobody_is_a_deadlock() {
        let run = SimCluster::new(ClusterSpec::new(1, 2)).run(|mut t| t.recv().map(|_| ()));
        assert!(run.deadlocked);
        assert!(run.results.values().all(|r| r.value == Err(CommError::Deadlock)));
    }

    #[test]
    fn spawned_process_talks_to_parent() {
        let run = SimCluster::new(ClusterSpec::new(1, 1).with_reserve(1)).run(|mut t| match t.role() {
            Role::Initial(_) => {
                let kids = t.spawn(&[1]).unwrap();
                t.send(kids[0].endpoint, b"hi".to_vec()).unwrap();
                match t.recv().unwrap() {
                    Incoming::Message { bytes, .. } => bytes,
                    other => panic!("{other:?}"),
                }
            }
            Role::Spawned { parent } => {
                let Incoming::Message { bytes, .. } = t.recv().unwrap() else { panic!() };
                t.send(parent, [bytes, b"!".to_vec()].concat()).unwrap();
                Vec::new()
            }
        });
        assert_eq!(run.results[&EndpointId(0)].value, b"hi!".to_vec());
        let kid = &run.results[&EndpointId(1)];
        assert!(kid.spawned);
        assert_eq!(kid.member.node, 1);
    }
}
