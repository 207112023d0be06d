use std::cell::{RefCell, RefMut};
use std::collections::BTreeSet;
use std::fmt;
use std::rc::Rc;

use super::codec::{
    decode_f64s, encode_f64s, from_json, to_json, Decision, Kind, Msg, Proposal, View, RECOVERY_TAG,
};
use super::{NodeLedger, Phase, PhaseTiming, RecoveryConfig, RecoveryRecord};
use crate::checkpoint::Registry;
use crate::env::RecoveryPolicy;
use crate::error::CommError;
use crate::transport::{ClusterSpec, EndpointId, FailureTarget, Incoming, Member, NodeId, Role, Solo, Transport};

type CommResult<T> = Result<T, CommError>;

/// Leader's decision function: (state, combined flag, failed endpoints).
type Decide<'a> = dyn FnMut(&mut GroupState, u64, BTreeSet<EndpointId>) -> CommResult<Decision> + 'a;

pub(crate) struct GroupState {
    transport: Box<dyn Transport>,
    me: Member,
    members: Vec<Member>,
    rank: usize,
    epoch: u64,
    seq: u64,
    revoked: bool,
    revoke_sent: bool,
    failed: BTreeSet<EndpointId>,
    mailbox: Vec<(EndpointId, Msg)>,
    finished_tags: BTreeSet<u64>,
    cfg: RecoveryConfig,
    ledger: NodeLedger,
    history: Vec<RecoveryRecord>,
    replacement: bool,
    pub(crate) registry: Registry,
}

/// A fault-aware process group.
///
/// Cloning yields another handle to the same group; recovery updates the
/// group in place, so every handle (including the one held by checkpoints)
/// sees the repaired membership.
#[derive(Clone)]
pub struct ProcessGroup(Rc<RefCell<GroupState>>);

impl fmt::Debug for ProcessGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let st = self.0.borrow();
        f.debug_struct("ProcessGroup")
            .field("rank", &st.rank)
            .field("size", &st.members.len())
            .field("epoch", &st.epoch)
            .finish()
    }
}

impl ProcessGroup {
    /// Join the group. Initial processes form the world; replacements wait
    /// for their parent to hand over the recovered view.
    pub fn new(transport: Box<dyn Transport>, cfg: RecoveryConfig) -> CommResult<Self> {
        let me = transport.me();
        let role = transport.role();
        let spec = transport.cluster();
        let world = match &role {
            Role::Initial(world) => world.clone(),
            Role::Spawned { .. } => vec![me],
        };
        let rank = world.iter().position(|m| m.endpoint == me.endpoint).unwrap_or(0);
        let mut st = GroupState {
            transport,
            me,
            ledger: NodeLedger::new(&world, spec.reserve()),
            members: world,
            rank,
            epoch: 0,
            seq: 0,
            revoked: false,
            revoke_sent: false,
            failed: BTreeSet::new(),
            mailbox: Vec::new(),
            finished_tags: BTreeSet::new(),
            cfg,
            history: Vec::new(),
            replacement: false,
            registry: Registry::default(),
        };
        if let Role::Spawned { parent } = role {
            st.await_view(parent)?;
        }
        Ok(ProcessGroup(Rc::new(RefCell::new(st))))
    }

    /// A group of one process without any peers.
    pub fn solo() -> Self {
        ProcessGroup::new(Box::new(Solo::new()), RecoveryConfig::default()).expect("solo group")
    }

    fn st(&self) -> RefMut<'_, GroupState> {
        self.0.borrow_mut()
    }

    pub(crate) fn registry(&self) -> RefMut<'_, Registry> {
        RefMut::map(self.0.borrow_mut(), |s| &mut s.registry)
    }

    pub(crate) fn try_registry(&self) -> Option<RefMut<'_, Registry>> {
        self.0.try_borrow_mut().ok().map(|b| RefMut::map(b, |s| &mut s.registry))
    }

    pub fn rank(&self) -> usize {
        self.0.borrow().rank
    }

    pub fn size(&self) -> usize {
        self.0.borrow().members.len()
    }

    pub fn epoch(&self) -> u64 {
        self.0.borrow().epoch
    }

    pub fn me(&self) -> Member {
        self.0.borrow().me
    }

    pub fn node(&self) -> NodeId {
        self.0.borrow().me.node
    }

    pub fn members(&self) -> Vec<Member> {
        self.0.borrow().members.clone()
    }

    /// Nodes hosting current members.
    pub fn nodes(&self) -> BTreeSet<NodeId> {
        self.0.borrow().members.iter().map(|m| m.node).collect()
    }

    pub fn ledger(&self) -> NodeLedger {
        self.0.borrow().ledger.clone()
    }

    pub fn config(&self) -> RecoveryConfig {
        self.0.borrow().cfg
    }

    pub fn cluster(&self) -> ClusterSpec {
        self.0.borrow().transport.cluster()
    }

    pub fn history(&self) -> Vec<RecoveryRecord> {
        self.0.borrow().history.clone()
    }

    /// This process was spawned to replace a failed one.
    pub fn is_replacement(&self) -> bool {
        self.0.borrow().replacement
    }

    pub fn is_revoked(&self) -> bool {
        self.0.borrow().revoked
    }

    pub fn now(&self) -> u64 {
        self.0.borrow().transport.now()
    }

    pub fn clock_unit(&self) -> &'static str {
        self.0.borrow().transport.clock_unit()
    }

    pub fn inject_failure(&self, target: FailureTarget) -> CommResult<()> {
        self.st().transport.inject_failure(target)
    }

    /// Leave as if crashed.
    pub fn abort(&self) {
        self.st().transport.abort();
    }

    pub fn send(&self, to_rank: usize, tag: u64, bytes: Vec<u8>) -> CommResult<()> {
        let mut st = self.st();
        st.check_usable()?;
        let to = st.endpoint_of(to_rank)?;
        let epoch = st.epoch;
        st.send_msg(to, Msg::new(Kind::App, epoch, tag, bytes))
    }

    pub fn recv(&self, from_rank: usize, tag: u64) -> CommResult<Vec<u8>> {
        let mut st = self.st();
        st.check_usable()?;
        let from = st.endpoint_of(from_rank)?;
        st.wait_for(from, Kind::App, tag)
    }

    pub fn barrier(&self) -> CommResult<()> {
        self.st().reduce(Vec::new(), |_| Vec::new()).map(|_| ())
    }

    /// Element-wise sum; contributions are added in rank order, so every
    /// run with the same inputs produces the same bits.
    pub fn allreduce_sum(&self, values: &[f64]) -> CommResult<Vec<f64>> {
        let out = self.st().reduce(encode_f64s(values), |parts| {
            let mut acc = decode_f64s(&parts[0]);
            for p in &parts[1..] {
                for (a, b) in acc.iter_mut().zip(decode_f64s(p)) {
                    *a += b;
                }
            }
            encode_f64s(&acc)
        })?;
        Ok(decode_f64s(&out))
    }

    pub fn allreduce_max(&self, value: u64) -> CommResult<u64> {
        self.reduce_u64(value, |a, b| a.max(b))
    }

    pub fn allreduce_min(&self, value: u64) -> CommResult<u64> {
        self.reduce_u64(value, |a, b| a.min(b))
    }

    fn reduce_u64(&self, value: u64, f: fn(u64, u64) -> u64) -> CommResult<u64> {
        let out = self.st().reduce(value.to_le_bytes().to_vec(), |parts| {
            let v = parts.iter().map(|p| u64::from_le_bytes(p[..8].try_into().unwrap())).reduce(f).unwrap();
            v.to_le_bytes().to_vec()
        })?;
        Ok(u64::from_le_bytes(out[..8].try_into().unwrap()))
    }

    /// Rank 0's bytes, delivered to everyone.
    pub fn broadcast(&self, bytes: Vec<u8>) -> CommResult<Vec<u8>> {
        let root = self.rank() == 0;
        self.st().reduce(if root { bytes } else { Vec::new() }, |mut parts| parts.swap_remove(0))
    }

    /// Fault-tolerant agreement on the bitwise AND of `flag`.
    ///
    /// Every surviving member returns the same result. If a member fails
    /// during the agreement, all survivors report that failure.
    pub fn agree(&self, flag: u64) -> CommResult<u64> {
        self.st().agree(flag)
    }

    /// Invalidate the group for every member. Idempotent.
    pub fn revoke(&self) {
        self.st().revoke();
    }

    /// Revoke, agree on the failed set, and continue with the survivors.
    pub fn shrink(&self) -> CommResult<RecoveryRecord> {
        self.st().recover(RecoveryPolicy::Shrinking, 1)
    }

    /// Repair the group according to the configured recovery policy.
    pub fn recover(&self) -> CommResult<RecoveryRecord> {
        let policy = self.config().policy;
        self.st().recover(policy, 1)
    }

    /// Leave after an unrecoverable error: peers in (or entering) recovery
    /// fail with [`CommError::Abandoned`] instead of repairing the group.
    pub fn abandon(&self) {
        let policy = self.config().policy;
        let _ = self.st().recover(policy, 0);
    }
}

impl GroupState {
    fn check_usable(&self) -> CommResult<()> {
        if self.revoked {
            Err(CommError::Revoked)
        } else {
            Ok(())
        }
    }

    fn endpoint_of(&self, rank: usize) -> CommResult<EndpointId> {
        self.members
            .get(rank)
            .map(|m| m.endpoint)
            .ok_or_else(|| CommError::Protocol(format!("rank {rank} out of range")))
    }

    fn failed_members(&self) -> Vec<EndpointId> {
        self.members.iter().map(|m| m.endpoint).filter(|e| self.failed.contains(e)).collect()
    }

    fn send_raw(&mut self, to: EndpointId, msg: &Msg) -> CommResult<()> {
        match self.transport.send(to, msg.encode()) {
            Err(CommError::ProcFailed(eps)) => {
                self.failed.extend(eps.iter().copied());
                Err(CommError::ProcFailed(eps))
            }
            other => other,
        }
    }

    fn send_msg(&mut self, to: EndpointId, msg: Msg) -> CommResult<()> {
        match self.send_raw(to, &msg) {
            Err(e @ CommError::ProcFailed(_)) => {
                self.revoke();
                Err(e)
            }
            other => other,
        }
    }

    /// Receive one transport event and file it.
    fn pump(&mut self) -> CommResult<()> {
        match self.transport.recv()? {
            Incoming::Failed(ep) => {
                self.failed.insert(ep);
            }
            Incoming::Message { from, bytes } => {
                let msg = Msg::decode(&bytes)?;
                if msg.epoch < self.epoch {
                    return Ok(());
                }
                if msg.epoch == self.epoch {
                    if msg.is_recovery() {
                        self.revoked = true;
                    }
                    if msg.kind == Kind::Revoke {
                        return Ok(());
                    }
                    if matches!(msg.kind, Kind::Propose | Kind::Decided) && self.finished_tags.contains(&msg.tag) {
                        return Ok(());
                    }
                }
                self.mailbox.push((from, msg));
            }
        }
        Ok(())
    }

    fn take(&mut self, from: EndpointId, kind: Kind, tag: u64) -> Option<Vec<u8>> {
        let epoch = self.epoch;
        let i = self
            .mailbox
            .iter()
            .position(|(f, m)| *f == from && m.kind == kind && m.epoch == epoch && m.tag == tag)?;
        Some(self.mailbox.remove(i).1.payload)
    }

    fn wait_for(&mut self, from: EndpointId, kind: Kind, tag: u64) -> CommResult<Vec<u8>> {
        loop {
            self.check_usable()?;
            if let Some(p) = self.take(from, kind, tag) {
                return Ok(p);
            }
            let failed = self.failed_members();
            if !failed.is_empty() {
                self.revoke();
                return Err(CommError::ProcFailed(failed));
            }
            self.pump()?;
        }
    }

    /// Gather contributions at rank 0, combine, and send the result back.
    fn reduce(&mut self, contrib: Vec<u8>, combine: impl FnOnce(Vec<Vec<u8>>) -> Vec<u8>) -> CommResult<Vec<u8>> {
        self.check_usable()?;
        let tag = self.seq;
        self.seq += 1;
        let n = self.members.len();
        if n == 1 {
            return Ok(combine(vec![contrib]));
        }
        let epoch = self.epoch;
        if self.rank == 0 {
            let mut parts = Vec::with_capacity(n);
            parts.push(contrib);
            for r in 1..n {
                let from = self.members[r].endpoint;
                parts.push(self.wait_for(from, Kind::Coll, tag)?);
            }
            let result = combine(parts);
            for r in 1..n {
                let to = self.members[r].endpoint;
                self.send_msg(to, Msg::new(Kind::Coll, epoch, tag, result.clone()))?;
            }
            Ok(result)
        } else {
            let root = self.members[0].endpoint;
            self.send_msg(root, Msg::new(Kind::Coll, epoch, tag, contrib))?;
            self.wait_for(root, Kind::Coll, tag)
        }
    }

    fn revoke(&mut self) {
        self.revoked = true;
        if self.revoke_sent {
            return;
        }
        self.revoke_sent = true;
        let msg = Msg::new(Kind::Revoke, self.epoch, 0, Vec::new());
        let targets: Vec<EndpointId> = self
            .members
            .iter()
            .map(|m| m.endpoint)
            .filter(|e| *e != self.me.endpoint && !self.failed.contains(e))
            .collect();
        for t in targets {
            let _ = self.send_raw(t, &msg);
        }
    }

    fn agree(&mut self, flag: u64) -> CommResult<u64> {
        self.check_usable()?;
        let tag = self.seq;
        self.seq += 1;
        if self.members.len() == 1 {
            return Ok(flag);
        }
        let (decision, _) = self.consensus(tag, flag, &mut |_, flag, failed| {
            Ok(Decision { flag, failed: failed.into_iter().collect(), view: None })
        })?;
        let lost: Vec<EndpointId> =
            decision.failed.iter().copied().filter(|e| self.members.iter().any(|m| m.endpoint == *e)).collect();
        if !lost.is_empty() {
            self.failed.extend(lost.iter().copied());
            self.revoke();
            return Err(CommError::ProcFailed(lost));
        }
        Ok(decision.flag)
    }

    /// Leader-based uniform consensus among the live members.
    ///
    /// Members send a proposal to the lowest-ranked member they believe
    /// alive. That leader waits for a proposal from every other live member,
    /// decides, and sends the decision to all. Every receiver forwards the
    /// decision to all other members before acting on it, so if any live
    /// member acts on a decision, every live member eventually receives it.
    /// A new leader that still finds someone's forwarded decision in its
    /// queue adopts it rather than deciding afresh.
    ///
    /// Returns the decision and whether this process made it.
    fn consensus(
        &mut self,
        tag: u64,
        flag: u64,
        decide: &mut Decide<'_>,
    ) -> CommResult<(Decision, bool)> {
        let epoch = self.epoch;
        let recovery = tag == RECOVERY_TAG;
        let mut proposals: Vec<(EndpointId, Proposal)> = Vec::new();
        let mut proposed_to: Option<EndpointId> = None;
        loop {
            while let Some(i) = self.mailbox.iter().position(|(_, m)| {
                m.epoch == epoch && m.tag == tag && matches!(m.kind, Kind::Propose | Kind::Decided)
            }) {
                let (from, msg) = self.mailbox.remove(i);
                if msg.kind == Kind::Propose {
                    let p: Proposal = from_json(&msg.payload)?;
                    proposals.retain(|(f, _)| *f != from);
                    proposals.push((from, p));
                    continue;
                }
                let decision: Decision = from_json(&msg.payload)?;
                let relay = Msg::new(Kind::Decided, epoch, tag, msg.payload);
                let skip: BTreeSet<EndpointId> = decision.failed.iter().copied().chain([from, self.me.endpoint]).collect();
                let targets: Vec<EndpointId> =
                    self.members.iter().map(|m| m.endpoint).filter(|e| !skip.contains(e) && !self.failed.contains(e)).collect();
                for t in targets {
                    let _ = self.send_raw(t, &relay);
                }
                self.finished_tags.insert(tag);
                return Ok((decision, false));
            }
            if !recovery && self.revoked {
                return Err(CommError::Revoked);
            }
            let leader = self
                .members
                .iter()
                .map(|m| m.endpoint)
                .find(|e| !self.failed.contains(e))
                .expect("caller is alive");
            if leader == self.me.endpoint {
                let pending = self.members.iter().map(|m| m.endpoint).any(|e| {
                    e != self.me.endpoint && !self.failed.contains(&e) && !proposals.iter().any(|(f, _)| *f == e)
                });
                if !pending {
                    let mut and = flag;
                    let mut failed: BTreeSet<EndpointId> = self.failed_members().into_iter().collect();
                    for (_, p) in &proposals {
                        and &= p.flag;
                        failed.extend(p.failed.iter().copied());
                    }
                    let decision = decide(self, and, failed)?;
                    let bytes = to_json(&decision);
                    let skip: BTreeSet<EndpointId> = decision.failed.iter().copied().collect();
                    let targets: Vec<EndpointId> = self
                        .members
                        .iter()
                        .map(|m| m.endpoint)
                        .filter(|e| *e != self.me.endpoint && !skip.contains(e) && !self.failed.contains(e))
                        .collect();
                    let msg = Msg::new(Kind::Decided, epoch, tag, bytes);
                    for t in targets {
                        let _ = self.send_raw(t, &msg);
                    }
                    self.finished_tags.insert(tag);
                    return Ok((decision, true));
                }
            } else if proposed_to != Some(leader) {
                let p = Proposal { flag, failed: self.failed_members() };
                match self.send_raw(leader, &Msg::new(Kind::Propose, epoch, tag, to_json(&p))) {
                    Ok(()) => proposed_to = Some(leader),
                    Err(CommError::ProcFailed(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            self.pump()?;
        }
    }

    fn recover(&mut self, policy: RecoveryPolicy, flag: u64) -> CommResult<RecoveryRecord> {
        let t0 = self.transport.now();
        self.revoke();
        let epoch = self.epoch;
        let spawn_policy = self.cfg.spawn;
        let mut replacements: Vec<Member> = Vec::new();
        let mut decide = |st: &mut GroupState, flag: u64, failed: BTreeSet<EndpointId>| -> CommResult<Decision> {
            if flag == 0 {
                return Ok(Decision { flag, failed: failed.into_iter().collect(), view: None });
            }
            let mut phases = vec![PhaseTiming { phase: Phase::RevokeShrink, duration: st.transport.now() - t0 }];
            let lost: Vec<(usize, Member)> =
                st.members.iter().copied().enumerate().filter(|(_, m)| failed.contains(&m.endpoint)).collect();
            let survivors: Vec<Member> = st.members.iter().copied().filter(|m| !failed.contains(&m.endpoint)).collect();
            let lost_members: Vec<Member> = lost.iter().map(|(_, m)| *m).collect();
            let mut applied = policy;
            let mut downgraded = false;
            let mut spawned = Vec::new();
            let (members, ledger) = if policy == RecoveryPolicy::NonShrinking && !lost.is_empty() {
                let t = st.transport.now();
                let placement = st.ledger.plan(&lost_members, &survivors, spawn_policy);
                phases.push(PhaseTiming { phase: Phase::SpawnInfo, duration: st.transport.now() - t });
                match placement {
                    Some(placement) => {
                        let t = st.transport.now();
                        let fresh = st.transport.spawn(&placement.nodes)?;
                        phases.push(PhaseTiming { phase: Phase::SpawnMerge, duration: st.transport.now() - t });
                        let t = st.transport.now();
                        let mut members = st.members.clone();
                        for ((rank, _), new) in lost.iter().zip(&fresh) {
                            members[*rank] = *new;
                            spawned.push((*rank, *new));
                        }
                        phases.push(PhaseTiming { phase: Phase::RankRedistribution, duration: st.transport.now() - t });
                        let t = st.transport.now();
                        let ledger = placement.next;
                        phases.push(PhaseTiming { phase: Phase::ResourceManagement, duration: st.transport.now() - t });
                        (members, ledger)
                    }
                    None => {
                        log::warn!("no spare nodes left, falling back to shrinking recovery");
                        applied = RecoveryPolicy::Shrinking;
                        downgraded = true;
                        phases.truncate(1);
                        (survivors.clone(), st.ledger.after_shrink(&survivors))
                    }
                }
            } else {
                (survivors.clone(), st.ledger.after_shrink(&survivors))
            };
            let mut failed_nodes: Vec<NodeId> = lost_members.iter().map(|m| m.node).collect();
            failed_nodes.dedup();
            let record = RecoveryRecord {
                epoch: epoch + 1,
                failed_ranks: lost.iter().map(|(r, _)| *r).collect(),
                failed_nodes,
                policy: applied,
                downgraded,
                duration: st.transport.now() - t0,
                phases,
                replacements: spawned.clone(),
            };
            replacements = spawned.iter().map(|(_, m)| *m).collect();
            let mut history = st.history.clone();
            history.push(record);
            let view = View { epoch: epoch + 1, members, ledger, history };
            Ok(Decision { flag: 1, failed: failed.into_iter().collect(), view: Some(view) })
        };
        let (decision, mine) = self.consensus(RECOVERY_TAG, flag, &mut decide)?;
        if decision.flag == 0 {
            return Err(CommError::Abandoned);
        }
        let view = decision.view.ok_or_else(|| CommError::Protocol("recovery decision without a view".into()))?;
        if mine {
            let msg = Msg::new(Kind::Decided, epoch, RECOVERY_TAG, to_json(&Decision { view: Some(view.clone()), ..decision }));
            for r in &replacements {
                let _ = self.send_raw(r.endpoint, &msg);
            }
        }
        self.adopt(view)?;
        Ok(self.history.last().cloned().expect("recovery recorded"))
    }

    fn adopt(&mut self, view: View) -> CommResult<()> {
        let Some(rank) = view.members.iter().position(|m| m.endpoint == self.me.endpoint) else {
            self.transport.abort();
            return Err(CommError::Evicted);
        };
        self.rank = rank;
        self.members = view.members;
        self.epoch = view.epoch;
        self.ledger = view.ledger;
        self.history = view.history;
        self.seq = 0;
        self.revoked = false;
        self.revoke_sent = false;
        self.finished_tags.clear();
        let epoch = self.epoch;
        self.mailbox.retain(|(_, m)| m.epoch >= epoch);
        Ok(())
    }

    /// Replacement start-up: wait for the parent's recovery decision.
    fn await_view(&mut self, parent: EndpointId) -> CommResult<()> {
        self.replacement = true;
        loop {
            match self.transport.recv()? {
                Incoming::Failed(ep) => {
                    self.failed.insert(ep);
                    if ep == parent {
                        self.transport.abort();
                        return Err(CommError::Orphaned);
                    }
                }
                Incoming::Message { from, bytes } => {
                    let msg = Msg::decode(&bytes)?;
                    if from == parent && msg.kind == Kind::Decided && msg.tag == RECOVERY_TAG {
                        let decision: Decision = from_json(&msg.payload)?;
                        let view = decision.view.ok_or_else(|| CommError::Protocol("decision without view".into()))?;
                        return self.adopt(view);
                    }
                    self.mailbox.push((from, msg));
                }
            }
        }
    }
}
