//! Atomic cross-object appends and adds via a dispatcher set object.
//!
//! Two clients with mutually dependent records each add a request record
//! describing the pair to a shared dispatcher G-Set (a regular replicated
//! set that additionally only accepts records from their creators). When a
//! replica holds both matching requests it acts as a client of the two
//! target objects, issues the append/add of each record, and notifies both
//! clients once the targets acknowledge. A client treats the atomic
//! operation as completed after notifications from `f+1` distinct
//! dispatcher servers.
//!
//! Target objects admit a record only once `f+1` distinct dispatcher
//! servers request it, so the Byzantine minority of the dispatcher group
//! cannot plant records.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bdso::{self, AdmissionMode, GsetQuorums, TargetSelection};
use crate::ids::{ObjectId, ProcessId};
use crate::machine::{Ctx, MachineEvent, Note, OpResult, OpSpec, ProcessMachine, Reject};
use crate::record::{PairId, Record};
use crate::wire::WireMessage;

/// The tuple a requester adds to the dispatcher set:
/// `(p, {p,q}, r_p, L_p, r_q)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicRequestValue {
    pub requester: ProcessId,
    /// The two participants, stored sorted.
    pub group: (ProcessId, ProcessId),
    pub own: Record,
    pub target: ObjectId,
    pub counterpart: Record,
}

impl AtomicRequestValue {
    pub fn new(
        requester: ProcessId,
        partner: ProcessId,
        own: Record,
        target: ObjectId,
        counterpart: Record,
    ) -> Self {
        let group = if requester <= partner { (requester, partner) } else { (partner, requester) };
        AtomicRequestValue { requester, group, own, target, counterpart }
    }

    pub fn partner(&self) -> ProcessId {
        if self.group.0 == self.requester {
            self.group.1
        } else {
            self.group.0
        }
    }

    /// The request record itself: the encoded tuple, created by the
    /// requester.
    pub fn to_record(&self) -> Record {
        let payload = postcard::to_allocvec(self).expect("request encoding cannot fail");
        Record { creator: self.requester, payload }
    }
}

/// Decode a dispatcher-set record back into a request tuple. Records that
/// do not parse, or whose creator/requester disagree, are ordinary records
/// and never match anything.
pub fn decode_request(record: &Record) -> Option<AtomicRequestValue> {
    let v: AtomicRequestValue = postcard::from_bytes(&record.payload).ok()?;
    let member = v.group.0 == v.requester || v.group.1 == v.requester;
    (v.requester == record.creator && member).then_some(v)
}

/// What the dispatcher needs to know about a target object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetInfo {
    pub object: ObjectId,
    pub kind: TargetKind,
    pub servers: Vec<ProcessId>,
    pub f: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Ledger,
    Gset,
}

/// Client API: add the request tuple to the dispatcher set, then count
/// notifications.
#[derive(Debug)]
pub struct AtomicClient {
    inner: bdso::ClientMachine,
    me: ProcessId,
    sbdso: ObjectId,
    sbdso_servers: BTreeSet<ProcessId>,
    notify_quorum: usize,
    notify_counts: BTreeMap<PairId, BTreeSet<ProcessId>>,
    completed: BTreeSet<PairId>,
}

impl AtomicClient {
    pub fn new(
        me: ProcessId,
        sbdso: ObjectId,
        servers: Vec<ProcessId>,
        quorums: GsetQuorums,
        selection: TargetSelection,
    ) -> Self {
        AtomicClient {
            inner: bdso::ClientMachine::new(me, sbdso.clone(), servers.clone(), quorums, selection),
            me,
            sbdso,
            sbdso_servers: servers.into_iter().collect(),
            notify_quorum: quorums.f + 1,
            notify_counts: BTreeMap::new(),
            completed: BTreeSet::new(),
        }
    }

    fn start_request(
        &mut self,
        ctx: &mut Ctx<'_>,
        partner: ProcessId,
        own: Record,
        target: ObjectId,
        counterpart: Record,
    ) {
        let value = AtomicRequestValue::new(self.me, partner, own, target, counterpart);
        self.inner.start_add(ctx, value.to_record());
    }
}

impl ProcessMachine for AtomicClient {
    fn on_event(&mut self, ctx: &mut Ctx<'_>, ev: MachineEvent) {
        match ev {
            MachineEvent::Start => {}
            MachineEvent::Invoke(OpSpec::AtomicAppends { object, partner, own, target, counterpart })
            | MachineEvent::Invoke(OpSpec::AtomicAdds { object, partner, own, target, counterpart })
                if object == self.sbdso =>
            {
                self.start_request(ctx, partner, own, target, counterpart)
            }
            MachineEvent::Invoke(OpSpec::GsetGet { object }) if object == self.sbdso => {
                self.inner.start_get(ctx)
            }
            MachineEvent::Invoke(_) => {
                ctx.respond(OpResult::Rejected { reason: Reject::UnsupportedOp })
            }
            MachineEvent::Deliver { from, msg } => {
                if let WireMessage::Notify { object, pair, server } = &msg {
                    if *object != self.sbdso {
                        return;
                    }
                    if *server != from || !self.sbdso_servers.contains(&from) {
                        ctx.note(Note::Screened { reason: format!("notify from unexpected sender {from}") });
                        return;
                    }
                    if self.completed.contains(pair) {
                        return;
                    }
                    let senders = self.notify_counts.entry(*pair).or_default();
                    senders.insert(from);
                    if senders.len() >= self.notify_quorum {
                        self.completed.insert(*pair);
                        ctx.note(Note::AtomicCompleted { pair: *pair });
                    }
                    return;
                }
                self.inner.on_deliver(ctx, from, &msg);
            }
        }
    }
}

/// `(requester, group, own digest, counterpart digest)`.
type MirrorKey = (ProcessId, (ProcessId, ProcessId), u64, u64);

#[derive(Debug)]
struct TargetOp {
    pair: PairId,
    acks: BTreeSet<ProcessId>,
    needed: usize,
    target_servers: BTreeSet<ProcessId>,
    done: bool,
}

#[derive(Debug)]
struct PairProgress {
    clients: (ProcessId, ProcessId),
    outstanding: usize,
    notified: bool,
}

/// Dispatcher replica: a G-Set server that watches insertions for matching
/// request pairs and drives the target operations.
#[derive(Debug)]
pub struct SbdsoServer {
    base: bdso::ServerMachine,
    me: ProcessId,
    object: ObjectId,
    targets: BTreeMap<ObjectId, TargetInfo>,
    /// Inserted request tuples, indexed for mirror lookup.
    requests: BTreeMap<MirrorKey, Vec<AtomicRequestValue>>,
    dispatched: BTreeSet<PairId>,
    next_c: u64,
    ops: BTreeMap<(ObjectId, u64), TargetOp>,
    pairs: BTreeMap<PairId, PairProgress>,
}

impl SbdsoServer {
    pub fn new(
        me: ProcessId,
        object: ObjectId,
        group: Vec<ProcessId>,
        quorums: GsetQuorums,
        targets: BTreeMap<ObjectId, TargetInfo>,
    ) -> Self {
        // The dispatcher set only accepts a record from its creator; that
        // check rides on the authenticated sender.
        let base = bdso::ServerMachine::new(
            me,
            object.clone(),
            group,
            quorums,
            AdmissionMode::Open,
        );
        SbdsoServer {
            base,
            me,
            object,
            targets,
            requests: BTreeMap::new(),
            dispatched: BTreeSet::new(),
            next_c: 0,
            ops: BTreeMap::new(),
            pairs: BTreeMap::new(),
        }
    }

    fn on_inserted(&mut self, ctx: &mut Ctx<'_>, record: Record) {
        let Some(value) = decode_request(&record) else {
            return; // not a request tuple; it just sits in the set
        };
        let key = (
            value.requester,
            value.group,
            value.own.digest(),
            value.counterpart.digest(),
        );
        self.requests.entry(key).or_default().push(value.clone());

        // mirror: same group, swapped records, issued by the partner
        let mirror_key = (
            value.partner(),
            value.group,
            value.counterpart.digest(),
            value.own.digest(),
        );
        let mirrors: Vec<AtomicRequestValue> =
            self.requests.get(&mirror_key).cloned().unwrap_or_default();
        for mirror in mirrors {
            self.try_dispatch(ctx, &value, &mirror);
        }
    }

    fn try_dispatch(&mut self, ctx: &mut Ctx<'_>, a: &AtomicRequestValue, b: &AtomicRequestValue) {
        let pair = PairId::of(a.to_record().digest(), b.to_record().digest());
        if self.dispatched.contains(&pair) {
            return;
        }
        // both targets must be known before either side is touched
        for t in [&a.target, &b.target] {
            if !self.targets.contains_key(t) {
                ctx.note(Note::TargetUnknown { object: t.clone() });
                return;
            }
        }
        self.dispatched.insert(pair);
        ctx.note(Note::Dispatched {
            object: self.object.clone(),
            pair,
            targets: (a.target.clone(), b.target.clone()),
        });
        self.pairs.insert(
            pair,
            PairProgress { clients: a.group, outstanding: 2, notified: false },
        );
        self.issue_target_op(ctx, pair, &a.target, a.own.clone());
        self.issue_target_op(ctx, pair, &b.target, b.own.clone());
    }

    fn issue_target_op(&mut self, ctx: &mut Ctx<'_>, pair: PairId, target: &ObjectId, record: Record) {
        let info = self.targets.get(target).expect("target checked before dispatch").clone();
        self.next_c += 1;
        let c = self.next_c;
        let msg = match info.kind {
            TargetKind::Ledger => WireMessage::Append {
                object: target.clone(),
                c,
                client: self.me,
                record,
            },
            TargetKind::Gset => WireMessage::Add {
                object: target.clone(),
                c,
                client: self.me,
                record,
            },
        };
        for &to in &info.servers {
            ctx.send(to, msg.clone());
        }
        self.ops.insert(
            (target.clone(), c),
            TargetOp {
                pair,
                acks: BTreeSet::new(),
                needed: info.f + 1,
                target_servers: info.servers.iter().copied().collect(),
                done: false,
            },
        );
    }

    fn on_target_ack(&mut self, ctx: &mut Ctx<'_>, from: ProcessId, object: &ObjectId, c: u64) {
        let Some(op) = self.ops.get_mut(&(object.clone(), c)) else {
            return;
        };
        if op.done || !op.target_servers.contains(&from) {
            return;
        }
        op.acks.insert(from);
        if op.acks.len() < op.needed {
            return;
        }
        op.done = true;
        let pair = op.pair;
        let progress = self.pairs.get_mut(&pair).expect("pair tracked");
        progress.outstanding -= 1;
        if progress.outstanding == 0 && !progress.notified {
            progress.notified = true;
            let (p, q) = progress.clients;
            for client in [p, q] {
                ctx.send(
                    client,
                    WireMessage::Notify { object: self.object.clone(), pair, server: self.me },
                );
            }
        }
    }
}

impl ProcessMachine for SbdsoServer {
    fn on_event(&mut self, ctx: &mut Ctx<'_>, ev: MachineEvent) {
        // acks from target servers are for the dispatcher role
        if let MachineEvent::Deliver { from, msg } = &ev {
            match msg {
                WireMessage::AppendResp { object, c, server } if *object != self.object => {
                    if server == from {
                        self.on_target_ack(ctx, *from, object, *c);
                    }
                    return;
                }
                WireMessage::AddResp { object, c, server } if *object != self.object => {
                    if server == from {
                        self.on_target_ack(ctx, *from, object, *c);
                    }
                    return;
                }
                _ => {}
            }
        }
        // screen dispatcher-set adds whose record was not created by the
        // sender; everything else is the plain replica protocol
        if let MachineEvent::Deliver { from, msg: WireMessage::Add { object, record, .. } } = &ev {
            if *object == self.object && record.creator != *from {
                ctx.note(Note::Screened {
                    reason: format!("dispatcher add from {from} for record created by {}", record.creator),
                });
                return;
            }
        }
        let inserted = self.base.process(ctx, &ev);
        for record in inserted {
            self.on_inserted(ctx, record);
        }
    }
}

/// A minimal replicated ledger used as an append target: per-server
/// sequence, records admitted once `quorum` distinct registered clients
/// request them. Membership converges because every registered correct
/// client sends to every server; cross-server order is not coordinated
/// (the full ledger construction is out of scope here).
#[derive(Debug)]
pub struct StubLedgerServer {
    me: ProcessId,
    object: ObjectId,
    allowed: BTreeSet<ProcessId>,
    quorum: usize,
    entries: Vec<Record>,
    admitted: BTreeSet<Record>,
    requesters: BTreeMap<Record, BTreeSet<ProcessId>>,
    pending: BTreeMap<Record, BTreeMap<ProcessId, u64>>,
}

impl StubLedgerServer {
    pub fn new(me: ProcessId, object: ObjectId, allowed: BTreeSet<ProcessId>, quorum: usize) -> Self {
        StubLedgerServer {
            me,
            object,
            allowed,
            quorum,
            entries: Vec::new(),
            admitted: BTreeSet::new(),
            requesters: BTreeMap::new(),
            pending: BTreeMap::new(),
        }
    }

    pub fn entries(&self) -> &[Record] {
        &self.entries
    }
}

impl ProcessMachine for StubLedgerServer {
    fn on_event(&mut self, ctx: &mut Ctx<'_>, ev: MachineEvent) {
        let MachineEvent::Deliver { from, msg } = ev else {
            return;
        };
        let WireMessage::Append { object, c, client, record } = msg else {
            return;
        };
        if object != self.object {
            return;
        }
        if client != from || !self.allowed.contains(&from) {
            ctx.note(Note::Screened { reason: format!("append from unauthorized client {from}") });
            return;
        }
        if !record.is_well_formed() {
            ctx.note(Note::Screened { reason: format!("malformed append from {from}") });
            return;
        }
        if self.admitted.contains(&record) {
            ctx.send(from, WireMessage::AppendResp { object: self.object.clone(), c, server: self.me });
            return;
        }
        self.requesters.entry(record.clone()).or_default().insert(from);
        self.pending.entry(record.clone()).or_default().insert(from, c);
        if self.requesters[&record].len() >= self.quorum {
            self.admitted.insert(record.clone());
            self.entries.push(record.clone());
            ctx.note(Note::Appended { object: self.object.clone(), record: record.clone() });
            if let Some(waiters) = self.pending.remove(&record) {
                for (client, c) in waiters {
                    ctx.send(
                        client,
                        WireMessage::AppendResp { object: self.object.clone(), c, server: self.me },
                    );
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdso::drain_effects;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rec(client: u32, payload: &[u8]) -> Record {
        Record::new(ProcessId::client(client), payload.to_vec()).unwrap()
    }

    #[test]
    fn request_record_round_trip() {
        let v = AtomicRequestValue::new(
            ProcessId::client(1),
            ProcessId::client(0),
            rec(1, b"rp"),
            ObjectId::new("L1"),
            rec(0, b"rq"),
        );
        let r = v.to_record();
        assert_eq!(r.creator, ProcessId::client(1));
        assert_eq!(decode_request(&r), Some(v.clone()));
        assert_eq!(v.group, (ProcessId::client(0), ProcessId::client(1)));
        assert_eq!(v.partner(), ProcessId::client(0));
    }

    #[test]
    fn tampered_requester_fails_decode() {
        let v = AtomicRequestValue::new(
            ProcessId::client(1),
            ProcessId::client(0),
            rec(1, b"rp"),
            ObjectId::new("L1"),
            rec(0, b"rq"),
        );
        let mut r = v.to_record();
        r.creator = ProcessId::client(2); // claims someone else created it
        assert_eq!(decode_request(&r), None);
    }

    #[test]
    fn stub_ledger_waits_for_quorum() {
        let allowed: BTreeSet<ProcessId> = (0..4).map(ProcessId::server).collect();
        let mut m = StubLedgerServer::new(ProcessId::server(9), ObjectId::new("L0"), allowed, 2);
        let mut r = ChaCha12Rng::seed_from_u64(1);
        let record = rec(0, b"x");
        let deliver = |m: &mut StubLedgerServer, r: &mut ChaCha12Rng, s: u32, c: u64, record: Record| {
            let mut effects = Vec::new();
            let mut ctx = Ctx { effects: &mut effects, rng: r };
            m.on_event(&mut ctx, MachineEvent::Deliver {
                from: ProcessId::server(s),
                msg: WireMessage::Append {
                    object: ObjectId::new("L0"),
                    c,
                    client: ProcessId::server(s),
                    record,
                },
            });
            drain_effects(effects)
        };
        // one requester: deferred
        let (sends, _, _) = deliver(&mut m, &mut r, 0, 1, record.clone());
        assert!(sends.is_empty());
        assert!(m.entries().is_empty());
        // second distinct requester: admitted once, both acked
        let (sends, _, notes) = deliver(&mut m, &mut r, 1, 7, record.clone());
        assert_eq!(m.entries(), core::slice::from_ref(&record));
        assert!(notes.iter().any(|n| matches!(n, Note::Appended { .. })));
        assert_eq!(sends.len(), 2);
        // third requester after admission: immediate ack, single entry
        let (sends, _, _) = deliver(&mut m, &mut r, 2, 3, record.clone());
        assert_eq!(sends.len(), 1);
        assert_eq!(m.entries().len(), 1);
    }

    #[test]
    fn stub_ledger_screens_unauthorized() {
        let allowed: BTreeSet<ProcessId> = (0..4).map(ProcessId::server).collect();
        let mut m = StubLedgerServer::new(ProcessId::server(9), ObjectId::new("L0"), allowed, 2);
        let mut r = ChaCha12Rng::seed_from_u64(1);
        let mut effects = Vec::new();
        let mut ctx = Ctx { effects: &mut effects, rng: &mut r };
        m.on_event(&mut ctx, MachineEvent::Deliver {
            from: ProcessId::client(5),
            msg: WireMessage::Append {
                object: ObjectId::new("L0"),
                c: 1,
                client: ProcessId::client(5),
                record: rec(0, b"x"),
            },
        });
        let (sends, _, notes) = drain_effects(effects);
        assert!(sends.is_empty());
        assert!(notes.iter().any(|n| matches!(n, Note::Screened { .. })));
        assert!(m.entries().is_empty());
    }
}
