//! Consensus-free eventually consistent single-writer replicated ledger
//! with the strong-prefix guarantee, for `n >= 4f+1` servers.
//!
//! The designated writer tags each payload with a 1-based index and sends
//! the add to `floor(n/2) + 2f+1` servers; a server relays a given index at
//! most once (the `T` set) and inserts a record only after
//! `floor(n/2) + f+1` distinct relay origins. Two conflicting records for
//! one index would need relay sets that intersect in a correct server,
//! whose index filter refuses the second relay — that is where the prefix
//! property comes from.
//!
//! A reader collects `2f+1` replica snapshots, keeps records present in at
//! least `f+1` of them, and returns the longest run of consecutive indices
//! starting at 1.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bdso::{select_targets, TargetSelection};
use crate::brb::{BrbConfig, BrbEngine, StepOutput};
use crate::ids::{ObjectId, ProcessId};
use crate::machine::{
    B64Bytes, Ctx, MachineEvent, Note, OpResult, OpSpec, ProcessMachine, Reject,
};
use crate::record::IndexedRecord;
use crate::wire::{decode_brb_payload, encode_brb_payload, BrbPayload, SwAddTriple, WireMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwQuorums {
    pub n: usize,
    pub f: usize,
    pub get_fanout: usize,
    pub get_wait: usize,
    pub record_threshold: usize,
    /// `floor(n/2) + 2f + 1`
    pub append_fanout: usize,
    pub append_ack: usize,
    /// `floor(n/2) + f + 1`
    pub insert_origins: usize,
}

impl SwQuorums {
    pub fn new(n: usize, f: usize, insert_override: Option<usize>, cap: bool) -> Self {
        let clamp = |x: usize| if cap { x.min(n) } else { x };
        SwQuorums {
            n,
            f,
            get_fanout: clamp(3 * f + 1),
            get_wait: 2 * f + 1,
            record_threshold: f + 1,
            append_fanout: clamp(n / 2 + 2 * f + 1),
            append_ack: f + 1,
            insert_origins: insert_override.unwrap_or(n / 2 + f + 1),
        }
    }
}

/// Which reading of the prefix filter a get applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixRule {
    /// Longest run of consecutive indices starting at 1. This is the
    /// semantics the checkers assume.
    Closure,
    /// Keep records whose index is 1 or whose predecessor index is present.
    /// Admits gapped selections; exposed for side-by-side study only.
    Literal,
}

/// Threshold-filter and prefix-assemble the collected snapshots.
pub fn assemble(
    sets: &[Vec<IndexedRecord>],
    threshold: usize,
    rule: PrefixRule,
) -> Vec<IndexedRecord> {
    let mut counts: BTreeMap<&IndexedRecord, usize> = BTreeMap::new();
    for set in sets {
        for r in set {
            *counts.entry(r).or_insert(0) += 1;
        }
    }
    let accepted: Vec<&IndexedRecord> =
        counts.into_iter().filter(|(_, n)| *n >= threshold).map(|(r, _)| r).collect();
    match rule {
        PrefixRule::Closure => {
            let mut by_index: BTreeMap<u64, &IndexedRecord> = BTreeMap::new();
            for r in accepted {
                // two records per index cannot both cross the threshold in
                // a run within the resilience bound; pick deterministically
                // if a study configuration produces both
                by_index.entry(r.k).or_insert(r);
            }
            let mut seq = Vec::new();
            let mut k = 1u64;
            while let Some(r) = by_index.get(&k) {
                seq.push((*r).clone());
                k += 1;
            }
            seq
        }
        PrefixRule::Literal => {
            let indices: BTreeSet<u64> = accepted.iter().map(|r| r.k).collect();
            let mut seq: Vec<IndexedRecord> = accepted
                .into_iter()
                .filter(|r| r.k == 1 || indices.contains(&(r.k - 1)))
                .cloned()
                .collect();
            seq.sort();
            seq
        }
    }
}

#[derive(Debug, Clone)]
enum PendingKind {
    Get { responses: BTreeMap<ProcessId, Vec<IndexedRecord>> },
    Append { acks: BTreeSet<ProcessId> },
}

#[derive(Debug, Clone)]
struct Pending {
    c: u64,
    targets: BTreeSet<ProcessId>,
    kind: PendingKind,
}

/// Ledger client: appends when it is the writer, reads for anyone.
#[derive(Debug)]
pub struct ClientMachine {
    me: ProcessId,
    object: ObjectId,
    servers: Vec<ProcessId>,
    writer: ProcessId,
    quorums: SwQuorums,
    selection: TargetSelection,
    prefix_rule: PrefixRule,
    c: u64,
    k: u64,
    pending: Option<Pending>,
}

impl ClientMachine {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        me: ProcessId,
        object: ObjectId,
        servers: Vec<ProcessId>,
        writer: ProcessId,
        quorums: SwQuorums,
        selection: TargetSelection,
        prefix_rule: PrefixRule,
    ) -> Self {
        ClientMachine {
            me,
            object,
            servers,
            writer,
            quorums,
            selection,
            prefix_rule,
            c: 0,
            k: 0,
            pending: None,
        }
    }

    fn start_append(&mut self, ctx: &mut Ctx<'_>, payload: Vec<u8>) {
        if self.pending.is_some() {
            ctx.respond(OpResult::Rejected { reason: Reject::OperationInFlight });
            return;
        }
        if self.me != self.writer {
            ctx.respond(OpResult::Rejected { reason: Reject::NotWriter });
            return;
        }
        self.c += 1;
        self.k += 1;
        let record = IndexedRecord::new(self.k, payload);
        let targets =
            select_targets(ctx.rng, self.selection, &self.servers, self.quorums.append_fanout);
        for &to in &targets {
            ctx.send(
                to,
                WireMessage::SwAdd {
                    object: self.object.clone(),
                    c: self.c,
                    writer: self.me,
                    record: record.clone(),
                },
            );
        }
        self.pending = Some(Pending {
            c: self.c,
            targets: targets.into_iter().collect(),
            kind: PendingKind::Append { acks: BTreeSet::new() },
        });
    }

    fn start_get(&mut self, ctx: &mut Ctx<'_>) {
        if self.pending.is_some() {
            ctx.respond(OpResult::Rejected { reason: Reject::OperationInFlight });
            return;
        }
        self.c += 1;
        let targets =
            select_targets(ctx.rng, self.selection, &self.servers, self.quorums.get_fanout);
        for &to in &targets {
            ctx.send(to, WireMessage::Get { object: self.object.clone(), c: self.c, client: self.me });
        }
        self.pending = Some(Pending {
            c: self.c,
            targets: targets.into_iter().collect(),
            kind: PendingKind::Get { responses: BTreeMap::new() },
        });
    }
}

impl ProcessMachine for ClientMachine {
    fn on_event(&mut self, ctx: &mut Ctx<'_>, ev: MachineEvent) {
        match ev {
            MachineEvent::Start => {}
            MachineEvent::Invoke(OpSpec::SwAppend { object, payload }) if object == self.object => {
                self.start_append(ctx, payload)
            }
            MachineEvent::Invoke(OpSpec::SwGet { object }) if object == self.object => {
                self.start_get(ctx)
            }
            MachineEvent::Invoke(_) => {
                ctx.respond(OpResult::Rejected { reason: Reject::UnsupportedOp })
            }
            MachineEvent::Deliver { from, msg } => match &msg {
                WireMessage::SwGetResp { object, c, server, records } if *object == self.object => {
                    if *server != from {
                        ctx.note(Note::Screened { reason: format!("swGetResp server field {server} != sender {from}") });
                        return;
                    }
                    let mut counted = false;
                    if let Some(p) = &mut self.pending {
                        if p.c == *c && p.targets.contains(&from) {
                            if let PendingKind::Get { responses } = &mut p.kind {
                                if let alloc::collections::btree_map::Entry::Vacant(slot) =
                                    responses.entry(from)
                                {
                                    slot.insert(records.clone());
                                    counted = true;
                                    if responses.len() == self.quorums.get_wait {
                                        let sets: Vec<Vec<IndexedRecord>> =
                                            responses.values().cloned().collect();
                                        let seq = assemble(
                                            &sets,
                                            self.quorums.record_threshold,
                                            self.prefix_rule,
                                        );
                                        self.pending = None;
                                        ctx.respond(OpResult::Sequence {
                                            payloads: seq.into_iter().map(|r| B64Bytes(r.rho)).collect(),
                                        });
                                    }
                                }
                            }
                        }
                    }
                    if !counted {
                        ctx.note(Note::StaleDrop { object: self.object.clone(), c: *c, from });
                    }
                }
                WireMessage::SwAddResp { object, c, server } if *object == self.object => {
                    if *server != from {
                        ctx.note(Note::Screened { reason: format!("swAddResp server field {server} != sender {from}") });
                        return;
                    }
                    let mut counted = false;
                    if let Some(p) = &mut self.pending {
                        if p.c == *c && p.targets.contains(&from) {
                            if let PendingKind::Append { acks } = &mut p.kind {
                                counted = true;
                                acks.insert(from);
                                if acks.len() == self.quorums.append_ack {
                                    self.pending = None;
                                    ctx.respond(OpResult::Ack);
                                }
                            }
                        }
                    }
                    if !counted {
                        ctx.note(Note::StaleDrop { object: self.object.clone(), c: *c, from });
                    }
                }
                _ => {}
            },
        }
    }
}

/// Ledger replica machine.
#[derive(Debug)]
pub struct ServerMachine {
    me: ProcessId,
    object: ObjectId,
    writer: ProcessId,
    quorums: SwQuorums,
    brb: BrbEngine,
    replica: BTreeSet<IndexedRecord>,
    /// Indices this server has already relayed.
    relayed_indices: BTreeSet<u64>,
    propagate_counts: BTreeMap<SwAddTriple, BTreeSet<ProcessId>>,
    pending_acks: BTreeMap<SwAddTriple, ()>,
}

impl ServerMachine {
    pub fn new(
        me: ProcessId,
        object: ObjectId,
        group: Vec<ProcessId>,
        writer: ProcessId,
        quorums: SwQuorums,
    ) -> Self {
        let brb = BrbEngine::new(BrbConfig {
            object: object.clone(),
            me,
            group,
            f: quorums.f,
        });
        ServerMachine {
            me,
            object,
            writer,
            quorums,
            brb,
            replica: BTreeSet::new(),
            relayed_indices: BTreeSet::new(),
            propagate_counts: BTreeMap::new(),
            pending_acks: BTreeMap::new(),
        }
    }

    pub fn replica(&self) -> &BTreeSet<IndexedRecord> {
        &self.replica
    }

    fn on_sw_add(&mut self, ctx: &mut Ctx<'_>, from: ProcessId, c: u64, writer: ProcessId, record: &IndexedRecord) {
        // only the designated writer may add
        if from != self.writer || writer != from {
            ctx.note(Note::Screened { reason: format!("sw add from {from} is not the writer") });
            return;
        }
        if !record.is_well_formed() {
            ctx.note(Note::Screened { reason: format!("malformed indexed record from {from}") });
            return;
        }
        let key = SwAddTriple { c, writer, record: record.clone() };
        if self.replica.contains(record) {
            self.send_ack(ctx, &key);
            return;
        }
        // The ack waits for this exact record; if the index was already
        // relayed for a different record, that wait may never end — the
        // completeness promise only covers a correct writer.
        self.pending_acks.insert(key.clone(), ());
        if !self.relayed_indices.contains(&record.k) {
            self.relayed_indices.insert(record.k);
            let payload =
                encode_brb_payload(&BrbPayload::SwPropagate { origin: self.me, add: key });
            let mut out = StepOutput::default();
            let digest = self.brb.broadcast(payload, &mut out);
            ctx.note(Note::BrbBroadcast { object: self.object.clone(), digest });
            for (to, m) in out.outbound {
                ctx.send(to, WireMessage::Brb(m));
            }
        }
    }

    fn on_brb(&mut self, ctx: &mut Ctx<'_>, from: ProcessId, msg: crate::wire::BrbMsg) {
        let mut out = StepOutput::default();
        self.brb.on_message(from, msg, &mut out);
        if let Some(origin) = out.equivocation {
            ctx.note(Note::EquivocationObserved { object: self.object.clone(), origin });
        }
        for (to, m) in out.outbound {
            ctx.send(to, WireMessage::Brb(m));
        }
        for delivery in out.deliveries {
            ctx.note(Note::BrbDelivered {
                object: self.object.clone(),
                origin: delivery.origin,
                digest: delivery.digest,
            });
            let Some(BrbPayload::SwPropagate { origin, add }) =
                decode_brb_payload(&delivery.payload)
            else {
                ctx.note(Note::Screened { reason: format!("undecodable relay payload from {}", delivery.origin) });
                continue;
            };
            if origin != delivery.origin {
                ctx.note(Note::Screened { reason: format!("relay origin field {origin} != broadcaster {}", delivery.origin) });
                continue;
            }
            if add.writer != self.writer || !add.record.is_well_formed() {
                ctx.note(Note::Screened { reason: format!("invalid relayed add from {origin}") });
                continue;
            }
            let record = add.record.clone();
            let origins = self.propagate_counts.entry(add).or_default();
            origins.insert(delivery.origin);
            if origins.len() >= self.quorums.insert_origins && !self.replica.contains(&record) {
                self.replica.insert(record.clone());
                ctx.note(Note::SwInserted { object: self.object.clone(), record: record.clone() });
                self.flush_acks(ctx, &record);
            }
        }
    }

    fn flush_acks(&mut self, ctx: &mut Ctx<'_>, record: &IndexedRecord) {
        let keys: Vec<SwAddTriple> = self
            .pending_acks
            .keys()
            .filter(|k| &k.record == record)
            .cloned()
            .collect();
        for key in keys {
            self.pending_acks.remove(&key);
            self.send_ack(ctx, &key);
        }
    }

    fn send_ack(&mut self, ctx: &mut Ctx<'_>, key: &SwAddTriple) {
        ctx.send(
            key.writer,
            WireMessage::SwAddResp { object: self.object.clone(), c: key.c, server: self.me },
        );
    }
}

impl ProcessMachine for ServerMachine {
    fn on_event(&mut self, ctx: &mut Ctx<'_>, ev: MachineEvent) {
        match ev {
            MachineEvent::Start | MachineEvent::Invoke(_) => {}
            MachineEvent::Deliver { from, msg } => match &msg {
                WireMessage::Get { object, c, client } if *object == self.object => {
                    if *client != from {
                        ctx.note(Note::Screened { reason: format!("get client field {client} != sender {from}") });
                        return;
                    }
                    ctx.send(
                        from,
                        WireMessage::SwGetResp {
                            object: self.object.clone(),
                            c: *c,
                            server: self.me,
                            records: self.replica.iter().cloned().collect(),
                        },
                    );
                }
                WireMessage::SwAdd { object, c, writer, record } if *object == self.object => {
                    self.on_sw_add(ctx, from, *c, *writer, record)
                }
                WireMessage::Brb(b) if b.object() == &self.object => self.on_brb(ctx, from, b.clone()),
                _ => {}
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdso::drain_effects;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn ir(k: u64, tag: &[u8]) -> IndexedRecord {
        IndexedRecord::new(k, tag.to_vec())
    }

    #[test]
    fn quorum_formulas() {
        let q = SwQuorums::new(5, 1, None, false);
        assert_eq!(q.append_fanout, 5); // floor(5/2) + 3
        assert_eq!(q.append_ack, 2);
        assert_eq!(q.insert_origins, 4); // floor(5/2) + 2
        let q = SwQuorums::new(9, 2, None, false);
        assert_eq!(q.append_fanout, 9); // 4 + 5
        assert_eq!(q.append_ack, 3);
        assert_eq!(q.insert_origins, 7); // 4 + 3
    }

    #[test]
    fn assemble_closure_stops_at_gap() {
        // accepted indices {1, 2, 4} -> returned (1, 2)
        let sets = vec![
            vec![ir(1, b"a"), ir(2, b"b"), ir(4, b"d")],
            vec![ir(1, b"a"), ir(2, b"b"), ir(4, b"d")],
        ];
        let seq = assemble(&sets, 2, PrefixRule::Closure);
        assert_eq!(seq, vec![ir(1, b"a"), ir(2, b"b")]);
    }

    #[test]
    fn assemble_empty_accepted_set() {
        let sets: Vec<Vec<IndexedRecord>> = vec![vec![], vec![]];
        assert!(assemble(&sets, 2, PrefixRule::Closure).is_empty());
    }

    #[test]
    fn assemble_without_first_index_returns_nothing() {
        let sets = vec![vec![ir(2, b"b"), ir(3, b"c")], vec![ir(2, b"b"), ir(3, b"c")]];
        assert!(assemble(&sets, 2, PrefixRule::Closure).is_empty());
    }

    #[test]
    fn literal_rule_admits_gapped_runs() {
        // accepted {1, 4, 5}: literal keeps 1 (base) and 5 (4 present);
        // closure keeps only 1
        let sets = vec![vec![ir(1, b"a"), ir(4, b"d"), ir(5, b"e")]; 2];
        let lit = assemble(&sets, 2, PrefixRule::Literal);
        assert_eq!(lit, vec![ir(1, b"a"), ir(5, b"e")]);
        let clo = assemble(&sets, 2, PrefixRule::Closure);
        assert_eq!(clo, vec![ir(1, b"a")]);
    }

    #[test]
    fn below_threshold_records_drop() {
        let sets = vec![vec![ir(1, b"a")], vec![ir(1, b"a")], vec![ir(1, b"z")]];
        let seq = assemble(&sets, 2, PrefixRule::Closure);
        assert_eq!(seq, vec![ir(1, b"a")]);
    }

    fn server(n: u32, f: usize) -> ServerMachine {
        ServerMachine::new(
            ProcessId::server(0),
            ObjectId::new("L"),
            (0..n).map(ProcessId::server).collect(),
            ProcessId::client(0),
            SwQuorums::new(n as usize, f, None, false),
        )
    }

    #[test]
    fn append_counters_and_index_assignment() {
        let w = ProcessId::client(0);
        let mut m = ClientMachine::new(
            w,
            ObjectId::new("L"),
            (0..5).map(ProcessId::server).collect(),
            w,
            SwQuorums::new(5, 1, None, false),
            TargetSelection::FixedPrefix,
            PrefixRule::Closure,
        );
        let mut r = ChaCha12Rng::seed_from_u64(1);
        for expected_k in 1..=2u64 {
            let mut effects = Vec::new();
            {
                let mut ctx = Ctx { effects: &mut effects, rng: &mut r };
                m.on_event(&mut ctx, MachineEvent::Invoke(OpSpec::SwAppend {
                    object: ObjectId::new("L"),
                    payload: b"p".to_vec(),
                }));
            }
            let (sends, _, _) = drain_effects(effects);
            assert_eq!(sends.len(), 5);
            match &sends[0].1 {
                WireMessage::SwAdd { record, c, .. } => {
                    assert_eq!(record.k, expected_k);
                    assert_eq!(*c, expected_k);
                }
                other => panic!("unexpected {other:?}"),
            }
            // complete with 2 acks
            for s in 0..2u32 {
                let mut effects = Vec::new();
                let mut ctx = Ctx { effects: &mut effects, rng: &mut r };
                m.on_event(&mut ctx, MachineEvent::Deliver {
                    from: ProcessId::server(s),
                    msg: WireMessage::SwAddResp {
                        object: ObjectId::new("L"),
                        c: expected_k,
                        server: ProcessId::server(s),
                    },
                });
            }
        }
    }

    #[test]
    fn non_writer_append_rejected() {
        let mut m = ClientMachine::new(
            ProcessId::client(1),
            ObjectId::new("L"),
            (0..5).map(ProcessId::server).collect(),
            ProcessId::client(0),
            SwQuorums::new(5, 1, None, false),
            TargetSelection::FixedPrefix,
            PrefixRule::Closure,
        );
        let mut r = ChaCha12Rng::seed_from_u64(1);
        let mut effects = Vec::new();
        let mut ctx = Ctx { effects: &mut effects, rng: &mut r };
        m.on_event(&mut ctx, MachineEvent::Invoke(OpSpec::SwAppend {
            object: ObjectId::new("L"),
            payload: b"p".to_vec(),
        }));
        let (sends, results, _) = drain_effects(effects);
        assert!(sends.is_empty());
        assert_eq!(results, vec![OpResult::Rejected { reason: Reject::NotWriter }]);
    }

    #[test]
    fn repeated_index_triggers_no_second_relay() {
        let mut m = server(5, 1);
        let w = ProcessId::client(0);
        let mut r = ChaCha12Rng::seed_from_u64(1);
        let deliver = |m: &mut ServerMachine, r: &mut ChaCha12Rng, rec: IndexedRecord, c: u64| {
            let mut effects = Vec::new();
            let mut ctx = Ctx { effects: &mut effects, rng: r };
            m.on_event(&mut ctx, MachineEvent::Deliver {
                from: w,
                msg: WireMessage::SwAdd { object: ObjectId::new("L"), c, writer: w, record: rec },
            });
            drain_effects(effects)
        };
        let (sends, _, _) = deliver(&mut m, &mut r, ir(1, b"a"), 1);
        assert_eq!(sends.iter().filter(|(_, m)| matches!(m, WireMessage::Brb(_))).count(), 5);
        // same index, different payload: no relay, ack deferred
        let (sends, _, _) = deliver(&mut m, &mut r, ir(1, b"b"), 2);
        assert!(sends.is_empty());
        assert_eq!(m.relayed_indices.len(), 1);
        assert_eq!(m.pending_acks.len(), 2);
    }

    #[test]
    fn add_from_non_writer_is_screened() {
        let mut m = server(5, 1);
        let mut r = ChaCha12Rng::seed_from_u64(1);
        let mut effects = Vec::new();
        let mut ctx = Ctx { effects: &mut effects, rng: &mut r };
        m.on_event(&mut ctx, MachineEvent::Deliver {
            from: ProcessId::client(3),
            msg: WireMessage::SwAdd {
                object: ObjectId::new("L"),
                c: 1,
                writer: ProcessId::client(3),
                record: ir(1, b"a"),
            },
        });
        let (sends, _, notes) = drain_effects(effects);
        assert!(sends.is_empty());
        assert!(notes.iter().any(|n| matches!(n, Note::Screened { .. })));
    }

    #[test]
    fn redelivery_after_insert_acks_immediately() {
        let mut m = server(5, 1);
        let w = ProcessId::client(0);
        m.replica.insert(ir(1, b"a"));
        let mut r = ChaCha12Rng::seed_from_u64(1);
        let mut effects = Vec::new();
        let mut ctx = Ctx { effects: &mut effects, rng: &mut r };
        m.on_event(&mut ctx, MachineEvent::Deliver {
            from: w,
            msg: WireMessage::SwAdd { object: ObjectId::new("L"), c: 9, writer: w, record: ir(1, b"a") },
        });
        let (sends, _, _) = drain_effects(effects);
        assert!(matches!(sends[0].1, WireMessage::SwAddResp { c: 9, .. }));
    }
}
