//! Post-hoc verdicts on recorded histories.
//!
//! Every checker is a pure function of the scenario summary and the
//! history, so verdicts can be recomputed from a stored trace. A failing
//! verdict carries a minimal witness naming the offending events.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::atomic::decode_request;
use crate::history::{EventKind, History};
use crate::ids::{ObjectId, ProcessId};
use crate::machine::{Note, OpResult, OpSpec};
use crate::oracle::{seq_gset_apply, seq_ledger_apply, GSetOp, GSetOutcome, LedgerOp, LedgerOutcome};
use crate::record::{GSetValue, LedgerValue, Record};
use crate::scenario::{ObjectKindName, ObjectMeta, ScenarioMeta};
use crate::wire::WireMessage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub property: String,
    pub pass: bool,
    pub witness: Vec<String>,
}

impl Verdict {
    fn from_witness(property: &str, witness: Vec<String>) -> Self {
        Verdict { property: property.to_string(), pass: witness.is_empty(), witness }
    }
}

impl core::fmt::Display for Verdict {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        if self.pass {
            write!(f, "PASS {}", self.property)
        } else {
            write!(f, "FAIL {}", self.property)?;
            for w in &self.witness {
                write!(f, "\n  - {w}")?;
            }
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownProperty(pub String);

impl core::fmt::Display for UnknownProperty {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "unknown property {:?}", self.0)
    }
}

/// Run the named checkers; names match the scenario `properties` lists.
pub fn run_checks(
    meta: &ScenarioMeta,
    h: &History,
    properties: &[String],
) -> Result<Vec<Verdict>, UnknownProperty> {
    let mut verdicts = Vec::new();
    for name in properties {
        let v = match name.as_str() {
            "bc" => check_bc(meta, h),
            "bec-a" => check_bec_a(meta, h),
            "bec-b" => check_bec_b_quiescent(meta, h),
            "convergence" => check_convergence(meta, h),
            "sourcing" => check_sourcing(meta, h),
            "strong-prefix" => check_strong_prefix(meta, h),
            "index-uniqueness" => check_index_uniqueness(meta, h),
            "sw-quiescent" => check_sw_quiescent(meta, h),
            "atomic" => check_atomic(meta, h),
            "sequential" => check_sequential_equiv(meta, h),
            "brb-validity" => check_brb_validity(meta, h),
            "brb-integrity" => check_brb_integrity(meta, h),
            "brb-termination-local" => check_brb_termination_local(meta, h),
            "brb-termination-global" => check_brb_termination_global(meta, h),
            other => return Err(UnknownProperty(other.to_string())),
        };
        verdicts.push(v);
    }
    Ok(verdicts)
}

pub const ALL_PROPERTIES: &[&str] = &[
    "bc",
    "bec-a",
    "bec-b",
    "convergence",
    "sourcing",
    "strong-prefix",
    "index-uniqueness",
    "sw-quiescent",
    "atomic",
    "sequential",
    "brb-validity",
    "brb-integrity",
    "brb-termination-local",
    "brb-termination-global",
];

fn is_correct(meta: &ScenarioMeta, p: ProcessId) -> bool {
    meta.is_correct(p)
}

/// The record a workload invocation adds, if any: plain adds carry it
/// directly, atomic requests add their encoded tuple.
fn invocation_add_record(client: ProcessId, op: &OpSpec) -> Option<(ObjectId, Record)> {
    match op {
        OpSpec::GsetAdd { object, record } => Some((object.clone(), record.clone())),
        OpSpec::AtomicAppends { object, partner, own, target, counterpart }
        | OpSpec::AtomicAdds { object, partner, own, target, counterpart } => {
            let value = crate::atomic::AtomicRequestValue::new(
                client,
                *partner,
                own.clone(),
                target.clone(),
                counterpart.clone(),
            );
            Some((object.clone(), value.to_record()))
        }
        _ => None,
    }
}

/// Every operation invoked by a correct client has a matching response.
pub fn check_bc(meta: &ScenarioMeta, h: &History) -> Verdict {
    let mut witness = Vec::new();
    for (op_ref, op, step) in h.invocations() {
        if !op_ref.client.is_client() || !is_correct(meta, op_ref.client) {
            continue;
        }
        if h.response_step(op_ref).is_none() {
            witness.push(format!(
                "step {step}: {:?} invoked by {} (c={}) never completed",
                op, op_ref.client, op_ref.c
            ));
        }
    }
    Verdict::from_witness("bc", witness)
}

/// Every record returned by a correct client's get was added by an
/// operation invoked before the get's response.
pub fn check_bec_a(meta: &ScenarioMeta, h: &History) -> Verdict {
    // (object, record) -> earliest add invocation step
    let mut adds: BTreeMap<(ObjectId, Record), u64> = BTreeMap::new();
    let mut appends: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for (op_ref, op, step) in h.invocations() {
        if let Some((object, record)) = invocation_add_record(op_ref.client, op) {
            adds.entry((object, record)).or_insert(step);
        }
        if let OpSpec::SwAppend { payload, .. } = op {
            appends.entry(payload.clone()).or_insert(step);
        }
    }
    let mut witness = Vec::new();
    for (op_ref, op, result, resp_step) in h.responses() {
        if !op_ref.client.is_client() || !is_correct(meta, op_ref.client) {
            continue;
        }
        match (op, result) {
            (OpSpec::GsetGet { object }, OpResult::Records { records }) => {
                for r in records {
                    match adds.get(&(object.clone(), r.clone())) {
                        Some(inv) if *inv < resp_step => {}
                        _ => witness.push(format!(
                            "step {resp_step}: get by {} returned a record with no prior add ({:?})",
                            op_ref.client, r.payload
                        )),
                    }
                }
            }
            (OpSpec::SwGet { .. }, OpResult::Sequence { payloads }) => {
                for p in payloads {
                    match appends.get(&p.0) {
                        Some(inv) if *inv < resp_step => {}
                        _ => witness.push(format!(
                            "step {resp_step}: ledger get by {} returned a payload with no prior append",
                            op_ref.client
                        )),
                    }
                }
            }
            _ => {}
        }
    }
    Verdict::from_witness("bec-a", witness)
}

/// Insertion steps per (object, record) at the given servers.
fn insertion_steps(
    h: &History,
    servers: &BTreeSet<ProcessId>,
    object: &ObjectId,
) -> BTreeMap<Record, BTreeMap<ProcessId, u64>> {
    let mut map: BTreeMap<Record, BTreeMap<ProcessId, u64>> = BTreeMap::new();
    for (process, note, step) in h.notes() {
        if let Note::Inserted { object: o, record } = note {
            if o == object && servers.contains(&process) {
                map.entry(record.clone()).or_default().entry(process).or_insert(step);
            }
        }
    }
    map
}

fn gset_objects(meta: &ScenarioMeta) -> impl Iterator<Item = &ObjectMeta> {
    meta.objects
        .iter()
        .filter(|o| matches!(o.kind, ObjectKindName::Gset | ObjectKindName::Sbdso))
}

/// Completed adds are eventually visible: by quiescence the record sits at
/// every correct replica, and every correct get invoked after things have
/// settled returns it.
pub fn check_bec_b_quiescent(meta: &ScenarioMeta, h: &History) -> Verdict {
    let mut witness = Vec::new();
    for object in gset_objects(meta) {
        let correct_servers: BTreeSet<ProcessId> =
            meta.correct_servers_of(object).into_iter().collect();
        let inserted = insertion_steps(h, &correct_servers, &object.id);

        // completed adds by correct clients into this object
        let mut completed: Vec<(Record, u64)> = Vec::new();
        for (op_ref, op, result, resp_step) in h.responses() {
            if !is_correct(meta, op_ref.client) || !matches!(result, OpResult::Ack) {
                continue;
            }
            if let Some((obj, record)) = invocation_add_record(op_ref.client, op) {
                if obj == object.id {
                    completed.push((record, resp_step));
                }
            }
        }

        // settlement horizon: every completed add present everywhere
        let mut horizon = 0u64;
        for (record, resp_step) in &completed {
            horizon = horizon.max(*resp_step);
            let at = inserted.get(record);
            for &server in &correct_servers {
                match at.and_then(|m| m.get(&server)) {
                    Some(step) => horizon = horizon.max(*step),
                    None => witness.push(format!(
                        "completed add of {:?} never reached correct server {server}",
                        record.payload
                    )),
                }
            }
        }
        if !witness.is_empty() {
            continue;
        }

        for (op_ref, op, result, _) in h.responses() {
            if !is_correct(meta, op_ref.client) {
                continue;
            }
            let (OpSpec::GsetGet { object: o }, OpResult::Records { records }) = (op, result)
            else {
                continue;
            };
            if *o != object.id {
                continue;
            }
            let Some(inv_step) = h.invocation_step(op_ref) else { continue };
            if inv_step <= horizon {
                continue;
            }
            let returned: BTreeSet<&Record> = records.iter().collect();
            for (record, resp_step) in &completed {
                if *resp_step < inv_step && !returned.contains(record) {
                    witness.push(format!(
                        "get by {} invoked at step {inv_step} misses completed add {:?}",
                        op_ref.client, record.payload
                    ));
                }
            }
        }
    }
    Verdict::from_witness("bec-b", witness)
}

/// At quiescence all correct replicas of each set object hold the same
/// value, which contains every completed correct add.
pub fn check_convergence(meta: &ScenarioMeta, h: &History) -> Verdict {
    let mut witness = Vec::new();
    for object in gset_objects(meta) {
        let correct_servers: BTreeSet<ProcessId> =
            meta.correct_servers_of(object).into_iter().collect();
        let inserted = insertion_steps(h, &correct_servers, &object.id);
        let mut replicas: BTreeMap<ProcessId, BTreeSet<Record>> =
            correct_servers.iter().map(|s| (*s, BTreeSet::new())).collect();
        for (record, at) in &inserted {
            for server in at.keys() {
                replicas.get_mut(server).expect("correct server").insert(record.clone());
            }
        }
        let values: Vec<(&ProcessId, &BTreeSet<Record>)> = replicas.iter().collect();
        if let Some((first_server, first)) = values.first().copied() {
            for (server, value) in &values[1..] {
                if *value != first {
                    witness.push(format!(
                        "object {}: replicas of {first_server} and {server} differ at quiescence ({} vs {} records)",
                        object.id,
                        first.len(),
                        value.len()
                    ));
                }
            }
        }
        for (op_ref, op, result, _) in h.responses() {
            if !is_correct(meta, op_ref.client) || !matches!(result, OpResult::Ack) {
                continue;
            }
            let Some((obj, record)) = invocation_add_record(op_ref.client, op) else { continue };
            if obj != object.id {
                continue;
            }
            for (server, value) in &values {
                if !value.contains(&record) {
                    witness.push(format!(
                        "object {}: completed add {:?} missing from replica of {server}",
                        object.id, record.payload
                    ));
                }
            }
        }
    }
    Verdict::from_witness("convergence", witness)
}

/// Nothing fabricated: every record visible in a correct get was inserted
/// at a correct server first, and every insertion traces to an
/// authenticated add request sent by the record's creator.
pub fn check_sourcing(meta: &ScenarioMeta, h: &History) -> Verdict {
    let mut witness = Vec::new();
    for object in gset_objects(meta) {
        if object.restricted {
            continue; // restricted targets are covered by the atomic checker
        }
        let correct_servers: BTreeSet<ProcessId> =
            meta.correct_servers_of(object).into_iter().collect();
        let inserted = insertion_steps(h, &correct_servers, &object.id);

        // first authenticated add delivery per record, sent by its creator
        // to a correct server
        let mut first_add: BTreeMap<&Record, u64> = BTreeMap::new();
        for e in &h.events {
            if let EventKind::Deliver { to, auth_ok: true, msg: Some(WireMessage::Add { object: o, record, client, .. }), .. } = &e.kind
            {
                if o == &object.id
                    && correct_servers.contains(to)
                    && client == &record.creator
                {
                    if let Some((r, _)) = inserted.get_key_value(record) {
                        first_add.entry(r).or_insert(e.step);
                    }
                }
            }
        }

        for (record, at) in &inserted {
            let first_insert = at.values().copied().min().expect("non-empty");
            match first_add.get(record) {
                Some(step) if *step < first_insert => {}
                _ => witness.push(format!(
                    "object {}: record {:?} inserted at step {first_insert} without a prior add request from its creator",
                    object.id, record.payload
                )),
            }
        }

        for (op_ref, op, result, resp_step) in h.responses() {
            if !op_ref.client.is_client() || !is_correct(meta, op_ref.client) {
                continue;
            }
            let (OpSpec::GsetGet { object: o }, OpResult::Records { records }) = (op, result)
            else {
                continue;
            };
            if *o != object.id {
                continue;
            }
            for r in records {
                let ok = inserted
                    .get(r)
                    .map(|at| at.values().any(|s| *s < resp_step))
                    .unwrap_or(false);
                if !ok {
                    witness.push(format!(
                        "step {resp_step}: get by {} returned {:?} which no correct server held",
                        op_ref.client, r.payload
                    ));
                }
            }
        }
    }
    Verdict::from_witness("sourcing", witness)
}

fn sw_sequences(meta: &ScenarioMeta, h: &History) -> Vec<(ProcessId, u64, Vec<Vec<u8>>)> {
    let mut out = Vec::new();
    for (op_ref, op, result, resp_step) in h.responses() {
        if !is_correct(meta, op_ref.client) {
            continue;
        }
        if let (OpSpec::SwGet { .. }, OpResult::Sequence { payloads }) = (op, result) {
            out.push((op_ref.client, resp_step, payloads.iter().map(|p| p.0.clone()).collect()));
        }
    }
    out
}

/// Any two sequences returned by correct clients are prefix-related.
pub fn check_strong_prefix(meta: &ScenarioMeta, h: &History) -> Verdict {
    let seqs = sw_sequences(meta, h);
    let mut witness = Vec::new();
    for (i, (pa, sa, a)) in seqs.iter().enumerate() {
        for (pb, sb, b) in seqs.iter().skip(i + 1) {
            let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
            if short[..] != long[..short.len()] {
                witness.push(format!(
                    "gets of {pa} (step {sa}) and {pb} (step {sb}) returned non-prefix-related sequences"
                ));
            }
        }
    }
    Verdict::from_witness("strong-prefix", witness)
}

/// No index maps to two payloads across correct replicas.
pub fn check_index_uniqueness(meta: &ScenarioMeta, h: &History) -> Verdict {
    let mut witness = Vec::new();
    for object in meta.objects.iter().filter(|o| o.kind == ObjectKindName::Swbdlo) {
        let correct: BTreeSet<ProcessId> = meta.correct_servers_of(object).into_iter().collect();
        let mut per_index: BTreeMap<u64, BTreeSet<Vec<u8>>> = BTreeMap::new();
        for (process, note, _) in h.notes() {
            if let Note::SwInserted { object: o, record } = note {
                if o == &object.id && correct.contains(&process) {
                    per_index.entry(record.k).or_default().insert(record.rho.clone());
                }
            }
        }
        for (k, payloads) in per_index {
            if payloads.len() > 1 {
                witness.push(format!(
                    "object {}: index {k} carries {} distinct payloads at correct replicas",
                    object.id,
                    payloads.len()
                ));
            }
        }
    }
    Verdict::from_witness("index-uniqueness", witness)
}

/// With a correct writer, settled gets return exactly the completed
/// appends, in order.
pub fn check_sw_quiescent(meta: &ScenarioMeta, h: &History) -> Verdict {
    let mut witness = Vec::new();
    for object in meta.objects.iter().filter(|o| o.kind == ObjectKindName::Swbdlo) {
        let Some(writer) = object.writer else { continue };
        if !is_correct(meta, writer) {
            continue; // nothing promised for a Byzantine writer
        }
        let correct: BTreeSet<ProcessId> = meta.correct_servers_of(object).into_iter().collect();

        // completed appends, in invocation order (the writer is sequential)
        let mut payloads: Vec<(Vec<u8>, u64)> = Vec::new();
        for (op_ref, op, result, resp_step) in h.responses() {
            if op_ref.client != writer || !matches!(result, OpResult::Ack) {
                continue;
            }
            if let OpSpec::SwAppend { object: o, payload } = op {
                if *o == object.id {
                    payloads.push((payload.clone(), resp_step));
                }
            }
        }

        let mut horizon = 0u64;
        let mut insertion: BTreeMap<(u64, &Vec<u8>), BTreeMap<ProcessId, u64>> = BTreeMap::new();
        for (process, note, step) in h.notes() {
            if let Note::SwInserted { object: o, record } = note {
                if o == &object.id && correct.contains(&process) {
                    insertion.entry((record.k, &record.rho)).or_default().insert(process, step);
                }
            }
        }
        for (idx, (payload, resp_step)) in payloads.iter().enumerate() {
            let k = idx as u64 + 1;
            horizon = horizon.max(*resp_step);
            let at = insertion.get(&(k, payload));
            for server in &correct {
                match at.and_then(|m| m.get(server)) {
                    Some(step) => horizon = horizon.max(*step),
                    None => witness.push(format!(
                        "object {}: completed append k={k} never reached correct server {server}",
                        object.id
                    )),
                }
            }
        }
        if !witness.is_empty() {
            continue;
        }

        let expected: Vec<Vec<u8>> = payloads.iter().map(|(p, _)| p.clone()).collect();
        for (client, _, seq) in sw_sequences(meta, h) {
            // only gets invoked after the horizon are constrained
            let Some(inv) = h
                .responses()
                .find(|(op_ref, op, result, _)| {
                    op_ref.client == client
                        && matches!(op, OpSpec::SwGet { object: o } if *o == object.id)
                        && matches!(result, OpResult::Sequence { payloads } if payloads.iter().map(|p| p.0.clone()).collect::<Vec<_>>() == seq)
                })
                .and_then(|(op_ref, ..)| h.invocation_step(op_ref))
            else {
                continue;
            };
            if inv > horizon && seq != expected {
                witness.push(format!(
                    "object {}: settled get by {client} returned {} entries, expected {}",
                    object.id,
                    seq.len(),
                    expected.len()
                ));
            }
        }
    }
    Verdict::from_witness("sw-quiescent", witness)
}

/// Target containment for one record at the correct servers of a target.
fn target_holders(
    meta: &ScenarioMeta,
    h: &History,
    target: &ObjectId,
    record: &Record,
) -> (BTreeSet<ProcessId>, Option<u64>) {
    let Some(object) = meta.object(target) else {
        return (BTreeSet::new(), None);
    };
    let correct: BTreeSet<ProcessId> = meta.correct_servers_of(object).into_iter().collect();
    let mut holders = BTreeSet::new();
    let mut first = None;
    for (process, note, step) in h.notes() {
        let hit = match note {
            Note::Appended { object: o, record: r } => o == target && r == record,
            Note::Inserted { object: o, record: r } => o == target && r == record,
            _ => false,
        };
        if hit && correct.contains(&process) {
            holders.insert(process);
            if first.is_none() {
                first = Some(step);
            }
        }
    }
    (holders, first)
}

/// Atomicity: a correct client's record lands only alongside its partner's
/// matching request (safety); two correct clients both land and learn it
/// (liveness); dispatches are deduplicated and restricted targets admit
/// only quorum-requested records.
pub fn check_atomic(meta: &ScenarioMeta, h: &History) -> Verdict {
    let mut witness = Vec::new();

    // tuples as invoked, keyed by requester
    struct Request {
        requester: ProcessId,
        partner: ProcessId,
        own: Record,
        target: ObjectId,
        counterpart: Record,
        sbdso: ObjectId,
    }
    let mut requests: Vec<Request> = Vec::new();
    for (op_ref, op, _) in h.invocations() {
        if let OpSpec::AtomicAppends { object, partner, own, target, counterpart }
        | OpSpec::AtomicAdds { object, partner, own, target, counterpart } = op
        {
            requests.push(Request {
                requester: op_ref.client,
                partner: *partner,
                own: own.clone(),
                target: target.clone(),
                counterpart: counterpart.clone(),
                sbdso: object.clone(),
            });
        }
    }

    // dispatcher-set insertions of decodable request tuples
    let sbdso_meta: BTreeMap<&ObjectId, BTreeSet<ProcessId>> = meta
        .objects
        .iter()
        .filter(|o| o.kind == ObjectKindName::Sbdso)
        .map(|o| (&o.id, meta.correct_servers_of(o).into_iter().collect()))
        .collect();
    let mut request_insertions: Vec<(ProcessId, u64, crate::atomic::AtomicRequestValue)> =
        Vec::new();
    for (process, note, step) in h.notes() {
        if let Note::Inserted { object, record } = note {
            if let Some(correct) = sbdso_meta.get(object) {
                if correct.contains(&process) {
                    if let Some(v) = decode_request(record) {
                        request_insertions.push((process, step, v));
                    }
                }
            }
        }
    }

    let completions: BTreeSet<(ProcessId, u64, u64)> = h
        .notes()
        .filter_map(|(process, note, _)| match note {
            Note::AtomicCompleted { pair } => Some((process, pair.0, pair.1)),
            _ => None,
        })
        .collect();

    for req in &requests {
        let correct_requester = is_correct(meta, req.requester);
        let (holders, first_landing) = target_holders(meta, h, &req.target, &req.own);

        // safety: only for correct clients
        if correct_requester && !holders.is_empty() {
            let f = meta.object(&req.sbdso).map(|o| o.f).unwrap_or(0);
            let mirror_insertions: Vec<&(ProcessId, u64, crate::atomic::AtomicRequestValue)> =
                request_insertions
                    .iter()
                    .filter(|(_, _, v)| {
                        v.requester == req.partner
                            && v.own == req.counterpart
                            && v.counterpart == req.own
                    })
                    .collect();
            let distinct: BTreeSet<ProcessId> =
                mirror_insertions.iter().map(|(p, _, _)| *p).collect();
            if distinct.len() < f + 1 {
                witness.push(format!(
                    "record of {} reached target {} but the partner request sits at only {} correct dispatcher replicas (need {})",
                    req.requester,
                    req.target,
                    distinct.len(),
                    f + 1
                ));
            }
            if let (Some(first_landing), Some(first_mirror)) =
                (first_landing, mirror_insertions.iter().map(|(_, s, _)| *s).min())
            {
                if first_mirror >= first_landing {
                    witness.push(format!(
                        "record of {} landed in {} at step {first_landing}, before any dispatcher replica held the partner request (step {first_mirror})",
                        req.requester, req.target
                    ));
                }
            }
            // the partner record must land too (it may belong to a
            // Byzantine partner, whose target we learn from the mirror)
            if let Some((_, _, mirror)) = mirror_insertions.first() {
                let (partner_holders, _) = target_holders(meta, h, &mirror.target, &mirror.own);
                if partner_holders.is_empty() {
                    witness.push(format!(
                        "record of {} landed in {} but the partner record never reached {}",
                        req.requester, req.target, mirror.target
                    ));
                }
            }
        }

        // liveness: both correct -> both land everywhere and both complete
        if correct_requester && is_correct(meta, req.partner) {
            let Some(object) = meta.object(&req.target) else {
                witness.push(format!("unknown target {}", req.target));
                continue;
            };
            let correct_target: BTreeSet<ProcessId> =
                meta.correct_servers_of(object).into_iter().collect();
            if holders != correct_target {
                witness.push(format!(
                    "record of {} reached only {}/{} correct servers of {}",
                    req.requester,
                    holders.len(),
                    correct_target.len(),
                    req.target
                ));
            }
            let partner_req = requests.iter().find(|r| {
                r.requester == req.partner
                    && r.own == req.counterpart
                    && r.counterpart == req.own
            });
            if let Some(partner_req) = partner_req {
                let own_tuple = crate::atomic::AtomicRequestValue::new(
                    req.requester,
                    req.partner,
                    req.own.clone(),
                    req.target.clone(),
                    req.counterpart.clone(),
                )
                .to_record();
                let partner_tuple = crate::atomic::AtomicRequestValue::new(
                    partner_req.requester,
                    partner_req.partner,
                    partner_req.own.clone(),
                    partner_req.target.clone(),
                    partner_req.counterpart.clone(),
                )
                .to_record();
                let pair = crate::record::PairId::of(own_tuple.digest(), partner_tuple.digest());
                if !completions.contains(&(req.requester, pair.0, pair.1)) {
                    witness.push(format!(
                        "{} never collected enough completion notifications",
                        req.requester
                    ));
                }
            } else {
                witness.push(format!(
                    "correct partner {} of {} never issued its request",
                    req.partner, req.requester
                ));
            }
        }
    }

    // at-most-once dispatch and exactly-once target entries
    let mut dispatches: BTreeSet<(ProcessId, u64, u64)> = BTreeSet::new();
    for (process, note, _) in h.notes() {
        if let Note::Dispatched { pair, .. } = note {
            if !dispatches.insert((process, pair.0, pair.1)) {
                witness.push(format!("{process} dispatched pair twice"));
            }
        }
    }
    let mut appended: BTreeMap<(ProcessId, &ObjectId, &Record), usize> = BTreeMap::new();
    for (process, note, _) in h.notes() {
        if let Note::Appended { object, record } = note {
            *appended.entry((process, object, record)).or_insert(0) += 1;
        }
    }
    for ((process, object, record), count) in appended {
        if count > 1 {
            witness.push(format!(
                "{process} appended {:?} to {object} {count} times",
                record.payload
            ));
        }
    }

    // restricted admission: a record enters a target only after enough
    // distinct registered requesters asked for it
    for object in meta.objects.iter().filter(|o| o.restricted) {
        let quorum = object.admission_quorum.unwrap_or(object.f + 1);
        let correct: BTreeSet<ProcessId> = meta.correct_servers_of(object).into_iter().collect();
        let mut admitted: BTreeMap<&Record, u64> = BTreeMap::new();
        for (process, note, step) in h.notes() {
            let r = match note {
                Note::Appended { object: o, record } if *o == object.id => Some(record),
                Note::Inserted { object: o, record } if *o == object.id => Some(record),
                _ => None,
            };
            if let Some(record) = r {
                if correct.contains(&process) {
                    let e = admitted.entry(record).or_insert(step);
                    *e = (*e).min(step);
                }
            }
        }
        for (record, first_step) in admitted {
            let mut requesters = BTreeSet::new();
            for e in &h.events {
                if e.step >= first_step {
                    break;
                }
                if let EventKind::Deliver {
                    to,
                    auth_ok: true,
                    msg:
                        Some(
                            WireMessage::Add { object: o, client, record: r, .. }
                            | WireMessage::Append { object: o, client, record: r, .. },
                        ),
                    ..
                } = &e.kind
                {
                    if o == &object.id && r == record && correct.contains(to) {
                        requesters.insert(*client);
                    }
                }
            }
            if requesters.len() < quorum {
                witness.push(format!(
                    "object {}: record {:?} admitted at step {first_step} with only {} requesters (need {quorum})",
                    object.id,
                    record.payload,
                    requesters.len()
                ));
            }
        }
    }

    Verdict::from_witness("atomic", witness)
}

/// Replay a failure-free single-client run against the sequential oracles.
pub fn check_sequential_equiv(_meta: &ScenarioMeta, h: &History) -> Verdict {
    let mut witness = Vec::new();
    let mut gset = GSetValue::new();
    let mut ledger = LedgerValue::new();
    let mut ops: Vec<(u64, &OpSpec, &OpResult)> = Vec::new();
    for (op_ref, op, result, _) in h.responses() {
        let Some(inv) = h.invocation_step(op_ref) else { continue };
        ops.push((inv, op, result));
    }
    ops.sort_by_key(|(inv, _, _)| *inv);
    for (inv, op, result) in ops {
        match op {
            OpSpec::GsetGet { .. } => {
                let (next, out) = seq_gset_apply(&gset, &GSetOp::Get);
                gset = next;
                let GSetOutcome::Set(expected) = out else { unreachable!() };
                let got: BTreeSet<Record> = match result {
                    OpResult::Records { records } => records.iter().cloned().collect(),
                    other => {
                        witness.push(format!("step {inv}: get returned {other:?}"));
                        continue;
                    }
                };
                if got != expected {
                    witness.push(format!(
                        "step {inv}: get returned {} records, oracle says {}",
                        got.len(),
                        expected.len()
                    ));
                }
            }
            OpSpec::GsetAdd { record, .. } => {
                let (next, _) = seq_gset_apply(&gset, &GSetOp::Add(record.clone()));
                gset = next;
                if !matches!(result, OpResult::Ack) {
                    witness.push(format!("step {inv}: add returned {result:?}"));
                }
            }
            OpSpec::SwGet { .. } => {
                let (next, out) = seq_ledger_apply(&ledger, &LedgerOp::Get);
                ledger = next;
                let LedgerOutcome::Sequence(expected) = out else { unreachable!() };
                let got: Vec<Vec<u8>> = match result {
                    OpResult::Sequence { payloads } => {
                        payloads.iter().map(|p| p.0.clone()).collect()
                    }
                    other => {
                        witness.push(format!("step {inv}: ledger get returned {other:?}"));
                        continue;
                    }
                };
                if got != expected {
                    witness.push(format!(
                        "step {inv}: ledger get returned {} entries, oracle says {}",
                        got.len(),
                        expected.len()
                    ));
                }
            }
            OpSpec::SwAppend { payload, .. } => {
                let (next, _) = seq_ledger_apply(&ledger, &LedgerOp::Append(payload.clone()));
                ledger = next;
                if !matches!(result, OpResult::Ack) {
                    witness.push(format!("step {inv}: append returned {result:?}"));
                }
            }
            _ => {}
        }
    }
    Verdict::from_witness("sequential", witness)
}

struct BrbEvents {
    /// (object, origin, digest) -> broadcast step at the origin
    broadcasts: BTreeMap<(ObjectId, ProcessId, u64), u64>,
    /// (object, origin, digest) -> server -> delivery steps
    deliveries: BTreeMap<(ObjectId, ProcessId, u64), BTreeMap<ProcessId, Vec<u64>>>,
}

fn brb_events(h: &History) -> BrbEvents {
    let mut broadcasts = BTreeMap::new();
    let mut deliveries: BTreeMap<(ObjectId, ProcessId, u64), BTreeMap<ProcessId, Vec<u64>>> =
        BTreeMap::new();
    for (process, note, step) in h.notes() {
        match note {
            Note::BrbBroadcast { object, digest } => {
                broadcasts.entry((object.clone(), process, *digest)).or_insert(step);
            }
            Note::BrbDelivered { object, origin, digest } => {
                deliveries
                    .entry((object.clone(), *origin, *digest))
                    .or_default()
                    .entry(process)
                    .or_default()
                    .push(step);
            }
            _ => {}
        }
    }
    BrbEvents { broadcasts, deliveries }
}

fn brb_group<'m>(meta: &'m ScenarioMeta, object: &ObjectId) -> Option<&'m ObjectMeta> {
    meta.object(object)
}

/// Deliveries with a correct origin were actually broadcast by it.
pub fn check_brb_validity(meta: &ScenarioMeta, h: &History) -> Verdict {
    let ev = brb_events(h);
    let mut witness = Vec::new();
    for ((object, origin, digest), per_server) in &ev.deliveries {
        if !is_correct(meta, *origin) {
            continue;
        }
        let Some(group) = brb_group(meta, object) else { continue };
        let correct: BTreeSet<ProcessId> = meta.correct_servers_of(group).into_iter().collect();
        let broadcast = ev.broadcasts.get(&(object.clone(), *origin, *digest));
        for (server, steps) in per_server {
            if !correct.contains(server) {
                continue;
            }
            match broadcast {
                Some(b) if *b < steps[0] => {}
                _ => witness.push(format!(
                    "{server} delivered a message from correct origin {origin} that {origin} never broadcast (object {object})"
                )),
            }
        }
    }
    Verdict::from_witness("brb-validity", witness)
}

/// At most one delivery per (origin, payload) per correct process.
pub fn check_brb_integrity(meta: &ScenarioMeta, h: &History) -> Verdict {
    let ev = brb_events(h);
    let mut witness = Vec::new();
    for ((object, origin, _digest), per_server) in &ev.deliveries {
        for (server, steps) in per_server {
            if is_correct(meta, *server) && steps.len() > 1 {
                witness.push(format!(
                    "{server} delivered an instance of origin {origin} {} times (object {object})",
                    steps.len()
                ));
            }
        }
    }
    Verdict::from_witness("brb-integrity", witness)
}

/// A correct broadcaster delivers its own message.
pub fn check_brb_termination_local(meta: &ScenarioMeta, h: &History) -> Verdict {
    let ev = brb_events(h);
    let mut witness = Vec::new();
    for ((object, origin, digest), step) in &ev.broadcasts {
        if !is_correct(meta, *origin) {
            continue;
        }
        let delivered = ev
            .deliveries
            .get(&(object.clone(), *origin, *digest))
            .map(|per| per.contains_key(origin))
            .unwrap_or(false);
        if !delivered {
            witness.push(format!(
                "{origin} broadcast at step {step} but never delivered its own message (object {object})"
            ));
        }
    }
    Verdict::from_witness("brb-termination-local", witness)
}

/// Once any correct process delivers an instance, all correct group
/// members deliver it.
pub fn check_brb_termination_global(meta: &ScenarioMeta, h: &History) -> Verdict {
    let ev = brb_events(h);
    let mut witness = Vec::new();
    for ((object, origin, digest), per_server) in &ev.deliveries {
        let Some(group) = brb_group(meta, object) else { continue };
        let correct: Vec<ProcessId> = meta.correct_servers_of(group);
        let any_correct = per_server.keys().any(|s| is_correct(meta, *s));
        if !any_correct {
            continue;
        }
        for server in &correct {
            if !per_server.contains_key(server) {
                witness.push(format!(
                    "{server} missed instance (origin {origin}, digest {digest:#x}) of object {object}"
                ));
            }
        }
    }
    Verdict::from_witness("brb-termination-global", witness)
}
