//! Byzantine process behaviours, each a drop-in state machine.
//!
//! Every adversary draws its choices from the scenario's seeded stream, so
//! runs stay reproducible. None of them can exceed the model: forged tags
//! never verify and the network neither loses nor tampers with envelopes.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::auth::{fnv1a64, AuthTag};
use crate::ids::{ObjectId, ProcessId};
use crate::machine::{Ctx, Effect, MachineEvent, Note, OpResult, OpSpec, ProcessMachine};
use crate::record::{IndexedRecord, Record};
use crate::wire::{encode_brb_payload, encode_message, BrbMsg, BrbPayload, SwAddTriple, WireMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AdversaryKind {
    /// Never sends anything; a client variant also swallows invocations.
    CrashSilent,
    /// Participates correctly but answers gets with an old snapshot.
    StaleResponder,
    /// Answers gets with fabricated records mixed into the snapshot.
    SpuriousSet,
    /// Splits its own broadcast instances into two payload variants across
    /// the group.
    EquivocatingBrbOrigin,
    /// Relays adds that no client requested (and, optionally, relays every
    /// received add ignoring the per-index filter).
    SpuriousPropagator,
    /// A writer that reuses indices with conflicting payloads.
    IndexEquivocatingWriter,
    /// Acks its atomic operation locally but never issues the request.
    SilentAtomicPartner,
    /// Emits envelopes with fabricated authenticity tags.
    ForgeAttempter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Str(String),
}

pub type Params = BTreeMap<String, ParamValue>;

pub fn param_bool(params: &Params, key: &str, default: bool) -> bool {
    match params.get(key) {
        Some(ParamValue::Bool(b)) => *b,
        _ => default,
    }
}

pub fn param_usize(params: &Params, key: &str, default: usize) -> usize {
    match params.get(key) {
        Some(ParamValue::Int(i)) if *i >= 0 => *i as usize,
        _ => default,
    }
}

fn param_str<'a>(params: &'a Params, key: &str, default: &'a str) -> &'a str {
    match params.get(key) {
        Some(ParamValue::Str(s)) => s.as_str(),
        _ => default,
    }
}

/// What an adversary may know about its surroundings. Topology is public
/// in the model; private state of other processes is not represented.
#[derive(Debug, Clone)]
pub struct AdversaryEnv {
    pub object: ObjectId,
    pub group: Vec<ProcessId>,
    pub clients: Vec<ProcessId>,
    pub writer: Option<ProcessId>,
    /// Ledger-flavoured object (relay payloads differ).
    pub is_ledger: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuildError {
    KindRoleMismatch { kind: AdversaryKind, id: ProcessId },
}

impl core::fmt::Display for BuildError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            BuildError::KindRoleMismatch { kind, id } => {
                write!(f, "adversary {kind:?} cannot run as {id}")
            }
        }
    }
}

/// Build the machine for one Byzantine process. `inner` is the correct
/// machine this process would otherwise run; kinds that deviate only in
/// places wrap it.
pub fn make_adversary(
    kind: AdversaryKind,
    params: &Params,
    id: ProcessId,
    inner: Option<Box<dyn ProcessMachine>>,
    env: AdversaryEnv,
) -> Result<Box<dyn ProcessMachine>, BuildError> {
    let mismatch = || BuildError::KindRoleMismatch { kind, id };
    let withhold = Withholding {
        echo: param_bool(params, "withhold_echo", false),
        ready: param_bool(params, "withhold_ready", false),
    };
    let need_inner = |inner: Option<Box<dyn ProcessMachine>>| inner.ok_or_else(mismatch);
    match kind {
        AdversaryKind::CrashSilent => Ok(Box::new(CrashSilent)),
        AdversaryKind::StaleResponder => {
            if !id.is_server() {
                return Err(mismatch());
            }
            Ok(Box::new(StaleResponder {
                inner: need_inner(inner)?,
                object: env.object,
                keep: param_usize(params, "stale_keep", 0),
                seen: Vec::new(),
                seen_indexed: Vec::new(),
                withhold,
            }))
        }
        AdversaryKind::SpuriousSet => {
            if !id.is_server() {
                return Err(mismatch());
            }
            Ok(Box::new(SpuriousSet {
                inner: need_inner(inner)?,
                me: id,
                clients: env.clients,
                count: param_usize(params, "count", 1),
                withhold,
            }))
        }
        AdversaryKind::EquivocatingBrbOrigin => {
            if !id.is_server() {
                return Err(mismatch());
            }
            Ok(Box::new(EquivocatingBrbOrigin {
                inner: need_inner(inner)?,
                me: id,
                group: env.group,
                withhold,
            }))
        }
        AdversaryKind::SpuriousPropagator => {
            if !id.is_server() {
                return Err(mismatch());
            }
            Ok(Box::new(SpuriousPropagator {
                inner: need_inner(inner)?,
                me: id,
                env,
                fabricate: param_usize(params, "fabricate", 1),
                forward_all: param_bool(params, "forward_all", false),
                withhold,
            }))
        }
        AdversaryKind::IndexEquivocatingWriter => {
            if !id.is_client() || env.writer != Some(id) {
                return Err(mismatch());
            }
            let mode = match param_str(params, "mode", "dual_all") {
                "dual_halves" => EquivMode::DualHalves,
                "reuse_index" => EquivMode::ReuseIndex,
                _ => EquivMode::DualAll,
            };
            Ok(Box::new(IndexEquivocatingWriter {
                me: id,
                object: env.object,
                servers: env.group,
                mode,
                c: 0,
                k: 0,
            }))
        }
        AdversaryKind::SilentAtomicPartner => {
            if !id.is_client() {
                return Err(mismatch());
            }
            Ok(Box::new(SilentAtomicPartner))
        }
        AdversaryKind::ForgeAttempter => Ok(Box::new(ForgeAttempter {
            inner: need_inner(inner)?,
            me: id,
            env,
            count: param_usize(params, "count", 2),
            withhold,
        })),
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Withholding {
    echo: bool,
    ready: bool,
}

impl Withholding {
    fn keeps(&self, effect: &Effect) -> bool {
        match effect {
            Effect::Send { msg: WireMessage::Brb(BrbMsg::Echo { .. }), .. } => !self.echo,
            Effect::Send { msg: WireMessage::Brb(BrbMsg::Ready { .. }), .. } => !self.ready,
            _ => true,
        }
    }
}

fn run_inner(inner: &mut Box<dyn ProcessMachine>, ctx: &mut Ctx<'_>, ev: MachineEvent) -> Vec<Effect> {
    let mut effects = Vec::new();
    let mut inner_ctx = Ctx { effects: &mut effects, rng: &mut *ctx.rng };
    inner.on_event(&mut inner_ctx, ev);
    effects
}

fn fabricate_record(rng: &mut ChaCha12Rng, clients: &[ProcessId], me: ProcessId) -> Record {
    let creator = if clients.is_empty() {
        me
    } else {
        clients[rng.random_range(0..clients.len())]
    };
    let payload = format!("fab-{:016x}", rng.random::<u64>());
    Record { creator, payload: payload.into_bytes() }
}

struct CrashSilent;

impl ProcessMachine for CrashSilent {
    fn on_event(&mut self, _ctx: &mut Ctx<'_>, _ev: MachineEvent) {}
}

struct SilentAtomicPartner;

impl ProcessMachine for SilentAtomicPartner {
    fn on_event(&mut self, ctx: &mut Ctx<'_>, ev: MachineEvent) {
        if let MachineEvent::Invoke(_) = ev {
            // pretends locally that the operation happened
            ctx.respond(OpResult::Ack);
        }
    }
}

struct StaleResponder {
    inner: Box<dyn ProcessMachine>,
    object: ObjectId,
    keep: usize,
    seen: Vec<Record>,
    seen_indexed: Vec<IndexedRecord>,
    withhold: Withholding,
}

impl ProcessMachine for StaleResponder {
    fn on_event(&mut self, ctx: &mut Ctx<'_>, ev: MachineEvent) {
        for effect in run_inner(&mut self.inner, ctx, ev) {
            if !self.withhold.keeps(&effect) {
                continue;
            }
            match effect {
                Effect::Note(Note::Inserted { ref object, ref record }) if *object == self.object => {
                    self.seen.push(record.clone());
                    ctx.effects.push(effect);
                }
                Effect::Note(Note::SwInserted { ref object, ref record }) if *object == self.object => {
                    self.seen_indexed.push(record.clone());
                    ctx.effects.push(effect);
                }
                Effect::Send { to, msg: WireMessage::GetResp { object, c, server, .. } } => {
                    let mut stale: Vec<Record> = self.seen.iter().take(self.keep).cloned().collect();
                    stale.sort();
                    ctx.send(to, WireMessage::GetResp { object, c, server, records: stale });
                }
                Effect::Send { to, msg: WireMessage::SwGetResp { object, c, server, .. } } => {
                    let mut stale: Vec<IndexedRecord> =
                        self.seen_indexed.iter().take(self.keep).cloned().collect();
                    stale.sort();
                    ctx.send(to, WireMessage::SwGetResp { object, c, server, records: stale });
                }
                other => ctx.effects.push(other),
            }
        }
    }
}

struct SpuriousSet {
    inner: Box<dyn ProcessMachine>,
    me: ProcessId,
    clients: Vec<ProcessId>,
    count: usize,
    withhold: Withholding,
}

impl ProcessMachine for SpuriousSet {
    fn on_event(&mut self, ctx: &mut Ctx<'_>, ev: MachineEvent) {
        for effect in run_inner(&mut self.inner, ctx, ev) {
            if !self.withhold.keeps(&effect) {
                continue;
            }
            match effect {
                Effect::Send { to, msg: WireMessage::GetResp { object, c, server, mut records } } => {
                    for _ in 0..self.count {
                        records.push(fabricate_record(ctx.rng, &self.clients, self.me));
                    }
                    records.sort();
                    ctx.send(to, WireMessage::GetResp { object, c, server, records });
                }
                other => ctx.effects.push(other),
            }
        }
    }
}

struct EquivocatingBrbOrigin {
    inner: Box<dyn ProcessMachine>,
    me: ProcessId,
    group: Vec<ProcessId>,
    withhold: Withholding,
}

impl ProcessMachine for EquivocatingBrbOrigin {
    fn on_event(&mut self, ctx: &mut Ctx<'_>, ev: MachineEvent) {
        let effects = run_inner(&mut self.inner, ctx, ev);
        // collect this step's own INIT payloads; each distinct payload is
        // one instance the inner machine tried to start
        let mut split_payloads: Vec<(ObjectId, Vec<u8>)> = Vec::new();
        for effect in effects {
            if !self.withhold.keeps(&effect) {
                continue;
            }
            match effect {
                Effect::Send { msg: WireMessage::Brb(BrbMsg::Init { object, payload }), .. } => {
                    if !split_payloads.iter().any(|(_, p)| *p == payload) {
                        split_payloads.push((object, payload));
                    }
                }
                // the broadcast never happened as announced
                Effect::Note(Note::BrbBroadcast { .. }) => {}
                other => ctx.effects.push(other),
            }
        }
        for (object, payload) in split_payloads {
            let mut variant_a = payload.clone();
            variant_a.push(0xEA);
            let mut variant_b = payload;
            variant_b.push(0xEB);
            let mut order = self.group.clone();
            // deterministic shuffle so the halves vary across seeds
            for i in (1..order.len()).rev() {
                order.swap(i, ctx.rng.random_range(0..=i));
            }
            let half = order.len().div_ceil(2);
            for (idx, &to) in order.iter().enumerate() {
                let payload = if idx < half { variant_a.clone() } else { variant_b.clone() };
                ctx.send(to, WireMessage::Brb(BrbMsg::Init { object: object.clone(), payload }));
            }
            // sees both of its own variants, so it can support either
            ctx.send(self.me, WireMessage::Brb(BrbMsg::Init { object: object.clone(), payload: variant_a }));
            ctx.send(self.me, WireMessage::Brb(BrbMsg::Init { object, payload: variant_b }));
        }
    }
}

struct SpuriousPropagator {
    inner: Box<dyn ProcessMachine>,
    me: ProcessId,
    env: AdversaryEnv,
    fabricate: usize,
    forward_all: bool,
    withhold: Withholding,
}

impl SpuriousPropagator {
    fn broadcast_payload(&self, ctx: &mut Ctx<'_>, payload: Vec<u8>) {
        for &to in &self.env.group {
            ctx.send(
                to,
                WireMessage::Brb(BrbMsg::Init { object: self.env.object.clone(), payload: payload.clone() }),
            );
        }
    }
}

impl ProcessMachine for SpuriousPropagator {
    fn on_event(&mut self, ctx: &mut Ctx<'_>, ev: MachineEvent) {
        if let MachineEvent::Start = ev {
            for i in 0..self.fabricate {
                let payload = if self.env.is_ledger {
                    let writer = self.env.writer.unwrap_or(self.me);
                    let record = IndexedRecord::new(
                        1_000_000 + i as u64,
                        format!("fab-{:016x}", ctx.rng.random::<u64>()).into_bytes(),
                    );
                    encode_brb_payload(&BrbPayload::SwPropagate {
                        origin: self.me,
                        add: SwAddTriple { c: 1_000_000 + i as u64, writer, record },
                    })
                } else {
                    let record = fabricate_record(ctx.rng, &self.env.clients, self.me);
                    encode_brb_payload(&BrbPayload::Propagate {
                        origin: self.me,
                        add: crate::wire::AddTriple {
                            c: 1_000_000 + i as u64,
                            client: record.creator,
                            record,
                        },
                    })
                };
                self.broadcast_payload(ctx, payload);
            }
        }
        // relay every received ledger add regardless of the index filter
        if self.forward_all {
            if let MachineEvent::Deliver {
                msg: WireMessage::SwAdd { object, c, writer, record }, ..
            } = &ev
            {
                if *object == self.env.object {
                    let payload = encode_brb_payload(&BrbPayload::SwPropagate {
                        origin: self.me,
                        add: SwAddTriple { c: *c, writer: *writer, record: record.clone() },
                    });
                    self.broadcast_payload(ctx, payload);
                }
            }
        }
        for effect in run_inner(&mut self.inner, ctx, ev) {
            if self.withhold.keeps(&effect) {
                ctx.effects.push(effect);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum EquivMode {
    /// Both payload variants of every index go to every server; which one
    /// a server relays depends on arrival order.
    DualAll,
    /// Variant per half of the group.
    DualHalves,
    /// Every append reuses index 1.
    ReuseIndex,
}

struct IndexEquivocatingWriter {
    me: ProcessId,
    object: ObjectId,
    servers: Vec<ProcessId>,
    mode: EquivMode,
    c: u64,
    k: u64,
}

impl ProcessMachine for IndexEquivocatingWriter {
    fn on_event(&mut self, ctx: &mut Ctx<'_>, ev: MachineEvent) {
        let MachineEvent::Invoke(op) = ev else {
            return; // acks and responses are of no interest
        };
        let OpSpec::SwAppend { object, payload } = op else {
            ctx.respond(OpResult::Ack);
            return;
        };
        if object != self.object {
            ctx.respond(OpResult::Ack);
            return;
        }
        let k = match self.mode {
            EquivMode::ReuseIndex => 1,
            _ => {
                self.k += 1;
                self.k
            }
        };
        let mut variant_a = payload.clone();
        variant_a.extend_from_slice(b"/a");
        let mut variant_b = payload;
        variant_b.extend_from_slice(b"/b");
        match self.mode {
            EquivMode::DualAll | EquivMode::ReuseIndex => {
                for variant in [variant_a, variant_b] {
                    self.c += 1;
                    let record = IndexedRecord::new(k, variant);
                    for &to in &self.servers {
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
                }
            }
            EquivMode::DualHalves => {
                let half = self.servers.len().div_ceil(2);
                for (idx, variant) in [variant_a, variant_b].into_iter().enumerate() {
                    self.c += 1;
                    let record = IndexedRecord::new(k, variant);
                    let targets: &[ProcessId] =
                        if idx == 0 { &self.servers[..half] } else { &self.servers[half..] };
                    for &to in targets {
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
                }
            }
        }
        // the workload driver moves on; completion is not the point here
        ctx.respond(OpResult::Ack);
    }
}

struct ForgeAttempter {
    inner: Box<dyn ProcessMachine>,
    me: ProcessId,
    env: AdversaryEnv,
    count: usize,
    withhold: Withholding,
}

impl ProcessMachine for ForgeAttempter {
    fn on_event(&mut self, ctx: &mut Ctx<'_>, ev: MachineEvent) {
        if let MachineEvent::Start = ev {
            let mut everyone: Vec<ProcessId> = self.env.group.clone();
            everyone.extend(self.env.clients.iter().copied());
            everyone.retain(|p| *p != self.me);
            for i in 0..self.count {
                if everyone.is_empty() {
                    break;
                }
                let victim = everyone[ctx.rng.random_range(0..everyone.len())];
                let to = everyone[ctx.rng.random_range(0..everyone.len())];
                let msg = WireMessage::AddResp { object: self.env.object.clone(), c: 1, server: victim };
                let payload = encode_message(&msg);
                let digest = fnv1a64(&payload);
                // even-numbered attempts carry a consistent digest that was
                // simply never signed; odd ones do not even match the payload
                let tag = AuthTag { signer: victim, digest: if i % 2 == 0 { digest } else { digest ^ 1 } };
                ctx.effects.push(Effect::SendRaw { from: victim, to, payload, tag });
            }
        }
        for effect in run_inner(&mut self.inner, ctx, ev) {
            if self.withhold.keeps(&effect) {
                ctx.effects.push(effect);
            }
        }
    }
}
