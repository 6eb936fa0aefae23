//! Echo/ready reliable broadcast among a fixed server group.
//!
//! The surrounding protocols treat broadcast as a service with four
//! properties: validity, integrity, and two termination clauses (a correct
//! broadcaster delivers its own message; once any correct process delivers,
//! every correct process does). This realizes them signature-free for
//! `n >= 3f+1`:
//!
//! * the origin sends `INIT` to all group members,
//! * `ceil((n+f+1)/2)` matching echoes trigger one `READY`,
//! * `f+1` matching readies also trigger a `READY` (amplification),
//! * `2f+1` matching readies deliver the payload, exactly once.
//!
//! Instances are keyed by `(origin, payload digest)`, so re-broadcasting an
//! identical payload collapses into the same instance.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::auth::fnv1a64;
use crate::ids::{ObjectId, ProcessId};
use crate::wire::BrbMsg;

#[derive(Debug, Clone)]
pub struct BrbConfig {
    pub object: ObjectId,
    pub me: ProcessId,
    pub group: Vec<ProcessId>,
    pub f: usize,
}

impl BrbConfig {
    pub fn n(&self) -> usize {
        self.group.len()
    }

    pub fn echo_quorum(&self) -> usize {
        // ceil((n + f + 1) / 2)
        (self.n() + self.f + 2) / 2
    }

    pub fn ready_amplify(&self) -> usize {
        self.f + 1
    }

    pub fn deliver_quorum(&self) -> usize {
        2 * self.f + 1
    }
}

#[derive(Debug, Clone, Default)]
struct InstanceState {
    echoed: bool,
    readied: bool,
    delivered: bool,
    echo_senders: BTreeSet<ProcessId>,
    ready_senders: BTreeSet<ProcessId>,
    payload: Option<Vec<u8>>,
}

/// A payload that crossed the delivery threshold at this process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub origin: ProcessId,
    pub digest: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Default)]
pub struct StepOutput {
    pub outbound: Vec<(ProcessId, BrbMsg)>,
    pub deliveries: Vec<Delivery>,
    /// Set when this message revealed a second distinct digest for an
    /// origin. Diagnostic only; the instance table already isolates the
    /// payloads.
    pub equivocation: Option<ProcessId>,
}

#[derive(Debug)]
pub struct BrbEngine {
    cfg: BrbConfig,
    instances: BTreeMap<(ProcessId, u64), InstanceState>,
    digests_per_origin: BTreeMap<ProcessId, BTreeSet<u64>>,
}

impl BrbEngine {
    pub fn new(cfg: BrbConfig) -> Self {
        BrbEngine { cfg, instances: BTreeMap::new(), digests_per_origin: BTreeMap::new() }
    }

    pub fn config(&self) -> &BrbConfig {
        &self.cfg
    }

    /// Start an instance with this process as origin: `INIT` to the whole
    /// group, self included. Returns the instance digest.
    pub fn broadcast(&mut self, payload: Vec<u8>, out: &mut StepOutput) -> u64 {
        let digest = fnv1a64(&payload);
        for &to in &self.cfg.group {
            out.outbound.push((
                to,
                BrbMsg::Init { object: self.cfg.object.clone(), payload: payload.clone() },
            ));
        }
        digest
    }

    pub fn on_message(&mut self, from: ProcessId, msg: BrbMsg, out: &mut StepOutput) {
        if !self.cfg.group.contains(&from) {
            return; // only group members participate
        }
        let echo_q = self.cfg.echo_quorum();
        let amplify = self.cfg.ready_amplify();
        let deliver_q = self.cfg.deliver_quorum();
        match msg {
            BrbMsg::Init { object, payload } => {
                if object != self.cfg.object {
                    return;
                }
                let digest = fnv1a64(&payload);
                self.track_origin(from, digest, out);
                let inst = self.instances.entry((from, digest)).or_default();
                if inst.payload.is_none() {
                    inst.payload = Some(payload.clone());
                }
                if !inst.echoed {
                    inst.echoed = true;
                    let echo = BrbMsg::Echo {
                        object: self.cfg.object.clone(),
                        origin: from,
                        digest,
                        payload,
                    };
                    for &to in &self.cfg.group {
                        out.outbound.push((to, echo.clone()));
                    }
                }
            }
            BrbMsg::Echo { object, origin, digest, payload } => {
                if object != self.cfg.object || fnv1a64(&payload) != digest {
                    return;
                }
                self.track_origin(origin, digest, out);
                let key = (origin, digest);
                let ready_now = {
                    let inst = self.instances.entry(key).or_default();
                    if inst.payload.is_none() {
                        inst.payload = Some(payload);
                    }
                    inst.echo_senders.insert(from);
                    inst.echo_senders.len() >= echo_q && !inst.readied
                };
                if ready_now {
                    self.send_ready(key, out);
                }
            }
            BrbMsg::Ready { object, origin, digest, payload } => {
                if object != self.cfg.object || fnv1a64(&payload) != digest {
                    return;
                }
                self.track_origin(origin, digest, out);
                let key = (origin, digest);
                let (ready_now, delivery) = {
                    let inst = self.instances.entry(key).or_default();
                    if inst.payload.is_none() {
                        inst.payload = Some(payload);
                    }
                    inst.ready_senders.insert(from);
                    let ready_now = inst.ready_senders.len() >= amplify && !inst.readied;
                    let deliver_now = inst.ready_senders.len() >= deliver_q && !inst.delivered;
                    let delivery = deliver_now.then(|| {
                        inst.delivered = true;
                        Delivery {
                            origin,
                            digest,
                            payload: inst.payload.clone().expect("payload learned"),
                        }
                    });
                    (ready_now, delivery)
                };
                if ready_now {
                    self.send_ready(key, out);
                }
                if let Some(d) = delivery {
                    out.deliveries.push(d);
                }
            }
        }
    }

    fn send_ready(&mut self, key: (ProcessId, u64), out: &mut StepOutput) {
        let inst = self.instances.get_mut(&key).expect("instance exists");
        inst.readied = true;
        let ready = BrbMsg::Ready {
            object: self.cfg.object.clone(),
            origin: key.0,
            digest: key.1,
            payload: inst.payload.clone().expect("payload learned before ready"),
        };
        for &to in &self.cfg.group {
            out.outbound.push((to, ready.clone()));
        }
    }

    fn track_origin(&mut self, origin: ProcessId, digest: u64, out: &mut StepOutput) {
        let set = self.digests_per_origin.entry(origin).or_default();
        if set.insert(digest) && set.len() == 2 {
            out.equivocation = Some(origin);
        }
    }
}

/// A standalone broadcast participant, used by scenarios that exercise the
/// broadcast layer directly.
#[derive(Debug)]
pub struct NodeMachine {
    engine: BrbEngine,
}

impl NodeMachine {
    pub fn new(me: ProcessId, object: ObjectId, group: Vec<ProcessId>, f: usize) -> Self {
        NodeMachine { engine: BrbEngine::new(BrbConfig { object, me, group, f }) }
    }

    fn apply(&mut self, ctx: &mut crate::machine::Ctx<'_>, out: StepOutput) {
        let object = self.engine.config().object.clone();
        if let Some(origin) = out.equivocation {
            ctx.note(crate::machine::Note::EquivocationObserved { object: object.clone(), origin });
        }
        for (to, m) in out.outbound {
            ctx.send(to, crate::wire::WireMessage::Brb(m));
        }
        for d in out.deliveries {
            ctx.note(crate::machine::Note::BrbDelivered {
                object: object.clone(),
                origin: d.origin,
                digest: d.digest,
            });
        }
    }
}

impl crate::machine::ProcessMachine for NodeMachine {
    fn on_event(&mut self, ctx: &mut crate::machine::Ctx<'_>, ev: crate::machine::MachineEvent) {
        use crate::machine::{MachineEvent, Note, OpResult, OpSpec};
        match ev {
            MachineEvent::Start => {}
            MachineEvent::Invoke(OpSpec::BrbBroadcast { object, payload })
                if object == self.engine.config().object =>
            {
                let mut out = StepOutput::default();
                let digest = self.engine.broadcast(payload, &mut out);
                ctx.note(Note::BrbBroadcast { object, digest });
                self.apply(ctx, out);
                ctx.respond(OpResult::Ack);
            }
            MachineEvent::Invoke(_) => ctx.respond(OpResult::Rejected {
                reason: crate::machine::Reject::UnsupportedOp,
            }),
            MachineEvent::Deliver { from, msg } => {
                if let crate::wire::WireMessage::Brb(m) = msg {
                    if m.object() == &self.engine.config().object {
                        let mut out = StepOutput::default();
                        self.engine.on_message(from, m, &mut out);
                        self.apply(ctx, out);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cfg(me: u32, n: u32, f: usize) -> BrbConfig {
        BrbConfig {
            object: ObjectId::new("B"),
            me: ProcessId::server(me),
            group: (0..n).map(ProcessId::server).collect(),
            f,
        }
    }

    #[test]
    fn thresholds_for_n4_f1() {
        let c = cfg(0, 4, 1);
        assert_eq!(c.echo_quorum(), 3);
        assert_eq!(c.ready_amplify(), 2);
        assert_eq!(c.deliver_quorum(), 3);
    }

    #[test]
    fn broadcast_fans_out_to_all() {
        let mut eng = BrbEngine::new(cfg(0, 4, 1));
        let mut out = StepOutput::default();
        eng.broadcast(b"m".to_vec(), &mut out);
        assert_eq!(out.outbound.len(), 4);
        assert!(out.outbound.iter().all(|(_, m)| matches!(m, BrbMsg::Init { .. })));
    }

    #[test]
    fn duplicate_echo_is_ignored() {
        let mut eng = BrbEngine::new(cfg(0, 4, 1));
        let origin = ProcessId::server(1);
        let payload = b"m".to_vec();
        let digest = fnv1a64(&payload);
        let echo = |from: u32| {
            (
                ProcessId::server(from),
                BrbMsg::Echo {
                    object: ObjectId::new("B"),
                    origin,
                    digest,
                    payload: payload.clone(),
                },
            )
        };
        let mut out = StepOutput::default();
        let (f1, m1) = echo(2);
        eng.on_message(f1, m1.clone(), &mut out);
        eng.on_message(f1, m1, &mut out);
        let (f2, m2) = echo(3);
        eng.on_message(f2, m2, &mut out);
        // two distinct echoers < quorum of 3: no ready yet
        assert!(out.outbound.is_empty());
        let (f3, m3) = echo(0);
        eng.on_message(f3, m3, &mut out);
        assert_eq!(out.outbound.len(), 4); // ready to all
        assert!(out.outbound.iter().all(|(_, m)| matches!(m, BrbMsg::Ready { .. })));
    }

    #[test]
    fn delivers_exactly_once_at_ready_quorum() {
        let mut eng = BrbEngine::new(cfg(0, 4, 1));
        let origin = ProcessId::server(1);
        let payload = b"m".to_vec();
        let digest = fnv1a64(&payload);
        let mut out = StepOutput::default();
        for from in [1u32, 2, 3, 0] {
            eng.on_message(
                ProcessId::server(from),
                BrbMsg::Ready {
                    object: ObjectId::new("B"),
                    origin,
                    digest,
                    payload: payload.clone(),
                },
                &mut out,
            );
        }
        assert_eq!(out.deliveries.len(), 1);
        assert_eq!(out.deliveries[0], Delivery { origin, digest, payload });
    }

    #[test]
    fn mismatched_digest_is_dropped() {
        let mut eng = BrbEngine::new(cfg(0, 4, 1));
        let mut out = StepOutput::default();
        eng.on_message(
            ProcessId::server(1),
            BrbMsg::Echo {
                object: ObjectId::new("B"),
                origin: ProcessId::server(1),
                digest: 0xbad,
                payload: vec![1, 2, 3],
            },
            &mut out,
        );
        assert!(out.outbound.is_empty());
        assert!(eng.instances.is_empty());
    }

    #[test]
    fn second_digest_flags_equivocation() {
        let mut eng = BrbEngine::new(cfg(0, 4, 1));
        let origin = ProcessId::server(1);
        let mut out = StepOutput::default();
        eng.on_message(
            origin,
            BrbMsg::Init { object: ObjectId::new("B"), payload: b"a".to_vec() },
            &mut out,
        );
        assert_eq!(out.equivocation, None);
        eng.on_message(
            origin,
            BrbMsg::Init { object: ObjectId::new("B"), payload: b"b".to_vec() },
            &mut out,
        );
        assert_eq!(out.equivocation, Some(origin));
    }
}
