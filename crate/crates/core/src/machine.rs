//! The event-driven interface every process implements.
//!
//! Servers, clients, broadcast nodes, and adversaries are all pure state
//! machines: the simulator feeds them one event at a time and collects the
//! effects. Waiting in the underlying protocol pseudocode becomes pending
//! state inside a machine; nothing blocks.

use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::auth::AuthTag;
use crate::ids::{ObjectId, ProcessId};
use crate::record::{b64, IndexedRecord, PairId, Record};
use crate::wire::WireMessage;

/// An operation a client (or broadcasting server) can be asked to perform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum OpSpec {
    GsetGet {
        object: ObjectId,
    },
    GsetAdd {
        object: ObjectId,
        record: Record,
    },
    SwGet {
        object: ObjectId,
    },
    SwAppend {
        object: ObjectId,
        #[serde(with = "b64")]
        payload: Vec<u8>,
    },
    /// `AtomicAppends(p, {p,q}, r_p, L_p, r_q)` where `p` is the invoking
    /// client.
    AtomicAppends {
        object: ObjectId,
        partner: ProcessId,
        own: Record,
        target: ObjectId,
        counterpart: Record,
    },
    AtomicAdds {
        object: ObjectId,
        partner: ProcessId,
        own: Record,
        target: ObjectId,
        counterpart: Record,
    },
    BrbBroadcast {
        object: ObjectId,
        #[serde(with = "b64")]
        payload: Vec<u8>,
    },
}

impl OpSpec {
    pub fn object(&self) -> &ObjectId {
        match self {
            OpSpec::GsetGet { object }
            | OpSpec::GsetAdd { object, .. }
            | OpSpec::SwGet { object }
            | OpSpec::SwAppend { object, .. }
            | OpSpec::AtomicAppends { object, .. }
            | OpSpec::AtomicAdds { object, .. }
            | OpSpec::BrbBroadcast { object, .. } => object,
        }
    }

    pub fn is_mutation(&self) -> bool {
        !matches!(self, OpSpec::GsetGet { .. } | OpSpec::SwGet { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reject {
    OperationInFlight,
    NotCreator,
    NotWriter,
    UnsupportedOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum OpResult {
    Ack,
    Records { records: Vec<Record> },
    Sequence { payloads: Vec<B64Bytes> },
    Rejected { reason: Reject },
}

/// Byte payloads that render as base64 in traces.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct B64Bytes(#[serde(with = "b64")] pub Vec<u8>);

/// Structured local emissions; these are what the checkers read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum Note {
    /// A replica admitted a record into its grow-only set.
    Inserted { object: ObjectId, record: Record },
    /// A ledger replica admitted an indexed record.
    SwInserted { object: ObjectId, record: IndexedRecord },
    /// A target ledger appended a record.
    Appended { object: ObjectId, record: Record },
    /// A correct process started a broadcast instance.
    BrbBroadcast { object: ObjectId, digest: u64 },
    /// A broadcast instance delivered at this process.
    BrbDelivered { object: ObjectId, origin: ProcessId, digest: u64 },
    /// Two distinct payload digests observed for one origin (diagnostic).
    EquivocationObserved { object: ObjectId, origin: ProcessId },
    /// A dispatcher server matched a pair and issued the target operations.
    Dispatched { object: ObjectId, pair: PairId, targets: (ObjectId, ObjectId) },
    /// A client collected enough notifications to consider its atomic
    /// operation completed.
    AtomicCompleted { pair: PairId },
    /// A response arriving late, twice, or with a stale counter was dropped.
    StaleDrop { object: ObjectId, c: u64, from: ProcessId },
    /// A message failed shape or sender validation and was ignored.
    Screened { reason: String },
    /// A matched pair named a target absent from the scenario registry.
    TargetUnknown { object: ObjectId },
}

/// What the simulator can feed a machine.
#[derive(Debug, Clone)]
pub enum MachineEvent {
    /// Delivered once to every machine before any scheduling happens.
    Start,
    /// The workload driver invokes an operation.
    Invoke(OpSpec),
    /// An authenticated, well-formed message arrived.
    Deliver { from: ProcessId, msg: WireMessage },
}

/// What a machine can do in response to an event.
#[derive(Debug, Clone)]
pub enum Effect {
    /// Send a message; the simulator encodes and signs it as this machine.
    Send { to: ProcessId, msg: WireMessage },
    /// Inject a raw envelope with an arbitrary claimed sender and tag.
    /// Only adversaries use this; the tag is not registered, so receivers
    /// reject it unless it replays a genuine signature.
    SendRaw { from: ProcessId, to: ProcessId, payload: Vec<u8>, tag: AuthTag },
    /// Complete the in-flight operation of this process.
    Respond(OpResult),
    Note(Note),
}

/// Effect sink plus this machine's deterministic randomness stream.
pub struct Ctx<'a> {
    pub effects: &'a mut Vec<Effect>,
    pub rng: &'a mut ChaCha12Rng,
}

impl<'a> Ctx<'a> {
    pub fn send(&mut self, to: ProcessId, msg: WireMessage) {
        self.effects.push(Effect::Send { to, msg });
    }

    pub fn respond(&mut self, result: OpResult) {
        self.effects.push(Effect::Respond(result));
    }

    pub fn note(&mut self, note: Note) {
        self.effects.push(Effect::Note(note));
    }
}

pub trait ProcessMachine {
    fn on_event(&mut self, ctx: &mut Ctx<'_>, ev: MachineEvent);
}
