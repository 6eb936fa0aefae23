//! Wire forms carried inside envelope payloads.
//!
//! Envelope payloads are canonical byte encodings of [`WireMessage`]. The
//! encoding is deterministic, which keeps payload digests (and therefore
//! broadcast instance keys and whole traces) reproducible across runs.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ids::{ObjectId, ProcessId};
use crate::record::{b64, IndexedRecord, PairId, Record};

/// Echo/ready broadcast traffic. `Init` carries no origin field: the origin
/// is the authenticated envelope sender. `Echo`/`Ready` relay the witnessed
/// origin and the full payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrbMsg {
    Init {
        object: ObjectId,
        #[serde(with = "b64")]
        payload: Vec<u8>,
    },
    Echo {
        object: ObjectId,
        origin: ProcessId,
        digest: u64,
        #[serde(with = "b64")]
        payload: Vec<u8>,
    },
    Ready {
        object: ObjectId,
        origin: ProcessId,
        digest: u64,
        #[serde(with = "b64")]
        payload: Vec<u8>,
    },
}

impl BrbMsg {
    pub fn object(&self) -> &ObjectId {
        match self {
            BrbMsg::Init { object, .. }
            | BrbMsg::Echo { object, .. }
            | BrbMsg::Ready { object, .. } => object,
        }
    }
}

/// The add request a server relays through the broadcast layer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AddTriple {
    pub c: u64,
    pub client: ProcessId,
    pub record: Record,
}

/// Ledger counterpart of [`AddTriple`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SwAddTriple {
    pub c: u64,
    pub writer: ProcessId,
    pub record: IndexedRecord,
}

/// What correct servers put inside a broadcast instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrbPayload {
    Propagate { origin: ProcessId, add: AddTriple },
    SwPropagate { origin: ProcessId, add: SwAddTriple },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireMessage {
    /// `get(c, p)`, used by both set and ledger clients.
    Get { object: ObjectId, c: u64, client: ProcessId },
    /// `getResp(c, i, S_i)` with a full replica snapshot.
    GetResp { object: ObjectId, c: u64, server: ProcessId, records: Vec<Record> },
    /// `add(c, p, r)`.
    Add { object: ObjectId, c: u64, client: ProcessId, record: Record },
    /// `addResp(c, i, ack)`.
    AddResp { object: ObjectId, c: u64, server: ProcessId },
    /// `add(c, w, r)` on a single-writer ledger.
    SwAdd { object: ObjectId, c: u64, writer: ProcessId, record: IndexedRecord },
    SwGetResp { object: ObjectId, c: u64, server: ProcessId, records: Vec<IndexedRecord> },
    SwAddResp { object: ObjectId, c: u64, server: ProcessId },
    /// Append request to a target ledger, issued by dispatcher servers
    /// acting as clients.
    Append { object: ObjectId, c: u64, client: ProcessId, record: Record },
    AppendResp { object: ObjectId, c: u64, server: ProcessId },
    /// Dispatcher-server notification that both records of a matched pair
    /// landed in their targets.
    Notify { object: ObjectId, pair: PairId, server: ProcessId },
    Brb(BrbMsg),
}

impl WireMessage {
    pub fn object(&self) -> &ObjectId {
        match self {
            WireMessage::Get { object, .. }
            | WireMessage::GetResp { object, .. }
            | WireMessage::Add { object, .. }
            | WireMessage::AddResp { object, .. }
            | WireMessage::SwAdd { object, .. }
            | WireMessage::SwGetResp { object, .. }
            | WireMessage::SwAddResp { object, .. }
            | WireMessage::Append { object, .. }
            | WireMessage::AppendResp { object, .. }
            | WireMessage::Notify { object, .. } => object,
            WireMessage::Brb(m) => m.object(),
        }
    }
}

pub fn encode_message(msg: &WireMessage) -> Vec<u8> {
    postcard::to_allocvec(msg).expect("wire encoding cannot fail")
}

pub fn decode_message(bytes: &[u8]) -> Option<WireMessage> {
    postcard::from_bytes(bytes).ok()
}

pub fn encode_brb_payload(p: &BrbPayload) -> Vec<u8> {
    postcard::to_allocvec(p).expect("payload encoding cannot fail")
}

pub fn decode_brb_payload(bytes: &[u8]) -> Option<BrbPayload> {
    postcard::from_bytes(bytes).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_determinism() {
        let msg = WireMessage::Add {
            object: ObjectId::new("GS"),
            c: 3,
            client: ProcessId::client(1),
            record: Record::new(ProcessId::client(1), b"r".to_vec()).unwrap(),
        };
        let a = encode_message(&msg);
        let b = encode_message(&msg);
        assert_eq!(a, b);
        assert_eq!(decode_message(&a), Some(msg));
    }

    #[test]
    fn garbage_decodes_to_none() {
        assert_eq!(decode_message(&[0xff, 0xfe, 0x00, 0x01]), None);
    }
}
