//! Records and the values built from them.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::auth::fnv1a64;
use crate::ids::ProcessId;

/// Upper bound on a record payload. The model places no bound; this keeps
/// traces bounded.
pub const MAX_PAYLOAD_LEN: usize = 64 * 1024;

/// Payloads render as base64 strings in traces and as raw bytes on the
/// wire.
pub mod b64 {
    use alloc::string::String;
    use alloc::vec::Vec;
    use core::fmt;

    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        if s.is_human_readable() {
            s.serialize_str(&STANDARD.encode(bytes))
        } else {
            s.serialize_bytes(bytes)
        }
    }

    struct BytesVisitor;

    impl<'de> de::Visitor<'de> for BytesVisitor {
        type Value = Vec<u8>;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a byte buffer")
        }

        fn visit_bytes<E: de::Error>(self, v: &[u8]) -> Result<Self::Value, E> {
            Ok(v.to_vec())
        }

        fn visit_byte_buf<E: de::Error>(self, v: Vec<u8>) -> Result<Self::Value, E> {
            Ok(v)
        }

        fn visit_seq<A: de::SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
            let mut out = Vec::with_capacity(seq.size_hint().unwrap_or(0));
            while let Some(b) = seq.next_element()? {
                out.push(b);
            }
            Ok(out)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        if d.is_human_readable() {
            let s = String::deserialize(d)?;
            STANDARD.decode(s).map_err(de::Error::custom)
        } else {
            d.deserialize_byte_buf(BytesVisitor)
        }
    }
}

/// An opaque content value paired with the identity of the process that
/// created it. Equality is by value, so two clients adding equal payloads
/// produce distinct records.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Record {
    pub creator: ProcessId,
    #[serde(with = "b64")]
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordError {
    EmptyPayload,
    PayloadTooLarge,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordError::EmptyPayload => write!(f, "record payload must be non-empty"),
            RecordError::PayloadTooLarge => {
                write!(f, "record payload exceeds {MAX_PAYLOAD_LEN} bytes")
            }
        }
    }
}

impl Record {
    pub fn new(creator: ProcessId, payload: Vec<u8>) -> Result<Self, RecordError> {
        if payload.is_empty() {
            return Err(RecordError::EmptyPayload);
        }
        if payload.len() > MAX_PAYLOAD_LEN {
            return Err(RecordError::PayloadTooLarge);
        }
        Ok(Record { creator, payload })
    }

    /// Within-bounds check for records received off the wire.
    pub fn is_well_formed(&self) -> bool {
        !self.payload.is_empty() && self.payload.len() <= MAX_PAYLOAD_LEN
    }

    /// Content fingerprint covering both creator and payload.
    pub fn digest(&self) -> u64 {
        let role = match self.creator.role {
            crate::ids::Role::Server => b'S',
            crate::ids::Role::Client => b'C',
        };
        let mut bytes = Vec::with_capacity(5 + self.payload.len());
        bytes.push(role);
        bytes.extend_from_slice(&self.creator.index.to_le_bytes());
        bytes.extend_from_slice(&self.payload);
        fnv1a64(&bytes)
    }
}

/// A grow-only set of records. Values are immutable; updates return fresh
/// values, so replicas can be snapshotted freely.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GSetValue {
    records: BTreeSet<Record>,
}

impl GSetValue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, r: &Record) -> bool {
        self.records.contains(r)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn with(&self, r: Record) -> GSetValue {
        let mut next = self.clone();
        next.records.insert(r);
        next
    }

    /// In-place insertion for replica state. Returns whether the set grew.
    pub fn insert(&mut self, r: Record) -> bool {
        self.records.insert(r)
    }

    pub fn is_subset(&self, other: &GSetValue) -> bool {
        self.records.is_subset(&other.records)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Record> {
        self.records.iter()
    }

    /// Records in canonical (sorted) order, as sent in get responses.
    pub fn to_vec(&self) -> Vec<Record> {
        self.records.iter().cloned().collect()
    }
}

impl FromIterator<Record> for GSetValue {
    fn from_iter<T: IntoIterator<Item = Record>>(iter: T) -> Self {
        GSetValue { records: iter.into_iter().collect() }
    }
}

/// An append-only sequence of record payloads.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LedgerValue {
    entries: Vec<Vec<u8>>,
}

impl LedgerValue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with(&self, payload: Vec<u8>) -> LedgerValue {
        let mut next = self.clone();
        next.entries.push(payload);
        next
    }

    pub fn entries(&self) -> &[Vec<u8>] {
        &self.entries
    }

    pub fn is_prefix_of(&self, other: &LedgerValue) -> bool {
        self.entries.len() <= other.entries.len()
            && self.entries[..] == other.entries[..self.entries.len()]
    }
}

impl FromIterator<Vec<u8>> for LedgerValue {
    fn from_iter<T: IntoIterator<Item = Vec<u8>>>(iter: T) -> Self {
        LedgerValue { entries: iter.into_iter().collect() }
    }
}

/// A ledger record: 1-based position plus payload.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IndexedRecord {
    pub k: u64,
    #[serde(with = "b64")]
    pub rho: Vec<u8>,
}

impl IndexedRecord {
    pub fn new(k: u64, rho: Vec<u8>) -> Self {
        IndexedRecord { k, rho }
    }

    pub fn is_well_formed(&self) -> bool {
        self.k >= 1 && !self.rho.is_empty() && self.rho.len() <= MAX_PAYLOAD_LEN
    }

    pub fn digest(&self) -> u64 {
        let mut bytes = Vec::with_capacity(8 + self.rho.len());
        bytes.extend_from_slice(&self.k.to_le_bytes());
        bytes.extend_from_slice(&self.rho);
        fnv1a64(&bytes)
    }
}

/// Identity of a matched pair of atomic-request records: the unordered pair
/// of the two record digests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairId(pub u64, pub u64);

impl PairId {
    pub fn of(a: u64, b: u64) -> Self {
        if a <= b {
            PairId(a, b)
        } else {
            PairId(b, a)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(creator: ProcessId, payload: &[u8]) -> Record {
        Record::new(creator, payload.to_vec()).unwrap()
    }

    #[test]
    fn equality_includes_creator() {
        let a = rec(ProcessId::client(0), b"x");
        let b = rec(ProcessId::client(1), b"x");
        assert_ne!(a, b);
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn payload_bounds() {
        assert_eq!(
            Record::new(ProcessId::client(0), Vec::new()),
            Err(RecordError::EmptyPayload)
        );
        let big = alloc::vec![0u8; MAX_PAYLOAD_LEN + 1];
        assert_eq!(
            Record::new(ProcessId::client(0), big),
            Err(RecordError::PayloadTooLarge)
        );
    }

    #[test]
    fn gset_never_holds_duplicates() {
        let r = rec(ProcessId::client(0), b"a");
        let v = GSetValue::new().with(r.clone()).with(r.clone());
        assert_eq!(v.len(), 1);
        assert!(v.contains(&r));
    }

    #[test]
    fn record_trace_shape() {
        let r = rec(ProcessId::server(3), b"hi");
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(json, r#"{"creator":"S3","payload":"aGk="}"#);
        let back: Record = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn indexed_record_trace_shape() {
        let r = IndexedRecord::new(2, b"hi".to_vec());
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(json, r#"{"k":2,"rho":"aGk="}"#);
    }

    #[test]
    fn pair_id_is_unordered() {
        assert_eq!(PairId::of(9, 2), PairId::of(2, 9));
    }
}
