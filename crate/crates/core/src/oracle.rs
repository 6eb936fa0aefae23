//! Sequential reference oracles.
//!
//! These are the ground truth the checkers replay histories against. They
//! must stay independent of the replicated implementations.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::record::{GSetValue, LedgerValue, Record};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GSetOp {
    Get,
    Add(Record),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GSetOutcome {
    Set(BTreeSet<Record>),
    Ack,
}

/// One step of the G-Set sequential specification: a get returns the
/// current value unchanged, an add unions the record in and acks.
pub fn seq_gset_apply(state: &GSetValue, op: &GSetOp) -> (GSetValue, GSetOutcome) {
    match op {
        GSetOp::Get => (
            state.clone(),
            GSetOutcome::Set(state.iter().cloned().collect()),
        ),
        GSetOp::Add(r) => (state.with(r.clone()), GSetOutcome::Ack),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LedgerOp {
    Get,
    Append(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LedgerOutcome {
    Sequence(Vec<Vec<u8>>),
    Ack,
}

/// One step of the ledger sequential specification: a get returns the full
/// sequence, an append concatenates.
pub fn seq_ledger_apply(state: &LedgerValue, op: &LedgerOp) -> (LedgerValue, LedgerOutcome) {
    match op {
        LedgerOp::Get => (
            state.clone(),
            LedgerOutcome::Sequence(state.entries().to_vec()),
        ),
        LedgerOp::Append(p) => (state.with(p.clone()), LedgerOutcome::Ack),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::ProcessId;
    use proptest::prelude::*;

    fn rec(tag: u8) -> Record {
        Record::new(ProcessId::client(0), alloc::vec![tag]).unwrap()
    }

    #[test]
    fn gset_examples() {
        let empty = GSetValue::new();
        // get on the empty set returns the empty set
        let (s, out) = seq_gset_apply(&empty, &GSetOp::Get);
        assert_eq!(s, empty);
        assert_eq!(out, GSetOutcome::Set(BTreeSet::new()));

        // adding a present record is a no-op ack
        let a = rec(b'a');
        let one = empty.with(a.clone());
        let (s, out) = seq_gset_apply(&one, &GSetOp::Add(a.clone()));
        assert_eq!(s, one);
        assert_eq!(out, GSetOutcome::Ack);

        // add(b) then get returns {a, b}
        let b = rec(b'b');
        let (s, _) = seq_gset_apply(&one, &GSetOp::Add(b.clone()));
        let (_, out) = seq_gset_apply(&s, &GSetOp::Get);
        assert_eq!(out, GSetOutcome::Set([a, b].into_iter().collect()));
    }

    #[test]
    fn ledger_examples() {
        let empty = LedgerValue::new();
        let (s, out) = seq_ledger_apply(&empty, &LedgerOp::Get);
        assert_eq!(s, empty);
        assert_eq!(out, LedgerOutcome::Sequence(alloc::vec![]));

        let one = empty.with(b"a".to_vec());
        let (s, out) = seq_ledger_apply(&one, &LedgerOp::Append(b"b".to_vec()));
        assert_eq!(out, LedgerOutcome::Ack);
        assert_eq!(s.entries(), &[b"a".to_vec(), b"b".to_vec()]);

        let (_, out) = seq_ledger_apply(&s, &LedgerOp::Get);
        assert_eq!(out, LedgerOutcome::Sequence(alloc::vec![b"a".to_vec(), b"b".to_vec()]));
    }

    fn arb_ops() -> impl Strategy<Value = Vec<GSetOp>> {
        prop::collection::vec(
            prop_oneof![
                Just(GSetOp::Get),
                (0u8..8).prop_map(|t| GSetOp::Add(rec(t))),
            ],
            0..40,
        )
    }

    proptest! {
        // Replaying twice yields identical states and results.
        #[test]
        fn deterministic_replay(ops in arb_ops()) {
            let mut a = GSetValue::new();
            let mut b = GSetValue::new();
            for op in &ops {
                let (na, ra) = seq_gset_apply(&a, op);
                let (nb, rb) = seq_gset_apply(&b, op);
                prop_assert_eq!(&na, &nb);
                prop_assert_eq!(ra, rb);
                a = na;
                b = nb;
            }
        }

        // Successive states are related by inclusion.
        #[test]
        fn grow_only(ops in arb_ops()) {
            let mut state = GSetValue::new();
            for op in &ops {
                let (next, _) = seq_gset_apply(&state, op);
                prop_assert!(state.is_subset(&next));
                state = next;
            }
        }

        // Successive ledger states are prefix-related.
        #[test]
        fn append_only(payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..4), 0..20)) {
            let mut state = LedgerValue::new();
            for p in payloads {
                let (next, _) = seq_ledger_apply(&state, &LedgerOp::Append(p));
                prop_assert!(state.is_prefix_of(&next));
                state = next;
            }
        }
    }
}
