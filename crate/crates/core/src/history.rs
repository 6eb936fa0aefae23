//! The recorded global history of a run.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::ProcessId;
use crate::machine::{Note, OpResult, OpSpec};
use crate::wire::WireMessage;

/// Reference to an operation: the invoking client and its per-client
/// invocation counter (starting at 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OpRef {
    pub client: ProcessId,
    pub c: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Invocation {
        client: ProcessId,
        c: u64,
        op: OpSpec,
    },
    Response {
        client: ProcessId,
        c: u64,
        op: OpSpec,
        result: OpResult,
    },
    /// An envelope left the network. `auth_ok` envelopes whose payload
    /// decodes are dispatched to the recipient; everything else is recorded
    /// here and dropped.
    Deliver {
        from: ProcessId,
        to: ProcessId,
        enqueue_step: u64,
        digest: u64,
        auth_ok: bool,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        msg: Option<WireMessage>,
    },
    LocalEmit {
        process: ProcessId,
        note: Note,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub step: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct History {
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryError {
    UnknownOperation(OpRef),
}

impl fmt::Display for HistoryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HistoryError::UnknownOperation(op) => {
                write!(f, "operation c={} of {} does not appear in the history", op.c, op.client)
            }
        }
    }
}

impl History {
    pub fn invocation_step(&self, op: OpRef) -> Option<u64> {
        self.events.iter().find_map(|e| match &e.kind {
            EventKind::Invocation { client, c, .. } if *client == op.client && *c == op.c => {
                Some(e.step)
            }
            _ => None,
        })
    }

    pub fn response_step(&self, op: OpRef) -> Option<u64> {
        self.events.iter().find_map(|e| match &e.kind {
            EventKind::Response { client, c, .. } if *client == op.client && *c == op.c => {
                Some(e.step)
            }
            _ => None,
        })
    }

    /// Real-time precedence: `a` precedes `b` iff the response of `a`
    /// appears before the invocation of `b`. Overlapping operations are
    /// concurrent, so neither precedes the other.
    pub fn precedes(&self, a: OpRef, b: OpRef) -> Result<bool, HistoryError> {
        let inv_a = self.invocation_step(a).ok_or(HistoryError::UnknownOperation(a))?;
        let inv_b = self.invocation_step(b).ok_or(HistoryError::UnknownOperation(b))?;
        let _ = inv_a;
        let Some(resp_a) = self.response_step(a) else {
            return Ok(false); // incomplete operations precede nothing
        };
        Ok(resp_a < inv_b)
    }

    pub fn invocations(&self) -> impl Iterator<Item = (OpRef, &OpSpec, u64)> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::Invocation { client, c, op } => {
                Some((OpRef { client: *client, c: *c }, op, e.step))
            }
            _ => None,
        })
    }

    pub fn responses(&self) -> impl Iterator<Item = (OpRef, &OpSpec, &OpResult, u64)> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::Response { client, c, op, result } => {
                Some((OpRef { client: *client, c: *c }, op, result, e.step))
            }
            _ => None,
        })
    }

    pub fn notes(&self) -> impl Iterator<Item = (ProcessId, &Note, u64)> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::LocalEmit { process, note } => Some((*process, note, e.step)),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::ObjectId;

    fn h() -> History {
        // op A: inv@0 resp@5; op B: inv@9 resp@12; op C: inv@3 resp@7 (overlaps A)
        let client = ProcessId::client(0);
        let other = ProcessId::client(1);
        let op = OpSpec::GsetGet { object: ObjectId::new("GS") };
        let mk = |step, kind| Event { step, kind };
        History {
            events: alloc::vec![
                mk(0, EventKind::Invocation { client, c: 1, op: op.clone() }),
                mk(3, EventKind::Invocation { client: other, c: 1, op: op.clone() }),
                mk(5, EventKind::Response { client, c: 1, op: op.clone(), result: OpResult::Ack }),
                mk(7, EventKind::Response { client: other, c: 1, op: op.clone(), result: OpResult::Ack }),
                mk(9, EventKind::Invocation { client, c: 2, op: op.clone() }),
                mk(12, EventKind::Response { client, c: 2, op, result: OpResult::Ack }),
            ],
        }
    }

    #[test]
    fn precedes_completed_before_invoked() {
        let h = h();
        let a = OpRef { client: ProcessId::client(0), c: 1 };
        let b = OpRef { client: ProcessId::client(0), c: 2 };
        assert_eq!(h.precedes(a, b), Ok(true));
        assert_eq!(h.precedes(b, a), Ok(false));
    }

    #[test]
    fn overlapping_operations_are_concurrent() {
        let h = h();
        let a = OpRef { client: ProcessId::client(0), c: 1 };
        let c = OpRef { client: ProcessId::client(1), c: 1 };
        assert_eq!(h.precedes(a, c), Ok(false));
        assert_eq!(h.precedes(c, a), Ok(false));
    }

    #[test]
    fn unknown_operation_is_an_error() {
        let h = h();
        let a = OpRef { client: ProcessId::client(0), c: 1 };
        let missing = OpRef { client: ProcessId::client(9), c: 1 };
        assert_eq!(h.precedes(a, missing), Err(HistoryError::UnknownOperation(missing)));
    }
}
