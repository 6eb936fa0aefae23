//! Deterministic protocol laboratory for Byzantine-tolerant grow-only set
//! objects and the constructions layered on top of them.
//!
//! The crate provides:
//!
//! * domain types ([`record`], [`ids`], [`auth`]) and sequential reference
//!   oracles ([`oracle`]) for grow-only sets and append-only ledgers,
//! * pure event-driven state machines for a quorum-replicated eventually
//!   consistent G-Set ([`bdso`]), a matching-record dispatcher for atomic
//!   cross-object appends/adds ([`atomic`]), and a single-writer replicated
//!   ledger with the strong-prefix guarantee ([`swbdlo`]), all running over
//!   an echo/ready reliable broadcast ([`brb`]),
//! * a seeded discrete-event simulator with authenticated envelopes and a
//!   recorded global history ([`simnet`], [`history`]),
//! * a library of Byzantine process behaviours ([`adversary`]), and
//! * post-hoc checkers that verify completeness, eventual consistency,
//!   strong prefix, and atomicity properties on recorded histories
//!   ([`checker`]).
//!
//! Everything in this crate is `no_std` + `alloc`: machines and the
//! simulator are pure and deterministic, so a scenario re-run with the same
//! seed reproduces the exact same history. File formats, the CLI, and
//! parallel seed sweeps live in the companion `bdso-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adversary;
pub mod atomic;
pub mod auth;
pub mod bdso;
pub mod brb;
pub mod checker;
pub mod history;
pub mod ids;
pub mod machine;
pub mod oracle;
pub mod record;
pub mod scenario;
pub mod simnet;
pub mod swbdlo;
pub mod wire;

pub use auth::{fnv1a64, AuthTag, SignerRegistry};
pub use history::{Event, EventKind, History, OpRef};
pub use ids::{ObjectId, ProcessId, Role};
pub use record::{GSetValue, IndexedRecord, LedgerValue, PairId, Record};
pub use simnet::{run, Envelope, RunError};
