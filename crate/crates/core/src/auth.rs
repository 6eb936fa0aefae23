//! Simulated message authentication.
//!
//! Every process owns a key pair in the model; here the simulator enforces
//! unforgeability structurally instead: a tag verifies only if the claimed
//! signer actually performed a `sign` call over that exact payload inside
//! this registry. Byzantine processes can sign anything as themselves but
//! cannot mint a tag that verifies as another process.

use alloc::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::ids::ProcessId;

/// 64-bit FNV-1a. Non-cryptographic on purpose: unforgeability comes from
/// the registry, and a plain integer keeps traces and instance keys
/// deterministic.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// An authenticity tag attached to an envelope payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AuthTag {
    pub signer: ProcessId,
    pub digest: u64,
}

/// Record of every `sign` call performed during a run.
#[derive(Debug, Default)]
pub struct SignerRegistry {
    signed: BTreeSet<(ProcessId, u64)>,
}

impl SignerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Produce a tag for `payload` on behalf of `signer`. In the simulator
    /// this is only ever called with the identity of the machine that
    /// emitted the message.
    pub fn sign(&mut self, signer: ProcessId, payload: &[u8]) -> AuthTag {
        let digest = fnv1a64(payload);
        self.signed.insert((signer, digest));
        AuthTag { signer, digest }
    }

    pub fn verify(&self, tag: &AuthTag, payload: &[u8]) -> bool {
        tag.digest == fnv1a64(payload) && self.signed.contains(&(tag.signer, tag.digest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_verify_round_trip() {
        let p = ProcessId::client(0);
        let mut reg = SignerRegistry::new();
        let tag = reg.sign(p, b"hello");
        assert!(reg.verify(&tag, b"hello"));
    }

    #[test]
    fn payload_mismatch_fails() {
        let p = ProcessId::client(0);
        let mut reg = SignerRegistry::new();
        let tag = reg.sign(p, b"hello");
        assert!(!reg.verify(&tag, b"hellO"));
    }

    #[test]
    fn fabricated_tag_fails() {
        let p = ProcessId::server(1);
        let mut reg = SignerRegistry::new();
        reg.sign(ProcessId::server(2), b"m");
        // A Byzantine process claims p signed "m"; p never did.
        let forged = AuthTag { signer: p, digest: fnv1a64(b"m") };
        assert!(!reg.verify(&forged, b"m"));
    }

    #[test]
    fn signing_is_per_identity() {
        let mut reg = SignerRegistry::new();
        let tag = reg.sign(ProcessId::server(0), b"m");
        assert!(reg.verify(&tag, b"m"));
        let other = AuthTag { signer: ProcessId::server(1), ..tag };
        assert!(!reg.verify(&other, b"m"));
    }
}
