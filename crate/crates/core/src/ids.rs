//! Identifiers for projects, nodes, jobs and other engine entities.
//!
//! Entity ids are 128-bit values rendered as 32 lowercase hex characters.
//! Asset ids are full SHA-256 content hashes (64 hex characters).

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

macro_rules! hex_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(raw: impl Into<String>) -> Self {
                Self(raw.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }

            /// First 8 hex chars, for logs and text renderings.
            pub fn short(&self) -> &str {
                &self.0[..self.0.len().min(8)]
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

hex_id!(
    /// Project identifier.
    ProjectId
);
hex_id!(
    /// Authoring-state node identifier.
    NodeId
);
hex_id!(JobId);
hex_id!(BatchId);
hex_id!(SegmentId);
hex_id!(EntryId);

/// Content hash of an asset's bytes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AssetId(String);

impl AssetId {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        Self(hex::encode(Sha256::digest(bytes)))
    }

    pub fn new(raw: impl Into<String>) -> Self {
        Self(raw.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// 16-char display id.
    pub fn display_id(&self) -> &str {
        &self.0[..self.0.len().min(16)]
    }

    pub fn is_well_formed(&self) -> bool {
        self.0.len() == 64 && self.0.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
    }
}

impl From<&str> for AssetId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// How fresh identifiers are minted.
///
/// `Random` draws 128 bits from the thread RNG. `Seeded` derives every id
/// from a seed and the entity's position in its project's event log, so a
/// replayed script produces the same ids in any fresh data directory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IdScheme {
    Random,
    Seeded(u64),
}

impl IdScheme {
    /// Mints an id for an entity created by the event at `seq` of `scope`.
    /// `salt` separates several ids minted by one event.
    pub fn mint(&self, scope: &str, seq: u64, salt: &str) -> String {
        match self {
            IdScheme::Random => format!("{:032x}", rand::random::<u128>()),
            IdScheme::Seeded(seed) => {
                let mut h = Sha256::new();
                h.update(seed.to_le_bytes());
                h.update(scope.as_bytes());
                h.update([0u8]);
                h.update(seq.to_le_bytes());
                h.update(salt.as_bytes());
                hex::encode(&h.finalize()[..16])
            }
        }
    }
}

/// Hands out ids for the entities created by one pending event batch.
/// Under `Seeded`, ids depend on the project scope and the sequence number
/// the first pending event will take.
#[derive(Clone, Debug)]
pub struct IdSource {
    scheme: IdScheme,
    scope: String,
    seq: u64,
    issued: u32,
}

impl IdSource {
    pub fn new(scheme: IdScheme, scope: impl Into<String>, seq: u64) -> Self {
        Self {
            scheme,
            scope: scope.into(),
            seq,
            issued: 0,
        }
    }

    pub fn next(&mut self, what: &str) -> String {
        self.issued += 1;
        self.scheme
            .mint(&self.scope, self.seq, &format!("{what}/{}", self.issued))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_ids_are_stable_and_distinct() {
        let s = IdScheme::Seeded(7);
        assert_eq!(s.mint("p", 3, "node"), s.mint("p", 3, "node"));
        assert_ne!(s.mint("p", 3, "node"), s.mint("p", 4, "node"));
        assert_ne!(s.mint("p", 3, "node"), s.mint("q", 3, "node"));
        assert_eq!(s.mint("p", 3, "node").len(), 32);
    }

    #[test]
    fn random_ids_are_lowercase_hex() {
        let id = IdScheme::Random.mint("p", 0, "");
        assert_eq!(id.len(), 32);
        assert!(id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)));
    }

    #[test]
    fn asset_id_is_sha256() {
        let id = AssetId::of_bytes(b"abc");
        assert_eq!(
            id.as_str(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(id.display_id(), "ba7816bf8f01cfea");
        assert!(id.is_well_formed());
    }
}
