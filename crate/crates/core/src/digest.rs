//! SHA-256 helpers shared by the cache, manifests and run fingerprints.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Compact JSON with object keys sorted, no insignificant whitespace.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    // serde_json's default Map is a BTreeMap, so a round trip through Value sorts keys.
    let value = serde_json::to_value(value).expect("serializable value");
    serde_json::to_string(&value).expect("value serializes")
}

/// SHA-256 over [`canonical_json`].
pub fn canonical_digest<T: Serialize>(value: &T) -> String {
    sha256_hex(canonical_json(value).as_bytes())
}

pub fn is_hex64(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}
