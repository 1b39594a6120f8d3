//! Canonical request digests.
//!
//! Every remote request is identified by the lowercase hex SHA-256 of its
//! canonical JSON form. `serde_json` keeps object keys sorted (its map type is
//! a BTreeMap), so serializing a [`serde_json::Value`] is already canonical.

use serde_json::Value;
use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of raw bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Canonical JSON text for a value (sorted object keys, no extra whitespace).
pub fn canonical_json(value: &Value) -> String {
    serde_json::to_string(value).expect("JSON value serialization cannot fail")
}

/// Digest of a request payload expressed as a JSON value.
pub fn digest_value(value: &Value) -> String {
    sha256_hex(canonical_json(value).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn digest_is_lowercase_hex() {
        let d = sha256_hex(b"abc");
        assert_eq!(d.len(), 64);
        assert!(d.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
        // sha256("abc") is a fixed vector
        assert_eq!(d, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn key_order_does_not_matter() {
        let a = json!({"b": 1, "a": [1, 2]});
        let b = json!({"a": [1, 2], "b": 1});
        assert_eq!(digest_value(&a), digest_value(&b));
    }
}
