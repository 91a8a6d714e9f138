use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// First `n` hex characters of the SHA-256 of `bytes`.
pub fn short_digest(bytes: impl AsRef<[u8]>, n: usize) -> String {
    let mut h = sha256_hex(bytes);
    h.truncate(n);
    h
}
