//! FNV-1a 64-bit hashing for deterministic, cross-platform ordering and
//! content fingerprints. Non-cryptographic on purpose: fingerprints here
//! guard against accidental mixups, not adversaries.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte slice.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// FNV-1a over several byte slices, hashed as one concatenated stream.
pub fn fnv1a_concat(parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// Keyed ordering hash of (id, seed): FNV-1a over `id` bytes followed by the
/// little-endian bytes of `seed`.
pub fn keyed_hash(id: &str, seed: u64) -> u64 {
    fnv1a_concat(&[id.as_bytes(), &seed.to_le_bytes()])
}

/// Hash rendered as a fixed-width lowercase hex string.
pub fn hex64(h: u64) -> String {
    format!("{h:016x}")
}

/// Content hash of raw bytes as hex.
pub fn content_hash(bytes: &[u8]) -> String {
    hex64(fnv1a(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Published FNV-1a 64 test vectors.
    #[test]
    fn matches_published_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn concat_equals_joined() {
        assert_eq!(fnv1a_concat(&[b"foo", b"bar"]), fnv1a(b"foobar"));
    }

    #[test]
    fn keyed_hash_depends_on_seed() {
        assert_ne!(keyed_hash("case-1", 1), keyed_hash("case-1", 2));
        assert_eq!(keyed_hash("case-1", 7), keyed_hash("case-1", 7));
    }

    #[test]
    fn hex_is_fixed_width() {
        assert_eq!(hex64(0xf).len(), 16);
        assert_eq!(hex64(0xf), "000000000000000f");
    }
}
