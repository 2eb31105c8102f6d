//! Stable key hashing and partition routing.

/// FNV-1a offset basis (64-bit).
const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
/// FNV-1a prime (64-bit).
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Hashes a key with 64-bit FNV-1a.
///
/// The algorithm is fixed so that partition routing is identical across
/// processes, platforms, and runs.
pub fn stable_hash(key: &str) -> u64 {
    let mut h = FNV_OFFSET_BASIS;
    for &byte in key.as_bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Routes keys to reduce partitions via `stable_hash(key) mod partitions`.
#[derive(Debug, Clone, Copy)]
pub struct Partitioner {
    partitions: usize,
}

impl Partitioner {
    /// `partitions` must be at least 1.
    pub fn new(partitions: usize) -> Self {
        assert!(partitions >= 1, "partition count must be >= 1");
        Partitioner { partitions }
    }

    pub fn partitions(&self) -> usize {
        self.partitions
    }

    pub fn partition(&self, key: &str) -> usize {
        (stable_hash(key) % self.partitions as u64) as usize
    }
}
