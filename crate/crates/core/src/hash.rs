//! FNV-1a hashing for payload checksums, config digests, and seed derivation.
//!
//! FNV-1a is not cryptographic; it is used here for corruption detection and
//! for deriving per-component RNG seeds from a single experiment seed. Both
//! uses only need determinism and good bit dispersion.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte slice.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Streaming FNV-1a, for hashing large payloads chunk by chunk.
#[derive(Clone, Debug)]
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a(FNV_OFFSET)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

/// Derive a per-component seed from the experiment's root seed.
///
/// All randomness in a run flows from one `seed` key; each consumer
/// (model init, data generation, batch order, ...) gets its own stream via
/// `derive_seed(root, label)` so that adding or removing one consumer never
/// perturbs the others. The derivation is FNV-1a over the root seed's
/// little-endian bytes followed by the label bytes.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Fnv1a::new();
    h.update(&root.to_le_bytes());
    h.update(label.as_bytes());
    h.finish()
}
