//! 64-bit FNV-1a keys used for seeds, config hashes and mock bucketing.

use std::hash::Hasher;

use fnv::FnvHasher;

/// Incremental FNV-1a-64 over a sequence of byte fields.
///
/// Fields are fed back to back with no delimiter, so callers that need
/// unambiguous keys should use fixed-width encodings for numeric parts.
#[derive(Default)]
pub struct KeyHasher(FnvHasher);

impl KeyHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(mut self, bytes: &[u8]) -> Self {
        self.0.write(bytes);
        self
    }

    pub fn str(self, s: &str) -> Self {
        self.bytes(s.as_bytes())
    }

    pub fn u64(self, v: u64) -> Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn finish(&self) -> u64 {
        self.0.finish()
    }
}

/// FNV-1a-64 of a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    KeyHasher::new().bytes(bytes).finish()
}
