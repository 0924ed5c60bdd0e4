//! Order-independent seed derivation.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Incremental FNV-1a hasher finalized with a splitmix64 mix.
///
/// The byte stream is fixed by the call sequence only, so the result is
/// stable across platforms, runs and thread schedules.
#[derive(Debug, Clone, Copy)]
pub struct SeedHasher(u64);

impl SeedHasher {
    pub fn new(seed: u64) -> Self {
        Self(FNV_OFFSET).u64(seed)
    }

    fn bytes(mut self, bytes: &[u8]) -> Self {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
        self
    }

    pub fn u64(self, v: u64) -> Self {
        self.bytes(&v.to_le_bytes())
    }

    /// Strings are length-prefixed so that concatenations cannot collide.
    pub fn str(self, s: &str) -> Self {
        self.u64(s.len() as u64).bytes(s.as_bytes())
    }

    pub fn finish(self) -> u64 {
        splitmix64(self.0)
    }
}

/// Seed for a stochastic operation on the frame pair `(a, b)` of `video`.
pub fn pair_seed(global: u64, video: &str, frame_a: u64, frame_b: u64) -> u64 {
    SeedHasher::new(global)
        .str(video)
        .u64(frame_a)
        .u64(frame_b)
        .finish()
}
