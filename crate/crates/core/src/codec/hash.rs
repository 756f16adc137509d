//! The one stable hash used everywhere placement, routing, recovery sharding
//! and log chaining need to agree.
//!
//! `hash64` is 64-bit FNV-1a over the input bytes followed by the MurmurHash3
//! `fmix64` finalizer. FNV-1a alone has weak low bits, which matters because
//! callers reduce the result modulo small group sizes. The algorithm is fixed:
//! changing it changes every persisted log hash.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Value of `hash64(b"")`.
pub const HASH64_EMPTY: u64 = fmix64(FNV_OFFSET);

pub fn hash64(bytes: &[u8]) -> u64 {
    let mut h = Hasher64::new();
    h.write(bytes);
    h.finish()
}

/// Incremental form of [`hash64`]; feeding the same bytes in any split
/// produces the same value.
#[derive(Clone, Debug)]
pub struct Hasher64 {
    state: u64,
}

impl Hasher64 {
    pub fn new() -> Self {
        Hasher64 { state: FNV_OFFSET }
    }

    pub fn write(&mut self, bytes: &[u8]) {
        let mut s = self.state;
        for &b in bytes {
            s ^= b as u64;
            s = s.wrapping_mul(FNV_PRIME);
        }
        self.state = s;
    }

    pub fn write_u32(&mut self, v: u32) {
        self.write(&v.to_le_bytes());
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    /// Length-prefixed (u32 little-endian) byte field.
    pub fn write_field(&mut self, bytes: &[u8]) {
        self.write_u32(bytes.len() as u32);
        self.write(bytes);
    }

    pub fn finish(&self) -> u64 {
        fmix64(self.state)
    }
}

impl Default for Hasher64 {
    fn default() -> Self {
        Self::new()
    }
}

const fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^= k >> 33;
    k
}
