use std::ops::Range;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use super::CodecError;

const MIB: u64 = 1 << 20;

/// Objects above `upper_bound` are cut into pieces of at most `lower_bound`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawBounds", into = "RawBounds")]
pub struct LargeObjectBounds {
    upper_bound: u64,
    lower_bound: u64,
}

#[derive(Serialize, Deserialize)]
struct RawBounds {
    upper_bound: u64,
    lower_bound: u64,
}

impl TryFrom<RawBounds> for LargeObjectBounds {
    type Error = CodecError;

    fn try_from(r: RawBounds) -> Result<Self, CodecError> {
        LargeObjectBounds::new(r.upper_bound, r.lower_bound)
    }
}

impl From<LargeObjectBounds> for RawBounds {
    fn from(b: LargeObjectBounds) -> Self {
        RawBounds { upper_bound: b.upper_bound, lower_bound: b.lower_bound }
    }
}

impl LargeObjectBounds {
    pub fn new(upper_bound: u64, lower_bound: u64) -> Result<Self, CodecError> {
        if lower_bound == 0 || lower_bound > upper_bound {
            return Err(CodecError::InvalidBounds { upper_bound, lower_bound });
        }
        Ok(LargeObjectBounds { upper_bound, lower_bound })
    }

    pub fn upper_bound(&self) -> u64 {
        self.upper_bound
    }

    pub fn lower_bound(&self) -> u64 {
        self.lower_bound
    }

    /// Byte ranges of the pieces an object of `len` bytes is cut into.
    pub fn plan(&self, len: u64) -> Vec<Range<u64>> {
        if len <= self.upper_bound {
            return vec![0..len];
        }
        let n = len.div_ceil(self.lower_bound);
        (0..n)
            .map(|i| i * self.lower_bound..((i + 1) * self.lower_bound).min(len))
            .collect()
    }
}

impl Default for LargeObjectBounds {
    fn default() -> Self {
        LargeObjectBounds { upper_bound: 64 * MIB, lower_bound: 16 * MIB }
    }
}

/// Cuts `object` into `(piece_id, bytes)` pieces without copying.
pub fn split_large(object: &Bytes, bounds: LargeObjectBounds) -> Vec<(u32, Bytes)> {
    bounds
        .plan(object.len() as u64)
        .into_iter()
        .enumerate()
        .map(|(i, r)| (i as u32, object.slice(r.start as usize..r.end as usize)))
        .collect()
}
