//! Object identity, hashing, erasure coding and large-object splitting.

mod erasure;
pub mod gf256;
mod hash;
mod key;
mod split;

use thiserror::Error;

pub use erasure::{decode, encode, EcConfig};
pub use hash::{hash64, Hasher64, HASH64_EMPTY};
pub use key::{Chunk, ChunkRef, ObjectKey, MAX_KEY_LEN};
pub use split::{split_large, LargeObjectBounds};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("object keys must be 1..={MAX_KEY_LEN} bytes, got {0}")]
    InvalidKey(usize),
    #[error("cannot encode an empty object")]
    EmptyObject,
    #[error("invalid erasure-code config: {0}")]
    InvalidConfig(String),
    #[error("invalid large-object bounds: upper {upper_bound}, lower {lower_bound}")]
    InvalidBounds { upper_bound: u64, lower_bound: u64 },
    #[error("need {need} distinct chunks to decode, have {have}")]
    InsufficientChunks { have: usize, need: usize },
    #[error("corrupt chunk: {0}")]
    CorruptChunk(String),
}

/// Splits and encodes an object into per-piece chunk sets.
pub fn encode_object(
    key: &ObjectKey,
    value: &bytes::Bytes,
    ec: EcConfig,
    bounds: LargeObjectBounds,
) -> Result<Vec<Vec<Chunk>>, CodecError> {
    split_large(value, bounds)
        .into_iter()
        .map(|(piece_id, piece)| {
            let payloads = encode(&piece, ec)?;
            Ok(payloads
                .into_iter()
                .enumerate()
                .map(|(i, payload)| Chunk {
                    key: key.clone(),
                    chunk_id: i as u16,
                    piece_id,
                    original_size: piece.len() as u64,
                    payload,
                })
                .collect())
        })
        .collect()
}
