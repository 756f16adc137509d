//! Systematic Reed-Solomon over GF(2^8).
//!
//! Chunks `0..d` are the padded object split into `d` equal stripes; chunks
//! `d..d+p` are parity rows of a Cauchy matrix. Every `d x d` submatrix of
//! `[I; C]` is invertible, so any `d` distinct chunks reconstruct the object.

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use super::{gf256, CodecError};

/// Data/parity chunk counts. `O = d + p` functions hold one stripe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawEcConfig", into = "RawEcConfig")]
pub struct EcConfig {
    data: u16,
    parity: u16,
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct RawEcConfig {
    data: u16,
    parity: u16,
}

impl Default for RawEcConfig {
    fn default() -> Self {
        EcConfig::default().into()
    }
}

impl TryFrom<RawEcConfig> for EcConfig {
    type Error = CodecError;

    fn try_from(raw: RawEcConfig) -> Result<Self, CodecError> {
        EcConfig::new(raw.data, raw.parity)
    }
}

impl From<EcConfig> for RawEcConfig {
    fn from(c: EcConfig) -> Self {
        RawEcConfig { data: c.data, parity: c.parity }
    }
}

impl EcConfig {
    pub fn new(data: u16, parity: u16) -> Result<Self, CodecError> {
        if data == 0 {
            return Err(CodecError::InvalidConfig("need at least one data chunk".into()));
        }
        if data as usize + parity as usize > 256 {
            return Err(CodecError::InvalidConfig("at most 256 chunks per stripe".into()));
        }
        Ok(EcConfig { data, parity })
    }

    pub fn data(&self) -> u16 {
        self.data
    }

    pub fn parity(&self) -> u16 {
        self.parity
    }

    /// Stripe width `O = d + p`.
    pub fn total(&self) -> u16 {
        self.data + self.parity
    }

    /// Per-chunk payload length for an object of `len` bytes.
    pub fn chunk_len(&self, len: u64) -> u64 {
        len.div_ceil(self.data as u64).max(1)
    }

    fn parity_coef(&self, parity_row: usize, col: usize) -> u8 {
        let x = (self.data as usize + parity_row) as u8;
        let y = col as u8;
        gf256::inv(x ^ y)
    }

    /// Row `chunk_id` of the `O x d` generator matrix.
    fn generator_row(&self, chunk_id: usize) -> Vec<u8> {
        let d = self.data as usize;
        if chunk_id < d {
            (0..d).map(|c| u8::from(c == chunk_id)).collect()
        } else {
            (0..d).map(|c| self.parity_coef(chunk_id - d, c)).collect()
        }
    }
}

impl Default for EcConfig {
    fn default() -> Self {
        EcConfig { data: 10, parity: 2 }
    }
}

/// Encodes `object` into exactly `O` equal-length payloads.
pub fn encode(object: &[u8], cfg: EcConfig) -> Result<Vec<Bytes>, CodecError> {
    if object.is_empty() {
        return Err(CodecError::EmptyObject);
    }
    let d = cfg.data as usize;
    let p = cfg.parity as usize;
    let len = cfg.chunk_len(object.len() as u64) as usize;

    let mut buf = Vec::with_capacity(d * len);
    buf.extend_from_slice(object);
    buf.resize(d * len, 0);
    let buf = Bytes::from(buf);

    let mut out: Vec<Bytes> = (0..d).map(|i| buf.slice(i * len..(i + 1) * len)).collect();
    for row in 0..p {
        let mut parity = vec![0u8; len];
        for col in 0..d {
            gf256::mul_add_into(&mut parity, &buf[col * len..(col + 1) * len], cfg.parity_coef(row, col));
        }
        out.push(Bytes::from(parity));
    }
    Ok(out)
}

/// Reconstructs the original bytes from any `d` distinct chunks.
///
/// Duplicated chunk ids are ignored after the first occurrence.
pub fn decode(
    chunks: &[(u16, Bytes)],
    cfg: EcConfig,
    original_size: u64,
) -> Result<Vec<u8>, CodecError> {
    let d = cfg.data as usize;
    let total = cfg.total() as usize;

    let mut by_id: Vec<Option<&Bytes>> = vec![None; total];
    let mut len = None;
    for (id, payload) in chunks {
        let id = *id as usize;
        if id >= total {
            return Err(CodecError::CorruptChunk(format!("chunk id {id} outside stripe of {total}")));
        }
        match len {
            None => len = Some(payload.len()),
            Some(l) if l != payload.len() => {
                return Err(CodecError::CorruptChunk(format!(
                    "payload sizes disagree: {l} vs {}",
                    payload.len()
                )))
            }
            _ => {}
        }
        if by_id[id].is_none() {
            by_id[id] = Some(payload);
        }
    }
    let have = by_id.iter().filter(|c| c.is_some()).count();
    if have < d {
        return Err(CodecError::InsufficientChunks { have, need: d });
    }
    let len = len.unwrap_or(0);
    if (len as u64) * (d as u64) < original_size {
        return Err(CodecError::CorruptChunk(format!(
            "{d} chunks of {len} bytes cannot hold {original_size} bytes"
        )));
    }

    let missing: Vec<usize> = (0..d).filter(|&i| by_id[i].is_none()).collect();
    let mut recovered: Vec<Vec<u8>> = Vec::new();
    if !missing.is_empty() {
        // Pick d rows, preferring surviving data rows.
        let rows: Vec<usize> = (0..total).filter(|&i| by_id[i].is_some()).take(d).collect();
        let matrix: Vec<Vec<u8>> = rows.iter().map(|&r| cfg.generator_row(r)).collect();
        let inverse = gf256::invert(matrix)
            .ok_or_else(|| CodecError::CorruptChunk("singular decode matrix".into()))?;
        for &m in &missing {
            let mut buf = vec![0u8; len];
            for (k, &r) in rows.iter().enumerate() {
                gf256::mul_add_into(&mut buf, by_id[r].unwrap(), inverse[m][k]);
            }
            recovered.push(buf);
        }
    }

    let mut out = Vec::with_capacity(original_size as usize);
    let mut rec = recovered.iter();
    for slot in by_id.iter().take(d) {
        if out.len() as u64 >= original_size {
            break;
        }
        let stripe: &[u8] = match slot {
            Some(b) => b,
            None => rec.next().unwrap(),
        };
        let want = (original_size as usize - out.len()).min(stripe.len());
        out.extend_from_slice(&stripe[..want]);
    }
    Ok(out)
}
