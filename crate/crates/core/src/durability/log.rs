//! Per-deployment insertion log.
//!
//! Each PUT-serving invocation seals one node per consolidation window. Nodes
//! form a hash chain:
//!
//! ```text
//! node_hash = hash64(prev_hash as u64 LE || term as u64 LE || record count as u32 LE
//!                    || for each record: key (u32 LE length + bytes), piece_id u32 LE,
//!                       chunk_id u32 LE, size u64 LE)
//! ```
//!
//! with `prev_hash = 0` for term 1. The stored node uses the same field
//! encoding, prefixed by a header (see [`InsertionLogNode::encode`]).

use std::time::Duration;

use bytes::{BufMut, Bytes, BytesMut};

use crate::codec::{ChunkRef, Hasher64, ObjectKey};
use crate::cos::{Cos, CosKey};
use crate::faas::DeploymentId;
use crate::time::SimTime;

use super::DurabilityError;

/// One chunk insertion recorded in a log node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PutRecord {
    pub chunk: ChunkRef,
    pub size: u64,
}

impl PutRecord {
    pub fn new(chunk: ChunkRef, size: u64) -> Self {
        PutRecord { chunk, size }
    }

    pub fn cos_key(&self) -> CosKey {
        CosKey::Chunk(self.chunk.clone())
    }
}

fn put_key(buf: &mut BytesMut, key: &ObjectKey) {
    buf.put_u32_le(key.len() as u32);
    buf.put_slice(key.as_bytes());
}

/// Chained hash of one node.
pub fn chain_hash(prev_hash: u64, term: u64, records: &[PutRecord]) -> u64 {
    let mut h = Hasher64::new();
    h.write_u64(prev_hash);
    h.write_u64(term);
    h.write_u32(records.len() as u32);
    for r in records {
        h.write_field(r.chunk.key.as_bytes());
        h.write_u32(r.chunk.piece_id);
        h.write_u32(r.chunk.chunk_id as u32);
        h.write_u64(r.size);
    }
    h.finish()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InsertionLogNode {
    pub id: DeploymentId,
    pub term: u64,
    pub prev_hash: u64,
    pub node_hash: u64,
    /// Cumulative record count through this node.
    pub diff_rank: u64,
    pub records: Vec<PutRecord>,
}

/// Reads little-endian fields off a byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DurabilityError> {
        if self.buf.len() < n {
            return Err(DurabilityError::Malformed("truncated".into()));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, DurabilityError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, DurabilityError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, DurabilityError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn key(&mut self) -> Result<ObjectKey, DurabilityError> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        ObjectKey::try_from(raw).map_err(|e| DurabilityError::Malformed(e.to_string()))
    }

    pub(crate) fn done(&self) -> Result<(), DurabilityError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(DurabilityError::Malformed("trailing bytes".into()))
        }
    }
}

pub(crate) fn put_chunk_ref(buf: &mut BytesMut, c: &ChunkRef) {
    put_key(buf, &c.key);
    buf.put_u32_le(c.piece_id);
    buf.put_u32_le(c.chunk_id as u32);
}

pub(crate) fn read_chunk_ref(r: &mut Reader<'_>) -> Result<ChunkRef, DurabilityError> {
    let key = r.key()?;
    let piece = r.u32()?;
    let chunk = r.u32()?;
    let chunk = u16::try_from(chunk).map_err(|_| DurabilityError::Malformed("chunk id".into()))?;
    Ok(ChunkRef::new(key, piece, chunk))
}

impl InsertionLogNode {
    /// Header `id, term, prev_hash, node_hash, diff_rank` (u64 LE each),
    /// record count (u32 LE), then records in chain-hash field order.
    pub fn encode(&self) -> Bytes {
        let mut buf = BytesMut::new();
        buf.put_u64_le(self.id.0);
        buf.put_u64_le(self.term);
        buf.put_u64_le(self.prev_hash);
        buf.put_u64_le(self.node_hash);
        buf.put_u64_le(self.diff_rank);
        buf.put_u32_le(self.records.len() as u32);
        for r in &self.records {
            put_chunk_ref(&mut buf, &r.chunk);
            buf.put_u64_le(r.size);
        }
        buf.freeze()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DurabilityError> {
        let mut r = Reader::new(bytes);
        let id = DeploymentId(r.u64()?);
        let term = r.u64()?;
        let prev_hash = r.u64()?;
        let node_hash = r.u64()?;
        let diff_rank = r.u64()?;
        let n = r.u32()? as usize;
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let chunk = read_chunk_ref(&mut r)?;
            let size = r.u64()?;
            records.push(PutRecord { chunk, size });
        }
        r.done()?;
        let node = InsertionLogNode { id, term, prev_hash, node_hash, diff_rank, records };
        if chain_hash(prev_hash, term, &node.records) != node_hash {
            return Err(DurabilityError::HashMismatch { id, term });
        }
        Ok(node)
    }
}

/// Snapshot fields carried inside a [`LogHead`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SnapshotInfo {
    pub seq: u64,
    pub covered_term: u64,
    pub node_hash: u64,
    pub diff_rank: u64,
}

/// Latest log position, piggybacked on every response and carried by the
/// daemon into the next invocation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LogHead {
    pub term: u64,
    pub node_hash: u64,
    pub diff_rank: u64,
    pub last_node_size: u64,
    pub snapshot: Option<SnapshotInfo>,
}

/// Instance-local log state. A cold instance starts from `LocalLog::default()`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LocalLog {
    pub head: LogHead,
    pub puts_since_snapshot: u32,
}

/// Result of sealing: the nodes written and the time spent writing them.
#[derive(Clone, Debug, Default)]
pub struct Sealed {
    pub nodes: Vec<InsertionLogNode>,
    pub cos_time: Duration,
}

/// Seals `records` into nodes and persists each to COS before returning.
///
/// Records are consolidated from the first arrival; a record arriving more
/// than `window` after the current node's first record opens the next term.
pub fn append_and_seal(
    log: &mut LocalLog,
    id: DeploymentId,
    records: Vec<(SimTime, PutRecord)>,
    window: Duration,
    cos: &Cos,
    source: u32,
) -> Result<Sealed, DurabilityError> {
    let mut sealed = Sealed::default();
    let mut groups: Vec<(SimTime, Vec<PutRecord>)> = Vec::new();
    for (t, r) in records {
        match groups.last_mut() {
            Some((start, g)) if t <= *start + window => g.push(r),
            _ => groups.push((t, vec![r])),
        }
    }
    for (at, records) in groups {
        let term = log.head.term + 1;
        let prev_hash = log.head.node_hash;
        let node_hash = chain_hash(prev_hash, term, &records);
        let diff_rank = log.head.diff_rank + records.len() as u64;
        let node = InsertionLogNode { id, term, prev_hash, node_hash, diff_rank, records };
        let bytes = node.encode();
        let size = bytes.len() as u64;
        sealed.cos_time += cos.put(at, source, &CosKey::LogNode { id, term }, bytes)?;
        log.head.term = term;
        log.head.node_hash = node_hash;
        log.head.diff_rank = diff_rank;
        log.head.last_node_size = size;
        sealed.nodes.push(node);
    }
    Ok(sealed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Consistency {
    UpToDate,
    /// Number of records the instance is missing.
    Failed { diff: u64 },
}

/// Compares an instance's local head with the head the daemon carried in.
pub fn consistency_check(local: &LogHead, carried: &LogHead) -> Consistency {
    if local.term == carried.term && local.node_hash == carried.node_hash {
        Consistency::UpToDate
    } else {
        Consistency::Failed { diff: carried.diff_rank.saturating_sub(local.diff_rank) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecoveryMode {
    LocalOnly,
    Parallel,
}

/// Parallel recovery iff the gap exceeds `multiplier` times the group size.
pub fn recovery_decision(diff: u64, group_size: usize, multiplier: u64) -> RecoveryMode {
    if diff > multiplier * group_size as u64 {
        RecoveryMode::Parallel
    } else {
        RecoveryMode::LocalOnly
    }
}
