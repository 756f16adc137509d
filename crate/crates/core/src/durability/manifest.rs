//! Snapshots and operation manifests.

use std::collections::BTreeMap;
use std::time::Duration;

use bytes::{BufMut, Bytes, BytesMut};

use crate::codec::ChunkRef;
use crate::cos::{Cos, CosKey};
use crate::faas::DeploymentId;
use crate::time::SimTime;

use super::log::{put_chunk_ref, read_chunk_ref, InsertionLogNode, LocalLog, LogHead, Reader, SnapshotInfo};
use super::DurabilityError;

/// Which region of function memory holds a chunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Partition {
    Storage,
    Cache,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub chunk: ChunkRef,
    pub size: u64,
    pub partition: Partition,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub id: DeploymentId,
    pub info: SnapshotInfo,
    pub entries: Vec<ManifestEntry>,
}

impl Snapshot {
    /// `id, seq, covered_term, node_hash, diff_rank` (u64 LE), entry count
    /// (u32 LE), then per entry: chunk ref, size (u64 LE), partition (u8).
    pub fn encode(&self) -> Bytes {
        let mut buf = BytesMut::new();
        buf.put_u64_le(self.id.0);
        buf.put_u64_le(self.info.seq);
        buf.put_u64_le(self.info.covered_term);
        buf.put_u64_le(self.info.node_hash);
        buf.put_u64_le(self.info.diff_rank);
        buf.put_u32_le(self.entries.len() as u32);
        for e in &self.entries {
            put_chunk_ref(&mut buf, &e.chunk);
            buf.put_u64_le(e.size);
            buf.put_u8(match e.partition {
                Partition::Storage => 0,
                Partition::Cache => 1,
            });
        }
        buf.freeze()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DurabilityError> {
        let mut r = Reader::new(bytes);
        let id = DeploymentId(r.u64()?);
        let info = SnapshotInfo { seq: r.u64()?, covered_term: r.u64()?, node_hash: r.u64()?, diff_rank: r.u64()? };
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let chunk = read_chunk_ref(&mut r)?;
            let size = r.u64()?;
            let partition = match r.u8()? {
                0 => Partition::Storage,
                1 => Partition::Cache,
                x => return Err(DurabilityError::Malformed(format!("partition tag {x}"))),
            };
            entries.push(ManifestEntry { chunk, size, partition });
        }
        r.done()?;
        Ok(Snapshot { id, info, entries })
    }
}

/// Persists a snapshot of `entries` covering the log through its current term.
pub fn write_snapshot(
    log: &mut LocalLog,
    id: DeploymentId,
    entries: Vec<ManifestEntry>,
    cos: &Cos,
    at: SimTime,
    source: u32,
) -> Result<Duration, DurabilityError> {
    let info = SnapshotInfo {
        seq: log.head.snapshot.map_or(1, |s| s.seq + 1),
        covered_term: log.head.term,
        node_hash: log.head.node_hash,
        diff_rank: log.head.diff_rank,
    };
    let snap = Snapshot { id, info, entries };
    let t = cos.put(at, source, &CosKey::Snapshot { id, seq: info.seq }, snap.encode())?;
    log.head.snapshot = Some(info);
    log.puts_since_snapshot = 0;
    Ok(t)
}

/// Everything needed to rebuild an instance's memory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub snapshot: Option<SnapshotInfo>,
    /// Highest term whose records are included.
    pub through_term: u64,
    /// Time spent downloading the snapshot and log nodes.
    pub fetch_time: Duration,
}

/// Latest snapshot's chunk list followed by the records of every node sealed
/// after it.
pub fn build_manifest(
    cos: &Cos,
    id: DeploymentId,
    expected: &LogHead,
    at: SimTime,
    source: u32,
) -> Result<Manifest, DurabilityError> {
    let mut m = Manifest::default();
    let mut covered = 0;
    if let Some(seq) = cos.latest_snapshot(id)? {
        let (bytes, t) = cos.get(at, source, &CosKey::Snapshot { id, seq })?;
        m.fetch_time += t;
        let snap = Snapshot::decode(&bytes)?;
        covered = snap.info.covered_term;
        m.snapshot = Some(snap.info);
        m.entries = snap.entries;
    }
    m.through_term = covered;
    for (i, term) in cos.list_log_nodes(id, covered + 1)?.into_iter().enumerate() {
        let want = covered + 1 + i as u64;
        if term != want {
            return Err(DurabilityError::MissingLogNode { id, term: want });
        }
        let (bytes, t) = cos.get(at, source, &CosKey::LogNode { id, term })?;
        m.fetch_time += t;
        let node = InsertionLogNode::decode(&bytes)?;
        m.entries.extend(node.records.into_iter().map(|r| ManifestEntry {
            chunk: r.chunk,
            size: r.size,
            partition: Partition::Storage,
        }));
        m.through_term = term;
    }
    if m.through_term < expected.term {
        return Err(DurabilityError::MissingLogNode { id, term: m.through_term + 1 });
    }
    Ok(m)
}

/// Chunk set obtained by replaying a manifest in order.
pub fn replay(manifest: &Manifest) -> BTreeMap<ChunkRef, (u64, Partition)> {
    let mut out = BTreeMap::new();
    for e in &manifest.entries {
        out.insert(e.chunk.clone(), (e.size, e.partition));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::ObjectKey;
    use crate::cos::CosConfig;
    use crate::durability::log::{append_and_seal, PutRecord};
    use crate::metering::Ledger;

    fn cref(n: u32) -> ChunkRef {
        ChunkRef::new(ObjectKey::try_from(format!("obj{n}").as_str()).unwrap(), 0, (n % 12) as u16)
    }

    fn put(log: &mut LocalLog, cos: &Cos, id: DeploymentId, n: u32) {
        let r = PutRecord::new(cref(n), n as u64 + 1);
        append_and_seal(log, id, vec![(SimTime::ZERO, r)], Duration::ZERO, cos, 0).unwrap();
    }

    fn storage_entries(range: std::ops::Range<u32>) -> Vec<ManifestEntry> {
        range
            .map(|n| ManifestEntry { chunk: cref(n), size: n as u64 + 1, partition: Partition::Storage })
            .collect()
    }

    #[test]
    fn no_snapshot_uses_all_nodes() {
        let cos = Cos::new(CosConfig::default(), Ledger::new()).unwrap();
        let id = DeploymentId(1);
        let mut log = LocalLog::default();
        for n in 0..3 {
            put(&mut log, &cos, id, n);
        }
        let m = build_manifest(&cos, id, &log.head, SimTime::ZERO, 0).unwrap();
        assert_eq!(m.entries, storage_entries(0..3));
        assert_eq!(m.through_term, 3);
    }

    #[test]
    fn snapshot_plus_later_nodes() {
        let cos = Cos::new(CosConfig::default(), Ledger::new()).unwrap();
        let id = DeploymentId(1);
        let mut log = LocalLog::default();
        for n in 0..5 {
            put(&mut log, &cos, id, n);
        }
        write_snapshot(&mut log, id, storage_entries(0..5), &cos, SimTime::ZERO, 0).unwrap();
        for n in 5..8 {
            put(&mut log, &cos, id, n);
        }
        let m = build_manifest(&cos, id, &log.head, SimTime::ZERO, 0).unwrap();
        assert_eq!(m.snapshot.unwrap().covered_term, 5);
        assert_eq!(m.entries, storage_entries(0..8));
        assert_eq!(m.through_term, 8);
    }

    #[test]
    fn gap_in_terms_is_reported() {
        let cos = Cos::new(CosConfig::default(), Ledger::new()).unwrap();
        let id = DeploymentId(3);
        cos.put(SimTime::ZERO, 0, &CosKey::LogNode { id, term: 2 }, Bytes::new()).unwrap();
        assert!(matches!(
            build_manifest(&cos, id, &LogHead::default(), SimTime::ZERO, 0),
            Err(DurabilityError::MissingLogNode { term: 1, .. })
        ));
        let head = LogHead { term: 4, ..LogHead::default() };
        let other = DeploymentId(4);
        assert!(matches!(
            build_manifest(&cos, other, &head, SimTime::ZERO, 0),
            Err(DurabilityError::MissingLogNode { term: 1, .. })
        ));
    }

    #[test]
    fn snapshot_codec() {
        let mut entries = storage_entries(0..4);
        entries[2].partition = Partition::Cache;
        let s = Snapshot {
            id: DeploymentId(5),
            info: SnapshotInfo { seq: 2, covered_term: 9, node_hash: 42, diff_rank: 11 },
            entries,
        };
        assert_eq!(Snapshot::decode(&s.encode()).unwrap(), s);
    }
}
