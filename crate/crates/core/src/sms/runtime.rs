use std::collections::BTreeMap;

use bytes::Bytes;
use indexmap::IndexMap;

use crate::codec::ChunkRef;
use crate::durability::{consistency_check, Consistency, LocalLog, LogHead, ManifestEntry, Partition};

/// What lives in one function instance's memory.
#[derive(Debug, Default)]
pub struct FunctionRuntime {
    storage: BTreeMap<ChunkRef, Bytes>,
    storage_bytes: u64,
    /// Least recently used first.
    cache: IndexMap<ChunkRef, Bytes>,
    cache_bytes: u64,
    pub log: LocalLog,
}

/// Memory statistics piggybacked on every response.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MemStats {
    pub storage_bytes: u64,
    pub cache_bytes: u64,
}

impl FunctionRuntime {
    pub fn check(&self, carried: &LogHead) -> Consistency {
        consistency_check(&self.log.head, carried)
    }

    pub fn stats(&self) -> MemStats {
        MemStats { storage_bytes: self.storage_bytes, cache_bytes: self.cache_bytes }
    }

    pub fn storage_len(&self) -> usize {
        self.storage.len()
    }

    /// Puts a chunk in the storage partition, evicting cache entries to make
    /// room under `memory_limit`.
    pub fn store(&mut self, chunk: ChunkRef, payload: Bytes, memory_limit: u64) {
        let size = payload.len() as u64;
        if let Some(old) = self.storage.insert(chunk.clone(), payload) {
            self.storage_bytes -= old.len() as u64;
        }
        self.storage_bytes += size;
        if let Some(old) = self.cache.shift_remove(&chunk) {
            self.cache_bytes -= old.len() as u64;
        }
        self.evict_to(memory_limit);
    }

    fn evict_to(&mut self, memory_limit: u64) {
        while self.storage_bytes + self.cache_bytes > memory_limit {
            match self.cache.shift_remove_index(0) {
                Some((_, b)) => self.cache_bytes -= b.len() as u64,
                None => break,
            }
        }
    }

    /// Adds a chunk to the cache space, or refreshes the storage copy if it
    /// has one. Returns false if it cannot fit even after evicting every
    /// cached chunk.
    pub fn cache_insert(&mut self, chunk: ChunkRef, payload: Bytes, memory_limit: u64) -> bool {
        let size = payload.len() as u64;
        if let Some(old) = self.storage.get_mut(&chunk) {
            self.storage_bytes = self.storage_bytes - old.len() as u64 + size;
            *old = payload;
            return true;
        }
        if self.storage_bytes + size > memory_limit {
            return false;
        }
        if let Some(old) = self.cache.shift_remove(&chunk) {
            self.cache_bytes -= old.len() as u64;
        }
        self.cache_bytes += size;
        self.cache.insert(chunk, payload);
        self.evict_to(memory_limit);
        true
    }

    pub fn cache_remove(&mut self, chunk: &ChunkRef) {
        if let Some(old) = self.cache.shift_remove(chunk) {
            self.cache_bytes -= old.len() as u64;
        }
    }

    /// Reads a chunk from either partition, refreshing its cache recency.
    pub fn read(&mut self, chunk: &ChunkRef) -> Option<(Bytes, Partition)> {
        if let Some(b) = self.storage.get(chunk) {
            return Some((b.clone(), Partition::Storage));
        }
        let i = self.cache.get_index_of(chunk)?;
        let last = self.cache.len() - 1;
        self.cache.move_index(i, last);
        Some((self.cache[last].clone(), Partition::Cache))
    }

    pub fn contains(&self, chunk: &ChunkRef) -> bool {
        self.storage.contains_key(chunk) || self.cache.contains_key(chunk)
    }

    /// Storage-partition listing for a snapshot.
    pub fn snapshot_entries(&self) -> Vec<ManifestEntry> {
        self.storage
            .iter()
            .map(|(c, b)| ManifestEntry { chunk: c.clone(), size: b.len() as u64, partition: Partition::Storage })
            .collect()
    }

    pub fn storage_refs(&self) -> impl Iterator<Item = &ChunkRef> {
        self.storage.keys()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::ObjectKey;

    fn cref(i: u32) -> ChunkRef {
        ChunkRef::new(ObjectKey::try_from("k").unwrap(), i, 0)
    }

    fn bytes(n: usize) -> Bytes {
        Bytes::from(vec![7u8; n])
    }

    #[test]
    fn cache_is_evicted_lru_for_storage() {
        let mut rt = FunctionRuntime::default();
        assert!(rt.cache_insert(cref(1), bytes(40), 100));
        assert!(rt.cache_insert(cref(2), bytes(40), 100));
        rt.read(&cref(1));
        rt.store(cref(3), bytes(30), 100);
        assert!(rt.contains(&cref(1)));
        assert!(!rt.contains(&cref(2)));
        assert_eq!(rt.stats(), MemStats { storage_bytes: 30, cache_bytes: 40 });
    }

    #[test]
    fn cache_refuses_what_storage_leaves_no_room_for() {
        let mut rt = FunctionRuntime::default();
        rt.store(cref(1), bytes(90), 100);
        assert!(!rt.cache_insert(cref(2), bytes(20), 100));
        assert!(rt.cache_insert(cref(3), bytes(10), 100));
    }

    #[test]
    fn overwrite_replaces_size() {
        let mut rt = FunctionRuntime::default();
        rt.store(cref(1), bytes(10), 100);
        rt.store(cref(1), bytes(20), 100);
        assert_eq!(rt.stats().storage_bytes, 20);
        assert_eq!(rt.snapshot_entries().len(), 1);
    }
}
