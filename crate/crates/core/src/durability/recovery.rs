//! Recovery sharding, recovery-group bookkeeping and download schedules.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::codec::{ChunkRef, Hasher64};
use crate::faas::DeploymentId;
use crate::time::SimTime;

use super::manifest::ManifestEntry;

/// Hash of a chunk address: `hash64(key || piece_id u32 LE || chunk_id u32 LE)`.
pub fn chunk_hash(chunk: &ChunkRef) -> u64 {
    let mut h = Hasher64::new();
    h.write(chunk.key.as_bytes());
    h.write_u32(chunk.piece_id);
    h.write_u32(chunk.chunk_id as u32);
    h.finish()
}

/// Worker responsible for a hashed key in a group of `g`.
pub fn worker_for_hash(hash: u64, g: usize) -> usize {
    assert!(g >= 1, "recovery group must not be empty");
    (hash % g as u64) as usize
}

pub fn shard_of(chunk: &ChunkRef, g: usize) -> usize {
    worker_for_hash(chunk_hash(chunk), g)
}

/// Splits manifest entries into `g` shards, preserving manifest order.
pub fn partition(entries: &[ManifestEntry], g: usize) -> Vec<Vec<ManifestEntry>> {
    let mut shards = vec![Vec::new(); g];
    for e in entries {
        shards[shard_of(&e.chunk, g)].push(e.clone());
    }
    shards
}

/// When each entry becomes available if downloaded one after another from
/// `start`, and when the last one lands.
pub fn download_schedule(
    start: SimTime,
    entries: &[ManifestEntry],
    access_time: impl Fn(u64) -> Duration,
) -> (Vec<SimTime>, SimTime) {
    let mut t = start;
    let avail = entries
        .iter()
        .map(|e| {
            t += access_time(e.size);
            t
        })
        .collect();
    (avail, t)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecoveryGroup {
    pub storage: DeploymentId,
    pub members: Vec<DeploymentId>,
    /// Bumped every time the membership changes.
    pub epoch: u64,
}

/// Pre-assigned recovery groups plus the set of members currently engaged.
/// A deployment serves at most one storage function at a time.
#[derive(Clone, Debug, Default)]
pub struct RecoveryRegistry {
    groups: BTreeMap<DeploymentId, RecoveryGroup>,
    engaged: BTreeMap<DeploymentId, DeploymentId>,
}

impl RecoveryRegistry {
    /// Picks up to `g` random members from `candidates` for a newly deployed function.
    pub fn assign<R: Rng>(&mut self, storage: DeploymentId, candidates: &[DeploymentId], g: usize, rng: &mut R) {
        let pool: Vec<DeploymentId> = candidates.iter().copied().filter(|c| *c != storage).collect();
        let members: Vec<DeploymentId> = pool.choose_multiple(rng, g.min(pool.len())).copied().collect();
        self.groups.insert(storage, RecoveryGroup { storage, members, epoch: 0 });
    }

    pub fn group(&self, storage: DeploymentId) -> Option<&RecoveryGroup> {
        self.groups.get(&storage)
    }

    pub fn engaged_with(&self, member: DeploymentId) -> Option<DeploymentId> {
        self.engaged.get(&member).copied()
    }

    pub fn is_engaged(&self, member: DeploymentId) -> bool {
        self.engaged.contains_key(&member)
    }

    /// Phase 1: keeps pre-assigned members that are still live and free,
    /// replaces the rest (and tops up to `g`) from `pool`, then marks the
    /// group engaged.
    pub fn engage<R: Rng>(
        &mut self,
        storage: DeploymentId,
        pool: &[DeploymentId],
        g: usize,
        rng: &mut R,
    ) -> Vec<DeploymentId> {
        let live: BTreeSet<DeploymentId> = pool.iter().copied().collect();
        let group = self
            .groups
            .entry(storage)
            .or_insert_with(|| RecoveryGroup { storage, members: Vec::new(), epoch: 0 });
        let before = group.members.clone();
        let mut members: Vec<DeploymentId> = group
            .members
            .iter()
            .copied()
            .filter(|m| live.contains(m) && !self.engaged.contains_key(m) && *m != storage)
            .take(g)
            .collect();
        if members.len() < g {
            let chosen: BTreeSet<DeploymentId> = members.iter().copied().collect();
            let mut spare: Vec<DeploymentId> = pool
                .iter()
                .copied()
                .filter(|m| *m != storage && !chosen.contains(m) && !self.engaged.contains_key(m))
                .collect();
            spare.shuffle(rng);
            members.extend(spare.into_iter().take(g - members.len()));
        }
        if members != before {
            group.epoch += 1;
        }
        group.members = members.clone();
        for m in &members {
            self.engaged.insert(*m, storage);
        }
        members
    }

    /// Swaps one engaged member for a free one from `pool`; returns the replacement.
    pub fn replace_member<R: Rng>(
        &mut self,
        storage: DeploymentId,
        failed: DeploymentId,
        pool: &[DeploymentId],
        rng: &mut R,
    ) -> Option<DeploymentId> {
        let group = self.groups.get_mut(&storage)?;
        let spare: Vec<DeploymentId> = pool
            .iter()
            .copied()
            .filter(|m| *m != storage && !group.members.contains(m) && !self.engaged.contains_key(m))
            .collect();
        let pick = *spare.choose(rng)?;
        self.engaged.remove(&failed);
        for m in group.members.iter_mut() {
            if *m == failed {
                *m = pick;
            }
        }
        group.epoch += 1;
        self.engaged.insert(pick, storage);
        Some(pick)
    }

    /// Phase 3: frees every member engaged for `storage`.
    pub fn release(&mut self, storage: DeploymentId) {
        self.engaged.retain(|_, s| *s != storage);
    }

    /// Forgets a removed deployment everywhere.
    pub fn forget(&mut self, id: DeploymentId) {
        self.groups.remove(&id);
        self.engaged.remove(&id);
        for g in self.groups.values_mut() {
            g.members.retain(|m| *m != id);
        }
    }
}
