use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use bytes::{Bytes, BytesMut};
use indexmap::IndexSet;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bucket::{BucketState, FgId, FgStatus, FunctionGroup, IBucket, RotationReport};
use super::migration::{round_size, Migration};
use super::placement::{place, OpenFunctions, Probe};
use super::queue::{QueueKind, RequestQueues};
use super::runtime::{FunctionRuntime, MemStats};
use super::{SmsConfig, SmsError};
use crate::codec::{decode, Chunk, ChunkRef, ObjectKey};
use crate::cos::{Cos, CosKey};
use crate::durability::{
    append_and_seal, build_manifest, download_schedule, partition, recovery_decision, replay, shard_of,
    write_snapshot, LogHead, ManifestEntry, Partition, PutRecord, RecoveryMode, RecoveryRegistry,
};
use crate::faas::{DeploymentId, FaasConfig, FaasError, Handled, InvokeCtx, Platform, Work};
use crate::metering::{Category, HitStats, Ledger};
use crate::time::SimTime;

const NOOP_EXEC: Duration = Duration::from_millis(1);

#[derive(Debug)]
struct FunctionInfo {
    fg: FgId,
    removed: bool,
    ready_at: SimTime,
    carried: LogHead,
    stats: MemStats,
    queues: RequestQueues,
    delay: Duration,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MappingEntry {
    pub id: DeploymentId,
    pub bucket: u64,
    pub partition: Partition,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectMeta {
    pub size: u64,
    /// Original length of each piece, in piece order.
    pub pieces: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PutAck {
    pub acked_at: SimTime,
    pub chunks: usize,
}

/// The first `d` chunks of a piece to arrive, enough to decode it.
#[derive(Clone, Debug)]
pub struct PieceRead {
    pub piece_id: u32,
    pub original_size: u64,
    pub chunks: Vec<(u16, Bytes)>,
    pub ready_at: SimTime,
    /// Arrival time of every chunk requested, fastest first.
    pub arrivals: Vec<(u16, SimTime)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DaemonEvent {
    Rotated { at: SimTime, index: u64, states: Vec<(u64, BucketState)> },
    ScaledOut { at: SimTime, fg: FgId, bucket: u64 },
    Sealed { at: SimTime, fg: FgId },
    Placed { at: SimTime, chunk: ChunkRef, id: DeploymentId, fg: FgId },
    ChunkArrived { at: SimTime, chunk: ChunkRef, from_memory: bool },
    Decoded { at: SimTime, key: ObjectKey, piece: u32 },
    DemandCached { at: SimTime, chunk: ChunkRef, id: DeploymentId },
    Warmup { at: SimTime, id: DeploymentId },
    Reclaimed { at: SimTime, id: DeploymentId },
    FailureDetected { at: SimTime, id: DeploymentId, diff: u64 },
    RecoveryStarted { at: SimTime, id: DeploymentId, parallel: bool, members: usize },
    RecoveryFinished { at: SimTime, id: DeploymentId },
    Rerouted { at: SimTime, chunk: ChunkRef, member: DeploymentId },
    Removed { at: SimTime, id: DeploymentId, reason: &'static str },
    MigrationRound { at: SimTime, key: ObjectKey, moved: usize },
    MigrationDone { at: SimTime, key: ObjectKey },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueueEvent {
    pub at: SimTime,
    pub start: SimTime,
    pub id: DeploymentId,
    pub kind: QueueKind,
    pub size: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FunctionSample {
    pub at: SimTime,
    /// Live functions in the current and active buckets.
    pub active: usize,
    pub degraded: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecoveryReport {
    pub storage: DeploymentId,
    pub detected_at: SimTime,
    pub diff: u64,
    pub parallel: bool,
    pub chunks: usize,
    pub bytes: u64,
    pub local_done: SimTime,
    /// When every lost chunk was servable again from some function.
    pub available_at: SimTime,
    pub member_chunks: Vec<(DeploymentId, usize)>,
    pub cascades: usize,
}

impl RecoveryReport {
    pub fn duration(&self) -> Duration {
        self.available_at - self.detected_at
    }
}

#[derive(Debug)]
struct Shard {
    member: DeploymentId,
    entries: Vec<ManifestEntry>,
    avail: BTreeMap<ChunkRef, SimTime>,
    done: SimTime,
    lost: bool,
}

#[derive(Debug)]
struct ActiveRecovery {
    report: usize,
    local: BTreeMap<ChunkRef, SimTime>,
    local_done: SimTime,
    shards: Vec<Shard>,
}

struct Arrival {
    at: SimTime,
    bytes: Bytes,
    from_memory: bool,
}

struct StoreItem {
    chunk: ChunkRef,
    size: u64,
    payload: Option<Bytes>,
    write_cos: bool,
}

enum StaleOutcome {
    Recovering,
    Removed,
}

struct Called<R> {
    value: R,
    latency: Duration,
}

pub struct Daemon {
    cfg: SmsConfig,
    source: u32,
    platform: Platform<FunctionRuntime>,
    cos: Arc<Cos>,
    hits: HitStats,
    rng: ChaCha8Rng,
    now: SimTime,

    current: u64,
    buckets: BTreeMap<u64, IBucket>,
    fgs: BTreeMap<FgId, FunctionGroup>,
    next_fg: u64,
    functions: BTreeMap<DeploymentId, FunctionInfo>,
    live: IndexSet<DeploymentId>,
    pending_seal: BTreeSet<FgId>,
    open_fgs: BTreeSet<FgId>,

    mapping: BTreeMap<ChunkRef, DeploymentId>,
    objects: BTreeMap<ObjectKey, ObjectMeta>,
    cache_index: BTreeMap<ChunkRef, BTreeSet<DeploymentId>>,
    cached_by: BTreeMap<DeploymentId, BTreeSet<ChunkRef>>,

    registry: RecoveryRegistry,
    recoveries: BTreeMap<DeploymentId, ActiveRecovery>,
    recovery_due: BTreeSet<(SimTime, DeploymentId)>,
    retention: BTreeMap<(SimTime, u64), (DeploymentId, Vec<ChunkRef>)>,
    next_retention: u64,
    reports: Vec<RecoveryReport>,

    migrations: BTreeMap<ObjectKey, Migration>,
    migration_due: BTreeSet<(SimTime, ObjectKey)>,

    warmups: BTreeSet<(SimTime, DeploymentId)>,
    warmup_at: BTreeMap<DeploymentId, SimTime>,
    warmups_sent: u64,

    next_sample: SimTime,
    samples: Vec<FunctionSample>,
    events: Option<Vec<DaemonEvent>>,
    queue_log: Option<Vec<QueueEvent>>,
}

impl Daemon {
    /// `source` identifies this daemon in the ledger and in COS accounting;
    /// deployment ids are offset by it so daemons never share an id.
    pub fn new(
        cfg: SmsConfig,
        faas: FaasConfig,
        cos: Arc<Cos>,
        ledger: Ledger,
        hits: HitStats,
        source: u32,
    ) -> Result<Self, SmsError> {
        cfg.validate()?;
        let platform = Platform::new(faas, ledger, source, (source as u64) << 48)?;
        let mut buckets = BTreeMap::new();
        buckets.insert(0, IBucket { index: 0, state: BucketState::Current, fgs: Vec::new() });
        let trace = cfg.trace_events;
        Ok(Daemon {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ ((source as u64) << 32)),
            next_sample: SimTime::from_millis(cfg.sample_every_ms),
            cfg,
            source,
            platform,
            cos,
            hits,
            now: SimTime::ZERO,
            current: 0,
            buckets,
            fgs: BTreeMap::new(),
            next_fg: 0,
            functions: BTreeMap::new(),
            live: IndexSet::new(),
            pending_seal: BTreeSet::new(),
            open_fgs: BTreeSet::new(),
            mapping: BTreeMap::new(),
            objects: BTreeMap::new(),
            cache_index: BTreeMap::new(),
            cached_by: BTreeMap::new(),
            registry: RecoveryRegistry::default(),
            recoveries: BTreeMap::new(),
            recovery_due: BTreeSet::new(),
            retention: BTreeMap::new(),
            next_retention: 0,
            reports: Vec::new(),
            migrations: BTreeMap::new(),
            migration_due: BTreeSet::new(),
            warmups: BTreeSet::new(),
            warmup_at: BTreeMap::new(),
            warmups_sent: 0,
            samples: Vec::new(),
            events: trace.then(Vec::new),
            queue_log: trace.then(Vec::new),
        })
    }

    pub fn config(&self) -> &SmsConfig {
        &self.cfg
    }

    pub fn source(&self) -> u32 {
        self.source
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn platform(&self) -> &Platform<FunctionRuntime> {
        &self.platform
    }

    pub fn current_bucket(&self) -> u64 {
        self.current
    }

    pub fn buckets(&self) -> impl Iterator<Item = &IBucket> {
        self.buckets.values()
    }

    pub fn function_groups(&self) -> impl Iterator<Item = &FunctionGroup> {
        self.fgs.values()
    }

    pub fn fg_of(&self, id: DeploymentId) -> Option<FgId> {
        self.functions.get(&id).map(|f| f.fg)
    }

    /// Deployments not yet removed from SMS.
    pub fn live_functions(&self) -> usize {
        self.live.len()
    }

    pub fn object(&self, key: &ObjectKey) -> Option<&ObjectMeta> {
        self.objects.get(key)
    }

    pub fn objects(&self) -> impl Iterator<Item = (&ObjectKey, &ObjectMeta)> {
        self.objects.iter()
    }

    pub fn mapping_entry(&self, chunk: &ChunkRef) -> Option<MappingEntry> {
        let id = *self.mapping.get(chunk)?;
        Some(MappingEntry { id, bucket: self.bucket_of(id), partition: Partition::Storage })
    }

    pub fn mapping(&self) -> impl Iterator<Item = (&ChunkRef, DeploymentId)> {
        self.mapping.iter().map(|(c, id)| (c, *id))
    }

    pub fn events(&self) -> &[DaemonEvent] {
        self.events.as_deref().unwrap_or(&[])
    }

    pub fn queue_events(&self) -> &[QueueEvent] {
        self.queue_log.as_deref().unwrap_or(&[])
    }

    pub fn samples(&self) -> &[FunctionSample] {
        &self.samples
    }

    pub fn recovery_reports(&self) -> &[RecoveryReport] {
        &self.reports
    }

    pub fn warmups_sent(&self) -> u64 {
        self.warmups_sent
    }

    pub fn migrations_in_flight(&self) -> usize {
        self.migrations.len()
    }

    pub fn registry(&self) -> &RecoveryRegistry {
        &self.registry
    }

    pub fn bucket_state_of(&self, id: DeploymentId) -> Option<BucketState> {
        let f = self.functions.get(&id)?;
        Some(self.buckets[&self.fgs[&f.fg].bucket].state)
    }

    /// Adds a fixed delay to every request `id` serves.
    pub fn inject_delay(&mut self, id: DeploymentId, delay: Duration) {
        if let Some(f) = self.functions.get_mut(&id) {
            f.delay = delay;
        }
    }

    /// Kills `id`'s instance now, as the provider would.
    pub fn reclaim(&mut self, id: DeploymentId) -> bool {
        let killed = self.platform.reclaim(id);
        if killed {
            let now = self.now;
            self.on_reclaimed(&[id], now);
        }
        killed
    }

    fn emit(&mut self, e: impl FnOnce() -> DaemonEvent) {
        if let Some(v) = &mut self.events {
            v.push(e());
        }
    }

    fn o(&self) -> usize {
        self.cfg.ec.total() as usize
    }

    fn bucket_of(&self, id: DeploymentId) -> u64 {
        self.fgs[&self.functions[&id].fg].bucket
    }

    fn state_of(&self, id: DeploymentId) -> BucketState {
        self.buckets[&self.bucket_of(id)].state
    }

    fn is_live(&self, id: DeploymentId) -> bool {
        self.functions.get(&id).is_some_and(|f| !f.removed)
    }

    fn chunk_len(&self, original: u64) -> u64 {
        self.cfg.ec.chunk_len(original)
    }

    fn kind(&self, size: u64) -> QueueKind {
        QueueKind::for_size(size, self.cfg.queues.size_threshold)
    }

    // ---- event loop ----

    fn next_rotation(&self) -> SimTime {
        SimTime::from_micros((self.current + 1) * self.cfg.interval().as_micros() as u64)
    }

    /// Runs every timer due at or before `t`: reclamation, rotation, recovery
    /// phase changes, retention expiry, migration rounds, warmups and
    /// periodic samples.
    pub fn advance_to(&mut self, t: SimTime) {
        loop {
            let reclaim = self.platform.next_event().unwrap_or(SimTime::MAX);
            let rotation = self.next_rotation();
            let recovery = self.recovery_due.first().map_or(SimTime::MAX, |e| e.0);
            let retention = self.retention.keys().next().map_or(SimTime::MAX, |k| k.0);
            let migration = self.migration_due.first().map_or(SimTime::MAX, |e| e.0);
            let warmup = self.warmups.first().map_or(SimTime::MAX, |e| e.0);
            let sample = self.next_sample;
            let next = [reclaim, rotation, recovery, retention, migration, warmup, sample]
                .into_iter()
                .min()
                .unwrap();
            if next > t {
                break;
            }
            self.now = self.now.max(next);
            if reclaim == next {
                let killed = self.platform.tick(next);
                self.on_reclaimed(&killed, next);
            } else if rotation == next {
                self.rotate(next);
            } else if recovery == next {
                let (_, id) = self.recovery_due.pop_first().unwrap();
                self.finish_recovery(id, next);
            } else if retention == next {
                let (_, (member, chunks)) = self.retention.pop_first().unwrap();
                self.expire_retention(member, &chunks);
            } else if migration == next {
                let (_, key) = self.migration_due.pop_first().unwrap();
                self.migration_round(key, next);
            } else if warmup == next {
                let (_, id) = self.warmups.pop_first().unwrap();
                self.warmup_at.remove(&id);
                self.warmup(id, next);
            } else {
                self.take_sample(next);
                self.next_sample = next + Duration::from_millis(self.cfg.sample_every_ms);
            }
        }
        self.now = self.now.max(t);
    }

    /// Advances to `t` and charges COS storage up to it.
    pub fn finish(&mut self, t: SimTime) {
        self.advance_to(t);
        self.cos.accrue(self.now, self.source);
    }

    fn take_sample(&mut self, at: SimTime) {
        self.cos.accrue(at, self.source);
        let (mut active, mut degraded) = (0, 0);
        for id in &self.live {
            match self.state_of(*id) {
                BucketState::Current | BucketState::Active => active += 1,
                BucketState::Degraded => degraded += 1,
                BucketState::Retired => {}
            }
        }
        self.samples.push(FunctionSample { at, active, degraded });
    }

    // ---- buckets ----

    /// Opens the bucket for the interval starting at `at` and ages the rest.
    pub fn rotate(&mut self, at: SimTime) -> RotationReport {
        let index = at.slot(self.cfg.interval()).max(self.current + 1);
        let prev = self.current;
        let mut report = RotationReport { index, ..Default::default() };

        let old = self.buckets.get_mut(&prev).unwrap();
        let (carried, kept): (Vec<FgId>, Vec<FgId>) =
            old.fgs.iter().partition(|fg| self.fgs[fg].status == FgStatus::Open);
        old.fgs = kept;
        for fg in &carried {
            self.fgs.get_mut(fg).unwrap().bucket = index;
        }
        report.carried = carried.clone();
        self.buckets.insert(index, IBucket { index, state: BucketState::Current, fgs: carried });
        self.current = index;

        let (m, n) = (self.cfg.window.degrade_after, self.cfg.window.retire_after);
        let indices: Vec<u64> = self.buckets.keys().copied().filter(|b| *b != index).collect();
        for b in indices {
            let state = BucketState::for_age(index - b, m, n);
            let bucket = self.buckets.get_mut(&b).unwrap();
            if state == bucket.state {
                continue;
            }
            debug_assert!(state > bucket.state);
            bucket.state = state;
            let fgs = bucket.fgs.clone();
            let members: Vec<DeploymentId> = fgs.iter().flat_map(|fg| self.fgs[fg].members.clone()).collect();
            match state {
                BucketState::Degraded => {
                    report.degraded.push(b);
                    for fg in &fgs {
                        self.seal(*fg, at);
                    }
                    for id in members {
                        if self.is_live(id) {
                            self.schedule_warmup(id);
                        }
                    }
                }
                BucketState::Retired => {
                    report.retired.push(b);
                    for id in members {
                        if self.is_live(id) {
                            self.remove_function(id, at, "retired");
                            report.removed_functions += 1;
                        }
                    }
                }
                _ => {}
            }
        }
        let states: Vec<(u64, BucketState)> = self.buckets.values().map(|b| (b.index, b.state)).collect();
        self.emit(|| DaemonEvent::Rotated { at, index, states });
        report
    }

    fn seal(&mut self, fg: FgId, at: SimTime) {
        let g = self.fgs.get_mut(&fg).unwrap();
        if g.status == FgStatus::Open {
            g.status = FgStatus::Sealed;
            self.open_fgs.remove(&fg);
            self.emit(|| DaemonEvent::Sealed { at, fg });
        }
    }

    fn flush_seals(&mut self, at: SimTime) {
        let hardcap = self.cfg.hardcap();
        let open: Vec<FgId> = self.open_fgs.iter().copied().collect();
        for fg in open {
            if self.fgs[&fg].members.iter().any(|id| self.functions[id].stats.storage_bytes >= hardcap) {
                self.pending_seal.insert(fg);
            }
        }
        for fg in std::mem::take(&mut self.pending_seal) {
            self.seal(fg, at);
        }
    }

    fn open_functions(&self) -> Vec<DeploymentId> {
        self.open_fgs.iter().flat_map(|fg| self.fgs[fg].members.iter().copied()).collect()
    }

    fn current_functions(&self) -> Vec<DeploymentId> {
        self.buckets[&self.current]
            .fgs
            .iter()
            .flat_map(|fg| self.fgs[fg].members.iter().copied())
            .filter(|id| self.is_live(*id))
            .collect()
    }

    /// Launches one function group in the current bucket.
    pub fn scale_out(&mut self, at: SimTime) -> Result<FgId, SmsError> {
        let fg = FgId(self.next_fg);
        self.next_fg += 1;
        let g = self.cfg.recovery.group_size;
        let mut members = Vec::with_capacity(self.o());
        for _ in 0..self.o() {
            let dep = self.platform.deploy(self.cfg.memory_limit, at)?;
            let id = dep.id;
            let picks = index::sample(&mut self.rng, self.live.len(), (2 * g).min(self.live.len()));
            let candidates: Vec<DeploymentId> = picks.iter().map(|i| self.live[i]).collect();
            self.registry.assign(id, &candidates, g, &mut self.rng);
            self.functions.insert(
                id,
                FunctionInfo {
                    fg,
                    removed: false,
                    ready_at: dep.ready_at,
                    carried: LogHead::default(),
                    stats: MemStats::default(),
                    queues: RequestQueues::default(),
                    delay: Duration::ZERO,
                },
            );
            self.live.insert(id);
            members.push(id);
        }
        let bucket = self.current;
        self.fgs.insert(fg, FunctionGroup { id: fg, members: members.clone(), status: FgStatus::Open, bucket });
        self.buckets.get_mut(&bucket).unwrap().fgs.push(fg);
        self.open_fgs.insert(fg);
        for id in members {
            self.schedule_warmup(id);
        }
        self.emit(|| DaemonEvent::ScaledOut { at, fg, bucket });
        Ok(fg)
    }

    fn remove_function(&mut self, id: DeploymentId, at: SimTime, reason: &'static str) {
        let Some(f) = self.functions.get_mut(&id) else { return };
        if f.removed {
            return;
        }
        f.removed = true;
        self.live.swap_remove(&id);
        self.platform.remove(id);
        if let Some(due) = self.warmup_at.remove(&id) {
            self.warmups.remove(&(due, id));
        }
        for c in self.cached_by.remove(&id).unwrap_or_default() {
            if let Some(s) = self.cache_index.get_mut(&c) {
                s.remove(&id);
            }
        }
        if let Some(storage) = self.registry.engaged_with(id) {
            self.mark_member_lost(storage, id);
        }
        self.abort_recovery(id);
        self.registry.forget(id);
        self.emit(|| DaemonEvent::Removed { at, id, reason });
    }

    // ---- warmups ----

    fn warmup_interval(&self, id: DeploymentId) -> Duration {
        let ms = match self.state_of(id) {
            BucketState::Degraded => self.cfg.window.warmup_degraded_ms,
            _ => self.cfg.window.warmup_active_ms,
        };
        Duration::from_millis(ms)
    }

    fn schedule_warmup(&mut self, id: DeploymentId) {
        if let Some(old) = self.warmup_at.remove(&id) {
            self.warmups.remove(&(old, id));
        }
        if !self.is_live(id) {
            return;
        }
        let Some(last) = self.platform.last_invoked_at(id) else { return };
        let due = last + self.warmup_interval(id);
        self.warmups.insert((due, id));
        self.warmup_at.insert(id, due);
    }

    fn warmup(&mut self, id: DeploymentId, at: SimTime) {
        if !self.is_live(id) {
            return;
        }
        let last = self.platform.last_invoked_at(id).unwrap_or(at);
        if last + self.warmup_interval(id) > at {
            self.schedule_warmup(id);
            return;
        }
        if self.check_stale(id, at) != Ok(false) {
            return;
        }
        if self.call(id, Category::Warmup, "warmup", at, |_, _| ((), Work { bytes_moved: 0, extra: NOOP_EXEC })).is_ok()
        {
            self.warmups_sent += 1;
            self.emit(|| DaemonEvent::Warmup { at, id });
        }
    }

    // ---- invocation plumbing ----

    /// Whether `id`'s instance has lost state the daemon knows it acked.
    fn detect(&self, id: DeploymentId) -> Option<u64> {
        let carried = &self.functions.get(&id)?.carried;
        match self.platform.peek(id) {
            Some(rt) => match rt.check(carried) {
                crate::durability::Consistency::UpToDate => None,
                crate::durability::Consistency::Failed { diff } => Some(diff),
            },
            None if carried.term > 0 => Some(carried.diff_rank),
            None => None,
        }
    }

    /// Runs failure handling if `id` is stale. `Err(())` means it was removed.
    fn check_stale(&mut self, id: DeploymentId, at: SimTime) -> Result<bool, ()> {
        match self.detect(id) {
            None => Ok(false),
            Some(diff) => match self.on_stale(id, diff, at) {
                StaleOutcome::Recovering => Ok(true),
                StaleOutcome::Removed => Err(()),
            },
        }
    }

    /// Invokes `body` on `id` and reconciles the piggybacked log head and
    /// memory statistics.
    fn call<R>(
        &mut self,
        id: DeploymentId,
        category: Category,
        cause: &'static str,
        at: SimTime,
        body: impl FnOnce(&mut FunctionRuntime, &InvokeCtx) -> (R, Work),
    ) -> Result<Called<R>, FaasError> {
        let inv = self.platform.invoke(id, category, cause, at, |rt, ctx| {
            let (value, work) = body(rt, ctx);
            Handled::new(value, work)
        })?;
        if let Some(rt) = self.platform.peek(id) {
            let f = self.functions.get_mut(&id).unwrap();
            f.carried = rt.log.head;
            f.stats = rt.stats();
        }
        self.schedule_warmup(id);
        Ok(Called { value: inv.response, latency: inv.latency })
    }

    fn log_queue(&mut self, at: SimTime, start: SimTime, id: DeploymentId, kind: QueueKind, size: u64) {
        if let Some(v) = &mut self.queue_log {
            v.push(QueueEvent { at, start, id, kind, size });
        }
    }

    fn queue_start(&mut self, id: DeploymentId, kind: QueueKind, at: SimTime) -> SimTime {
        let f = self.functions.get_mut(&id).unwrap();
        f.queues.get(kind).start_time(at).max(f.ready_at)
    }

    fn queue_full(&mut self, id: DeploymentId, kind: QueueKind, at: SimTime) -> bool {
        let cap = self.cfg.queues.capacity;
        match self.functions.get_mut(&id) {
            Some(f) if !f.removed => f.queues.get(kind).is_full(at, cap),
            _ => true,
        }
    }

    fn book(&mut self, id: DeploymentId, kind: QueueKind, at: SimTime, start: SimTime, service: Duration, size: u64) -> SimTime {
        let f = self.functions.get_mut(&id).unwrap();
        let finish = f.queues.get(kind).book(start, service + f.delay);
        self.log_queue(at, start, id, kind, size);
        finish
    }

    /// Stores chunks on `id` through one invocation: COS traffic first, then
    /// the sealed log node, then memory. Returns the finish time and payloads.
    fn store_batch(
        &mut self,
        id: DeploymentId,
        items: Vec<StoreItem>,
        at: SimTime,
        cause: &'static str,
    ) -> Result<(SimTime, Vec<Bytes>), SmsError> {
        let size = items.iter().map(|i| i.size).max().unwrap_or(0);
        let kind = self.kind(size);
        let start = self.queue_start(id, kind, at);
        let stale = self.check_stale(id, start).map_err(|_| SmsError::FunctionRemoved(id))?;
        let cos = Arc::clone(&self.cos);
        let source = self.source;
        let mem = self.cfg.memory_limit;
        let window = Duration::from_millis(self.cfg.recovery.consolidation_window_ms);
        let every = self.cfg.recovery.snapshot_every;
        let called = self.call(id, Category::Io, cause, start, move |rt, ctx| {
            let mut cos_time = Duration::ZERO;
            let mut moved = 0u64;
            let mut payloads = Vec::with_capacity(items.len());
            let mut records = Vec::with_capacity(items.len());
            for item in &items {
                let key = CosKey::Chunk(item.chunk.clone());
                let bytes = match &item.payload {
                    Some(b) => b.clone(),
                    None => match cos.get(ctx.at, source, &key) {
                        Ok((b, t)) => {
                            cos_time += t;
                            b
                        }
                        Err(e) => return (Err(SmsError::from(e)), Work { bytes_moved: moved, extra: cos_time }),
                    },
                };
                if item.write_cos {
                    match cos.put(ctx.at, source, &key, bytes.clone()) {
                        Ok(t) => cos_time += t,
                        Err(e) => return (Err(SmsError::from(e)), Work { bytes_moved: moved, extra: cos_time }),
                    }
                }
                moved += bytes.len() as u64;
                records.push((ctx.at, PutRecord::new(item.chunk.clone(), bytes.len() as u64)));
                payloads.push(bytes);
            }
            match append_and_seal(&mut rt.log, ctx.id, records, window, &cos, source) {
                Ok(s) => cos_time += s.cos_time,
                Err(e) => return (Err(SmsError::from(e)), Work { bytes_moved: moved, extra: cos_time }),
            }
            for (item, bytes) in items.iter().zip(&payloads) {
                rt.store(item.chunk.clone(), bytes.clone(), mem);
            }
            rt.log.puts_since_snapshot += 1;
            if rt.log.puts_since_snapshot >= every {
                let entries = rt.snapshot_entries();
                if let Ok(t) = write_snapshot(&mut rt.log, ctx.id, entries, &cos, ctx.at, source) {
                    cos_time += t;
                }
            }
            (Ok(payloads), Work { bytes_moved: moved, extra: cos_time })
        })?;
        let mut latency = called.latency;
        if stale {
            latency += self.cold_penalty();
        }
        let finish = self.book(id, kind, at, start, latency, size);
        called.value.map(|p| (finish, p))
    }

    fn cold_penalty(&self) -> Duration {
        let c = self.platform.config();
        Duration::from_millis(c.cold_latency_ms.saturating_sub(c.warm_latency_ms))
    }

    // ---- placement ----

    /// Places one chunk with the probing walk over the current bucket's open
    /// functions and reserves its storage bytes on the chosen function.
    pub fn place_chunk(&mut self, chunk_id: u16, size: u64, at: SimTime) -> Result<DeploymentId, SmsError> {
        let hardcap = self.cfg.hardcap();
        if size > hardcap {
            return Err(SmsError::ChunkTooLarge { size, hardcap });
        }
        let o = self.o();
        let kind = self.kind(size);
        let mut view = OpenView { list: self.open_functions(), d: self, size, kind, at, hardcap };
        let i = place(chunk_id as usize, o, &mut view)?;
        let id = view.list[i];
        Ok(id)
    }

    // ---- PUT ----

    /// Stores an already encoded object. Acks once every chunk and its log
    /// node are durable in COS.
    pub fn handle_put(
        &mut self,
        key: &ObjectKey,
        size: u64,
        pieces: Vec<Vec<Chunk>>,
        at: SimTime,
    ) -> Result<PutAck, SmsError> {
        self.advance_to(at);
        let at = at.max(self.now);
        let hardcap = self.cfg.hardcap();
        if let Some(c) = pieces.iter().flatten().find(|c| c.size() > hardcap) {
            return Err(SmsError::ChunkTooLarge { size: c.size(), hardcap });
        }
        let mut batches: BTreeMap<DeploymentId, Vec<Chunk>> = BTreeMap::new();
        let mut placed = Vec::new();
        for chunk in pieces.iter().flatten() {
            let id = self.place_chunk(chunk.chunk_id, chunk.size(), at)?;
            let fg = self.functions[&id].fg;
            self.emit(|| DaemonEvent::Placed { at, chunk: chunk.chunk_ref(), id, fg });
            placed.push((chunk.chunk_ref(), id));
            batches.entry(id).or_default().push(chunk.clone());
        }

        let mut acked_at = at;
        let mut failure = None;
        for (id, chunks) in batches {
            let piece = chunks[0].piece_id;
            let items = chunks
                .into_iter()
                .map(|c| StoreItem { chunk: c.chunk_ref(), size: c.size(), payload: Some(c.payload), write_cos: true })
                .collect();
            match self.store_batch(id, items, at, "put") {
                Ok((finish, _)) => acked_at = acked_at.max(finish),
                Err(e) => {
                    failure.get_or_insert((piece, e.to_string()));
                }
            }
        }
        self.flush_seals(at);
        if let Some((piece, reason)) = failure {
            return Err(SmsError::PartialWriteFailure { key: key.clone(), piece, reason });
        }
        let chunks = placed.len();
        self.forget_object(key);
        for (c, id) in placed {
            self.mapping.insert(c, id);
        }
        let meta = ObjectMeta { size, pieces: pieces.iter().map(|p| p[0].original_size).collect() };
        self.objects.insert(key.clone(), meta);
        Ok(PutAck { acked_at, chunks })
    }

    /// Drops every daemon-side trace of an object about to be overwritten.
    fn forget_object(&mut self, key: &ObjectKey) {
        let Some(meta) = self.objects.remove(key) else { return };
        if self.migrations.remove(key).is_some() {
            self.migration_due.retain(|(_, k)| k != key);
        }
        for piece in 0..meta.pieces.len() as u32 {
            for cid in 0..self.o() as u16 {
                let c = ChunkRef::new(key.clone(), piece, cid);
                self.mapping.remove(&c);
                for id in self.cache_index.remove(&c).unwrap_or_default() {
                    if let Some(s) = self.cached_by.get_mut(&id) {
                        s.remove(&c);
                    }
                    if let Some(rt) = self.platform.peek_mut(id) {
                        rt.cache_remove(&c);
                    }
                }
                for rec in self.recoveries.values_mut() {
                    rec.local.remove(&c);
                    for shard in &mut rec.shards {
                        shard.avail.remove(&c);
                    }
                }
            }
        }
    }

    // ---- GET ----

    /// Reads one whole object, decoding piece by piece.
    pub fn handle_get(&mut self, key: &ObjectKey, at: SimTime) -> Result<(Bytes, SimTime), SmsError> {
        self.advance_to(at);
        let meta = self.objects.get(key).cloned().ok_or_else(|| SmsError::NotFound(key.clone()))?;
        let mut out = BytesMut::with_capacity(meta.size as usize);
        let mut done = at;
        for piece in 0..meta.pieces.len() as u32 {
            let read = self.get_piece(key, piece, at)?;
            done = done.max(read.ready_at);
            out.extend_from_slice(&decode(&read.chunks, self.cfg.ec, read.original_size)?);
        }
        Ok((out.freeze(), done))
    }

    /// Requests all O chunks of a piece and returns the first `d` to arrive.
    pub fn get_piece(&mut self, key: &ObjectKey, piece_id: u32, at: SimTime) -> Result<PieceRead, SmsError> {
        self.advance_to(at);
        let at = at.max(self.now);
        let meta = self.objects.get(key).ok_or_else(|| SmsError::NotFound(key.clone()))?;
        let original_size = *meta.pieces.get(piece_id as usize).ok_or_else(|| SmsError::NotFound(key.clone()))?;
        let size = self.chunk_len(original_size);
        let kind = self.kind(size);

        let mut arrivals = Vec::with_capacity(self.o());
        let mut degraded = false;
        for cid in 0..self.o() as u16 {
            let c = ChunkRef::new(key.clone(), piece_id, cid);
            let id = self.mapping[&c];
            let arrival = if !self.is_live(id) {
                self.migrate_on_demand(&c, size, at)
            } else {
                degraded |= self.state_of(id) == BucketState::Degraded;
                self.read_chunk(&c, id, kind, size, at)
            };
            match arrival {
                Ok(a) => {
                    self.hits.record(a.from_memory);
                    let (t, from_memory) = (a.at, a.from_memory);
                    self.emit(|| DaemonEvent::ChunkArrived { at: t, chunk: c.clone(), from_memory });
                    arrivals.push((a.at, cid, a.bytes));
                }
                Err(SmsError::Cos(_)) | Err(SmsError::ScaleOutFailure(_)) => {}
                Err(e) => return Err(e),
            }
        }
        arrivals.sort_by_key(|(t, cid, _)| (*t, *cid));
        let d = self.cfg.ec.data() as usize;
        if arrivals.len() < d {
            return Err(SmsError::DecodeFailure { key: key.clone(), piece: piece_id, have: arrivals.len() });
        }
        let ready_at = arrivals[d - 1].0;
        self.emit(|| DaemonEvent::Decoded { at: ready_at, key: key.clone(), piece: piece_id });
        if degraded {
            self.start_migration(key, at);
        }
        Ok(PieceRead {
            piece_id,
            original_size,
            chunks: arrivals[..d].iter().map(|(_, c, b)| (*c, b.clone())).collect(),
            ready_at,
            arrivals: arrivals.iter().map(|(t, c, _)| (*c, *t)).collect(),
        })
    }

    fn read_chunk(
        &mut self,
        c: &ChunkRef,
        primary: DeploymentId,
        kind: QueueKind,
        size: u64,
        at: SimTime,
    ) -> Result<Arrival, SmsError> {
        if self.in_recovery(primary, c, at) {
            return self.read_during_recovery(c, primary, kind, size, at);
        }
        let copies: Vec<DeploymentId> = self.cache_index.get(c).map(|s| s.iter().copied().collect()).unwrap_or_default();
        let mut best: Option<(SimTime, DeploymentId)> = None;
        for s in std::iter::once(primary).chain(copies) {
            if self.queue_full(s, kind, at) {
                continue;
            }
            let start = self.queue_start(s, kind, at);
            if best.is_none_or(|(t, _)| start < t) {
                best = Some((start, s));
            }
        }
        match best {
            Some((_, s)) => self.serve(c, s, primary, kind, size, at),
            None if self.cfg.cache_functions => {
                let s = self.demand_cache_target(c, primary, kind, at)?;
                self.emit(|| DaemonEvent::DemandCached { at, chunk: c.clone(), id: s });
                self.serve(c, s, primary, kind, size, at)
            }
            None => self.read_cos(c, at),
        }
    }

    fn in_recovery(&self, primary: DeploymentId, c: &ChunkRef, at: SimTime) -> bool {
        self.recoveries.get(&primary).and_then(|r| r.local.get(c)).is_some_and(|t| *t > at)
    }

    /// Serves `c` from `server`'s memory, loading it from COS into the cache
    /// space first when `server` is not the primary and lacks it.
    fn serve(
        &mut self,
        c: &ChunkRef,
        server: DeploymentId,
        primary: DeploymentId,
        kind: QueueKind,
        size: u64,
        at: SimTime,
    ) -> Result<Arrival, SmsError> {
        let start = self.queue_start(server, kind, at);
        let stale = match self.check_stale(server, start) {
            Ok(s) => s,
            Err(()) if server == primary => return self.migrate_on_demand(c, size, at),
            Err(()) => return self.read_cos(c, at),
        };
        if stale && server == primary && self.in_recovery(primary, c, start) {
            return self.read_during_recovery(c, primary, kind, size, start);
        }
        let cos = Arc::clone(&self.cos);
        let source = self.source;
        let mem = self.cfg.memory_limit;
        let load = server != primary;
        let holder = self.cache_index.get(c).is_some_and(|s| s.contains(&server));
        let chunk = c.clone();
        let called = self.call(server, Category::Io, "get", start, move |rt, ctx| match rt.read(&chunk) {
            Some((b, _)) if !load || holder => {
                let n = b.len() as u64;
                (Some((b, true)), Work { bytes_moved: n, extra: Duration::ZERO })
            }
            _ if load => match cos.get(ctx.at, source, &CosKey::Chunk(chunk.clone())) {
                Ok((b, t)) => {
                    rt.cache_insert(chunk.clone(), b.clone(), mem);
                    let n = b.len() as u64;
                    (Some((b, false)), Work { bytes_moved: n, extra: t })
                }
                Err(_) => (None, Work::default()),
            },
            _ => (None, Work::default()),
        })?;
        let mut latency = called.latency;
        if stale {
            latency += self.cold_penalty();
        }
        let finish = self.book(server, kind, at, start, latency, size);
        match called.value {
            Some((bytes, from_memory)) => {
                if load {
                    self.cache_index.entry(c.clone()).or_default().insert(server);
                    self.cached_by.entry(server).or_default().insert(c.clone());
                }
                Ok(Arrival { at: finish, bytes, from_memory })
            }
            None => self.read_cos(c, finish),
        }
    }

    fn read_cos(&mut self, c: &ChunkRef, at: SimTime) -> Result<Arrival, SmsError> {
        let (bytes, t) = self.cos.get(at, self.source, &CosKey::Chunk(c.clone()))?;
        Ok(Arrival { at: at + t, bytes, from_memory: false })
    }

    /// Walks the current bucket in placement order for a function that can
    /// take a cached copy of `c`; launches a new group if none can.
    fn demand_cache_target(
        &mut self,
        c: &ChunkRef,
        primary: DeploymentId,
        kind: QueueKind,
        at: SimTime,
    ) -> Result<DeploymentId, SmsError> {
        let list = self.current_functions();
        let o = self.o();
        let holders = self.cache_index.get(c).cloned().unwrap_or_default();
        let mut ptr = c.chunk_id as usize;
        while ptr < list.len() {
            let f = list[ptr];
            if f != primary && !holders.contains(&f) && !self.queue_full(f, kind, at) {
                return Ok(f);
            }
            ptr += o;
        }
        let fg = self.scale_out(at)?;
        Ok(self.fgs[&fg].members[c.chunk_id as usize])
    }

    /// Reads a chunk whose primary is still restoring it: from the shard
    /// owner if that is sooner, else from the primary once it is back.
    fn read_during_recovery(
        &mut self,
        c: &ChunkRef,
        primary: DeploymentId,
        kind: QueueKind,
        size: u64,
        at: SimTime,
    ) -> Result<Arrival, SmsError> {
        let rec = &self.recoveries[&primary];
        let local_t = rec.local[c];
        let mut via = None;
        if !rec.shards.is_empty() {
            let shard = &rec.shards[shard_of(c, rec.shards.len())];
            if let Some(t) = shard.avail.get(c) {
                if !shard.lost && *t < local_t {
                    via = Some((shard.member, *t));
                }
            }
        }
        if let Some((member, ready)) = via {
            if !self.queue_full(member, kind, at) {
                let start = self.queue_start(member, kind, at).max(ready);
                let cos = Arc::clone(&self.cos);
                let source = self.source;
                let chunk = c.clone();
                let inv = self.platform.invoke(member, Category::Io, "get_rerouted", start, move |rt, ctx| {
                    match rt.read(&chunk) {
                        Some((b, _)) => {
                            let n = b.len() as u64;
                            Handled::new(Some((b, true)), Work { bytes_moved: n, extra: Duration::ZERO })
                        }
                        None => match cos.get(ctx.at, source, &CosKey::Chunk(chunk.clone())) {
                            Ok((b, t)) => {
                                let n = b.len() as u64;
                                Handled::new(Some((b, false)), Work { bytes_moved: n, extra: t })
                            }
                            Err(_) => Handled::new(None, Work::default()),
                        },
                    }
                })?;
                self.schedule_warmup(member);
                self.emit(|| DaemonEvent::Rerouted { at, chunk: c.clone(), member });
                let finish = self.book(member, kind, at, start, inv.latency, size);
                return match inv.response {
                    Some((bytes, from_memory)) => Ok(Arrival { at: finish, bytes, from_memory }),
                    None => self.read_cos(c, finish),
                };
            }
        }
        if self.queue_full(primary, kind, at) {
            return self.read_cos(c, at);
        }
        let start = self.queue_start(primary, kind, at).max(local_t);
        let chunk = c.clone();
        let called = self.call(primary, Category::Io, "get", start, move |rt, _| match rt.read(&chunk) {
            Some((b, _)) => {
                let n = b.len() as u64;
                (Some(b), Work { bytes_moved: n, extra: Duration::ZERO })
            }
            None => (None, Work::default()),
        })?;
        let finish = self.book(primary, kind, at, start, called.latency, size);
        match called.value {
            Some(bytes) => Ok(Arrival { at: finish, bytes, from_memory: true }),
            None => self.read_cos(c, finish),
        }
    }

    // ---- migration ----

    /// Synchronously moves one chunk from COS into the current bucket.
    fn migrate_on_demand(&mut self, c: &ChunkRef, size: u64, at: SimTime) -> Result<Arrival, SmsError> {
        let id = self.place_chunk(c.chunk_id, size, at)?;
        let item = StoreItem { chunk: c.clone(), size, payload: None, write_cos: false };
        let (finish, mut payloads) = self.store_batch(id, vec![item], at, "migrate")?;
        self.mapping.insert(c.clone(), id);
        if let Some(m) = self.migrations.get_mut(&c.key) {
            m.remaining.retain(|r| r != c);
        }
        self.flush_seals(at);
        Ok(Arrival { at: finish, bytes: payloads.pop().unwrap(), from_memory: false })
    }

    fn outside_current(&self, key: &ObjectKey) -> Vec<ChunkRef> {
        let Some(meta) = self.objects.get(key) else { return Vec::new() };
        let mut out = Vec::new();
        for piece in 0..meta.pieces.len() as u32 {
            for cid in 0..self.o() as u16 {
                let c = ChunkRef::new(key.clone(), piece, cid);
                let id = self.mapping[&c];
                if !self.is_live(id) || self.bucket_of(id) != self.current {
                    out.push(c);
                }
            }
        }
        out
    }

    /// Starts a lazy migration of `key` into the current bucket unless one is
    /// running or the object already lives there. Returns whether one started.
    pub fn start_migration(&mut self, key: &ObjectKey, at: SimTime) -> bool {
        if self.migrations.contains_key(key) {
            return false;
        }
        let chunks = self.outside_current(key);
        if chunks.is_empty() {
            return false;
        }
        let max = Duration::from_millis(self.cfg.migration.max_interval_ms);
        self.migrations.insert(key.clone(), Migration::new(key.clone(), chunks, at, max));
        let due = at + Duration::from_millis(self.cfg.migration.round_spacing_ms);
        self.migration_due.insert((due, key.clone()));
        true
    }

    fn migration_round(&mut self, key: ObjectKey, at: SimTime) {
        let Some(mut m) = self.migrations.remove(&key) else { return };
        let spacing = Duration::from_millis(self.cfg.migration.round_spacing_ms);
        let last = at + spacing > m.deadline;
        let n = round_size(m.remaining.len(), self.cfg.migration.fraction, last);
        m.remaining.shuffle(&mut self.rng);
        let batch: Vec<ChunkRef> = m.remaining.drain(..n).collect();
        let mut moved = 0;
        for c in batch {
            let size = self.chunk_len(self.objects[&key].pieces[c.piece_id as usize]);
            let result = self.place_chunk(c.chunk_id, size, at).and_then(|id| {
                let item = StoreItem { chunk: c.clone(), size, payload: None, write_cos: false };
                self.store_batch(id, vec![item], at, "migrate").map(|_| id)
            });
            match result {
                Ok(id) => {
                    m.moved.push((c, id));
                    moved += 1;
                }
                Err(_) => m.remaining.push(c),
            }
        }
        self.flush_seals(at);
        m.rounds.push(moved);
        self.emit(|| DaemonEvent::MigrationRound { at, key: key.clone(), moved });
        if m.remaining.is_empty() {
            for (c, id) in m.moved {
                self.mapping.insert(c, id);
            }
            self.emit(|| DaemonEvent::MigrationDone { at, key: key.clone() });
        } else {
            self.migration_due.insert((at + spacing, key.clone()));
            self.migrations.insert(key, m);
        }
    }

    // ---- recovery ----

    fn on_stale(&mut self, id: DeploymentId, diff: u64, at: SimTime) -> StaleOutcome {
        self.emit(|| DaemonEvent::FailureDetected { at, id, diff });
        if self.state_of(id) == BucketState::Degraded {
            self.remove_function(id, at, "failed_degraded");
            return StaleOutcome::Removed;
        }
        match self.start_recovery(id, diff, at) {
            Ok(()) => StaleOutcome::Recovering,
            Err(_) => {
                self.remove_function(id, at, "unrecoverable");
                StaleOutcome::Removed
            }
        }
    }

    fn start_recovery(&mut self, id: DeploymentId, diff: u64, at: SimTime) -> Result<(), SmsError> {
        self.abort_recovery(id);
        let carried = self.functions[&id].carried;
        let cos = Arc::clone(&self.cos);
        let source = self.source;
        let mem = self.cfg.memory_limit;
        let inv = self.platform.invoke(id, Category::Recovery, "recovery_local", at, move |rt, _| {
            let manifest = match build_manifest(&cos, id, &carried, at, source) {
                Ok(m) => m,
                Err(e) => return Handled::new(Err(SmsError::from(e)), Work::default()),
            };
            let mut extra = manifest.fetch_time;
            let mut moved = 0;
            let mut entries = Vec::new();
            for (chunk, (size, part)) in replay(&manifest) {
                if part != Partition::Storage {
                    continue;
                }
                if let Ok((b, t)) = cos.get(at, source, &CosKey::Chunk(chunk.clone())) {
                    extra += t;
                    moved += b.len() as u64;
                    rt.store(chunk.clone(), b, mem);
                    entries.push(ManifestEntry { chunk, size, partition: part });
                }
            }
            rt.log.head = carried;
            rt.log.puts_since_snapshot = 0;
            Handled::new(Ok((entries, manifest.fetch_time)), Work { bytes_moved: moved, extra })
        })?;
        let (entries, fetch_time) = inv.response?;
        self.schedule_warmup(id);
        if let Some(rt) = self.platform.peek(id) {
            self.functions.get_mut(&id).unwrap().stats = rt.stats();
        }

        let overhead = inv.latency - inv.exec;
        let (local_avail, local_done) = download_schedule(at + overhead + fetch_time, &entries, |n| self.cos.access_time(n));
        let local: BTreeMap<ChunkRef, SimTime> =
            entries.iter().map(|e| e.chunk.clone()).zip(local_avail).collect();

        let g = self.cfg.recovery.group_size;
        let parallel = self.cfg.recovery.parallel
            && recovery_decision(diff, g, self.cfg.recovery.parallel_multiplier) == RecoveryMode::Parallel;
        let mut shards = Vec::new();
        if parallel {
            let pool: Vec<DeploymentId> = self.live.iter().copied().filter(|m| *m != id).collect();
            let members = self.registry.engage(id, &pool, g, &mut self.rng);
            if !members.is_empty() {
                for (member, part) in members.iter().zip(partition(&entries, members.len())) {
                    shards.push(self.run_shard(*member, part, at));
                }
            }
        }
        let available_at = local
            .iter()
            .map(|(c, t)| {
                shards
                    .get(if shards.is_empty() { 0 } else { shard_of(c, shards.len()) })
                    .and_then(|s| s.avail.get(c))
                    .map_or(*t, |m| (*m).min(*t))
            })
            .max()
            .unwrap_or(at);
        let report = RecoveryReport {
            storage: id,
            detected_at: at,
            diff,
            parallel: !shards.is_empty(),
            chunks: entries.len(),
            bytes: entries.iter().map(|e| e.size).sum(),
            local_done,
            available_at,
            member_chunks: shards.iter().map(|s| (s.member, s.entries.len())).collect(),
            cascades: 0,
        };
        let members = shards.len();
        self.emit(|| DaemonEvent::RecoveryStarted { at, id, parallel: members > 0, members });
        self.reports.push(report);
        self.recoveries.insert(id, ActiveRecovery { report: self.reports.len() - 1, local, local_done, shards });
        self.recovery_due.insert((local_done, id));
        Ok(())
    }

    /// Has `member` download its shard into its cache space.
    fn run_shard(&mut self, member: DeploymentId, entries: Vec<ManifestEntry>, at: SimTime) -> Shard {
        let cos = Arc::clone(&self.cos);
        let source = self.source;
        let mem = self.cfg.memory_limit;
        let list = entries.clone();
        let inv = self.platform.invoke(member, Category::Recovery, "recovery_shard", at, move |rt, _| {
            let mut extra = Duration::ZERO;
            let mut moved = 0;
            let mut kept = Vec::new();
            for e in &list {
                if let Ok((b, t)) = cos.get(at, source, &CosKey::Chunk(e.chunk.clone())) {
                    extra += t;
                    moved += b.len() as u64;
                    if rt.cache_insert(e.chunk.clone(), b, mem) {
                        kept.push(e.chunk.clone());
                    }
                }
            }
            Handled::new(kept, Work { bytes_moved: moved, extra })
        });
        self.schedule_warmup(member);
        let (kept, overhead) = match inv {
            Ok(inv) => (inv.response.into_iter().collect::<BTreeSet<_>>(), inv.latency - inv.exec),
            Err(_) => (BTreeSet::new(), Duration::ZERO),
        };
        let (times, done) = download_schedule(at + overhead, &entries, |n| self.cos.access_time(n));
        let avail = entries.iter().zip(times).filter(|(e, _)| kept.contains(&e.chunk)).map(|(e, t)| (e.chunk.clone(), t)).collect();
        Shard { member, entries, avail, done, lost: false }
    }

    fn finish_recovery(&mut self, id: DeploymentId, at: SimTime) {
        let Some(rec) = self.recoveries.remove(&id) else { return };
        self.registry.release(id);
        let retention = Duration::from_millis(self.cfg.recovery.retention_ms);
        for shard in rec.shards {
            if shard.lost || shard.avail.is_empty() {
                continue;
            }
            let token = self.next_retention;
            self.next_retention += 1;
            self.retention.insert((at + retention, token), (shard.member, shard.avail.into_keys().collect()));
        }
        self.emit(|| DaemonEvent::RecoveryFinished { at, id });
    }

    fn abort_recovery(&mut self, id: DeploymentId) {
        if let Some(rec) = self.recoveries.remove(&id) {
            self.recovery_due.remove(&(rec.local_done, id));
            self.registry.release(id);
        }
    }

    fn expire_retention(&mut self, member: DeploymentId, chunks: &[ChunkRef]) {
        let keep = self.cached_by.get(&member).cloned().unwrap_or_default();
        if let Some(rt) = self.platform.peek_mut(member) {
            for c in chunks.iter().filter(|c| !keep.contains(*c)) {
                rt.cache_remove(c);
            }
            let stats = rt.stats();
            if let Some(f) = self.functions.get_mut(&member) {
                f.stats = stats;
            }
        }
    }

    fn mark_member_lost(&mut self, storage: DeploymentId, member: DeploymentId) {
        if let Some(rec) = self.recoveries.get_mut(&storage) {
            for s in rec.shards.iter_mut().filter(|s| s.member == member) {
                s.lost = true;
            }
        }
    }

    fn on_reclaimed(&mut self, ids: &[DeploymentId], at: SimTime) {
        for &id in ids {
            self.emit(|| DaemonEvent::Reclaimed { at, id });
            if self.recoveries.get(&id).is_some_and(|r| r.local_done > at) {
                self.abort_recovery(id);
            }
            let Some(storage) = self.registry.engaged_with(id) else { continue };
            let Some(rec) = self.recoveries.get(&storage) else { continue };
            let Some(i) = rec.shards.iter().position(|s| s.member == id) else { continue };
            if rec.shards[i].done <= at {
                self.mark_member_lost(storage, id);
                continue;
            }
            let pool: Vec<DeploymentId> = self.live.iter().copied().filter(|m| *m != storage).collect();
            match self.registry.replace_member(storage, id, &pool, &mut self.rng) {
                Some(replacement) => {
                    let entries = rec.shards[i].entries.clone();
                    let shard = self.run_shard(replacement, entries, at);
                    let rec = self.recoveries.get_mut(&storage).unwrap();
                    rec.shards[i] = shard;
                    let report = &mut self.reports[rec.report];
                    report.cascades += 1;
                    report.member_chunks[i].0 = replacement;
                    let avail = rec
                        .local
                        .iter()
                        .map(|(c, t)| {
                            rec.shards[shard_of(c, rec.shards.len())].avail.get(c).map_or(*t, |m| (*m).min(*t))
                        })
                        .max()
                        .unwrap_or(at);
                    report.available_at = avail;
                }
                None => self.mark_member_lost(storage, id),
            }
        }
    }
}

struct OpenView<'a> {
    d: &'a mut Daemon,
    list: Vec<DeploymentId>,
    size: u64,
    kind: QueueKind,
    at: SimTime,
    hardcap: u64,
}

impl OpenFunctions for OpenView<'_> {
    type Error = SmsError;

    fn len(&self) -> usize {
        self.list.len()
    }

    fn scale_out(&mut self) -> Result<(), SmsError> {
        self.d.scale_out(self.at)?;
        self.list = self.d.open_functions();
        Ok(())
    }

    fn test_and_place(&mut self, index: usize) -> Probe {
        let id = self.list[index];
        let cap = self.d.cfg.queues.capacity;
        let f = self.d.functions.get_mut(&id).unwrap();
        if f.stats.storage_bytes + self.size > self.hardcap {
            self.d.pending_seal.insert(f.fg);
            return Probe::Full;
        }
        if f.queues.get(self.kind).is_full(self.at, cap) {
            return Probe::Busy;
        }
        f.stats.storage_bytes += self.size;
        Probe::Accept
    }
}
