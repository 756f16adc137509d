//! The client daemon. It owns one SMS: interval buckets of function groups,
//! chunk placement, per-function request queues, warmups, migration between
//! buckets, and orchestration of failure recovery.

mod bucket;
mod daemon;
mod migration;
mod placement;
mod queue;
mod runtime;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, EcConfig, LargeObjectBounds, ObjectKey};
use crate::cos::CosError;
use crate::durability::DurabilityError;
use crate::faas::{FaasError, MIB};

pub use bucket::{BucketState, FgId, FgStatus, FunctionGroup, IBucket, RotationReport};
pub use daemon::{
    Daemon, DaemonEvent, FunctionSample, MappingEntry, ObjectMeta, PieceRead, PutAck, QueueEvent, RecoveryReport,
};
pub use migration::{round_size, round_sizes, Migration};
pub use placement::{place, OpenFunctions, Probe};
pub use queue::{ConnQueue, QueueKind, RequestQueues};
pub use runtime::{FunctionRuntime, MemStats};

#[derive(Debug, Error)]
pub enum SmsError {
    #[error("object not found: {0}")]
    NotFound(ObjectKey),
    #[error("scale-out failed: {0}")]
    ScaleOutFailure(#[from] FaasError),
    #[error("write of {key} piece {piece} failed: {reason}")]
    PartialWriteFailure { key: ObjectKey, piece: u32, reason: String },
    #[error("function {0} was removed from SMS")]
    FunctionRemoved(crate::faas::DeploymentId),
    #[error("chunk of {size} bytes exceeds the hardcap of {hardcap}")]
    ChunkTooLarge { size: u64, hardcap: u64 },
    #[error("piece {piece} of {key}: only {have} chunks reachable")]
    DecodeFailure { key: ObjectKey, piece: u32, have: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Cos(#[from] CosError),
    #[error(transparent)]
    Durability(#[from] DurabilityError),
    #[error("invalid sms config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub interval_ms: u64,
    /// M: age in intervals at which a bucket degrades.
    pub degrade_after: u64,
    /// N: age in intervals at which a bucket retires.
    pub retire_after: u64,
    pub warmup_active_ms: u64,
    pub warmup_degraded_ms: u64,
    /// Storage bytes per function; defaults to 80% of the memory limit.
    pub hardcap: Option<u64>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            interval_ms: 10 * 60 * 1000,
            degrade_after: 2,
            retire_after: 3,
            warmup_active_ms: 60 * 1000,
            warmup_degraded_ms: 5 * 60 * 1000,
            hardcap: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueueConfig {
    pub capacity: usize,
    pub size_threshold: u64,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig { capacity: 32, size_threshold: MIB }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MigrationConfig {
    pub fraction: f64,
    pub round_spacing_ms: u64,
    pub max_interval_ms: u64,
}

impl Default for MigrationConfig {
    fn default() -> Self {
        MigrationConfig { fraction: 0.5, round_spacing_ms: 1000, max_interval_ms: 30_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    /// g: members per recovery group.
    pub group_size: usize,
    /// k: parallel recovery runs when the gap exceeds k * g records.
    pub parallel_multiplier: u64,
    pub parallel: bool,
    /// S: PUT-serving invocations between snapshots.
    pub snapshot_every: u32,
    pub consolidation_window_ms: u64,
    pub retention_ms: u64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            group_size: 20,
            parallel_multiplier: 2,
            parallel: true,
            snapshot_every: 16,
            consolidation_window_ms: 10,
            retention_ms: 60_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmsConfig {
    pub ec: EcConfig,
    pub bounds: LargeObjectBounds,
    pub memory_limit: u64,
    pub window: WindowConfig,
    pub queues: QueueConfig,
    pub migration: MigrationConfig,
    pub recovery: RecoveryConfig,
    /// Launch cache functions when queues saturate; otherwise read COS.
    pub cache_functions: bool,
    /// Period of COS storage accrual and function-count samples.
    pub sample_every_ms: u64,
    /// Keep the daemon and queue event logs.
    pub trace_events: bool,
    pub seed: u64,
}

impl Default for SmsConfig {
    fn default() -> Self {
        SmsConfig {
            ec: EcConfig::default(),
            bounds: LargeObjectBounds::default(),
            memory_limit: 1536 * MIB,
            window: WindowConfig::default(),
            queues: QueueConfig::default(),
            migration: MigrationConfig::default(),
            recovery: RecoveryConfig::default(),
            cache_functions: true,
            sample_every_ms: 60_000,
            trace_events: false,
            seed: 0,
        }
    }
}

impl SmsConfig {
    pub fn hardcap(&self) -> u64 {
        self.window.hardcap.unwrap_or(self.memory_limit / 5 * 4)
    }

    pub fn interval(&self) -> Duration {
        Duration::from_millis(self.window.interval_ms)
    }

    pub fn validate(&self) -> Result<(), SmsError> {
        let w = &self.window;
        let bad = |m: &str| Err(SmsError::InvalidConfig(m.into()));
        if w.interval_ms == 0 {
            return bad("interval must be positive");
        }
        if !(w.retire_after > w.degrade_after && w.degrade_after >= 1) {
            return bad("need N > M >= 1");
        }
        if w.warmup_active_ms == 0 || w.warmup_degraded_ms < w.warmup_active_ms {
            return bad("need 0 < warmup_active <= warmup_degraded");
        }
        let cap = self.hardcap();
        if cap == 0 || cap > self.memory_limit {
            return bad("hardcap must be in (0, memory_limit]");
        }
        if self.queues.capacity == 0 {
            return bad("queue capacity must be positive");
        }
        if !(self.migration.fraction > 0.0 && self.migration.fraction <= 1.0) {
            return bad("migration fraction must be in (0, 1]");
        }
        if self.recovery.group_size == 0 || self.recovery.snapshot_every == 0 {
            return bad("group size and snapshot cadence must be positive");
        }
        if self.sample_every_ms == 0 {
            return bad("sample period must be positive");
        }
        Ok(())
    }
}
