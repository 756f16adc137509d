//! Insertion logs, snapshots, failure detection and parallel recovery.

mod log;
mod manifest;
mod recovery;

use thiserror::Error;

use crate::cos::CosError;
use crate::faas::DeploymentId;

pub use log::{
    append_and_seal, chain_hash, consistency_check, recovery_decision, Consistency, InsertionLogNode, LocalLog,
    LogHead, PutRecord, RecoveryMode, Sealed, SnapshotInfo,
};
pub use manifest::{build_manifest, replay, write_snapshot, Manifest, ManifestEntry, Partition, Snapshot};
pub use recovery::{
    chunk_hash, download_schedule, partition, shard_of, worker_for_hash, RecoveryGroup, RecoveryRegistry,
};

#[derive(Debug, Error)]
pub enum DurabilityError {
    #[error(transparent)]
    Cos(#[from] CosError),
    #[error("log of {id} has no node for term {term}")]
    MissingLogNode { id: DeploymentId, term: u64 },
    #[error("log node {term} of {id} fails its hash check")]
    HashMismatch { id: DeploymentId, term: u64 },
    #[error("malformed log object: {0}")]
    Malformed(String),
}
