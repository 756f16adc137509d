use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::Duration;

use thiserror::Error;

use super::replay::{payload, Percentiles};
use crate::client::ClientError;
use crate::codec::ObjectKey;
use crate::config::{BuildError, Config};
use crate::sms::{RecoveryReport, SmsError};
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Sms(#[from] SmsError),
    #[error("GET of {0} returned wrong bytes")]
    VerificationFailure(String),
    #[error("{0}")]
    Scenario(String),
}

fn okey(i: usize) -> ObjectKey {
    ObjectKey::try_from(format!("obj{i:05}").as_str()).expect("valid key")
}

#[derive(Clone, Debug)]
pub struct RecoveryBench {
    pub base: Config,
    pub group_sizes: Vec<usize>,
    pub objects: usize,
    pub object_size: u64,
    /// Function groups launched before loading, so the pool can supply the
    /// largest group.
    pub pool_fgs: usize,
    pub put_spacing: Duration,
}

impl Default for RecoveryBench {
    fn default() -> Self {
        let mut base = Config::default();
        base.sms.memory_limit = 256 << 20;
        RecoveryBench {
            base,
            group_sizes: vec![20, 80],
            objects: 600,
            object_size: 1 << 20,
            pool_fgs: 8,
            put_spacing: Duration::from_millis(100),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RecoveryRow {
    pub group_size: usize,
    pub report: RecoveryReport,
}

impl RecoveryRow {
    pub fn duration(&self) -> Duration {
        self.report.duration()
    }

    /// Restored bytes per second of recovery time.
    pub fn bandwidth(&self) -> f64 {
        self.report.bytes as f64 / self.duration().as_secs_f64().max(1e-9)
    }
}

pub fn recovery_csv(rows: &[RecoveryRow]) -> String {
    let mut out = String::from("group_size,diff,parallel,members,chunks,bytes,duration_us,bandwidth_bytes_per_s\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.0}\n",
            r.group_size,
            r.report.diff,
            r.report.parallel,
            r.report.member_chunks.len(),
            r.report.chunks,
            r.report.bytes,
            r.duration().as_micros(),
            r.bandwidth()
        ));
    }
    out
}

/// Loads one daemon, kills the function holding the first chunk of the first
/// object, and triggers recovery with a GET. Identical setup for every group
/// size, so each row restores the same data.
pub fn bench_recovery(b: &RecoveryBench) -> Result<Vec<RecoveryRow>, BenchError> {
    let mut rows = Vec::new();
    for &g in &b.group_sizes {
        let mut cfg = b.base.clone();
        cfg.client.daemons = 1;
        cfg.sms.recovery.group_size = g;
        let stack = cfg.build()?;
        let c = &stack.client;
        c.with_daemon(0, |d| -> Result<(), SmsError> {
            for _ in 0..b.pool_fgs {
                d.scale_out(SimTime::ZERO)?;
            }
            Ok(())
        })
        .expect("daemon 0")?;
        let mut t = SimTime::from_secs(1);
        for i in 0..b.objects {
            c.put_at(&okey(i), &payload(&format!("obj{i:05}"), b.object_size), t)?;
            t += b.put_spacing;
        }
        let kill = t + Duration::from_secs(1);
        let victim_key = okey(0);
        let report = c
            .with_daemon(0, |d| -> Result<RecoveryReport, BenchError> {
                d.advance_to(kill);
                let piece = crate::codec::ChunkRef::new(victim_key.clone(), 0, 0);
                let victim = d.mapping_entry(&piece).ok_or_else(|| BenchError::Scenario("unplaced".into()))?.id;
                d.reclaim(victim);
                let (bytes, _) = d.handle_get(&victim_key, kill + Duration::from_millis(1))?;
                if bytes != payload("obj00000", b.object_size) {
                    return Err(BenchError::VerificationFailure(victim_key.to_string()));
                }
                d.recovery_reports()
                    .iter()
                    .find(|r| r.storage == victim)
                    .cloned()
                    .ok_or_else(|| BenchError::Scenario("no recovery ran".into()))
            })
            .expect("daemon 0")?;
        rows.push(RecoveryRow { group_size: g, report });
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct ElasticityBench {
    pub base: Config,
    pub readers: Vec<usize>,
    pub step: Duration,
    pub objects: usize,
    pub object_size: u64,
}

impl Default for ElasticityBench {
    fn default() -> Self {
        let mut base = Config::default();
        base.sms.queues.capacity = 1;
        base.sms.memory_limit = 256 << 20;
        ElasticityBench { base, readers: vec![1, 5, 10], step: Duration::from_secs(20), objects: 10, object_size: 64 << 10 }
    }
}

#[derive(Clone, Debug)]
pub struct StepRow {
    pub readers: usize,
    pub requests: usize,
    pub throughput: f64,
    pub latency: Percentiles,
    pub functions: usize,
}

pub fn elasticity_csv(label: &str, rows: &[StepRow]) -> String {
    let mut out = String::from("config,readers,requests,throughput_bytes_per_s,p50_us,p90_us,p99_us,functions\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.0},{},{},{},{}\n",
            label,
            r.readers,
            r.requests,
            r.throughput,
            r.latency.p50.as_micros(),
            r.latency.p90.as_micros(),
            r.latency.p99.as_micros(),
            r.functions
        ));
    }
    out
}

/// Closed-loop readers: each reader issues its next GET when the previous one
/// completes. The reader count steps up every `step`.
pub fn bench_elasticity(b: &ElasticityBench, cfg: &Config) -> Result<Vec<StepRow>, BenchError> {
    let mut cfg = cfg.clone();
    cfg.client.daemons = 1;
    let stack = cfg.build()?;
    let c = &stack.client;
    let names: Vec<String> = (0..b.objects).map(|i| format!("obj{i:05}")).collect();
    let mut t = SimTime::ZERO;
    for (i, n) in names.iter().enumerate() {
        c.put_at(&okey(i), &payload(n, b.object_size), t)?;
        t += Duration::from_millis(100);
    }
    let start = t + Duration::from_secs(1);
    let mut rows = Vec::new();
    let mut issued = 0usize;
    for (s, &readers) in b.readers.iter().enumerate() {
        let from = start + b.step * s as u32;
        let to = from + b.step;
        let mut heap: BinaryHeap<Reverse<(SimTime, usize)>> = (0..readers).map(|r| Reverse((from, r))).collect();
        let mut lat = Vec::new();
        let mut bytes = 0u64;
        while let Some(Reverse((at, r))) = heap.pop() {
            if at >= to {
                continue;
            }
            let i = (issued + r) % b.objects;
            issued += 1;
            let (v, done) = c.get_at(&okey(i), at)?;
            if v != payload(&names[i], b.object_size) {
                return Err(BenchError::VerificationFailure(names[i].clone()));
            }
            lat.push(done - at);
            if done <= to {
                bytes += v.len() as u64;
            }
            heap.push(Reverse((done, r)));
        }
        let functions = c.with_daemon(0, |d| d.live_functions()).unwrap_or(0);
        rows.push(StepRow {
            readers,
            requests: lat.len(),
            throughput: bytes as f64 / b.step.as_secs_f64(),
            latency: Percentiles::of(&lat),
            functions,
        });
    }
    Ok(rows)
}

/// The elastic configuration and the fixed-pool baseline, which reads COS
/// instead of launching cache functions.
pub fn elasticity_pair(b: &ElasticityBench) -> Result<(Vec<StepRow>, Vec<StepRow>), BenchError> {
    let mut fixed = b.base.clone();
    fixed.sms.cache_functions = false;
    Ok((bench_elasticity(b, &b.base)?, bench_elasticity(b, &fixed)?))
}
