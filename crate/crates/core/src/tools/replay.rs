use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use bytes::Bytes;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::trace::{Op, TraceRecord};
use crate::client::{Client, ClientError};
use crate::codec::{CodecError, Hasher64, ObjectKey};
use crate::config::Stack;
use crate::metering::Totals;
use crate::sms::SmsError;
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("GET of {key} at record {index} returned wrong bytes")]
    VerificationFailure { index: usize, key: String },
    #[error("record {index} ({key}): {source}")]
    Request { index: usize, key: String, source: ClientError },
    #[error("record {index}: {source}")]
    Key { index: usize, source: CodecError },
}

/// Deterministic payload for a PUT of `size` bytes under `key`.
pub fn payload(key: &str, size: u64) -> Bytes {
    let mut h = Hasher64::new();
    h.write_field(key.as_bytes());
    h.write_u64(size);
    let mut v = vec![0u8; size as usize];
    ChaCha8Rng::seed_from_u64(h.finish()).fill_bytes(&mut v);
    Bytes::from(v)
}

#[derive(Clone, Debug)]
pub struct ReplayOptions {
    /// Trace time is divided by this factor.
    pub speed: f64,
    /// Threads issuing requests; each owns a disjoint set of daemons.
    pub submitters: usize,
    /// Width of the cost report rows.
    pub report_interval: Duration,
    /// Virtual time the run is drained to after the last request; `None`
    /// stops at the last request.
    pub end: Option<SimTime>,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions { speed: 1.0, submitters: 1, report_interval: Duration::from_secs(60), end: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Stored,
    Verified,
    /// GET of a key the trace never wrote.
    NotFound,
}

#[derive(Clone, Debug)]
pub struct RequestResult {
    pub index: usize,
    pub at: SimTime,
    pub op: Op,
    pub size: u64,
    pub latency: Duration,
    pub outcome: Outcome,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Percentiles {
    pub count: usize,
    pub p50: Duration,
    pub p90: Duration,
    pub p95: Duration,
    pub p99: Duration,
    pub max: Duration,
}

impl Percentiles {
    /// Nearest-rank percentiles.
    pub fn of(samples: &[Duration]) -> Self {
        if samples.is_empty() {
            return Percentiles::default();
        }
        let mut v = samples.to_vec();
        v.sort_unstable();
        let rank = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Percentiles { count: v.len(), p50: rank(0.5), p90: rank(0.9), p95: rank(0.95), p99: rank(0.99), max: v[v.len() - 1] }
    }
}

#[derive(Clone, Debug)]
pub struct TimelinePoint {
    pub at: SimTime,
    pub active: usize,
    pub degraded: usize,
}

#[derive(Clone, Debug)]
pub struct ReplayReport {
    pub results: Vec<RequestResult>,
    pub get_latency: Percentiles,
    pub put_latency: Percentiles,
    pub memory_reads: u64,
    pub total_reads: u64,
    pub totals: Totals,
    pub cost_csv: String,
    pub ledger_csv: String,
    pub timeline: Vec<TimelinePoint>,
    pub recoveries: usize,
    pub end: SimTime,
}

impl ReplayReport {
    pub fn hit_ratio(&self) -> Option<f64> {
        (self.total_reads > 0).then(|| self.memory_reads as f64 / self.total_reads as f64)
    }

    pub fn not_found(&self) -> usize {
        self.results.iter().filter(|r| r.outcome == Outcome::NotFound).count()
    }

    pub fn summary_csv(&self) -> String {
        let us = |d: Duration| d.as_micros();
        let g = self.get_latency;
        let p = self.put_latency;
        let hit = self.hit_ratio().map_or("".to_string(), |h| format!("{h:.6}"));
        let t = self.totals;
        format!(
            "metric,value\n\
             requests,{}\ngets,{}\nputs,{}\nnot_found,{}\n\
             get_p50_us,{}\nget_p90_us,{}\nget_p95_us,{}\nget_p99_us,{}\n\
             put_p50_us,{}\nput_p90_us,{}\nput_p95_us,{}\nput_p99_us,{}\n\
             chunk_reads,{}\nmemory_reads,{}\nhit_ratio,{}\nrecoveries,{}\n\
             io,{}\nrecovery,{}\nwarmup,{}\ncos,{}\ntotal,{}\nend_ms,{}\n",
            self.results.len(),
            g.count,
            p.count,
            self.not_found(),
            us(g.p50),
            us(g.p90),
            us(g.p95),
            us(g.p99),
            us(p.p50),
            us(p.p90),
            us(p.p95),
            us(p.p99),
            self.total_reads,
            self.memory_reads,
            hit,
            self.recoveries,
            t.io,
            t.recovery,
            t.warmup,
            t.cos,
            t.total(),
            self.end.as_millis(),
        )
    }

    pub fn latency_csv(&self) -> String {
        let mut out = String::from("index,at_us,op,size,latency_us,outcome\n");
        for r in &self.results {
            let o = match r.outcome {
                Outcome::Stored => "stored",
                Outcome::Verified => "verified",
                Outcome::NotFound => "not_found",
            };
            out.push_str(&format!("{},{},{},{},{},{}\n", r.index, r.at.as_micros(), r.op, r.size, r.latency.as_micros(), o));
        }
        out
    }

    pub fn timeline_csv(&self) -> String {
        let mut out = String::from("at_ms,active,degraded\n");
        for p in &self.timeline {
            out.push_str(&format!("{},{},{}\n", p.at.as_millis(), p.active, p.degraded));
        }
        out
    }
}

fn run_one(client: &Client, index: usize, r: &TraceRecord, at: SimTime, sizes: &mut HashMap<String, u64>) -> Result<RequestResult, ReplayError> {
    let key = ObjectKey::try_from(r.key.as_str()).map_err(|source| ReplayError::Key { index, source })?;
    let req_err = |source| ReplayError::Request { index, key: r.key.clone(), source };
    match r.op {
        Op::Put => {
            let value = payload(&r.key, r.size);
            let ack = client.put_at(&key, &value, at).map_err(req_err)?;
            sizes.insert(r.key.clone(), r.size);
            Ok(RequestResult { index, at, op: Op::Put, size: r.size, latency: ack.acked_at - at, outcome: Outcome::Stored })
        }
        Op::Get => match client.get_at(&key, at) {
            Ok((bytes, done)) => {
                let expected = sizes.get(&r.key).copied();
                if expected.is_none_or(|s| bytes != payload(&r.key, s)) {
                    return Err(ReplayError::VerificationFailure { index, key: r.key.clone() });
                }
                let size = bytes.len() as u64;
                Ok(RequestResult { index, at, op: Op::Get, size, latency: done - at, outcome: Outcome::Verified })
            }
            Err(ClientError::Sms(SmsError::NotFound(_))) if !sizes.contains_key(&r.key) => {
                Ok(RequestResult { index, at, op: Op::Get, size: 0, latency: Duration::ZERO, outcome: Outcome::NotFound })
            }
            Err(e) => Err(req_err(e)),
        },
    }
}

fn virtual_time(ts_ms: u64, speed: f64) -> SimTime {
    if speed == 1.0 {
        SimTime::from_millis(ts_ms)
    } else {
        SimTime::from_micros((ts_ms as f64 * 1000.0 / speed).round() as u64)
    }
}

/// Replays `records` against the stack and verifies every GET against the
/// bytes last PUT under the same key.
pub fn replay(stack: &Stack, records: &[TraceRecord], opts: &ReplayOptions) -> Result<ReplayReport, ReplayError> {
    let client = &stack.client;
    let speed = if opts.speed > 0.0 { opts.speed } else { 1.0 };
    let n = opts.submitters.max(1);

    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, r) in records.iter().enumerate() {
        let owner = ObjectKey::try_from(r.key.as_str())
            .ok()
            .and_then(|k| client.route(&k).ok())
            .unwrap_or(0);
        parts[owner as usize % n].push(i);
    }

    let run_part = |idx: &[usize]| -> Result<Vec<RequestResult>, ReplayError> {
        let mut sizes = HashMap::new();
        idx.iter()
            .map(|&i| {
                let r = &records[i];
                run_one(client, i, r, virtual_time(r.timestamp_ms, speed), &mut sizes)
            })
            .collect()
    };

    let mut results: Vec<RequestResult> = if n == 1 {
        run_part(&parts[0])?
    } else {
        let outs: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = parts.iter().map(|p| s.spawn(|| run_part(p))).collect();
            handles.into_iter().map(|h| h.join().expect("submitter panicked")).collect()
        });
        let mut all = Vec::with_capacity(records.len());
        for o in outs {
            all.extend(o?);
        }
        all
    };
    results.sort_by_key(|r| r.index);

    let last = results
        .iter()
        .map(|r| r.at + r.latency)
        .max()
        .unwrap_or(SimTime::ZERO);
    let end = opts.end.map_or(last, |e| e.max(last));
    client.finish(end);

    let mut timeline: BTreeMap<SimTime, (usize, usize)> = BTreeMap::new();
    let mut recoveries = 0;
    for id in client.daemon_ids().collect::<Vec<_>>() {
        client.with_daemon(id, |d| {
            recoveries += d.recovery_reports().len();
            for s in d.samples() {
                let e = timeline.entry(s.at).or_default();
                e.0 += s.active;
                e.1 += s.degraded;
            }
        });
    }

    let lat = |op: Op| -> Vec<Duration> {
        results.iter().filter(|r| r.op == op && r.outcome != Outcome::NotFound).map(|r| r.latency).collect()
    };
    Ok(ReplayReport {
        get_latency: Percentiles::of(&lat(Op::Get)),
        put_latency: Percentiles::of(&lat(Op::Put)),
        memory_reads: stack.hits.memory_reads(),
        total_reads: stack.hits.total_reads(),
        totals: stack.ledger.totals(),
        cost_csv: stack.ledger.report_csv(opts.report_interval),
        ledger_csv: stack.ledger.entries_csv(),
        timeline: timeline.into_iter().map(|(at, (active, degraded))| TimelinePoint { at, active, degraded }).collect(),
        recoveries,
        end,
        results,
    })
}
