use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use super::trace::{Op, TraceRecord};

pub const DEFAULT_INTERVAL: Duration = Duration::from_secs(60);
pub const DEFAULT_MIN_REUSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnalyzeOptions {
    pub interval: Duration,
    /// Objects reused fewer times are left out of the CoV map.
    pub min_reuses: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions { interval: DEFAULT_INTERVAL, min_reuses: DEFAULT_MIN_REUSES }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectCov {
    pub reuses: usize,
    pub cov: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadStats {
    pub interval_ms: u64,
    /// Bytes of distinct objects touched per interval.
    pub wss: Vec<u64>,
    /// Bytes requested per interval divided by the interval length.
    pub throughput: Vec<f64>,
    pub requests: Vec<u64>,
    /// Gaps between successive accesses of one key, in ms, in trace order.
    pub reuse_intervals_ms: Vec<u64>,
    pub cov: BTreeMap<String, ObjectCov>,
}

/// Population coefficient of variation. `None` for an empty or zero-mean
/// sample.
pub fn cov(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return None;
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some(var.sqrt() / mean)
}

pub fn analyze(records: &[TraceRecord], opts: AnalyzeOptions) -> WorkloadStats {
    let width = opts.interval.as_millis().max(1) as u64;
    let slots = records.last().map_or(0, |r| r.timestamp_ms / width + 1) as usize;
    let mut touched: Vec<BTreeMap<&str, u64>> = vec![BTreeMap::new(); slots];
    let mut bytes = vec![0u64; slots];
    let mut requests = vec![0u64; slots];
    let mut sizes: HashMap<&str, u64> = HashMap::new();
    let mut last_seen: HashMap<&str, u64> = HashMap::new();
    let mut iats: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut reuse_intervals_ms = Vec::new();

    for r in records {
        let key = r.key.as_str();
        let size = match r.op {
            Op::Put => {
                sizes.insert(key, r.size);
                r.size
            }
            Op::Get if r.size > 0 => r.size,
            Op::Get => sizes.get(key).copied().unwrap_or(0),
        };
        let slot = (r.timestamp_ms / width) as usize;
        touched[slot].insert(key, size);
        bytes[slot] += size;
        requests[slot] += 1;
        if let Some(prev) = last_seen.insert(key, r.timestamp_ms) {
            let gap = r.timestamp_ms - prev;
            reuse_intervals_ms.push(gap);
            iats.entry(key).or_default().push(gap as f64);
        }
    }

    let secs = width as f64 / 1000.0;
    let cov = iats
        .into_iter()
        .filter(|(_, v)| v.len() >= opts.min_reuses.max(1))
        .filter_map(|(k, v)| cov(&v).map(|c| (k.to_string(), ObjectCov { reuses: v.len(), cov: c })))
        .collect();
    WorkloadStats {
        interval_ms: width,
        wss: touched.iter().map(|m| m.values().sum()).collect(),
        throughput: bytes.iter().map(|b| *b as f64 / secs).collect(),
        requests,
        reuse_intervals_ms,
        cov,
    }
}

impl WorkloadStats {
    /// Mean of the per-object CoVs.
    pub fn mean_cov(&self) -> Option<f64> {
        if self.cov.is_empty() {
            return None;
        }
        Some(self.cov.values().map(|c| c.cov).sum::<f64>() / self.cov.len() as f64)
    }

    pub fn timeline_csv(&self) -> String {
        let mut out = String::from("interval_start_ms,requests,wss_bytes,throughput_bytes_per_s\n");
        for (i, ((w, t), n)) in self.wss.iter().zip(&self.throughput).zip(&self.requests).enumerate() {
            out.push_str(&format!("{},{},{},{:.3}\n", i as u64 * self.interval_ms, n, w, t));
        }
        out
    }

    pub fn cov_csv(&self) -> String {
        let mut out = String::from("key,reuses,cov\n");
        for (k, c) in &self.cov {
            out.push_str(&format!("{},{},{:.6}\n", k, c.reuses, c.cov));
        }
        out
    }

    /// Reuse-interval histogram over power-of-two ms buckets.
    pub fn reuse_csv(&self) -> String {
        let mut hist: BTreeMap<u32, u64> = BTreeMap::new();
        for &g in &self.reuse_intervals_ms {
            *hist.entry(64 - g.leading_zeros()).or_default() += 1;
        }
        let mut out = String::from("reuse_interval_ms_below,count\n");
        for (b, n) in hist {
            let upper = if b >= 64 { u64::MAX } else { 1u64 << b };
            out.push_str(&format!("{upper},{n}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wss_counts_distinct_keys_once() {
        let t = vec![
            TraceRecord::put(0, "a", 1),
            TraceRecord::put(1, "b", 2),
            TraceRecord::put(2, "c", 3),
            TraceRecord::get(3, "a", 0),
        ];
        let s = analyze(&t, AnalyzeOptions::default());
        assert_eq!(s.wss, vec![6]);
        assert_eq!(s.requests, vec![4]);
        assert!((s.throughput[0] - 7.0 / 60.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_arrivals_have_zero_cov() {
        let t = vec![
            TraceRecord::put(10_000, "k", 8),
            TraceRecord::get(70_000, "k", 8),
            TraceRecord::get(130_000, "k", 8),
        ];
        let s = analyze(&t, AnalyzeOptions { min_reuses: 2, ..Default::default() });
        assert_eq!(s.reuse_intervals_ms, vec![60_000, 60_000]);
        assert_eq!(s.cov["k"], ObjectCov { reuses: 2, cov: 0.0 });
        let s = analyze(&t, AnalyzeOptions::default());
        assert!(s.cov.is_empty());
    }

    #[test]
    fn cov_is_population() {
        let c = cov(&[1.0, 3.0]).unwrap();
        assert!((c - 0.5).abs() < 1e-12);
        assert_eq!(cov(&[]), None);
        assert_eq!(cov(&[0.0, 0.0]), None);
    }

    #[test]
    fn empty_trace() {
        let s = analyze(&[], AnalyzeOptions::default());
        assert!(s.wss.is_empty() && s.cov.is_empty());
    }
}
