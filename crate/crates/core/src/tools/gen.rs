use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::trace::TraceRecord;

/// Synthetic workload shapes. Every generator PUTs a key before its first
/// GET, and output is a pure function of the spec and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GenSpec {
    /// GETs at a fixed period, cycling through the keys.
    Constant { keys: usize, size: u64, period_ms: u64, duration_ms: u64 },
    /// GETs with exponential gaps on uniformly chosen keys.
    Poisson { keys: usize, size: u64, rate_per_s: f64, duration_ms: u64 },
    /// Working set of `before_bytes` until `step_at_ms`, then `after_bytes`.
    WssStep { object_size: u64, before_bytes: u64, after_bytes: u64, step_at_ms: u64, period_ms: u64, duration_ms: u64 },
    /// Random PUT/GET mix over keys with sizes log-uniform in
    /// `[min_size, max_size]`. `skew > 1` favours small objects.
    Mixed {
        keys: usize,
        requests: usize,
        min_size: u64,
        max_size: u64,
        put_fraction: f64,
        mean_gap_ms: f64,
        skew: f64,
    },
    /// Each key is read in bursts of `burst_len` back-to-back GETs separated
    /// by long exponential idle gaps.
    Bursty { keys: usize, size: u64, bursts: usize, burst_len: usize, intra_gap_ms: u64, mean_idle_ms: f64 },
}

fn key(i: usize) -> String {
    format!("k{i:06}")
}

fn sort(mut v: Vec<TraceRecord>) -> Vec<TraceRecord> {
    v.sort_by_key(|a| a.timestamp_ms);
    v
}

pub fn generate(spec: &GenSpec, seed: u64) -> Vec<TraceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match *spec {
        GenSpec::Constant { keys, size, period_ms, duration_ms } => {
            let mut out: Vec<_> = (0..keys).map(|i| TraceRecord::put(0, key(i), size)).collect();
            let mut t = period_ms.max(1);
            let mut i = 0;
            while t <= duration_ms && keys > 0 {
                out.push(TraceRecord::get(t, key(i % keys), size));
                i += 1;
                t += period_ms.max(1);
            }
            out
        }
        GenSpec::Poisson { keys, size, rate_per_s, duration_ms } => {
            let mut out: Vec<_> = (0..keys).map(|i| TraceRecord::put(0, key(i), size)).collect();
            let exp = Exp::new(rate_per_s / 1000.0).expect("positive rate");
            let mut t = 0.0f64;
            loop {
                t += exp.sample(&mut rng);
                if t > duration_ms as f64 || keys == 0 {
                    break;
                }
                out.push(TraceRecord::get(t.round() as u64, key(rng.gen_range(0..keys)), size));
            }
            sort(out)
        }
        GenSpec::WssStep { object_size, before_bytes, after_bytes, step_at_ms, period_ms, duration_ms } => {
            let n_before = (before_bytes / object_size.max(1)).max(1) as usize;
            let n_after = (after_bytes / object_size.max(1)).max(1) as usize;
            let mut seen = vec![false; n_before.max(n_after)];
            let mut out = Vec::new();
            let (mut t, mut i) = (0, 0usize);
            while t <= duration_ms {
                let n = if t < step_at_ms { n_before } else { n_after };
                let k = i % n;
                if seen[k] {
                    out.push(TraceRecord::get(t, key(k), object_size));
                } else {
                    seen[k] = true;
                    out.push(TraceRecord::put(t, key(k), object_size));
                }
                i += 1;
                t += period_ms.max(1);
            }
            out
        }
        GenSpec::Mixed { keys, requests, min_size, max_size, put_fraction, mean_gap_ms, skew } => {
            let (lo, hi) = ((min_size.max(1) as f64).ln(), (max_size.max(min_size).max(1) as f64).ln());
            let sizes: Vec<u64> = (0..keys)
                .map(|_| {
                    let u: f64 = rng.gen::<f64>().powf(skew.max(1e-9));
                    ((lo + u * (hi - lo)).exp().round() as u64).clamp(min_size.max(1), max_size.max(min_size))
                })
                .collect();
            let exp = Exp::new(1.0 / mean_gap_ms.max(1e-9)).expect("positive gap");
            let mut written = vec![false; keys];
            let mut out = Vec::with_capacity(requests);
            let mut t = 0.0f64;
            for _ in 0..requests {
                if keys == 0 {
                    break;
                }
                let k = rng.gen_range(0..keys);
                let at = t.round() as u64;
                if !written[k] || rng.gen::<f64>() < put_fraction {
                    written[k] = true;
                    out.push(TraceRecord::put(at, key(k), sizes[k]));
                } else {
                    out.push(TraceRecord::get(at, key(k), sizes[k]));
                }
                t += exp.sample(&mut rng);
            }
            out
        }
        GenSpec::Bursty { keys, size, bursts, burst_len, intra_gap_ms, mean_idle_ms } => {
            let exp = Exp::new(1.0 / mean_idle_ms.max(1e-9)).expect("positive idle");
            let mut out = Vec::new();
            for k in 0..keys {
                out.push(TraceRecord::put(0, key(k), size));
                let mut t = 0.0f64;
                for _ in 0..bursts {
                    t += exp.sample(&mut rng);
                    for j in 0..burst_len {
                        out.push(TraceRecord::get(t.round() as u64 + j as u64 * intra_gap_ms, key(k), size));
                    }
                    t += (burst_len as u64 * intra_gap_ms) as f64;
                }
            }
            sort(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::analyze::{analyze, AnalyzeOptions};
    use crate::tools::trace::Op;

    fn puts_first(t: &[TraceRecord]) -> bool {
        let mut seen = std::collections::HashSet::new();
        t.iter().all(|r| match r.op {
            Op::Put => {
                seen.insert(r.key.clone());
                true
            }
            Op::Get => seen.contains(&r.key),
        })
    }

    fn ordered(t: &[TraceRecord]) -> bool {
        t.windows(2).all(|w| w[0].timestamp_ms <= w[1].timestamp_ms)
    }

    #[test]
    fn constant_single_key_has_zero_cov() {
        let t = generate(&GenSpec::Constant { keys: 1, size: 10, period_ms: 500, duration_ms: 60_000 }, 1);
        let s = analyze(&t, AnalyzeOptions::default());
        assert_eq!(s.cov["k000000"].cov, 0.0);
        assert!(puts_first(&t) && ordered(&t));
    }

    #[test]
    fn poisson_cov_is_near_one() {
        let t = generate(&GenSpec::Poisson { keys: 1, size: 10, rate_per_s: 10.0, duration_ms: 1_000_000 }, 2);
        let s = analyze(&t, AnalyzeOptions::default());
        let c = &s.cov["k000000"];
        assert!(c.reuses > 9_000, "{}", c.reuses);
        assert!((c.cov - 1.0).abs() <= 0.1, "{}", c.cov);
    }

    #[test]
    fn wss_step_shows_in_timeline() {
        let spec = GenSpec::WssStep {
            object_size: 1 << 20,
            before_bytes: 16 << 20,
            after_bytes: 64 << 20,
            step_at_ms: 30 * 60_000,
            period_ms: 500,
            duration_ms: 60 * 60_000,
        };
        let t = generate(&spec, 3);
        let s = analyze(&t, AnalyzeOptions::default());
        assert!(s.wss[..30].iter().all(|w| *w == 16 << 20));
        assert!(s.wss[30..60].iter().all(|w| *w == 64 << 20));
        assert!(puts_first(&t) && ordered(&t));
    }

    #[test]
    fn bursty_cov_exceeds_one() {
        let spec = GenSpec::Bursty { keys: 3, size: 10, bursts: 20, burst_len: 5, intra_gap_ms: 10, mean_idle_ms: 60_000.0 };
        let t = generate(&spec, 4);
        let s = analyze(&t, AnalyzeOptions::default());
        assert_eq!(s.cov.len(), 3);
        assert!(s.cov.values().all(|c| c.cov > 1.0));
        assert!(puts_first(&t) && ordered(&t));
    }

    #[test]
    fn mixed_respects_bounds_and_seed() {
        let spec = GenSpec::Mixed {
            keys: 50,
            requests: 2000,
            min_size: 4096,
            max_size: 64 << 20,
            put_fraction: 0.2,
            mean_gap_ms: 50.0,
            skew: 3.0,
        };
        let a = generate(&spec, 5);
        assert_eq!(a, generate(&spec, 5));
        assert_ne!(a, generate(&spec, 6));
        assert_eq!(a.len(), 2000);
        assert!(a.iter().all(|r| (4096..=64 << 20).contains(&r.size)));
        assert!(puts_first(&a) && ordered(&a));
    }
}
