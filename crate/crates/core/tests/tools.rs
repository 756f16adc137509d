use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sms_core::codec::ObjectKey;
use sms_core::config::Config;
use sms_core::faas::{ReclamationPolicy, ScriptedReclaim, MIB};
use sms_core::metering::Category;
use sms_core::time::SimTime;
use sms_core::tools::{
    analyze, emit, generate, parse_str, replay, AnalyzeOptions, GenSpec, Op, ReplayError, ReplayOptions, TraceRecord,
};

fn small_config() -> Config {
    let mut c = Config::default();
    c.sms.memory_limit = 128 * MIB;
    c
}

#[test]
fn emit_parse_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut t = 0u64;
    let records: Vec<TraceRecord> = (0..10_000)
        .map(|_| {
            t += rng.gen_range(0..50);
            let key = format!("key/{}-{}", rng.gen_range(0..500), rng.gen::<u16>());
            if rng.gen_bool(0.3) {
                TraceRecord::put(t, key, rng.gen_range(1..1 << 30))
            } else {
                TraceRecord::get(t, key, rng.gen_range(0..1 << 30))
            }
        })
        .collect();
    assert_eq!(parse_str(&emit(&records)).unwrap(), records);
}

#[test]
fn analyzer_is_deterministic() {
    let spec = GenSpec::Bursty { keys: 20, size: 4096, bursts: 15, burst_len: 4, intra_gap_ms: 50, mean_idle_ms: 30_000.0 };
    let t = generate(&spec, 1);
    let a = analyze(&t, AnalyzeOptions::default());
    let b = analyze(&parse_str(&emit(&t)).unwrap(), AnalyzeOptions::default());
    assert_eq!(a.timeline_csv(), b.timeline_csv());
    assert_eq!(a.cov_csv(), b.cov_csv());
    assert_eq!(a.reuse_csv(), b.reuse_csv());
}

#[test]
fn tiny_trace_without_reclamation_hits_memory_only() {
    let trace = generate(&GenSpec::Constant { keys: 5, size: 20_000, period_ms: 1000, duration_ms: 60_000 }, 0);
    let stack = small_config().build().unwrap();
    let r = replay(&stack, &trace, &ReplayOptions::default()).unwrap();
    assert_eq!(r.hit_ratio(), Some(1.0));
    assert_eq!(r.totals.recovery.picos(), 0);
    assert_eq!(r.get_latency.count, 60);
    assert_eq!(r.put_latency.count, 5);
}

#[test]
fn scripted_reclamation_is_survived_and_billed_as_recovery() {
    let mut cfg = small_config();
    cfg.faas.reclamation = ReclamationPolicy::Scripted {
        events: vec![ScriptedReclaim { at_ms: 20_000, id: 1 }, ScriptedReclaim { at_ms: 40_000, id: 4 }],
    };
    let trace = generate(&GenSpec::Constant { keys: 30, size: 50_000, period_ms: 200, duration_ms: 60_000 }, 0);
    let stack = cfg.build().unwrap();
    let r = replay(&stack, &trace, &ReplayOptions::default()).unwrap();
    assert!(r.recoveries >= 2, "{}", r.recoveries);
    assert!(r.totals.get(Category::Recovery).picos() > 0);
    assert_eq!(r.not_found(), 0);
}

#[test]
fn wrong_bytes_are_fatal() {
    let stack = small_config().build().unwrap();
    let k = ObjectKey::try_from("k").unwrap();
    stack.client.put_at(&k, &bytes::Bytes::from_static(b"not the trace payload"), SimTime::ZERO).unwrap();
    let trace = vec![TraceRecord::get(1000, "k", 0)];
    let e = replay(&stack, &trace, &ReplayOptions::default()).unwrap_err();
    assert!(matches!(e, ReplayError::VerificationFailure { index: 0, .. }), "{e}");
}

#[test]
fn unknown_keys_are_reported_not_fatal() {
    let stack = small_config().build().unwrap();
    let trace = vec![TraceRecord::get(0, "ghost", 0), TraceRecord::put(5, "a", 10), TraceRecord::get(9, "a", 10)];
    let r = replay(&stack, &trace, &ReplayOptions::default()).unwrap();
    assert_eq!(r.not_found(), 1);
    assert_eq!(r.get_latency.count, 1);
}

#[test]
fn speed_compresses_virtual_time() {
    let trace = vec![TraceRecord::put(0, "a", 10), TraceRecord::get(10_000, "a", 10)];
    let stack = small_config().build().unwrap();
    let opts = ReplayOptions { speed: 10.0, ..Default::default() };
    let r = replay(&stack, &trace, &opts).unwrap();
    assert_eq!(r.results[1].at, SimTime::from_secs(1));
}

#[test]
fn submitters_partition_by_daemon_and_agree() {
    let spec = GenSpec::Mixed {
        keys: 40,
        requests: 600,
        min_size: 1024,
        max_size: 256 * 1024,
        put_fraction: 0.3,
        mean_gap_ms: 20.0,
        skew: 1.0,
    };
    let trace = generate(&spec, 8);
    let mut cfg = small_config();
    cfg.client.daemons = 3;
    let run = |n| {
        let stack = cfg.build().unwrap();
        replay(&stack, &trace, &ReplayOptions { submitters: n, ..Default::default() }).unwrap()
    };
    let one = run(1);
    let three = run(3);
    assert_eq!(one.summary_csv(), three.summary_csv());
    assert_eq!(one.latency_csv(), three.latency_csv());
    assert_eq!(one.cost_csv, three.cost_csv);
    assert_eq!(one.ledger_csv, three.ledger_csv);
    assert!(one.results.iter().all(|r| r.op == Op::Put || r.size > 0));
}
