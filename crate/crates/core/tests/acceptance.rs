//! Acceptance suite. Each criterion is its own test and prints one
//! `criterion N: PASS|FAIL` line; run with `--nocapture` to see them.
//!
//! Pinned tolerances:
//! - criterion 1: wall clock below 60 s.
//! - criterion 8: per-step p90 at most 1.10x the first step's p90.
//! - criterion 10: Poisson CoV within [0.9, 1.1].
//! Everything else is exact or a strict direction.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use bytes::Bytes;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sms_core::codec::{decode, encode, ChunkRef, CodecError, EcConfig, ObjectKey};
use sms_core::config::Config;
use sms_core::durability::{partition, shard_of, ManifestEntry, Partition};
use sms_core::faas::{DeploymentId, ReclamationPolicy, MIB};
use sms_core::metering::{Category, Money};
use sms_core::sms::{BucketState, DaemonEvent};
use sms_core::time::SimTime;
use sms_core::tools::bench::{bench_recovery, elasticity_pair, elasticity_csv, recovery_csv, ElasticityBench, RecoveryBench};
use sms_core::tools::{analyze, generate, payload, replay, AnalyzeOptions, GenSpec, Percentiles, ReplayOptions, TraceRecord};

/// Heavy scenarios run one at a time to bound peak memory.
static SERIAL: Mutex<()> = Mutex::new(());

fn criterion(n: u32, name: &str, f: impl FnOnce() -> Result<String, String>) {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    match r {
        Ok(detail) => println!("criterion {n}: PASS {name}: {detail}"),
        Err(why) => {
            println!("criterion {n}: FAIL {name}: {why}");
            panic!("criterion {n} failed: {why}");
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn key(s: &str) -> ObjectKey {
    ObjectKey::try_from(s).unwrap()
}

fn ms(v: u64) -> SimTime {
    SimTime::from_millis(v)
}

fn secs(v: u64) -> SimTime {
    SimTime::from_secs(v)
}

#[test]
fn criterion_01_durability_under_random_reclamation() {
    criterion(1, "durability oracle", || {
        let spec = GenSpec::Mixed {
            keys: 400,
            requests: 10_000,
            min_size: 4 << 10,
            max_size: 64 << 20,
            put_fraction: 0.25,
            mean_gap_ms: 720.0,
            skew: 6.0,
        };
        let trace = generate(&spec, 1);
        let mut cfg = Config { seed: 1, ..Default::default() };
        cfg.sms.ec = EcConfig::new(10, 2).unwrap();
        cfg.faas.reclamation = ReclamationPolicy::RandomPerTick { probability: 0.1, tick_ms: 60_000 };
        let stack = cfg.build().map_err(|e| e.to_string())?;
        let t0 = Instant::now();
        let r = replay(&stack, &trace, &ReplayOptions::default()).map_err(|e| e.to_string())?;
        let wall = t0.elapsed();
        let sizes: BTreeSet<u64> = trace.iter().map(|t| t.size).collect();
        ensure!(r.results.len() == 10_000, "{} results", r.results.len());
        ensure!(r.not_found() == 0, "{} not found", r.not_found());
        ensure!(*sizes.first().unwrap() < 64 << 10 && *sizes.last().unwrap() > 16 << 20, "size mix too narrow");
        ensure!(r.recoveries > 0, "no reclamation was exercised");
        ensure!(wall < Duration::from_secs(60), "took {wall:?}");
        Ok(format!(
            "{} GETs verified, {} recoveries, hit ratio {:.3}, {:.1}s wall",
            r.get_latency.count,
            r.recoveries,
            r.hit_ratio().unwrap_or(0.0),
            wall.as_secs_f64()
        ))
    });
}

#[test]
fn criterion_02_pay_per_access_decomposition() {
    criterion(2, "pay-per-access", || {
        let gap_start = 60_000u64;
        let burst2 = gap_start + 2 * 3600 * 1000;
        let mut trace = Vec::new();
        for i in 0..40u64 {
            trace.push(TraceRecord::put(i * 500, format!("k{i}"), 50_000 + i * 1000));
        }
        for i in 0..40u64 {
            trace.push(TraceRecord::get(20_000 + i * 500, format!("k{i}"), 0));
        }
        for i in 0..40u64 {
            trace.push(TraceRecord::get(burst2 + i * 500, format!("k{i}"), 0));
        }
        let stack = Config::default().build().map_err(|e| e.to_string())?;
        let opts = ReplayOptions { report_interval: Duration::from_secs(60), ..Default::default() };
        let r = replay(&stack, &trace, &opts).map_err(|e| e.to_string())?;
        let rows = stack.ledger.report(Duration::from_secs(60));
        let gap: Vec<_> = rows
            .iter()
            .filter(|row| row.interval_start.as_millis() >= gap_start && row.interval_start.as_millis() + 60_000 <= burst2)
            .collect();
        ensure!(gap.len() == 120, "{} gap rows", gap.len());
        let gap_io: Money = gap.iter().map(|row| row.totals.io).sum();
        let gap_warm: Money = gap.iter().map(|row| row.totals.warmup).sum();
        ensure!(gap_io.picos() == 0, "io during gap: {gap_io}");
        ensure!(gap.iter().all(|row| row.totals.recovery.picos() == 0), "recovery during gap");
        ensure!(gap_warm.picos() > 0, "no warmups during gap");
        let t = stack.ledger.totals();
        ensure!(t.total() == t.io + t.recovery + t.warmup + t.cos, "totals do not decompose");
        let mut fold = [0u64; 4];
        for e in stack.ledger.entries() {
            let i = match e.category {
                Category::Io => 0,
                Category::Recovery => 1,
                Category::Warmup => 2,
                Category::Cos => 3,
            };
            fold[i] += e.amount.picos();
        }
        ensure!(
            fold == [t.io.picos(), t.recovery.picos(), t.warmup.picos(), t.cos.picos()],
            "fold {fold:?} vs totals {t:?}"
        );
        let row_sum: Money = rows.iter().map(|row| row.totals.total()).sum();
        ensure!(row_sum == t.total(), "rows sum {row_sum} vs total {}", t.total());
        ensure!(r.totals == t, "report totals stale");
        Ok(format!("gap io = 0 over {} rows, gap warmup {gap_warm}, total {} exact", gap.len(), t.total()))
    });
}

#[test]
fn criterion_03_placement_invariants() {
    criterion(3, "placement invariants", || {
        let ec = EcConfig::new(4, 2).unwrap();
        let max_chunk = ec.chunk_len(64 << 10);
        let hardcaps = [max_chunk, max_chunk + max_chunk / 2, 7 * max_chunk + 1, 64 * max_chunk];
        let per_run = 25_000u64;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut fgs = 0;
        let mut seals = 0;
        for (run, &cap) in hardcaps.iter().enumerate() {
            let mut cfg = Config { seed: run as u64, ..Default::default() };
            cfg.sms.ec = ec;
            cfg.sms.memory_limit = 64 * MIB;
            cfg.sms.window.hardcap = Some(cap);
            cfg.sms.trace_events = true;
            let stack = cfg.build().map_err(|e| e.to_string())?;
            let c = &stack.client;
            for i in 0..per_run {
                let k = key(&format!("r{run}-k{}", rng.gen_range(0..5000)));
                let mut v = vec![0u8; rng.gen_range(1..=64 << 10)];
                rng.fill_bytes(&mut v);
                c.put_at(&k, &Bytes::from(v), ms(i)).map_err(|e| e.to_string())?;
            }
            let verdict = c
                .with_daemon(0, |d| -> Result<(usize, usize), String> {
                    let mut stripes: BTreeMap<(ObjectKey, u32), BTreeSet<DeploymentId>> = BTreeMap::new();
                    let mut n = 0;
                    for (chunk, id) in d.mapping() {
                        n += 1;
                        let set = stripes.entry((chunk.key.clone(), chunk.piece_id)).or_default();
                        ensure!(set.insert(id), "{chunk:?} shares {id:?} with another chunk of its object");
                    }
                    ensure!(stripes.values().all(|s| s.len() == 6), "incomplete stripe");
                    ensure!(n == stripes.len() * 6, "mapping size");
                    let mut sealed = BTreeSet::new();
                    for e in d.events() {
                        match e {
                            DaemonEvent::Sealed { fg, .. } => {
                                sealed.insert(*fg);
                            }
                            DaemonEvent::Placed { fg, chunk, .. } => {
                                ensure!(!sealed.contains(fg), "{chunk:?} placed into sealed {fg:?}");
                            }
                            _ => {}
                        }
                    }
                    for id in d.mapping().map(|(_, id)| id).collect::<BTreeSet<_>>() {
                        if let Some(rt) = d.platform().peek(id) {
                            ensure!(rt.stats().storage_bytes <= cap, "{id:?} over hardcap");
                        }
                    }
                    Ok((d.function_groups().count(), sealed.len()))
                })
                .unwrap()?;
            fgs += verdict.0;
            seals += verdict.1;
        }
        Ok(format!("{} PUTs over {} hardcaps, {fgs} FGs, {seals} seals, no violations", per_run * 4, hardcaps.len()))
    });
}

#[test]
fn criterion_04_bucket_lifecycle() {
    criterion(4, "bucket lifecycle", || {
        let mut cfg = Config::default();
        cfg.sms.memory_limit = 64 * MIB;
        cfg.sms.window.interval_ms = 10 * 60_000;
        cfg.sms.window.degrade_after = 2;
        cfg.sms.window.retire_after = 3;
        cfg.sms.window.hardcap = Some(700_000);
        cfg.sms.trace_events = true;
        let stack = cfg.build().map_err(|e| e.to_string())?;
        let c = &stack.client;
        // One object per interval whose chunks reach the hardcap, so every
        // bucket ends with a sealed group of its own.
        for b in 0..5u64 {
            c.put_at(&key(&format!("b{b}")), &payload("x", 7_000_000), secs(b * 600 + 60)).map_err(|e| e.to_string())?;
        }
        let mut live = Vec::new();
        for minute in [35u64, 45] {
            c.advance_to(secs(minute * 60));
            live.push(c.with_daemon(0, |d| d.live_functions()).unwrap());
        }
        let rotations: Vec<(u64, Vec<(u64, BucketState)>)> = c
            .with_daemon(0, |d| {
                d.events()
                    .iter()
                    .filter_map(|e| match e {
                        DaemonEvent::Rotated { at, states, .. } => Some((at.as_millis() / 60_000, states.clone())),
                        _ => None,
                    })
                    .collect()
            })
            .unwrap();
        use BucketState::*;
        let expected: Vec<(u64, Vec<(u64, BucketState)>)> = vec![
            (10, vec![(0, Active), (1, Current)]),
            (20, vec![(0, Degraded), (1, Active), (2, Current)]),
            (30, vec![(0, Retired), (1, Degraded), (2, Active), (3, Current)]),
            (40, vec![(0, Retired), (1, Retired), (2, Degraded), (3, Active), (4, Current)]),
        ];
        ensure!(rotations == expected, "rotations {rotations:?}");
        ensure!(live == vec![12 * 3, 12 * 3], "live functions {live:?}");
        for b in 0..5u64 {
            let got = c.get_at(&key(&format!("b{b}")), secs(46 * 60)).map_err(|e| e.to_string())?.0;
            ensure!(got == payload("x", 7_000_000), "b{b} corrupted");
        }
        Ok("4 rotations match; buckets 0 and 1 retired in the 30 and 40 min slots; data still readable".into())
    });
}

#[test]
fn criterion_05_recovery_correctness() {
    criterion(5, "recovery correctness", || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..100u64 {
            let mut cfg = Config { seed: trial, ..Default::default() };
            cfg.sms.ec = EcConfig::new(4, 2).unwrap();
            cfg.sms.memory_limit = 64 * MIB;
            cfg.sms.recovery.snapshot_every = rng.gen_range(1..=8);
            let stack = cfg.build().map_err(|e| e.to_string())?;
            let c = &stack.client;
            let history = rng.gen_range(5..60u64);
            for i in 0..history {
                let k = format!("k{}", rng.gen_range(0..history / 2 + 1));
                c.put_at(&key(&k), &payload(&k, rng.gen_range(1..100_000)), ms(i * 200)).map_err(|e| e.to_string())?;
            }
            let kill_at = ms(history * 200 + 1000);
            let (before, after) = c
                .with_daemon(0, |d| -> Result<_, String> {
                    d.advance_to(kill_at);
                    let holders: Vec<(ChunkRef, DeploymentId)> = d.mapping().map(|(c, id)| (c.clone(), id)).collect();
                    let (chunk, victim) = holders.choose(&mut rng).unwrap().clone();
                    let before: BTreeSet<ChunkRef> = d.platform().peek(victim).unwrap().storage_refs().cloned().collect();
                    ensure!(d.reclaim(victim), "reclaim failed");
                    d.handle_get(&chunk.key, kill_at + Duration::from_millis(1)).map_err(|e| e.to_string())?;
                    let after: BTreeSet<ChunkRef> = d
                        .platform()
                        .peek(victim)
                        .ok_or("victim not restarted")?
                        .storage_refs()
                        .cloned()
                        .collect();
                    Ok((before, after))
                })
                .unwrap()?;
            ensure!(before == after, "trial {trial}: restored {} of {} chunks", after.len(), before.len());
        }

        let entries: Vec<ManifestEntry> = (0..2000)
            .map(|i| ManifestEntry {
                chunk: ChunkRef::new(key(&format!("o{}", i / 12)), 0, (i % 12) as u16),
                size: 100,
                partition: Partition::Storage,
            })
            .collect();
        for g in [1usize, 5, 20, 80] {
            let parts = partition(&entries, g);
            ensure!(parts.len() == g, "g={g}: {} shards", parts.len());
            let mut seen = BTreeSet::new();
            for (s, part) in parts.iter().enumerate() {
                for e in part {
                    ensure!(shard_of(&e.chunk, g) == s, "g={g}: misplaced chunk");
                    ensure!(seen.insert(e.chunk.clone()), "g={g}: chunk in two shards");
                }
            }
            ensure!(seen.len() == entries.len(), "g={g}: {} of {} covered", seen.len(), entries.len());
        }

        let mut cfg = Config::default();
        cfg.sms.queues.capacity = 4096;
        cfg.sms.memory_limit = 512 * MIB;
        cfg.sms.recovery.group_size = 20;
        cfg.sms.trace_events = true;
        let stack = cfg.build().map_err(|e| e.to_string())?;
        let c = &stack.client;
        c.with_daemon(0, |d| d.scale_out(SimTime::ZERO).map(|_| ())).unwrap().map_err(|e| e.to_string())?;
        // Scenario time starts once loading has drained.
        let n = 250u64;
        for i in 0..n {
            let k = format!("obj{i}");
            c.put_at(&key(&k), &payload(&k, MIB), ms(i * 60)).map_err(|e| e.to_string())?;
        }
        let t0 = secs(20);
        let at = |s: u64| t0 + Duration::from_secs(s);
        let victim = c.with_daemon(0, |d| d.mapping_entry(&ChunkRef::new(key("obj0"), 0, 0)).unwrap().id).unwrap();
        let fg = c.with_daemon(0, |d| d.fg_of(victim)).unwrap().unwrap();
        let others: Vec<DeploymentId> = c
            .with_daemon(0, |d| d.function_groups().find(|g| g.id == fg).unwrap().members.clone())
            .unwrap()
            .into_iter()
            .filter(|m| *m != victim)
            .take(2)
            .collect();
        c.with_daemon(0, |d| {
            d.advance_to(at(5));
            d.reclaim(victim);
            // Slow two peers so every decode needs the lost chunk.
            for o in &others {
                d.inject_delay(*o, Duration::from_secs(3));
            }
        });
        let mut gets = 0;
        for (j, t) in (5..=29).step_by(2).enumerate() {
            let k = format!("obj{}", j as u64 * 7 % n);
            let (v, _) = c.get_at(&key(&k), at(t)).map_err(|e| format!("GET at {t}s failed: {e}"))?;
            ensure!(v == payload(&k, MIB), "GET of {k} at {t}s returned wrong bytes");
            gets += 1;
        }
        let (rep, rerouted) = c
            .with_daemon(0, |d| {
                let rep = d.recovery_reports().iter().find(|r| r.storage == victim).cloned();
                let rerouted = d
                    .events()
                    .iter()
                    .filter(|e| matches!(e, DaemonEvent::Rerouted { chunk, .. } if chunk.chunk_id == 0))
                    .count();
                (rep, rerouted)
            })
            .unwrap();
        let rep = rep.ok_or("no recovery report")?;
        ensure!(rep.parallel, "recovery was not parallel: {rep:?}");
        ensure!(rep.detected_at == at(5), "detected at {:?}", rep.detected_at);
        ensure!(rerouted > 0, "no GET was rerouted during phase 2 (local done {:?})", rep.local_done);
        Ok(format!(
            "100 histories restored exactly; partitions exact for g in 1,5,20,80; {gets} GETs ok, {rerouted} rerouted, phase 2 lasted {:?}",
            rep.local_done - rep.detected_at
        ))
    });
}

#[test]
fn criterion_06_recovery_scaling_direction() {
    criterion(6, "recovery scaling", || {
        let rows = bench_recovery(&RecoveryBench::default()).map_err(|e| e.to_string())?;
        let (a, b) = (&rows[0], &rows[1]);
        ensure!(a.group_size == 20 && b.group_size == 80, "group sizes");
        ensure!(a.report.bytes == b.report.bytes && a.report.chunks == b.report.chunks, "different lost data");
        ensure!(a.report.parallel && b.report.parallel, "not parallel:\n{}", recovery_csv(&rows));
        ensure!(b.report.member_chunks.len() == 80, "only {} members", b.report.member_chunks.len());
        ensure!(b.duration() < a.duration(), "g=80 not faster:\n{}", recovery_csv(&rows));
        Ok(format!(
            "{} bytes: g=20 {:?} ({:.2} GB/s), g=80 {:?} ({:.2} GB/s)",
            a.report.bytes,
            a.duration(),
            a.bandwidth() / 1e9,
            b.duration(),
            b.bandwidth() / 1e9
        ))
    });
}

#[test]
fn criterion_07_erasure_code_properties() {
    criterion(7, "EC properties", || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut decoded = 0;
        let mut refused = 0;
        for (d, p) in [(1u16, 0u16), (4, 2), (10, 2)] {
            let ec = EcConfig::new(d, p).unwrap();
            for _ in 0..1000 {
                let mut obj = vec![0u8; rng.gen_range(1..20_000)];
                rng.fill_bytes(&mut obj);
                let chunks = encode(&obj, ec).map_err(|e| e.to_string())?;
                ensure!(chunks.len() == ec.total() as usize, "chunk count");
                let mut ids: Vec<u16> = (0..ec.total()).collect();
                ids.shuffle(&mut rng);
                ids.truncate(rng.gen_range(0..=ec.total() as usize));
                let have: Vec<(u16, Bytes)> = ids.iter().map(|&i| (i, chunks[i as usize].clone())).collect();
                match decode(&have, ec, obj.len() as u64) {
                    Ok(out) => {
                        ensure!(have.len() >= d as usize, "decoded from {} < d chunks", have.len());
                        ensure!(out == obj, "({d}+{p}) wrong bytes from {ids:?}");
                        decoded += 1;
                    }
                    Err(CodecError::InsufficientChunks { have: h, need }) => {
                        ensure!(have.len() < d as usize && h == have.len() && need == d as usize, "bad refusal");
                        refused += 1;
                    }
                    Err(e) => return Err(format!("({d}+{p}) unexpected error {e}")),
                }
            }
        }
        ensure!(refused > 0 && decoded > 0, "loss patterns not exercised");
        Ok(format!("3000 pairs: {decoded} decoded, {refused} refused cleanly"))
    });
}

#[test]
fn criterion_08_elasticity() {
    criterion(8, "elasticity", || {
        let b = ElasticityBench::default();
        let (elastic, fixed) = elasticity_pair(&b).map_err(|e| e.to_string())?;
        let table = format!("{}{}", elasticity_csv("elastic", &elastic), elasticity_csv("fixed", &fixed));
        ensure!(elastic.windows(2).all(|w| w[1].throughput >= w[0].throughput), "throughput not monotone\n{table}");
        let base = elastic[0].latency.p90.as_secs_f64();
        ensure!(
            elastic.iter().all(|r| r.latency.p90.as_secs_f64() <= base * 1.10),
            "p90 grew with load\n{table}"
        );
        let top = elastic.len() - 1;
        ensure!(fixed[top].latency.p90 > elastic[top].latency.p90, "fixed pool not slower at top step\n{table}");
        Ok(format!(
            "throughput {:?} B/s, p90 {:?} vs fixed-pool {:?} at {} readers",
            elastic.iter().map(|r| r.throughput as u64).collect::<Vec<_>>(),
            elastic[top].latency.p90,
            fixed[top].latency.p90,
            elastic[top].readers
        ))
    });
}

fn serial_recovery_p99(parallel: bool) -> Result<(Percentiles, usize), String> {
    let mut cfg = Config::default();
    cfg.sms.queues.capacity = 4096;
    cfg.sms.memory_limit = 512 * MIB;
    cfg.sms.recovery.parallel = parallel;
    let stack = cfg.build().map_err(|e| e.to_string())?;
    let c = &stack.client;
    c.with_daemon(0, |d| -> Result<(), String> {
        for _ in 0..2 {
            d.scale_out(SimTime::ZERO).map_err(|e| e.to_string())?;
        }
        Ok(())
    })
    .unwrap()?;
    let n = 150u64;
    for i in 0..n {
        let k = format!("obj{i}");
        c.put_at(&key(&k), &payload(&k, MIB), ms(i * 60)).map_err(|e| e.to_string())?;
    }
    let kill = secs(15);
    c.with_daemon(0, |d| {
        d.advance_to(kill);
        for cid in 0..3u16 {
            let id = d.mapping_entry(&ChunkRef::new(key("obj0"), 0, cid)).unwrap().id;
            d.reclaim(id);
        }
    });
    let mut lat = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for j in 0..200u64 {
        let at = kill + Duration::from_millis(j * 50);
        let k = format!("obj{}", rng.gen_range(0..n));
        let (v, done) = c.get_at(&key(&k), at).map_err(|e| e.to_string())?;
        if v != payload(&k, MIB) {
            return Err(format!("{k} wrong bytes"));
        }
        lat.push(done - at);
    }
    let parallel_runs = c.with_daemon(0, |d| d.recovery_reports().iter().filter(|r| r.parallel).count()).unwrap();
    Ok((Percentiles::of(&lat), parallel_runs))
}

#[test]
fn criterion_09_factor_analysis() {
    criterion(9, "factor analysis", || {
        let spec = GenSpec::Bursty { keys: 40, size: 256 << 10, bursts: 6, burst_len: 12, intra_gap_ms: 1, mean_idle_ms: 20_000.0 };
        let trace = generate(&spec, 9);
        let miss = |cache: bool| -> Result<f64, String> {
            let mut cfg = Config::default();
            cfg.sms.queues.capacity = 2;
            cfg.sms.memory_limit = 256 * MIB;
            cfg.sms.cache_functions = cache;
            let stack = cfg.build().map_err(|e| e.to_string())?;
            let r = replay(&stack, &trace, &ReplayOptions::default()).map_err(|e| e.to_string())?;
            Ok(1.0 - r.hit_ratio().unwrap_or(1.0))
        };
        let (with, without) = (miss(true)?, miss(false)?);
        ensure!(without > with, "miss rate without cache functions {without} <= with {with}");

        let (par, par_runs) = serial_recovery_p99(true)?;
        let (ser, ser_runs) = serial_recovery_p99(false)?;
        ensure!(par_runs == 3 && ser_runs == 0, "parallel runs {par_runs}/{ser_runs}");
        ensure!(ser.p99 > par.p99, "serial p99 {:?} <= parallel {:?}", ser.p99, par.p99);
        Ok(format!(
            "chunk miss rate {with:.4} -> {without:.4} without cache functions; p99 {:?} -> {:?} without parallel recovery",
            par.p99, ser.p99
        ))
    });
}

#[test]
fn criterion_10_analyzer() {
    criterion(10, "analyzer", || {
        let t = generate(&GenSpec::Constant { keys: 1, size: 100, period_ms: 1000, duration_ms: 600_000 }, 0);
        let s = analyze(&t, AnalyzeOptions::default());
        ensure!(s.cov["k000000"].cov == 0.0, "constant CoV {}", s.cov["k000000"].cov);

        let t = generate(&GenSpec::Poisson { keys: 1, size: 100, rate_per_s: 1.0, duration_ms: 10_000_000 }, 10);
        let s = analyze(&t, AnalyzeOptions::default());
        let p = &s.cov["k000000"];
        ensure!(p.reuses >= 9_500, "only {} samples", p.reuses);
        ensure!((0.9..=1.1).contains(&p.cov), "Poisson CoV {}", p.cov);

        let t = vec![TraceRecord::put(0, "a", 1), TraceRecord::put(1, "b", 2), TraceRecord::put(2, "c", 3)];
        let s = analyze(&t, AnalyzeOptions::default());
        ensure!(s.wss == vec![6], "WSS {:?}", s.wss);
        Ok(format!("constant CoV 0, Poisson CoV {:.4} over {} samples, WSS 6", p.cov, p.reuses))
    });
}

#[test]
fn criterion_11_determinism() {
    criterion(11, "determinism", || {
        let spec = GenSpec::Mixed {
            keys: 60,
            requests: 1500,
            min_size: 1 << 10,
            max_size: 2 << 20,
            put_fraction: 0.3,
            mean_gap_ms: 2000.0,
            skew: 2.0,
        };
        let trace = generate(&spec, 11);
        let run = || -> Result<Vec<String>, String> {
            let mut cfg = Config { seed: 11, ..Default::default() };
            cfg.client.daemons = 2;
            cfg.sms.memory_limit = 256 * MIB;
            cfg.faas.reclamation = ReclamationPolicy::RandomPerTick { probability: 0.1, tick_ms: 60_000 };
            let stack = cfg.build().map_err(|e| e.to_string())?;
            let r = replay(&stack, &trace, &ReplayOptions { submitters: 2, ..Default::default() }).map_err(|e| e.to_string())?;
            let rec = bench_recovery(&RecoveryBench { objects: 60, group_sizes: vec![5], ..Default::default() })
                .map_err(|e| e.to_string())?;
            Ok(vec![r.summary_csv(), r.latency_csv(), r.timeline_csv(), r.cost_csv, r.ledger_csv, recovery_csv(&rec)])
        };
        let (a, b) = (run()?, run()?);
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            ensure!(x == y, "report {i} differs between runs");
        }
        Ok(format!("{} reports byte-identical ({} ledger bytes)", a.len(), a[4].len()))
    });
}
