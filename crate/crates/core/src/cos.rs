//! Durable cloud-object-store layer: chunk objects, insertion-log nodes and
//! snapshots, with per-request and storage-time billing.
//!
//! # Flat key encoding
//!
//! Every [`CosKey`] maps to a flat byte key. Integers are big-endian so that
//! byte order matches numeric order within a namespace.
//!
//! | namespace | layout                                                         |
//! |-----------|----------------------------------------------------------------|
//! | chunk     | `'C'`, key length (u32), key bytes, piece id (u32), chunk id (u16) |
//! | log node  | `'L'`, deployment id (u64), term (u64)                         |
//! | snapshot  | `'S'`, deployment id (u64), snapshot sequence (u64)            |
//!
//! The filesystem backend stores each object at `<root>/<aa>/<bb>/<hex>`,
//! where `aa` and `bb` are the two low bytes of `hash64(flat key)` in hex and
//! `hex` is the flat key in lowercase hex.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use bytes::Bytes;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{hash64, ChunkRef, ObjectKey};
use crate::faas::{DeploymentId, GIB};
use crate::metering::{Category, Ledger, Money};
use crate::time::{transfer_time, SimTime};

const MONTH_MICROS: u128 = 30 * 24 * 3600 * 1_000_000;

#[derive(Debug, Error)]
pub enum CosError {
    #[error("object not found: {0:?}")]
    NotFound(CosKey),
    #[error("cos i/o failure: {0}")]
    IoFailure(String),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CosKey {
    Chunk(ChunkRef),
    LogNode { id: DeploymentId, term: u64 },
    Snapshot { id: DeploymentId, seq: u64 },
}

impl CosKey {
    pub fn flat(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            CosKey::Chunk(c) => {
                out.push(b'C');
                out.extend_from_slice(&(c.key.len() as u32).to_be_bytes());
                out.extend_from_slice(c.key.as_bytes());
                out.extend_from_slice(&c.piece_id.to_be_bytes());
                out.extend_from_slice(&c.chunk_id.to_be_bytes());
            }
            CosKey::LogNode { id, term } => {
                out.push(b'L');
                out.extend_from_slice(&id.0.to_be_bytes());
                out.extend_from_slice(&term.to_be_bytes());
            }
            CosKey::Snapshot { id, seq } => {
                out.push(b'S');
                out.extend_from_slice(&id.0.to_be_bytes());
                out.extend_from_slice(&seq.to_be_bytes());
            }
        }
        out
    }

    pub fn from_flat(flat: &[u8]) -> Option<CosKey> {
        let (&tag, rest) = flat.split_first()?;
        let u64_at = |b: &[u8], i: usize| -> Option<u64> {
            Some(u64::from_be_bytes(b.get(i..i + 8)?.try_into().ok()?))
        };
        match tag {
            b'C' => {
                let len = u32::from_be_bytes(rest.get(..4)?.try_into().ok()?) as usize;
                let key = ObjectKey::try_from(rest.get(4..4 + len)?).ok()?;
                let tail = rest.get(4 + len..)?;
                if tail.len() != 6 {
                    return None;
                }
                let piece_id = u32::from_be_bytes(tail[..4].try_into().ok()?);
                let chunk_id = u16::from_be_bytes(tail[4..].try_into().ok()?);
                Some(CosKey::Chunk(ChunkRef::new(key, piece_id, chunk_id)))
            }
            b'L' | b'S' if rest.len() == 16 => {
                let id = DeploymentId(u64_at(rest, 0)?);
                let n = u64_at(rest, 8)?;
                Some(if tag == b'L' { CosKey::LogNode { id, term: n } } else { CosKey::Snapshot { id, seq: n } })
            }
            _ => None,
        }
    }

    fn log_prefix(id: DeploymentId) -> Vec<u8> {
        let mut p = vec![b'L'];
        p.extend_from_slice(&id.0.to_be_bytes());
        p
    }

    fn snapshot_prefix(id: DeploymentId) -> Vec<u8> {
        let mut p = vec![b'S'];
        p.extend_from_slice(&id.0.to_be_bytes());
        p
    }
}

/// Storage behind [`Cos`]. Implementations must make writes atomic.
pub trait CosBackend: Send + Sync {
    fn put(&self, flat: &[u8], bytes: &Bytes) -> Result<(), CosError>;
    fn get(&self, flat: &[u8]) -> Result<Option<Bytes>, CosError>;
    /// Flat keys starting with `prefix`, ascending.
    fn list_prefix(&self, prefix: &[u8]) -> Result<Vec<Vec<u8>>, CosError>;
}

#[derive(Default)]
pub struct InMemoryBackend {
    objects: RwLock<BTreeMap<Vec<u8>, Bytes>>,
}

impl CosBackend for InMemoryBackend {
    fn put(&self, flat: &[u8], bytes: &Bytes) -> Result<(), CosError> {
        self.objects.write().insert(flat.to_vec(), bytes.clone());
        Ok(())
    }

    fn get(&self, flat: &[u8]) -> Result<Option<Bytes>, CosError> {
        Ok(self.objects.read().get(flat).cloned())
    }

    fn list_prefix(&self, prefix: &[u8]) -> Result<Vec<Vec<u8>>, CosError> {
        Ok(self
            .objects
            .read()
            .range(prefix.to_vec()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, _)| k.clone())
            .collect())
    }
}

/// One file per object under a two-level hashed fan-out.
pub struct FilesystemBackend {
    root: PathBuf,
    index: RwLock<BTreeSet<Vec<u8>>>,
    write_lock: Mutex<()>,
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn from_hex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok()).collect()
}

fn io_err(e: std::io::Error) -> CosError {
    CosError::IoFailure(e.to_string())
}

impl FilesystemBackend {
    /// Opens (creating if needed) a store rooted at `root`, indexing existing objects.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, CosError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(io_err)?;
        let mut index = BTreeSet::new();
        for a in fs::read_dir(&root).map_err(io_err)? {
            let a = a.map_err(io_err)?.path();
            if !a.is_dir() {
                continue;
            }
            for b in fs::read_dir(&a).map_err(io_err)? {
                let b = b.map_err(io_err)?.path();
                if !b.is_dir() {
                    continue;
                }
                for f in fs::read_dir(&b).map_err(io_err)? {
                    let f = f.map_err(io_err)?;
                    if let Some(flat) = f.file_name().to_str().and_then(from_hex) {
                        index.insert(flat);
                    }
                }
            }
        }
        Ok(FilesystemBackend { root, index: RwLock::new(index), write_lock: Mutex::new(()) })
    }

    pub fn path_of(&self, flat: &[u8]) -> PathBuf {
        let h = hash64(flat);
        self.root
            .join(format!("{:02x}", h & 0xff))
            .join(format!("{:02x}", (h >> 8) & 0xff))
            .join(to_hex(flat))
    }
}

impl CosBackend for FilesystemBackend {
    fn put(&self, flat: &[u8], bytes: &Bytes) -> Result<(), CosError> {
        let path = self.path_of(flat);
        let dir = path.parent().unwrap();
        let _g = self.write_lock.lock();
        fs::create_dir_all(dir).map_err(io_err)?;
        let tmp = dir.join(format!(".{}.tmp", to_hex(flat)));
        {
            let mut f = fs::File::create(&tmp).map_err(io_err)?;
            f.write_all(bytes).map_err(io_err)?;
            f.sync_all().map_err(io_err)?;
        }
        fs::rename(&tmp, &path).map_err(io_err)?;
        self.index.write().insert(flat.to_vec());
        Ok(())
    }

    fn get(&self, flat: &[u8]) -> Result<Option<Bytes>, CosError> {
        match fs::read(self.path_of(flat)) {
            Ok(v) => Ok(Some(Bytes::from(v))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(e)),
        }
    }

    fn list_prefix(&self, prefix: &[u8]) -> Result<Vec<Vec<u8>>, CosError> {
        Ok(self
            .index
            .read()
            .range(prefix.to_vec()..)
            .take_while(|k| k.starts_with(prefix))
            .cloned()
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    InMemory,
    Filesystem { root: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CosConfig {
    pub backend: BackendKind,
    /// Dollars per request (put or get).
    pub per_request: f64,
    /// Dollars per GB-month, prorated per byte and microsecond.
    pub per_gb_month: f64,
    pub latency_ms: u64,
    pub bandwidth_bytes_per_sec: u64,
}

impl Default for CosConfig {
    fn default() -> Self {
        CosConfig {
            backend: BackendKind::InMemory,
            per_request: 0.000_000_4,
            per_gb_month: 0.023,
            latency_ms: 20,
            bandwidth_bytes_per_sec: 25_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CosOp {
    Put,
    Get,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CosEvent {
    pub at: SimTime,
    pub source: u32,
    pub op: CosOp,
    pub flat: Vec<u8>,
    pub size: u64,
}

#[derive(Default)]
struct Accrual {
    stored_bytes: u64,
    last: SimTime,
    /// Sub-picodollar remainder carried between accruals (numerator units).
    carry: u128,
}

#[derive(Default)]
struct Accounting {
    /// Size and owning writer of each stored object.
    sizes: BTreeMap<Vec<u8>, (u64, u32)>,
    per_source: BTreeMap<u32, Accrual>,
    events: Vec<CosEvent>,
}

/// The durable layer shared by all daemons.
pub struct Cos {
    backend: Box<dyn CosBackend>,
    cfg: CosConfig,
    ledger: Ledger,
    acct: Mutex<Accounting>,
    failures: AtomicUsize,
}

impl Cos {
    pub fn new(cfg: CosConfig, ledger: Ledger) -> Result<Self, CosError> {
        let backend: Box<dyn CosBackend> = match &cfg.backend {
            BackendKind::InMemory => Box::<InMemoryBackend>::default(),
            BackendKind::Filesystem { root } => Box::new(FilesystemBackend::open(root)?),
        };
        Ok(Self::with_backend(backend, cfg, ledger))
    }

    pub fn with_backend(backend: Box<dyn CosBackend>, cfg: CosConfig, ledger: Ledger) -> Self {
        Cos { backend, cfg, ledger, acct: Mutex::new(Accounting::default()), failures: AtomicUsize::new(0) }
    }

    pub fn config(&self) -> &CosConfig {
        &self.cfg
    }

    /// Simulated time to move one object of `bytes` to or from the store.
    pub fn access_time(&self, bytes: u64) -> Duration {
        Duration::from_millis(self.cfg.latency_ms) + transfer_time(bytes, self.cfg.bandwidth_bytes_per_sec)
    }

    /// Makes the next `n` puts fail with `IoFailure`.
    pub fn inject_put_failures(&self, n: usize) {
        self.failures.store(n, Ordering::SeqCst);
    }

    fn charge_request(&self, at: SimTime, source: u32, cause: &'static str, size: u64) {
        self.ledger.charge(at, Category::Cos, Money::from_dollars(self.cfg.per_request), cause, size, source);
    }

    pub fn put(&self, at: SimTime, source: u32, key: &CosKey, bytes: Bytes) -> Result<Duration, CosError> {
        let flat = key.flat();
        if self
            .failures
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
        {
            return Err(CosError::IoFailure("injected put failure".into()));
        }
        self.backend.put(&flat, &bytes)?;
        let size = bytes.len() as u64;
        self.charge_request(at, source, "cos_put", size);
        let mut acct = self.acct.lock();
        self.accrue_locked(&mut acct, at, source);
        if let Some((old, owner)) = acct.sizes.insert(flat.clone(), (size, source)) {
            self.accrue_locked(&mut acct, at, owner);
            let a = acct.per_source.entry(owner).or_default();
            a.stored_bytes -= old;
        }
        acct.per_source.entry(source).or_default().stored_bytes += size;
        acct.events.push(CosEvent { at, source, op: CosOp::Put, flat, size });
        Ok(self.access_time(size))
    }

    pub fn get(&self, at: SimTime, source: u32, key: &CosKey) -> Result<(Bytes, Duration), CosError> {
        let flat = key.flat();
        let bytes = self.backend.get(&flat)?.ok_or_else(|| CosError::NotFound(key.clone()))?;
        let size = bytes.len() as u64;
        self.charge_request(at, source, "cos_get", size);
        self.acct.lock().events.push(CosEvent { at, source, op: CosOp::Get, flat, size });
        Ok((bytes, self.access_time(size)))
    }

    pub fn contains(&self, key: &CosKey) -> bool {
        self.acct.lock().sizes.contains_key(&key.flat())
    }

    /// Terms of `id`'s log nodes that are `>= from_term`, ascending.
    pub fn list_log_nodes(&self, id: DeploymentId, from_term: u64) -> Result<Vec<u64>, CosError> {
        Ok(self
            .backend
            .list_prefix(&CosKey::log_prefix(id))?
            .iter()
            .filter_map(|k| match CosKey::from_flat(k) {
                Some(CosKey::LogNode { term, .. }) if term >= from_term => Some(term),
                _ => None,
            })
            .collect())
    }

    /// Highest snapshot sequence stored for `id`.
    pub fn latest_snapshot(&self, id: DeploymentId) -> Result<Option<u64>, CosError> {
        Ok(self
            .backend
            .list_prefix(&CosKey::snapshot_prefix(id))?
            .iter()
            .filter_map(|k| match CosKey::from_flat(k) {
                Some(CosKey::Snapshot { seq, .. }) => Some(seq),
                _ => None,
            })
            .max())
    }

    fn accrue_locked(&self, acct: &mut Accounting, now: SimTime, source: u32) {
        let rate = Money::from_dollars(self.cfg.per_gb_month).picos() as u128;
        let a = acct.per_source.entry(source).or_default();
        if now <= a.last {
            return;
        }
        let dt = (now - a.last).as_micros();
        let numer = rate * a.stored_bytes as u128 * dt + a.carry;
        let denom = GIB as u128 * MONTH_MICROS;
        let picos = numer / denom;
        a.carry = numer % denom;
        a.last = now;
        if picos > 0 {
            self.ledger.charge(now, Category::Cos, Money::from_picos(picos as u64), "cos_storage", a.stored_bytes, source);
        }
    }

    /// Charges storage time for `source`'s objects up to `now`.
    pub fn accrue(&self, now: SimTime, source: u32) {
        let mut acct = self.acct.lock();
        self.accrue_locked(&mut acct, now, source);
    }

    pub fn stored_bytes(&self) -> u64 {
        self.acct.lock().per_source.values().map(|a| a.stored_bytes).sum()
    }

    pub fn events(&self) -> Vec<CosEvent> {
        self.acct.lock().events.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cos() -> (Cos, Ledger) {
        let l = Ledger::new();
        (Cos::new(CosConfig::default(), l.clone()).unwrap(), l)
    }

    fn ck(name: &str, piece: u32, chunk: u16) -> CosKey {
        CosKey::Chunk(ChunkRef::new(ObjectKey::try_from(name).unwrap(), piece, chunk))
    }

    #[test]
    fn put_get_and_billing_units() {
        let (c, l) = cos();
        let k = ck("a", 0, 1);
        c.put(SimTime::ZERO, 0, &k, Bytes::from_static(b"hello")).unwrap();
        assert_eq!(l.totals().cos, Money::from_dollars(0.000_000_4));
        let (b, lat) = c.get(SimTime::ZERO, 0, &k).unwrap();
        assert_eq!(&b[..], b"hello");
        assert_eq!(lat, Duration::from_millis(20) + Duration::from_micros(1));
        assert!(matches!(c.get(SimTime::ZERO, 0, &ck("zz", 0, 0)), Err(CosError::NotFound(_))));
    }

    #[test]
    fn overwrite_keeps_one_object_of_storage() {
        let (c, l) = cos();
        let k = ck("a", 0, 0);
        c.put(SimTime::ZERO, 0, &k, Bytes::from(vec![0u8; 1 << 30])).unwrap();
        c.put(SimTime::from_secs(3600), 0, &k, Bytes::from(vec![0u8; 1 << 29])).unwrap();
        assert_eq!(c.stored_bytes(), 1 << 29);
        c.accrue(SimTime::from_secs(7200), 0);

        // Oracle: integrate stored bytes over the put log.
        let rate = 0.023f64;
        let mut size: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
        let mut last = SimTime::ZERO;
        let mut dollars = 0.0;
        let events = c.events();
        let mut t_end = events.iter().map(|e| (e.at, Some(e))).collect::<Vec<_>>();
        t_end.push((SimTime::from_secs(7200), None));
        for (t, e) in t_end {
            let bytes: u64 = size.values().sum();
            dollars += rate * bytes as f64 / GIB as f64 * (t - last).as_secs_f64() / (30.0 * 86400.0);
            last = t;
            if let Some(e) = e {
                size.insert(e.flat.clone(), e.size);
            }
        }
        let storage: u64 = l.entries().iter().filter(|e| e.cause == "cos_storage").map(|e| e.amount.picos()).sum();
        let expected = (dollars * 1e12).floor() as u64;
        assert!(storage.abs_diff(expected) <= 1, "{storage} vs {expected}");
    }

    #[test]
    fn model_based_random_interleavings() {
        let (c, _) = cos();
        let mut model: BTreeMap<CosKey, Bytes> = BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..10_000u64 {
            let k = ck(&format!("k{}", rng.gen_range(0..50)), rng.gen_range(0..2), rng.gen_range(0..3));
            let t = SimTime::from_millis(i);
            if rng.gen_bool(0.5) {
                let v = Bytes::from((0..rng.gen_range(1..16)).map(|_| rng.gen()).collect::<Vec<u8>>());
                c.put(t, 0, &k, v.clone()).unwrap();
                model.insert(k, v);
            } else {
                match (c.get(t, 0, &k), model.get(&k)) {
                    (Ok((b, _)), Some(m)) => assert_eq!(&b, m),
                    (Err(CosError::NotFound(_)), None) => {}
                    (r, m) => panic!("mismatch {:?} vs {:?}", r.map(|x| x.0), m),
                }
            }
        }
    }

    #[test]
    fn list_log_nodes_ordering() {
        let (c, _) = cos();
        let id = DeploymentId(7);
        assert!(c.list_log_nodes(id, 1).unwrap().is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut terms: BTreeSet<u64> = BTreeSet::new();
        for _ in 0..200 {
            let t = rng.gen_range(1..100_000);
            terms.insert(t);
            c.put(SimTime::ZERO, 0, &CosKey::LogNode { id, term: t }, Bytes::new()).unwrap();
        }
        // A neighbouring deployment must not leak into the listing.
        c.put(SimTime::ZERO, 0, &CosKey::LogNode { id: DeploymentId(8), term: 1 }, Bytes::new()).unwrap();
        assert_eq!(c.list_log_nodes(id, 0).unwrap(), terms.iter().copied().collect::<Vec<_>>());

        let (c, _) = cos();
        for t in 1..=5 {
            c.put(SimTime::ZERO, 0, &CosKey::LogNode { id, term: t }, Bytes::new()).unwrap();
        }
        assert_eq!(c.list_log_nodes(id, 3).unwrap(), vec![3, 4, 5]);
    }

    #[test]
    fn flat_encoding_is_injective() {
        let mut seen: BTreeMap<Vec<u8>, CosKey> = BTreeMap::new();
        let names = ["a", "ab", "b", "a\u{0}", "\u{0}a", "L", "S"];
        let mut keys = Vec::new();
        for n in names {
            for p in 0..3 {
                for c in 0..3 {
                    keys.push(ck(n, p, c));
                }
            }
        }
        for id in 0..4 {
            for n in 0..4 {
                keys.push(CosKey::LogNode { id: DeploymentId(id), term: n });
                keys.push(CosKey::Snapshot { id: DeploymentId(id), seq: n });
            }
        }
        for k in keys {
            let flat = k.flat();
            assert_eq!(CosKey::from_flat(&flat).as_ref(), Some(&k));
            if let Some(prev) = seen.insert(flat, k.clone()) {
                panic!("{prev:?} and {k:?} collide");
            }
        }
    }

    #[test]
    fn filesystem_backend_round_trip_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CosConfig { backend: BackendKind::Filesystem { root: dir.path().into() }, ..CosConfig::default() };
        let id = DeploymentId(3);
        {
            let c = Cos::new(cfg.clone(), Ledger::new()).unwrap();
            c.put(SimTime::ZERO, 0, &ck("x", 0, 0), Bytes::from_static(b"data")).unwrap();
            c.put(SimTime::ZERO, 0, &CosKey::LogNode { id, term: 1 }, Bytes::from_static(b"n1")).unwrap();
            c.put(SimTime::ZERO, 0, &CosKey::LogNode { id, term: 2 }, Bytes::from_static(b"n2")).unwrap();
        }
        let c = Cos::new(cfg, Ledger::new()).unwrap();
        assert_eq!(&c.get(SimTime::ZERO, 0, &ck("x", 0, 0)).unwrap().0[..], b"data");
        assert_eq!(c.list_log_nodes(id, 1).unwrap(), vec![1, 2]);
        let no_tmp = walk(dir.path()).iter().all(|p| !p.to_string_lossy().ends_with(".tmp"));
        assert!(no_tmp);
    }

    fn walk(p: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for e in fs::read_dir(p).unwrap() {
            let e = e.unwrap().path();
            if e.is_dir() {
                out.extend(walk(&e));
            } else {
                out.push(e);
            }
        }
        out
    }

    #[test]
    fn injected_failures() {
        let (c, _) = cos();
        c.inject_put_failures(1);
        assert!(matches!(c.put(SimTime::ZERO, 0, &ck("a", 0, 0), Bytes::new()), Err(CosError::IoFailure(_))));
        assert!(c.put(SimTime::ZERO, 0, &ck("a", 0, 0), Bytes::new()).is_ok());
    }
}
