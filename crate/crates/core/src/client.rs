//! Client library: routes keys to daemons over a consistent-hash ring and
//! hides erasure coding and large-object splitting from callers.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::sync::Arc;

use bytes::{Bytes, BytesMut};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{decode, encode_object, hash64, CodecError, Hasher64, ObjectKey};
use crate::cos::Cos;
use crate::faas::FaasConfig;
use crate::metering::{HitStats, Ledger};
use crate::sms::{Daemon, PutAck, SmsConfig, SmsError};
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("no daemons on the ring")]
    EmptyRing,
    #[error(transparent)]
    Sms(#[from] SmsError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub daemons: u32,
    pub vnodes: u32,
    /// Pieces of one large object fetched concurrently.
    pub get_parallelism: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig { daemons: 1, vnodes: 128, get_parallelism: 4 }
    }
}

/// Consistent-hash ring of daemon ids with virtual nodes.
#[derive(Clone, Debug)]
pub struct DaemonRing {
    vnodes: u32,
    daemons: BTreeSet<u32>,
    ring: BTreeMap<u64, u32>,
}

fn vnode_position(daemon: u32, vnode: u32) -> u64 {
    let mut h = Hasher64::new();
    h.write_u32(daemon);
    h.write_u32(vnode);
    h.finish()
}

impl DaemonRing {
    pub fn new(vnodes: u32) -> Self {
        DaemonRing { vnodes: vnodes.max(1), daemons: BTreeSet::new(), ring: BTreeMap::new() }
    }

    pub fn with_daemons(vnodes: u32, ids: impl IntoIterator<Item = u32>) -> Self {
        let mut r = DaemonRing::new(vnodes);
        for id in ids {
            r.add(id);
        }
        r
    }

    pub fn add(&mut self, daemon: u32) {
        if self.daemons.insert(daemon) {
            for v in 0..self.vnodes {
                self.ring.insert(vnode_position(daemon, v), daemon);
            }
        }
    }

    pub fn remove(&mut self, daemon: u32) {
        if self.daemons.remove(&daemon) {
            self.ring.retain(|_, d| *d != daemon);
        }
    }

    pub fn daemons(&self) -> impl Iterator<Item = u32> + '_ {
        self.daemons.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.daemons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.daemons.is_empty()
    }

    /// First ring position clockwise of the key's hash, wrapping around.
    pub fn route(&self, key: &ObjectKey) -> Result<u32, ClientError> {
        let h = hash64(key.as_bytes());
        self.ring
            .range(h..)
            .next()
            .or_else(|| self.ring.iter().next())
            .map(|(_, d)| *d)
            .ok_or(ClientError::EmptyRing)
    }
}

/// Thread-safe front end over a set of co-located daemons.
///
/// Each daemon sits behind its own lock, so keys routed to different daemons
/// proceed in parallel and operations on one key are serialised.
pub struct Client {
    cfg: ClientConfig,
    sms: SmsConfig,
    ring: DaemonRing,
    daemons: BTreeMap<u32, Mutex<Daemon>>,
    cos: Arc<Cos>,
    ledger: Ledger,
    hits: HitStats,
}

impl Client {
    pub fn new(
        cfg: ClientConfig,
        sms: SmsConfig,
        faas: FaasConfig,
        cos: Arc<Cos>,
        ledger: Ledger,
        hits: HitStats,
    ) -> Result<Self, ClientError> {
        if cfg.daemons == 0 {
            return Err(ClientError::EmptyRing);
        }
        let ring = DaemonRing::with_daemons(cfg.vnodes, 0..cfg.daemons);
        let mut daemons = BTreeMap::new();
        for id in 0..cfg.daemons {
            let d = Daemon::new(sms.clone(), faas.clone(), Arc::clone(&cos), ledger.clone(), hits.clone(), id)?;
            daemons.insert(id, Mutex::new(d));
        }
        Ok(Client { cfg, sms, ring, daemons, cos, ledger, hits })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    pub fn sms_config(&self) -> &SmsConfig {
        &self.sms
    }

    pub fn ring(&self) -> &DaemonRing {
        &self.ring
    }

    pub fn cos(&self) -> &Arc<Cos> {
        &self.cos
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn hits(&self) -> &HitStats {
        &self.hits
    }

    pub fn route(&self, key: &ObjectKey) -> Result<u32, ClientError> {
        self.ring.route(key)
    }

    /// Runs `f` with exclusive access to one daemon.
    pub fn with_daemon<R>(&self, id: u32, f: impl FnOnce(&mut Daemon) -> R) -> Option<R> {
        self.daemons.get(&id).map(|d| f(&mut d.lock()))
    }

    pub fn daemon_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.daemons.keys().copied()
    }

    fn daemon_for(&self, key: &ObjectKey) -> Result<&Mutex<Daemon>, ClientError> {
        let id = self.route(key)?;
        self.daemons.get(&id).ok_or(ClientError::EmptyRing)
    }

    /// Stores `value` at virtual time `at`. Returns once every chunk is
    /// durable in COS.
    pub fn put_at(&self, key: &ObjectKey, value: &Bytes, at: SimTime) -> Result<PutAck, ClientError> {
        let pieces = encode_object(key, value, self.sms.ec, self.sms.bounds)?;
        let mut d = self.daemon_for(key)?.lock();
        Ok(d.handle_put(key, value.len() as u64, pieces, at)?)
    }

    /// Reads `key` at virtual time `at`, returning the bytes and the time the
    /// last piece decoded.
    pub fn get_at(&self, key: &ObjectKey, at: SimTime) -> Result<(Bytes, SimTime), ClientError> {
        let mut d = self.daemon_for(key)?.lock();
        let meta = d.object(key).cloned().ok_or_else(|| SmsError::NotFound(key.clone()))?;
        let slots = self.cfg.get_parallelism.max(1);
        let mut free: BinaryHeap<Reverse<SimTime>> = (0..slots).map(|_| Reverse(at)).collect();
        let mut out = BytesMut::with_capacity(meta.size as usize);
        let mut done = at;
        for piece in 0..meta.pieces.len() as u32 {
            let Reverse(start) = free.pop().unwrap_or(Reverse(at));
            let read = d.get_piece(key, piece, start)?;
            free.push(Reverse(read.ready_at));
            done = done.max(read.ready_at);
            out.extend_from_slice(&decode(&read.chunks, self.sms.ec, read.original_size)?);
        }
        Ok((out.freeze(), done))
    }

    /// `put_at` on the owning daemon's current clock.
    pub fn put(&self, key: &ObjectKey, value: &Bytes) -> Result<PutAck, ClientError> {
        let at = self.daemon_for(key)?.lock().now();
        self.put_at(key, value, at)
    }

    /// `get_at` on the owning daemon's current clock.
    pub fn get(&self, key: &ObjectKey) -> Result<Bytes, ClientError> {
        let at = self.daemon_for(key)?.lock().now();
        Ok(self.get_at(key, at)?.0)
    }

    /// Advances every daemon to `t`.
    pub fn advance_to(&self, t: SimTime) {
        for d in self.daemons.values() {
            d.lock().advance_to(t);
        }
    }

    /// Drains pending work up to `t` on every daemon.
    pub fn finish(&self, t: SimTime) {
        for d in self.daemons.values() {
            d.lock().finish(t);
        }
    }
}
