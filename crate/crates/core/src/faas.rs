//! Simulated FaaS platform: deployments, reclaimable instances with volatile
//! state, a reclamation policy and per-invocation billing.
//!
//! Instances hold an arbitrary runtime state `S`. A cold start hands the
//! handler `S::default()`; reclamation drops the state for good.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metering::{Category, Ledger, Money};
use crate::time::{transfer_time, SimTime};

pub const GIB: u64 = 1 << 30;
pub const MIB: u64 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeploymentId(pub u64);

impl fmt::Display for DeploymentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "λ{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FaasError {
    #[error("unknown deployment {0}")]
    UnknownDeployment(DeploymentId),
    #[error("invalid platform config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BillingRates {
    /// Dollars per invocation.
    pub per_invocation: f64,
    /// Dollars per GB-second of configured memory.
    pub per_gb_second: f64,
}

impl Default for BillingRates {
    fn default() -> Self {
        BillingRates { per_invocation: 0.000_000_02, per_gb_second: 0.000_016_666_7 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedReclaim {
    pub at_ms: u64,
    pub id: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ReclamationPolicy {
    IdleTtl { ttl_ms: u64 },
    RandomPerTick { probability: f64, tick_ms: u64 },
    Scripted { events: Vec<ScriptedReclaim> },
}

impl Default for ReclamationPolicy {
    fn default() -> Self {
        ReclamationPolicy::IdleTtl { ttl_ms: 60 * 60 * 1000 }
    }
}

impl ReclamationPolicy {
    pub fn validate(&self) -> Result<(), FaasError> {
        match self {
            ReclamationPolicy::IdleTtl { ttl_ms } if *ttl_ms == 0 => {
                Err(FaasError::InvalidConfig("idle ttl must be positive".into()))
            }
            ReclamationPolicy::RandomPerTick { probability, tick_ms } => {
                if !(0.0..=1.0).contains(probability) {
                    return Err(FaasError::InvalidConfig(format!("probability {probability}")));
                }
                if *tick_ms == 0 {
                    return Err(FaasError::InvalidConfig("tick must be positive".into()));
                }
                Ok(())
            }
            ReclamationPolicy::Scripted { events } => {
                if events.windows(2).any(|w| w[0].at_ms >= w[1].at_ms) {
                    return Err(FaasError::InvalidConfig(
                        "scripted reclamations must be strictly time-ordered".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaasConfig {
    pub warm_latency_ms: u64,
    pub cold_latency_ms: u64,
    pub deploy_latency_ms: u64,
    /// Per-instance handler throughput used to turn bytes moved into time.
    pub throughput_bytes_per_sec: u64,
    pub billing: BillingRates,
    pub reclamation: ReclamationPolicy,
    pub seed: u64,
}

impl Default for FaasConfig {
    fn default() -> Self {
        FaasConfig {
            warm_latency_ms: 5,
            cold_latency_ms: 100,
            deploy_latency_ms: 50,
            throughput_bytes_per_sec: 75_000_000,
            billing: BillingRates::default(),
            reclamation: ReclamationPolicy::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FunctionDeployment {
    pub id: DeploymentId,
    pub memory_limit: u64,
    /// Virtual time at which the deployment becomes invocable.
    pub ready_at: SimTime,
}

/// What the handler did, for latency and billing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Work {
    pub bytes_moved: u64,
    /// Time spent waiting on external services inside the handler.
    pub extra: Duration,
}

pub struct Handled<R> {
    pub response: R,
    pub work: Work,
}

impl<R> Handled<R> {
    pub fn new(response: R, work: Work) -> Self {
        Handled { response, work }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InvokeCtx {
    pub id: DeploymentId,
    pub generation: u64,
    pub was_cold: bool,
    pub memory_limit: u64,
    pub at: SimTime,
}

#[derive(Clone, Debug)]
pub struct Invocation<R> {
    pub response: R,
    pub was_cold: bool,
    pub generation: u64,
    /// Handler execution time before rounding.
    pub exec: Duration,
    pub billed_ms: u64,
    /// Start-up overhead plus execution.
    pub latency: Duration,
    pub charge: Money,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvocationEvent {
    pub at: SimTime,
    pub id: DeploymentId,
    pub category: Category,
    pub cause: &'static str,
    pub memory_limit: u64,
    pub billed_ms: u64,
    pub was_cold: bool,
    pub generation: u64,
}

/// Charge for one invocation: flat fee plus memory GB-seconds, floored to the
/// picodollar.
pub fn invocation_charge(rates: &BillingRates, memory_limit: u64, billed_ms: u64) -> Money {
    let per_inv = Money::from_dollars(rates.per_invocation);
    let per_gbs = Money::from_dollars(rates.per_gb_second).picos() as u128;
    let compute = per_gbs * memory_limit as u128 * billed_ms as u128 / (GIB as u128 * 1000);
    per_inv + Money::from_picos(compute as u64)
}

/// Rounds an execution time up to whole milliseconds.
pub fn billed_millis(exec: Duration) -> u64 {
    (exec.as_micros() as u64).div_ceil(1000)
}

struct Slot<S> {
    memory_limit: u64,
    generation: u64,
    instance: Option<S>,
    last_invoked_at: SimTime,
}

pub struct Platform<S> {
    cfg: FaasConfig,
    ledger: Ledger,
    source: u32,
    id_base: u64,
    next_id: u64,
    deployments: BTreeMap<DeploymentId, Slot<S>>,
    now: SimTime,
    rng: ChaCha8Rng,
    ttl_index: BTreeSet<(SimTime, DeploymentId)>,
    script_pos: usize,
    next_tick: SimTime,
    events: Vec<InvocationEvent>,
}

impl<S: Default> Platform<S> {
    /// `id_base` offsets deployment ids so several platforms never collide.
    pub fn new(cfg: FaasConfig, ledger: Ledger, source: u32, id_base: u64) -> Result<Self, FaasError> {
        cfg.reclamation.validate()?;
        let next_tick = match &cfg.reclamation {
            ReclamationPolicy::RandomPerTick { tick_ms, .. } => SimTime::from_millis(*tick_ms),
            _ => SimTime::MAX,
        };
        Ok(Platform {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6661_6173),
            cfg,
            ledger,
            source,
            id_base,
            next_id: 1,
            deployments: BTreeMap::new(),
            now: SimTime::ZERO,
            ttl_index: BTreeSet::new(),
            script_pos: 0,
            next_tick,
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &FaasConfig {
        &self.cfg
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn deploy(&mut self, memory_limit: u64, at: SimTime) -> Result<FunctionDeployment, FaasError> {
        if memory_limit == 0 {
            return Err(FaasError::InvalidConfig("memory limit must be positive".into()));
        }
        let id = DeploymentId(self.id_base + self.next_id);
        self.next_id += 1;
        self.deployments.insert(
            id,
            Slot { memory_limit, generation: 0, instance: None, last_invoked_at: at },
        );
        Ok(FunctionDeployment {
            id,
            memory_limit,
            ready_at: at + Duration::from_millis(self.cfg.deploy_latency_ms),
        })
    }

    /// Deletes a deployment; its instance state is dropped.
    pub fn remove(&mut self, id: DeploymentId) {
        if let Some(slot) = self.deployments.remove(&id) {
            self.ttl_index.remove(&(slot.last_invoked_at, id));
        }
    }

    pub fn deployment_count(&self) -> usize {
        self.deployments.len()
    }

    pub fn live_instances(&self) -> usize {
        self.deployments.values().filter(|s| s.instance.is_some()).count()
    }

    pub fn memory_limit(&self, id: DeploymentId) -> Option<u64> {
        self.deployments.get(&id).map(|s| s.memory_limit)
    }

    /// Inspects an instance's state without invoking it.
    pub fn peek(&self, id: DeploymentId) -> Option<&S> {
        self.deployments.get(&id).and_then(|s| s.instance.as_ref())
    }

    /// Mutates an instance's state without billing, for work the instance
    /// does on its own timers.
    pub fn peek_mut(&mut self, id: DeploymentId) -> Option<&mut S> {
        self.deployments.get_mut(&id).and_then(|s| s.instance.as_mut())
    }

    pub fn last_invoked_at(&self, id: DeploymentId) -> Option<SimTime> {
        self.deployments.get(&id).map(|s| s.last_invoked_at)
    }

    /// Runs `handler` on the deployment's instance, cold-starting one if none
    /// is alive, and bills the invocation under `category`.
    pub fn invoke<R>(
        &mut self,
        id: DeploymentId,
        category: Category,
        cause: &'static str,
        at: SimTime,
        handler: impl FnOnce(&mut S, &InvokeCtx) -> Handled<R>,
    ) -> Result<Invocation<R>, FaasError> {
        let throughput = self.cfg.throughput_bytes_per_sec;
        let slot = self.deployments.get_mut(&id).ok_or(FaasError::UnknownDeployment(id))?;
        let was_cold = slot.instance.is_none();
        if was_cold {
            slot.generation += 1;
            slot.instance = Some(S::default());
        }
        let ctx = InvokeCtx {
            id,
            generation: slot.generation,
            was_cold,
            memory_limit: slot.memory_limit,
            at,
        };
        let handled = handler(slot.instance.as_mut().unwrap(), &ctx);
        let exec = transfer_time(handled.work.bytes_moved, throughput) + handled.work.extra;
        let billed_ms = billed_millis(exec);
        let overhead = if was_cold { self.cfg.cold_latency_ms } else { self.cfg.warm_latency_ms };
        let charge = invocation_charge(&self.cfg.billing, slot.memory_limit, billed_ms);

        self.ttl_index.remove(&(slot.last_invoked_at, id));
        slot.last_invoked_at = slot.last_invoked_at.max(at);
        self.ttl_index.insert((slot.last_invoked_at, id));

        self.ledger.charge(at, category, charge, cause, id.0, self.source);
        self.events.push(InvocationEvent {
            at,
            id,
            category,
            cause,
            memory_limit: slot.memory_limit,
            billed_ms,
            was_cold,
            generation: slot.generation,
        });
        Ok(Invocation {
            response: handled.response,
            was_cold,
            generation: slot.generation,
            exec,
            billed_ms,
            latency: Duration::from_millis(overhead) + exec,
            charge,
        })
    }

    /// Kills the live instance of `id`, if any. Returns whether one was alive.
    pub fn reclaim(&mut self, id: DeploymentId) -> bool {
        match self.deployments.get_mut(&id) {
            Some(slot) if slot.instance.is_some() => {
                slot.instance = None;
                true
            }
            _ => false,
        }
    }

    /// Earliest pending reclamation event, if the policy has one.
    pub fn next_event(&self) -> Option<SimTime> {
        match &self.cfg.reclamation {
            ReclamationPolicy::IdleTtl { ttl_ms } => {
                let ttl = Duration::from_millis(*ttl_ms);
                self.ttl_index
                    .iter()
                    .find(|(_, id)| self.peek(*id).is_some())
                    .map(|(t, _)| *t + ttl)
            }
            ReclamationPolicy::RandomPerTick { .. } => Some(self.next_tick),
            ReclamationPolicy::Scripted { events } => {
                events.get(self.script_pos).map(|e| SimTime::from_millis(e.at_ms))
            }
        }
    }

    /// Applies the reclamation policy up to `now` and returns what it killed.
    pub fn tick(&mut self, now: SimTime) -> Vec<DeploymentId> {
        let now = now.max(self.now);
        let mut reclaimed = Vec::new();
        match self.cfg.reclamation.clone() {
            ReclamationPolicy::IdleTtl { ttl_ms } => {
                let ttl = Duration::from_millis(ttl_ms);
                let due: Vec<DeploymentId> = self
                    .ttl_index
                    .iter()
                    .take_while(|(t, _)| *t + ttl <= now)
                    .map(|(_, id)| *id)
                    .collect();
                for id in due {
                    if self.reclaim(id) {
                        reclaimed.push(id);
                    }
                }
            }
            ReclamationPolicy::RandomPerTick { probability, tick_ms } => {
                while self.next_tick <= now {
                    let live: Vec<DeploymentId> = self
                        .deployments
                        .iter()
                        .filter(|(_, s)| s.instance.is_some())
                        .map(|(id, _)| *id)
                        .collect();
                    for id in live {
                        if self.rng.gen_bool(probability) {
                            self.reclaim(id);
                            reclaimed.push(id);
                        }
                    }
                    self.next_tick += Duration::from_millis(tick_ms);
                }
            }
            ReclamationPolicy::Scripted { events } => {
                while let Some(e) = events.get(self.script_pos) {
                    if SimTime::from_millis(e.at_ms) > now {
                        break;
                    }
                    self.script_pos += 1;
                    if self.reclaim(DeploymentId(e.id)) {
                        reclaimed.push(DeploymentId(e.id));
                    }
                }
            }
        }
        self.now = now;
        reclaimed
    }

    pub fn events(&self) -> &[InvocationEvent] {
        &self.events
    }
}

/// Recomputes every invocation charge from the event log.
pub fn recompute_charges(events: &[InvocationEvent], rates: &BillingRates) -> Money {
    events
        .iter()
        .map(|e| invocation_charge(rates, e.memory_limit, e.billed_ms))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    Virtual,
    Realtime,
}

/// Monotone clock; virtual mode only moves through [`VirtualClock::advance`].
#[derive(Clone, Debug)]
pub struct VirtualClock {
    mode: ClockMode,
    now: SimTime,
    origin: Instant,
}

impl VirtualClock {
    pub fn new(mode: ClockMode) -> Self {
        VirtualClock { mode, now: SimTime::ZERO, origin: Instant::now() }
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn now(&mut self) -> SimTime {
        if self.mode == ClockMode::Realtime {
            let wall = SimTime::from_micros(self.origin.elapsed().as_micros() as u64);
            self.now = self.now.max(wall);
        }
        self.now
    }

    /// Moves the clock forward to `to`; earlier targets are ignored.
    pub fn advance(&mut self, to: SimTime) -> SimTime {
        self.now = self.now.max(to);
        self.now
    }
}
