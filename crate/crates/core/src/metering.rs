//! Pay-per-access cost ledger and hit-ratio accounting.
//!
//! Amounts are integer picodollars (10^-12 USD) so that folds over the ledger
//! are exact.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::time::SimTime;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Money(u64);

impl Money {
    pub const ZERO: Money = Money(0);
    pub const PICOS_PER_DOLLAR: u64 = 1_000_000_000_000;

    pub const fn from_picos(p: u64) -> Self {
        Money(p)
    }

    /// Nearest picodollar to a (non-negative) dollar amount.
    pub fn from_dollars(d: f64) -> Self {
        assert!(d >= 0.0 && d.is_finite(), "negative or non-finite amount {d}");
        Money((d * Self::PICOS_PER_DOLLAR as f64).round() as u64)
    }

    pub const fn picos(self) -> u64 {
        self.0
    }

    pub fn as_dollars(self) -> f64 {
        self.0 as f64 / Self::PICOS_PER_DOLLAR as f64
    }
}

impl Add for Money {
    type Output = Money;

    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:012}", self.0 / Self::PICOS_PER_DOLLAR, self.0 % Self::PICOS_PER_DOLLAR)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Io,
    Recovery,
    Warmup,
    Cos,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Io, Category::Recovery, Category::Warmup, Category::Cos];

    fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Io => "io",
            Category::Recovery => "recovery",
            Category::Warmup => "warmup",
            Category::Cos => "cos",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerEntry {
    pub at: SimTime,
    pub category: Category,
    pub amount: Money,
    pub cause: &'static str,
    /// Deployment id, byte count or other cause-specific detail.
    pub subject: u64,
    /// Writer that appended the entry (daemon index); orders concurrent appends.
    pub source: u32,
    seq: u64,
}

#[derive(Default)]
struct LedgerInner {
    entries: Vec<LedgerEntry>,
    totals: [Money; 4],
}

/// Shared append-only cost log. Cloning yields another handle to the same log.
#[derive(Clone, Default)]
pub struct Ledger {
    inner: Arc<Mutex<LedgerInner>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Totals {
    pub io: Money,
    pub recovery: Money,
    pub warmup: Money,
    pub cos: Money,
}

impl Totals {
    pub fn total(&self) -> Money {
        self.io + self.recovery + self.warmup + self.cos
    }

    pub fn get(&self, c: Category) -> Money {
        match c {
            Category::Io => self.io,
            Category::Recovery => self.recovery,
            Category::Warmup => self.warmup,
            Category::Cos => self.cos,
        }
    }

    fn add(&mut self, c: Category, m: Money) {
        match c {
            Category::Io => self.io += m,
            Category::Recovery => self.recovery += m,
            Category::Warmup => self.warmup += m,
            Category::Cos => self.cos += m,
        }
    }

    /// `(recovery + warmup) / (io + cos)`; `None` when the denominator is zero.
    pub fn overhead_ratio(&self) -> Option<f64> {
        let base = (self.io + self.cos).picos();
        (base > 0).then(|| (self.recovery + self.warmup).picos() as f64 / base as f64)
    }
}

/// One row of a per-interval cost report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReportRow {
    pub interval_start: SimTime,
    pub totals: Totals,
}

pub const REPORT_CSV_HEADER: &str = "interval_start_ms,io,recovery,warmup,cos,total";

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge(
        &self,
        at: SimTime,
        category: Category,
        amount: Money,
        cause: &'static str,
        subject: u64,
        source: u32,
    ) {
        let mut inner = self.inner.lock();
        let seq = inner.entries.len() as u64;
        inner.totals[category.index()] += amount;
        inner.entries.push(LedgerEntry { at, category, amount, cause, subject, source, seq });
    }

    pub fn totals(&self) -> Totals {
        let inner = self.inner.lock();
        Totals {
            io: inner.totals[0],
            recovery: inner.totals[1],
            warmup: inner.totals[2],
            cos: inner.totals[3],
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries in canonical order: time, then writer, then append order.
    pub fn entries(&self) -> Vec<LedgerEntry> {
        let mut e = self.inner.lock().entries.clone();
        e.sort_by_key(|x| (x.at, x.source, x.seq));
        e
    }

    /// Per-interval breakdown, one row per interval from time zero through the
    /// last charged interval. Idle intervals appear as zero rows.
    pub fn report(&self, interval: Duration) -> Vec<ReportRow> {
        let entries = self.entries();
        let Some(last) = entries.last() else { return Vec::new() };
        let n = last.at.slot(interval) as usize + 1;
        let width = interval.as_micros() as u64;
        let mut rows: Vec<ReportRow> = (0..n)
            .map(|i| ReportRow {
                interval_start: SimTime::from_micros(i as u64 * width),
                totals: Totals::default(),
            })
            .collect();
        for e in &entries {
            rows[e.at.slot(interval) as usize].totals.add(e.category, e.amount);
        }
        rows
    }

    pub fn report_csv(&self, interval: Duration) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for r in self.report(interval) {
            let t = r.totals;
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.interval_start.as_millis(),
                t.io,
                t.recovery,
                t.warmup,
                t.cos,
                t.total()
            ));
        }
        out
    }

    pub fn entries_csv(&self) -> String {
        let mut out = String::from("time_us,source,category,amount,cause,subject\n");
        for e in self.entries() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.at.as_micros(),
                e.source,
                e.category.as_str(),
                e.amount,
                e.cause,
                e.subject
            ));
        }
        out
    }
}

/// Chunk reads split by whether function memory served them.
#[derive(Clone, Default)]
pub struct HitStats {
    inner: Arc<Mutex<(u64, u64)>>,
}

impl HitStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, from_memory: bool) {
        let mut g = self.inner.lock();
        g.1 += 1;
        if from_memory {
            g.0 += 1;
        }
    }

    pub fn memory_reads(&self) -> u64 {
        self.inner.lock().0
    }

    pub fn total_reads(&self) -> u64 {
        self.inner.lock().1
    }

    /// Fraction of chunk reads served from memory; `None` before any read.
    pub fn hit_ratio(&self) -> Option<f64> {
        let (m, t) = *self.inner.lock();
        (t > 0).then(|| m as f64 / t as f64)
    }

    pub fn miss_ratio(&self) -> Option<f64> {
        self.hit_ratio().map(|h| 1.0 - h)
    }
}
