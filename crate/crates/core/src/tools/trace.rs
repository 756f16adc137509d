use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Get,
    Put,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Get => "GET",
            Op::Put => "PUT",
        })
    }
}

impl FromStr for Op {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "GET" | "get" => Ok(Op::Get),
            "PUT" | "put" => Ok(Op::Put),
            other => Err(format!("unknown op {other:?}")),
        }
    }
}

/// One request. For GETs `size` is the expected object size, 0 if unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub timestamp_ms: u64,
    pub op: Op,
    pub key: String,
    pub size: u64,
}

impl TraceRecord {
    pub fn put(timestamp_ms: u64, key: impl Into<String>, size: u64) -> Self {
        TraceRecord { timestamp_ms, op: Op::Put, key: key.into(), size }
    }

    pub fn get(timestamp_ms: u64, key: impl Into<String>, size: u64) -> Self {
        TraceRecord { timestamp_ms, op: Op::Get, key: key.into(), size }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub const TRACE_HEADER: &str = "# timestamp_ms,op,key,size";

/// Parses CSV trace text. Blank lines and lines starting with `#` are
/// skipped; line numbers in errors are 1-based.
pub fn parse_str(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    let mut last = 0u64;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let bad = |reason: String| TraceError::Parse { line, reason };
        let fields: Vec<&str> = s.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", fields.len())));
        }
        let timestamp_ms: u64 = fields[0].trim().parse().map_err(|e| bad(format!("timestamp: {e}")))?;
        let op: Op = fields[1].parse().map_err(bad)?;
        let key = fields[2].trim();
        if key.is_empty() {
            return Err(bad("empty key".into()));
        }
        let size = match (op, fields[3].trim()) {
            (Op::Get, "") => 0,
            (_, f) => f.parse().map_err(|e| bad(format!("size: {e}")))?,
        };
        if op == Op::Put && size == 0 {
            return Err(bad("PUT of zero bytes".into()));
        }
        if timestamp_ms < last {
            return Err(bad(format!("timestamp {timestamp_ms} before previous {last}")));
        }
        last = timestamp_ms;
        out.push(TraceRecord { timestamp_ms, op, key: key.to_string(), size });
    }
    Ok(out)
}

pub fn parse_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>, TraceError> {
    parse_str(&std::fs::read_to_string(path)?)
}

pub fn emit(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 32 + TRACE_HEADER.len() + 1);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.timestamp_ms, r.op, r.key, r.size));
    }
    out
}

pub fn write_trace(path: impl AsRef<Path>, records: &[TraceRecord]) -> Result<(), TraceError> {
    std::fs::write(path, emit(records))?;
    Ok(())
}
