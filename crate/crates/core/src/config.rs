//! Whole-stack configuration: a TOML file with one table per module plus
//! environment overrides of the form `SMS__<TABLE>__<KEY>=value`.
//!
//! ```toml
//! seed = 7
//! [faas.reclamation]
//! mode = "random_per_tick"
//! probability = 0.1
//! tick_ms = 60000
//! [sms.ec]
//! data = 10
//! parity = 2
//! [client]
//! daemons = 2
//! ```
//!
//! `SMS__SMS__RECOVERY__GROUP_SIZE=80` sets `sms.recovery.group_size`.
//! Override values are parsed as TOML scalars and fall back to strings.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{Client, ClientConfig, ClientError};
use crate::cos::{Cos, CosConfig, CosError};
use crate::faas::FaasConfig;
use crate::metering::{HitStats, Ledger};
use crate::sms::SmsConfig;

pub const ENV_PREFIX: &str = "SMS__";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("override {var}: {reason}")]
    Override { var: String, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct Config {
    /// Seeds every module RNG; overrides their own `seed` fields.
    pub seed: u64,
    pub faas: FaasConfig,
    pub cos: CosConfig,
    pub sms: SmsConfig,
    pub client: ClientConfig,
}


/// Everything a run needs, wired together.
pub struct Stack {
    pub client: Client,
    pub cos: Arc<Cos>,
    pub ledger: Ledger,
    pub hits: HitStats,
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Cos(#[from] CosError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with(text, std::env::vars())
    }

    /// Parses `text` and applies overrides from `vars`; variables without the
    /// prefix are ignored.
    pub fn from_toml_with(
        text: &str,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        Self::layered(text, vars, &[])
    }

    /// Parses `text`, then applies environment overrides, then `sets` given
    /// as dotted paths such as `sms.ec.data`.
    pub fn layered(
        text: &str,
        vars: impl IntoIterator<Item = (String, String)>,
        sets: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut root: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut vars: Vec<_> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (var, value) in vars {
            let path: Vec<String> = var[ENV_PREFIX.len()..].split("__").map(str::to_ascii_lowercase).collect();
            apply_override(&mut root, &var, &path, &value)?;
        }
        for (key, value) in sets {
            let path: Vec<String> = key.split('.').map(str::to_string).collect();
            apply_override(&mut root, key, &path, value)?;
        }
        let cfg: Config = toml::Value::Table(root).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        Ok(cfg.seeded())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    /// Copies the top-level seed into every module.
    pub fn seeded(mut self) -> Self {
        self.faas.seed = self.seed;
        self.sms.seed = self.seed;
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn build(&self) -> Result<Stack, BuildError> {
        let cfg = self.clone().seeded();
        let ledger = Ledger::new();
        let hits = HitStats::new();
        let cos = Arc::new(Cos::new(cfg.cos.clone(), ledger.clone())?);
        let client = Client::new(cfg.client, cfg.sms, cfg.faas, Arc::clone(&cos), ledger.clone(), hits.clone())?;
        Ok(Stack { client, cos, ledger, hits })
    }
}

fn apply_override(root: &mut toml::Table, var: &str, path: &[String], value: &str) -> Result<(), ConfigError> {
    let err = |reason: &str| ConfigError::Override { var: var.into(), reason: reason.into() };
    if path.iter().any(String::is_empty) {
        return Err(err("empty path segment"));
    }
    let (last, tables) = path.split_last().expect("non-empty path");
    let mut table = root;
    for seg in tables {
        let entry = table.entry(seg.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| err("path crosses a non-table value"))?;
    }
    table.insert(last.clone(), parse_scalar(value));
    Ok(())
}

fn parse_scalar(s: &str) -> toml::Value {
    let probe = format!("v = {s}");
    match toml::from_str::<toml::Table>(&probe) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(s.into())),
        Err(_) => toml::Value::String(s.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faas::ReclamationPolicy;

    fn vars(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn empty_file_is_default() {
        let c = Config::from_toml_with("", vars(&[])).unwrap();
        assert_eq!(c, Config::default());
    }

    #[test]
    fn tables_and_tagged_enums_parse() {
        let text = r#"
            seed = 9
            [faas.reclamation]
            mode = "random_per_tick"
            probability = 0.1
            tick_ms = 60000
            [sms.ec]
            data = 4
            parity = 2
            [client]
            daemons = 3
        "#;
        let c = Config::from_toml_with(text, vars(&[])).unwrap();
        assert_eq!(c.sms.ec.total(), 6);
        assert_eq!(c.client.daemons, 3);
        assert_eq!(c.faas.seed, 9);
        assert_eq!(c.sms.seed, 9);
        assert_eq!(c.faas.reclamation, ReclamationPolicy::RandomPerTick { probability: 0.1, tick_ms: 60_000 });
    }

    #[test]
    fn env_overrides_win() {
        let text = "[sms.recovery]\ngroup_size = 20\n";
        let c = Config::from_toml_with(
            text,
            vars(&[
                ("SMS__SMS__RECOVERY__GROUP_SIZE", "80"),
                ("SMS__SMS__CACHE_FUNCTIONS", "false"),
                ("SMS__COS__BACKEND__KIND", "filesystem"),
                ("SMS__COS__BACKEND__ROOT", "/tmp/x"),
                ("UNRELATED", "1"),
            ]),
        )
        .unwrap();
        assert_eq!(c.sms.recovery.group_size, 80);
        assert!(!c.sms.cache_functions);
        assert_eq!(c.cos.backend, crate::cos::BackendKind::Filesystem { root: "/tmp/x".into() });
    }

    #[test]
    fn dotted_sets_apply_after_env() {
        let sets = vec![("sms.ec.data".to_string(), "4".to_string())];
        let c = Config::layered("", vars(&[("SMS__SMS__EC__DATA", "8")]), &sets).unwrap();
        assert_eq!(c.sms.ec.data(), 4);
    }

    #[test]
    fn bad_override_is_reported() {
        let e = Config::from_toml_with("seed = 1", vars(&[("SMS__SEED__X", "1")])).unwrap_err();
        assert!(matches!(e, ConfigError::Override { .. }));
        let e = Config::from_toml_with("", vars(&[("SMS__SEED", "\"nope\"")])).unwrap_err();
        assert!(matches!(e, ConfigError::Parse(_)));
    }

    #[test]
    fn toml_round_trips() {
        let mut c = Config::default();
        c.seed = 3;
        c.client.daemons = 4;
        let c = c.seeded();
        assert_eq!(Config::from_toml_with(&c.to_toml(), vars(&[])).unwrap(), c);
    }
}
