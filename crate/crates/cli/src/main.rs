use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sms_core::config::Config;
use sms_core::time::SimTime;
use sms_core::tools::bench::{
    bench_elasticity, bench_recovery, elasticity_csv, recovery_csv, ElasticityBench, RecoveryBench,
};
use sms_core::tools::{analyze, generate, parse_trace, replay, write_trace, AnalyzeOptions, GenSpec, ReplayError, ReplayOptions};

/// Exit status for a GET that returned bytes other than the ones PUT.
const EXIT_VERIFICATION: u8 = 2;

#[derive(Parser)]
#[command(name = "smsctl", version, about = "Trace tooling and benchmarks for the serverless memory store")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    cmd: Cmd,
}

/// Config is layered: file (or built-in defaults), then `SMS__*` environment
/// variables, then the flags below, then `--set` in order.
#[derive(Args)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Any config key as a dotted path, e.g. `--set sms.recovery.group_size=80`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// `seed`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `client.daemons`
    #[arg(long, global = true)]
    daemons: Option<u32>,
    /// `sms.ec.data`
    #[arg(long, global = true)]
    data: Option<u16>,
    /// `sms.ec.parity`
    #[arg(long, global = true)]
    parity: Option<u16>,
    /// `sms.memory_limit` in bytes.
    #[arg(long, global = true)]
    memory_limit: Option<u64>,
    /// `sms.recovery.group_size`
    #[arg(long, global = true)]
    group_size: Option<usize>,
    /// `sms.cache_functions`
    #[arg(long, global = true)]
    cache_functions: Option<bool>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Workload statistics of a trace: WSS, throughput, reuse intervals, CoV.
    Analyze(AnalyzeArgs),
    /// Replay a trace against the full stack, verifying every GET.
    Replay(ReplayArgs),
    /// Write a synthetic trace.
    Gen(GenArgs),
    #[command(subcommand)]
    Bench(BenchCmd),
}

#[derive(Args)]
struct AnalyzeArgs {
    trace: PathBuf,
    #[arg(long, default_value_t = 60)]
    interval_s: u64,
    #[arg(long, default_value_t = 10)]
    min_reuses: usize,
    /// Directory for timeline.csv, cov.csv and reuse.csv; stdout gets the
    /// timeline when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    trace: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    #[arg(long, default_value_t = 1)]
    submitters: usize,
    #[arg(long, default_value_t = 60)]
    report_interval_s: u64,
    /// Drain the run to this virtual time after the last request.
    #[arg(long)]
    end_ms: Option<u64>,
    /// Directory for summary, latency, cost, ledger and timeline CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Generator spec as TOML, e.g. `kind = "poisson"` plus its fields.
    #[arg(long, conflicts_with = "poisson")]
    spec: Option<PathBuf>,
    /// Shorthand for a single-size Poisson spec: `KEYS,SIZE,RATE_PER_S,DURATION_MS`.
    #[arg(long)]
    poisson: Option<String>,
    #[arg(long, default_value_t = 0)]
    gen_seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Recovery duration and bandwidth per recovery-group size.
    Recovery(RecoveryArgs),
    /// Closed-loop readers stepping up over time, elastic vs fixed pool.
    Elasticity(ElasticityArgs),
}

#[derive(Args)]
struct RecoveryArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [20usize, 80])]
    group_sizes: Vec<usize>,
    #[arg(long, default_value_t = 600)]
    objects: usize,
    #[arg(long, default_value_t = 1 << 20)]
    object_size: u64,
    #[arg(long, default_value_t = 8)]
    pool_fgs: usize,
    #[arg(long, default_value_t = 100)]
    put_spacing_ms: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ElasticityArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10])]
    readers: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    step_s: u64,
    #[arg(long, default_value_t = 10)]
    objects: usize,
    #[arg(long, default_value_t = 64 << 10)]
    object_size: u64,
    /// Only run the configuration as given, without the fixed-pool baseline.
    #[arg(long)]
    no_baseline: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    /// `defaults` stands in for the file when `--config` is absent.
    fn load(&self, defaults: &Config) -> Result<Config> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => defaults.to_toml(),
        };
        let mut sets = Vec::new();
        let mut flag = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                sets.push((key.to_string(), v));
            }
        };
        flag("seed", self.seed.map(|v| v.to_string()));
        flag("client.daemons", self.daemons.map(|v| v.to_string()));
        flag("sms.ec.data", self.data.map(|v| v.to_string()));
        flag("sms.ec.parity", self.parity.map(|v| v.to_string()));
        flag("sms.memory_limit", self.memory_limit.map(|v| v.to_string()));
        flag("sms.recovery.group_size", self.group_size.map(|v| v.to_string()));
        flag("sms.cache_functions", self.cache_functions.map(|v| v.to_string()));
        for s in &self.sets {
            let (k, v) = s.split_once('=').with_context(|| format!("--set {s}: expected KEY=VALUE"))?;
            sets.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Config::layered(&text, std::env::vars(), &sets)?)
    }
}

fn write_out(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

fn emit(output: Option<&Path>, body: &str) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn run_analyze(a: &AnalyzeArgs) -> Result<()> {
    let records = parse_trace(&a.trace)?;
    let opts = AnalyzeOptions { interval: Duration::from_secs(a.interval_s.max(1)), min_reuses: a.min_reuses };
    let stats = analyze(&records, opts);
    match &a.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            write_out(dir, "timeline.csv", &stats.timeline_csv())?;
            write_out(dir, "cov.csv", &stats.cov_csv())?;
            write_out(dir, "reuse.csv", &stats.reuse_csv())?;
            if let Some(c) = stats.mean_cov() {
                eprintln!("{} objects, mean CoV {c:.4}", stats.cov.len());
            }
        }
        None => print!("{}", stats.timeline_csv()),
    }
    Ok(())
}

fn run_replay(cfg: &Config, a: &ReplayArgs) -> Result<ExitCode> {
    let records = parse_trace(&a.trace)?;
    let stack = cfg.build()?;
    let opts = ReplayOptions {
        speed: a.speed,
        submitters: a.submitters,
        report_interval: Duration::from_secs(a.report_interval_s.max(1)),
        end: a.end_ms.map(SimTime::from_millis),
    };
    let report = match replay(&stack, &records, &opts) {
        Ok(r) => r,
        Err(e @ ReplayError::VerificationFailure { .. }) => {
            eprintln!("smsctl: {e}");
            return Ok(ExitCode::from(EXIT_VERIFICATION));
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        write_out(dir, "summary.csv", &report.summary_csv())?;
        write_out(dir, "latency.csv", &report.latency_csv())?;
        write_out(dir, "cost.csv", &report.cost_csv)?;
        write_out(dir, "ledger.csv", &report.ledger_csv)?;
        write_out(dir, "timeline.csv", &report.timeline_csv())?;
    }
    print!("{}", report.summary_csv());
    Ok(ExitCode::SUCCESS)
}

fn run_gen(a: &GenArgs) -> Result<()> {
    let spec: GenSpec = match (&a.spec, &a.poisson) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        (None, Some(s)) => {
            let f: Vec<&str> = s.split(',').map(str::trim).collect();
            if f.len() != 4 {
                bail!("--poisson expects KEYS,SIZE,RATE_PER_S,DURATION_MS");
            }
            GenSpec::Poisson {
                keys: f[0].parse()?,
                size: f[1].parse()?,
                rate_per_s: f[2].parse()?,
                duration_ms: f[3].parse()?,
            }
        }
        (None, None) => bail!("one of --spec or --poisson is required"),
    };
    let records = generate(&spec, a.gen_seed);
    write_trace(&a.output, &records)?;
    eprintln!("{} records -> {}", records.len(), a.output.display());
    Ok(())
}

fn run_bench(args: &ConfigArgs, cmd: &BenchCmd) -> Result<ExitCode> {
    match cmd {
        BenchCmd::Recovery(a) => {
            let d = RecoveryBench::default();
            let b = RecoveryBench {
                base: args.load(&d.base)?,
                group_sizes: a.group_sizes.clone(),
                objects: a.objects,
                object_size: a.object_size,
                pool_fgs: a.pool_fgs,
                put_spacing: Duration::from_millis(a.put_spacing_ms),
            };
            let rows = bench_recovery(&b)?;
            emit(a.output.as_deref(), &recovery_csv(&rows))?;
        }
        BenchCmd::Elasticity(a) => {
            let d = ElasticityBench::default();
            let b = ElasticityBench {
                base: args.load(&d.base)?,
                readers: a.readers.clone(),
                step: Duration::from_secs(a.step_s.max(1)),
                objects: a.objects,
                object_size: a.object_size,
            };
            let mut csv = elasticity_csv("elastic", &bench_elasticity(&b, &b.base)?);
            if !a.no_baseline {
                let mut fixed = b.base.clone();
                fixed.sms.cache_functions = false;
                let body = elasticity_csv("fixed", &bench_elasticity(&b, &fixed)?);
                csv.push_str(body.split_once('\n').map_or("", |(_, rows)| rows));
            }
            emit(a.output.as_deref(), &csv)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Analyze(a) => run_analyze(a).map(|_| ExitCode::SUCCESS),
        Cmd::Replay(a) => run_replay(&cli.config.load(&Config::default())?, a),
        Cmd::Gen(a) => run_gen(a).map(|_| ExitCode::SUCCESS),
        Cmd::Bench(b) => run_bench(&cli.config, b),
    }
}
