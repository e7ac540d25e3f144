use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use klocsim::{compare, generate, parse_trace, run, sweep, write_trace, GeneratorSpec, Pattern, PolicyKind, SimConfig, SimError, SweepAxis, TraceOp};

#[derive(Parser)]
#[command(name = "klocsim", version, about = "Two-tier memory simulator for kernel-object placement policies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic trace.
    Generate(GenerateArgs),
    /// Run one policy and write `metric,value` rows.
    Run(RunArgs),
    /// Run several policies on the same trace and write one row each.
    Compare(CompareArgs),
    /// Vary one config axis across policies.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    pattern: Pattern,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Op budget (rocksdb_like is sized by --files instead).
    #[arg(long)]
    ops: Option<u64>,
    #[arg(long)]
    cpus: Option<u32>,
    #[arg(long)]
    files: Option<u64>,
    #[arg(long)]
    file_size: Option<u64>,
    #[arg(long)]
    value_size: Option<u64>,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    trace: PathBuf,
    /// `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Overrides the config's `policy`.
    #[arg(long)]
    policy: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', required = true)]
    policies: Vec<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// SLOW_BANDWIDTH_RATIO or FAST_CAPACITY_RATIO.
    #[arg(long)]
    axis: String,
    /// Decimals or fractions such as 1/8.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Defaults to every policy.
    #[arg(long, value_delimiter = ',')]
    policies: Vec<String>,
}

enum Failure {
    Config(String),
    Trace(String),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Trace(_) => 3,
            Failure::Other(_) => 1,
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => Failure::Config(m),
            SimError::Trace(w) => Failure::Trace(w.to_string()),
            other => Failure::Other(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn load_config(path: Option<&Path>) -> Result<SimConfig, Failure> {
    let Some(path) = path else { return Ok(SimConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let cfg = SimConfig::from_text(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(Failure::Config)?;
    Ok(cfg)
}

fn load_trace(path: &Path) -> Result<Vec<TraceOp>, Failure> {
    let f = File::open(path).map_err(|e| Failure::Trace(format!("{}: {e}", path.display())))?;
    parse_trace(BufReader::new(f)).map_err(|e| Failure::Trace(format!("{}: {e}", path.display())))
}

fn policies(names: &[String]) -> Result<Vec<PolicyKind>, Failure> {
    if names.is_empty() {
        return Ok(PolicyKind::ALL.to_vec());
    }
    names.iter().map(|n| n.parse().map_err(Failure::Config)).collect()
}

fn axis_value(s: &str) -> Result<f64, Failure> {
    let bad = || Failure::Config(format!("bad axis value `{s}`"));
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            a / b
        }
        None => s.trim().parse().map_err(|_| bad())?,
    };
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(bad())
    }
}

fn write_out(out: Option<&Path>, body: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().lock().write_all(body).context("writing stdout")?,
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Failure> {
    let p = GeneratorSpec::preset(a.pattern);
    let spec = GeneratorSpec {
        seed: a.seed,
        n_ops: a.ops.unwrap_or(p.n_ops),
        n_cpus: a.cpus.unwrap_or(p.n_cpus),
        n_files: a.files.unwrap_or(p.n_files),
        file_size_bytes: a.file_size.unwrap_or(p.file_size_bytes),
        value_bytes: a.value_size.unwrap_or(p.value_bytes),
        ..p
    };
    spec.validate().map_err(Failure::Config)?;
    let trace = generate(&spec);
    let mut body = Vec::new();
    write_trace(&mut body, &trace).context("formatting trace")?;
    write_out(a.out.as_deref(), &body)
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(a.common.config.as_deref())?;
    if let Some(p) = &a.policy {
        cfg.policy = p.parse().map_err(Failure::Config)?;
    }
    let trace = load_trace(&a.common.trace)?;
    let stats = run(&trace, &cfg)?;
    write_out(a.common.out.as_deref(), stats.to_csv().as_bytes())
}

fn cmd_compare(a: CompareArgs) -> Result<(), Failure> {
    let cfg = load_config(a.common.config.as_deref())?;
    let ps = policies(&a.policies)?;
    let trace = load_trace(&a.common.trace)?;
    let mut csv = String::from("policy,throughput_ops_per_sec,fast_miss_count,migrations,peak_slow_kernel_pages\n");
    for s in compare(&trace, &cfg, &ps)? {
        let name = s.policy.map_or("", |p| p.name());
        csv += &format!(
            "{name},{:.3},{},{},{}\n",
            s.throughput_ops_per_sec(),
            s.fast_misses,
            s.migrated_pages(),
            s.peak_slow_kernel_pages
        );
    }
    write_out(a.common.out.as_deref(), csv.as_bytes())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let cfg = load_config(a.common.config.as_deref())?;
    let axis: SweepAxis = a.axis.parse().map_err(Failure::Config)?;
    let values = a.values.iter().map(|v| axis_value(v)).collect::<Result<Vec<_>, _>>()?;
    let ps = policies(&a.policies)?;
    let trace = load_trace(&a.common.trace)?;
    let mut csv = String::from("axis_value,policy,throughput_ops_per_sec\n");
    for pt in sweep(&trace, &cfg, axis, &values, &ps)? {
        let name = pt.stats.policy.map_or("", |p| p.name());
        csv += &format!("{},{name},{:.3}\n", pt.value, pt.stats.throughput_ops_per_sec());
    }
    write_out(a.common.out.as_deref(), csv.as_bytes())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Compare(a) => cmd_compare(a),
        Cmd::Sweep(a) => cmd_sweep(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Trace(m) => eprintln!("trace error: {m}"),
                Failure::Other(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}
