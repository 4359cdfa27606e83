//! `platehomog`: runs one sweep plan from a TOML file and writes its CSV and
//! JSON artefacts.
//!
//! Exit codes: 0 when every check passes, 2 when a check fails, 1 for usage
//! or configuration errors.

use clap::{Args, Parser, Subcommand};
use platehomog::sweep_io::{run_plan, MaterialSpec, PlanConfig, PlanKind, SweepError};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "platehomog", version, about = "Fibre-wise homogenisation lab for thin periodic plates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a config and report material properties.
    Validate(Common),
    /// Effective plate tensors.
    Homogenise(Common),
    /// Fibre eigenvalue scaling sweep.
    Spectrum(Common),
    /// Ansatz error rates in |chi|.
    VerifyAnsatz(Common),
    /// Resolvent gap rates in epsilon.
    VerifyTheorem(Common),
    /// Korn decomposition ratio probe.
    Korn(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (falls back to PLATEHOMOG_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    /// Mesh override as n1,n2,n3.
    #[arg(long, value_parser = parse_mesh)]
    mesh: Option<[usize; 3]>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error("thread pool: {0}")]
    Threads(#[from] rayon::ThreadPoolBuildError),
}

fn parse_mesh(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s.split(',').map(|p| p.trim().parse::<usize>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    <[usize; 3]>::try_from(v).map_err(|_| "expected three comma-separated sizes".to_string())
}

impl Command {
    fn parts(&self) -> (&Common, Option<PlanKind>, &'static str) {
        match self {
            Command::Validate(c) => (c, None, "validate"),
            Command::Homogenise(c) => (c, Some(PlanKind::Homogenise), "homogenise"),
            Command::Spectrum(c) => (c, Some(PlanKind::Spectrum), "spectrum"),
            Command::VerifyAnsatz(c) => (c, Some(PlanKind::AnsatzRates), "ansatz"),
            Command::VerifyTheorem(c) => (c, Some(PlanKind::Theorem), "theorem"),
            Command::Korn(c) => (c, Some(PlanKind::Korn), "korn"),
        }
    }
}

fn plan_name(kind: PlanKind) -> &'static str {
    match kind {
        PlanKind::Spectrum => "spectrum",
        PlanKind::AnsatzRates => "ansatz-rates",
        PlanKind::Theorem => "theorem",
        PlanKind::Homogenise => "homogenise",
        PlanKind::Korn => "korn",
    }
}

fn load_table(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    Ok(text.parse::<toml::Table>()?)
}

/// Applies the subcommand's plan kind and the command-line overrides.
fn build_config(mut raw: toml::Table, kind: PlanKind, common: &Common) -> Result<PlanConfig, CliError> {
    let want = plan_name(kind);
    match raw.get("plan").and_then(|v| v.as_str()) {
        Some(p) if p != want => {
            return Err(CliError::Config(format!("file describes a '{p}' plan but the subcommand runs '{want}'")));
        }
        _ => {
            raw.insert("plan".into(), toml::Value::String(want.into()));
        }
    }
    if let Some(m) = common.mesh {
        raw.insert("mesh".into(), toml::Value::Array(m.iter().map(|&n| toml::Value::Integer(n as i64)).collect()));
    }
    if let Some(s) = common.seed {
        raw.insert("seed".into(), toml::Value::Integer(s as i64));
    }
    Ok(toml::Value::Table(raw).try_into()?)
}

fn validate(raw: toml::Table, common: &Common) -> Result<bool, CliError> {
    let material: MaterialSpec = match raw.get("material") {
        Some(v) => v.clone().try_into()?,
        None => return Err(CliError::Config("missing [material] section".into())),
    };
    for (i, p) in material.phases.iter().enumerate() {
        let a = p.build().map_err(SweepError::from)?;
        let (lo, hi) = a.nu_bounds();
        println!("phase {i}: nu bounds {{{hi:.6}, {lo:.6}}} planar_symmetric={}", a.is_planar_symmetric());
    }
    let field = material.build()?;
    println!("material: {} phase(s), planar_symmetric={}", field.phases().len(), field.planar_symmetric());
    // a plan section, if present, is validated too
    if let Some(kind) = raw.get("plan").and_then(|v| v.as_str()) {
        let kind: PlanKind = toml::Value::String(kind.into()).try_into()?;
        let cfg = build_config(raw, kind, common)?;
        cfg.validate()?;
        println!("plan '{}' is valid", plan_name(kind));
    }
    Ok(true)
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let (common, kind, stem) = cli.command.parts();
    let threads = match common.threads {
        Some(n) => Some(n),
        None => match std::env::var("PLATEHOMOG_THREADS") {
            Ok(s) => Some(s.trim().parse::<usize>().map_err(|_| CliError::Config(format!("PLATEHOMOG_THREADS='{s}' is not a count")))?),
            Err(_) => None,
        },
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    let raw = load_table(&common.config)?;
    let Some(kind) = kind else {
        return validate(raw, common);
    };
    let cfg = build_config(raw, kind, common)?;
    let out = pool.install(|| run_plan(&cfg))?;
    out.save(&common.out, stem)?;
    let s = &out.summary;
    println!("plan: {}  mesh: {:?}  seed: {}", plan_name(kind), cfg.mesh, cfg.seed);
    for (k, v) in &s.slopes {
        println!("slope {k:<20} {v:.4}");
    }
    for (k, v) in &s.constants {
        println!("{k:<26} {v:.12e}");
    }
    println!("rows: {}  written to {}", out.table.rows.len(), common.out.join(format!("{stem}.csv")).display());
    println!("{}", if s.pass { "PASS" } else { "FAIL" });
    Ok(s.pass)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
