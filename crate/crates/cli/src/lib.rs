//! Command-line driver: loads a unit-suffixed TOML run configuration,
//! resolves presets and overrides, executes the named experiment, and writes
//! `results.csv`, `summary.json`, and (where a pulse program exists)
//! `schedule.txt` into the run's output directory.
//!
//! Exit codes: 0 success; 2 configuration problem (parse, schema, or
//! invariant — every violation is listed); 3 execution failure after a valid
//! configuration.

pub mod experiments;

use clap::{Args, Parser, Subcommand};
use gfsim::config::{apply_overrides, ConfigError, RunConfig};
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUN: u8 = 3;

/// CLI failure, carrying which exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// The configuration cannot be used: unreadable file, parse error, or
    /// validation findings. Exit 2.
    Config(String),
    /// The experiment or its report writing failed. Exit 3.
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(_) => EXIT_RUN,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Run(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "gfsim",
    version,
    about = "Simulator and analysis runner for g-f transmon erasure qubits"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Execute the experiment a config file describes and write its reports.
    Run(RunArgs),
    /// Check a config file and list every schema or invariant violation.
    Validate(ValidateArgs),
}

#[derive(Args)]
pub struct RunArgs {
    /// Config file (TOML); equivalent to --config.
    #[arg(value_name = "CONFIG")]
    pub config_pos: Option<PathBuf>,
    /// Config file (TOML).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Replace the config's master seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads for shot-parallel experiments (default: all cores).
    /// Results are identical for any value.
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
    /// Replace the config's output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override one config key before parsing, e.g.
    /// `--override noise.t1_ge=40 us`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args)]
pub struct ValidateArgs {
    /// Config file (TOML); equivalent to --config.
    #[arg(value_name = "CONFIG")]
    pub config_pos: Option<PathBuf>,
    /// Config file (TOML).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one config key before checking. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

pub fn entry() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run_command(&args),
        Command::Validate(args) => validate_command(&args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Read, override, and parse the config file. Everything that can go wrong
/// here is a configuration problem.
fn load_config(
    positional: &Option<PathBuf>,
    flag: &Option<PathBuf>,
    overrides: &[String],
) -> Result<RunConfig, CliError> {
    let path = flag
        .as_ref()
        .or(positional.as_ref())
        .ok_or_else(|| CliError::Config("no config file given (pass PATH or --config)".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let text = apply_overrides(&text, overrides).map_err(config_err)?;
    RunConfig::from_toml_str(&text).map_err(config_err)
}

/// Render a resolution failure with one line per finding so nothing is
/// hidden behind the first problem.
fn render_invalid(e: ConfigError) -> String {
    match e {
        ConfigError::Invalid(list) => {
            let mut s = String::from("config invalid:");
            for v in list {
                s.push_str("\n  - ");
                s.push_str(&v);
            }
            s
        }
        other => other.to_string(),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(digest.len() * 2);
    for b in digest.iter() {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn run_command(args: &RunArgs) -> Result<u8, CliError> {
    let mut cfg = load_config(&args.config_pos, &args.config, &args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    let resolved = cfg.resolve().map_err(|e| CliError::Config(render_invalid(e)))?;

    // The thread-pool size only changes wall time: every shot draws from its
    // own counter-derived random stream, so reports are identical for any
    // --jobs value.
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }

    // Hash the effective config (file + overrides + flag replacements) so the
    // provenance pins what actually ran.
    let effective = cfg.to_toml_string().map_err(config_err)?;
    let config_sha256 = sha256_hex(effective.as_bytes());

    let report = experiments::execute(&resolved)?;

    let dir = &resolved.output_dir;
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Run(format!("cannot create {}: {e}", dir.display())))?;
    let write = |name: &str, bytes: &[u8]| -> Result<(), CliError> {
        let path = dir.join(name);
        fs::write(&path, bytes)
            .map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))
    };

    write("results.csv", &report.csv)?;
    let summary = serde_json::json!({
        "experiment": resolved.experiment.name(),
        "provenance": {
            "config_sha256": config_sha256,
            "seed": resolved.seed,
            "version": env!("CARGO_PKG_VERSION"),
        },
        "results": report.summary,
    });
    let mut summary_text = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Run(format!("summary serialization: {e}")))?;
    summary_text.push('\n');
    write("summary.json", summary_text.as_bytes())?;
    if let Some(schedule) = &report.schedule {
        write("schedule.txt", schedule.as_bytes())?;
    }

    println!("{}", report.note);
    let mut files = String::from("results.csv, summary.json");
    if report.schedule.is_some() {
        files.push_str(", schedule.txt");
    }
    println!("wrote {files} to {}", dir.display());
    Ok(0)
}

fn validate_command(args: &ValidateArgs) -> Result<u8, CliError> {
    let cfg = load_config(&args.config_pos, &args.config, &args.overrides)?;
    let violations = cfg.violations();
    if violations.is_empty() {
        println!("ok: {} experiment config is valid", cfg.experiment.name());
        Ok(0)
    } else {
        for v in &violations {
            println!("violation: {v}");
        }
        Ok(EXIT_CONFIG)
    }
}
