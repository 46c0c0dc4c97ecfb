//! `quorumlab` command-line driver.
//!
//! Exit codes: 0 ok, 1 I/O error, 2 configuration error (including a refused
//! comparison), 3 checker violation or replay mismatch, 4 livelock, 5 corrupt
//! trace.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use quorumlab::bench::compare;
use quorumlab::experiment::{fuzz_config, leader_crash_config, run_experiment, ExperimentConfig, ExperimentError, ProtocolKind};
use quorumlab::fuzz::fuzz_sized;
use quorumlab::replay::{replay, ReplayError};
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Violation(String),
    #[error("{0}")]
    Livelock(String),
    #[error("{0}")]
    Corrupt(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Violation(_) => 3,
            CliError::Livelock(_) => 4,
            CliError::Corrupt(_) => 5,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "quorumlab", version, about = "Deterministic simulation of Raft, Multi-Paxos and Chandra-Toueg")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trace.jsonl, metrics.csv and report.txt.
    Run {
        /// Config file; flags override its keys.
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
        /// Exit with status 3 if the checker finds a violation.
        #[arg(long)]
        check: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the same experiment under several protocols and compare them.
    Compare {
        /// Config files, one per run. Without any, the flags describe a
        /// single experiment that is run once per `--protocols` entry.
        configs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "raft,paxos")]
        protocols: Vec<String>,
        #[command(flatten)]
        flags: ConfigFlags,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-step every node through a recorded trace and re-run the checker.
    Replay { trace: PathBuf },
    /// Safety-fuzz a protocol over a range of seeds.
    Fuzz {
        #[arg(long)]
        protocol: String,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long, default_value_t = 4)]
        nodes: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    /// Ramped write-heavy load with the leader crashed mid-run.
    LeaderCrash,
    /// The safety-fuzz world for the given seed.
    Fuzz,
}

/// Experiment flags. Each maps onto one config-file key.
#[derive(Args, Clone, Default)]
struct ConfigFlags {
    /// Start from a built-in scenario instead of the defaults.
    #[arg(long, value_enum)]
    scenario: Option<Scenario>,
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    nodes: Option<usize>,
    /// Total operations (stress `-n`).
    #[arg(long, short = 'n')]
    ops: Option<u64>,
    /// Concurrent closed-loop clients (stress `-t`).
    #[arg(long, short = 't')]
    clients: Option<usize>,
    /// Bytes per write (stress `-b`/`-c`).
    #[arg(long, short = 'b')]
    payload_bytes: Option<u32>,
    /// Write fraction; stress `-o insert` is 1.0.
    #[arg(long)]
    mix: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// File of `[faults]` keys.
    #[arg(long)]
    faults: Option<PathBuf>,
    /// File of `[network]` keys.
    #[arg(long)]
    net: Option<PathBuf>,
    /// `AT_MS:CLIENTS,...`
    #[arg(long)]
    ramp: Option<String>,
    #[arg(long)]
    buckets_ms: Option<u64>,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_owned(), source })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Io { path, source })
}

fn protocol(name: &str) -> Result<ProtocolKind, CliError> {
    name.parse().map_err(CliError::Config)
}

fn apply_file(cfg: &mut ExperimentConfig, path: &Path, section: &str) -> Result<(), CliError> {
    cfg.apply_text(&read(path)?, section).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl ConfigFlags {
    /// Builds a config: scenario or defaults, then the file, then the fault
    /// and network files, then individual flags.
    fn build(&self, file: Option<&Path>) -> Result<ExperimentConfig, CliError> {
        let seed = self.seed.unwrap_or(0);
        let base = match self.protocol.as_deref().map(protocol).transpose()? {
            Some(p) => p,
            None => ProtocolKind::Raft,
        };
        let mut cfg = match self.scenario {
            Some(Scenario::LeaderCrash) => leader_crash_config(base, seed),
            Some(Scenario::Fuzz) => fuzz_config(base, seed),
            None => ExperimentConfig::default(),
        };
        if let Some(f) = file {
            apply_file(&mut cfg, f, "experiment")?;
        }
        if let Some(f) = &self.faults {
            apply_file(&mut cfg, f, "faults")?;
        }
        if let Some(f) = &self.net {
            apply_file(&mut cfg, f, "network")?;
        }
        let mut set = |section: &str, key: &str, value: Option<String>| match value {
            Some(v) => cfg.set(section, key, &v).map_err(|e| CliError::Config(format!("--{}: {e}", key.replace('_', "-")))),
            None => Ok(()),
        };
        set("experiment", "protocol", self.protocol.clone())?;
        set("experiment", "nodes", self.nodes.map(|v| v.to_string()))?;
        set("experiment", "seed", self.seed.map(|v| v.to_string()))?;
        set("experiment", "buckets_ms", self.buckets_ms.map(|v| v.to_string()))?;
        set("workload", "ops", self.ops.map(|v| v.to_string()))?;
        set("workload", "clients", self.clients.map(|v| v.to_string()))?;
        set("workload", "payload_bytes", self.payload_bytes.map(|v| v.to_string()))?;
        set("workload", "mix", self.mix.map(|v| v.to_string()))?;
        set("workload", "ramp", self.ramp.clone())?;
        Ok(cfg)
    }
}

fn run(config: Option<PathBuf>, flags: ConfigFlags, check: bool, out: PathBuf) -> Result<(), CliError> {
    let cfg = flags.build(config.as_deref())?;
    let result = run_experiment(&cfg)?;
    let report = result.report();
    write(&out, "trace.jsonl", result.trace.as_deref().unwrap_or_default())?;
    write(&out, "metrics.csv", &result.metrics_csv())?;
    write(&out, "report.txt", &report)?;
    print!("{report}");
    if check && !result.verdict.is_clean() {
        for v in &result.verdict.violations {
            eprintln!("{}", v.to_line());
        }
        return Err(CliError::Violation(format!("{} checker violations", result.verdict.violations.len())));
    }
    if result.outcome.livelock {
        return Err(CliError::Livelock(format!("livelock: {} operations still pending at the time budget", result.outcome.incomplete.len())));
    }
    Ok(())
}

fn run_compare(configs: Vec<PathBuf>, protocols: Vec<String>, flags: ConfigFlags, out: PathBuf) -> Result<(), CliError> {
    let cfgs = if configs.is_empty() {
        protocols
            .iter()
            .map(|p| {
                let mut cfg = flags.build(None)?;
                cfg.protocol = protocol(p)?;
                Ok(cfg)
            })
            .collect::<Result<Vec<_>, CliError>>()?
    } else {
        configs.iter().map(|c| flags.build(Some(c))).collect::<Result<Vec<_>, _>>()?
    };
    let mut records = Vec::new();
    for cfg in &cfgs {
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    // Refuse before spending time on the runs.
    if let Some(bad) = cfgs.iter().find(|c| c.body_text() != cfgs[0].body_text()) {
        return Err(CliError::Config(format!("runs `{}` and `{}` differ in more than the protocol", cfgs[0].protocol, bad.protocol)));
    }
    for cfg in &cfgs {
        records.push(quorumlab::experiment::evaluate(cfg)?.record());
    }
    let report = compare(records).map_err(|e| CliError::Config(e.to_string()))?;
    let text = report.text();
    write(&out, "report.txt", &text)?;
    write(&out, "compare.csv", &report.series_csv())?;
    print!("{text}");
    Ok(())
}

fn run_replay(path: PathBuf) -> Result<(), CliError> {
    let text = read(&path)?;
    let report = replay(&text).map_err(|e| match e {
        ReplayError::Corrupt(_) | ReplayError::UnknownNode { .. } => CliError::Corrupt(format!("{}: {e}", path.display())),
        ReplayError::Format(_) => CliError::Corrupt(e.to_string()),
    })?;
    match report.protocol {
        Some(p) => println!("protocol {p}, {} inputs replayed", report.inputs_replayed),
        None => println!("empty trace"),
    }
    for n in &report.nodes {
        let leader = n.leader_epoch.map_or(String::new(), |e| format!(", leader in epoch {e}"));
        println!("{}: {}, progress {}, log {}{leader}", n.node, if n.alive { "up" } else { "down" }, n.progress, n.log_len);
    }
    for m in &report.mismatches {
        println!("mismatch at event {} on {}: {}", m.offset, m.node, m.detail);
    }
    if let Some(v) = &report.verdict {
        for violation in &v.violations {
            println!("{}", violation.to_line());
        }
    }
    if report.passed() {
        println!("verdict: pass");
        Ok(())
    } else {
        Err(CliError::Violation(format!(
            "verdict: fail ({} mismatches, {} violations)",
            report.mismatches.len(),
            report.verdict.as_ref().map_or(0, |v| v.violations.len())
        )))
    }
}

fn run_fuzz(name: &str, seeds: u64, first: u64, nodes: usize) -> Result<(), CliError> {
    let p = protocol(name)?;
    let report = fuzz_sized(p, first..first + seeds, nodes)?;
    println!(
        "{p}: {} runs, {} livelocks, {} with the fault bound exceeded, duplicate pops {}, ghost jobs {}",
        report.runs, report.livelocks, report.termination_skipped, report.duplicate_pops, report.ghost_jobs
    );
    for f in &report.failures {
        println!("seed {}: {} violations{}", f.seed, f.violations.len(), if f.livelock { ", livelock" } else { "" });
        for v in &f.violations {
            println!("  {}", v.to_line());
        }
    }
    if report.failures.iter().any(|f| !f.violations.is_empty()) {
        Err(CliError::Violation("safety violations found".into()))
    } else if report.livelocks > 0 {
        Err(CliError::Livelock(format!("{} seeds livelocked", report.livelocks)))
    } else {
        Ok(())
    }
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Run { config, flags, check, out } => run(config, flags, check, out),
        Command::Compare { configs, protocols, flags, out } => run_compare(configs, protocols, flags, out),
        Command::Replay { trace } => run_replay(trace),
        Command::Fuzz { protocol, seeds, first_seed, nodes } => run_fuzz(&protocol, seeds, first_seed, nodes),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("quorumlab: {e}");
            ExitCode::from(e.code())
        }
    }
}
