//! Experiment configuration, the line-oriented config format, and the glue
//! that runs one configured world and renders its artifacts.
//!
//! Config files are `key = value` lines under `[section]` headers; `#`
//! starts a comment. Sections and keys:
//!
//! ```text
//! [experiment]  protocol (raft|paxos|ct|baseline), nodes, seed,
//!               max_time_ms, buckets_ms
//! [workload]    kind (kv|queue), ops, clients, payload_bytes, mix,
//!               timeout_ms, keyspace, ramp (at_ms:clients,...)
//! [network]     latency (fixed:MS | uniform:MIN:MAX | lognormal:MU:SIGMA),
//!               drop, duplicate, processing_base_us, processing_per_kb_us
//! [faults]      crash = NODE|leader:AT_MS[:RESTART_MS]   (repeatable)
//!               partition = N,N,...:START_MS:END_MS       (repeatable)
//! [queue]       sync_delay_ms (baseline anti-entropy period)
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::compare::{RunRecord, RunSummary};
use crate::bench::metrics::{sample, to_csv, MetricsSample, DEFAULT_BUCKET};
use crate::bench::{RampStep, WorkloadKind, WorkloadSpec};
use crate::checker::{check_all, Verdict};
use crate::consensus::Protocol;
use crate::ct::{ChandraToueg, CtConfig};
use crate::paxos::{Paxos, PaxosConfig};
use crate::queue::baseline::{Baseline, BaselineConfig};
use crate::queue::{audit, CollisionReport};
use crate::raft::{Raft, RaftConfig};
use crate::sim::rng::{stream, Stream};
use crate::sim::trace::encode_line;
use crate::sim::{
    run, CrashSpec, CrashTarget, FaultPlan, LatencyModel, NodeId, PartitionSpec, RunOutcome, SimConfig, SimError, SimTime, TraceEvent,
    TraceKind,
};

pub const TRACE_FORMAT: &str = "quorumlab-trace/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Raft,
    Paxos,
    Ct,
    Baseline,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 4] = [ProtocolKind::Raft, ProtocolKind::Paxos, ProtocolKind::Ct, ProtocolKind::Baseline];
    /// The three consensus protocols.
    pub const CONSENSUS: [ProtocolKind; 3] = [ProtocolKind::Raft, ProtocolKind::Paxos, ProtocolKind::Ct];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolKind::Raft => "raft",
            ProtocolKind::Paxos => "paxos",
            ProtocolKind::Ct => "ct",
            ProtocolKind::Baseline => "baseline",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProtocolKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raft" => Ok(ProtocolKind::Raft),
            "paxos" | "multi-paxos" => Ok(ProtocolKind::Paxos),
            "ct" | "chandra-toueg" => Ok(ProtocolKind::Ct),
            "baseline" | "eventual" => Ok(ProtocolKind::Baseline),
            other => Err(format!("unknown protocol `{other}` (expected raft, paxos, ct or baseline)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub protocol: ProtocolKind,
    pub sim: SimConfig,
    pub workload: WorkloadSpec,
    pub faults: FaultPlan,
    /// Anti-entropy period of the baseline, ignored by the consensus protocols.
    pub sync_delay_ms: u64,
    pub bucket: SimTime,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            protocol: ProtocolKind::Raft,
            sim: SimConfig::new(4, 0),
            workload: WorkloadSpec::default(),
            faults: FaultPlan::none(),
            sync_delay_ms: 100,
            bucket: DEFAULT_BUCKET,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.trim().parse().map_err(|_| format!("`{key}` expects a number, got `{v}`"))
}

fn ms(v: f64) -> SimTime {
    SimTime::from_millis_f64(v)
}

fn fmt_ms(t: SimTime) -> String {
    let m = t.as_millis_f64();
    if m.fract() == 0.0 {
        format!("{}", m as u64)
    } else {
        format!("{m}")
    }
}

pub fn parse_latency(v: &str) -> Result<LatencyModel, String> {
    let parts: Vec<&str> = v.trim().split(':').collect();
    let num = |s: &str| parse_num::<f64>("latency", s);
    let model = match parts.as_slice() {
        ["fixed", x] => LatencyModel::Fixed { ms: num(x)? },
        ["uniform", a, b] => LatencyModel::Uniform { min_ms: num(a)?, max_ms: num(b)? },
        ["lognormal", mu, sigma] => LatencyModel::LogNormal { mu: num(mu)?, sigma: num(sigma)? },
        _ => return Err(format!("bad latency `{v}` (fixed:MS, uniform:MIN:MAX or lognormal:MU:SIGMA)")),
    };
    model.validate().map_err(|e| e.to_string())?;
    Ok(model)
}

fn render_latency(m: &LatencyModel) -> String {
    match *m {
        LatencyModel::Fixed { ms } => format!("fixed:{ms}"),
        LatencyModel::Uniform { min_ms, max_ms } => format!("uniform:{min_ms}:{max_ms}"),
        LatencyModel::LogNormal { mu, sigma } => format!("lognormal:{mu}:{sigma}"),
    }
}

pub fn parse_crash(v: &str) -> Result<CrashSpec, String> {
    let parts: Vec<&str> = v.trim().split(':').collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(format!("bad crash `{v}` (NODE|leader:AT_MS[:RESTART_MS])"));
    }
    let target = if parts[0].eq_ignore_ascii_case("leader") {
        CrashTarget::Leader
    } else {
        CrashTarget::Node(NodeId(parse_num("crash", parts[0])?))
    };
    let at = ms(parse_num("crash", parts[1])?);
    let restart_at = parts.get(2).map(|r| parse_num("crash", r).map(ms)).transpose()?;
    Ok(CrashSpec { target, at, restart_at })
}

fn render_crash(c: &CrashSpec) -> String {
    let target = match c.target {
        CrashTarget::Node(n) => n.0.to_string(),
        CrashTarget::Leader => "leader".into(),
    };
    match c.restart_at {
        Some(r) => format!("{target}:{}:{}", fmt_ms(c.at), fmt_ms(r)),
        None => format!("{target}:{}", fmt_ms(c.at)),
    }
}

pub fn parse_partition(v: &str) -> Result<PartitionSpec, String> {
    let parts: Vec<&str> = v.trim().split(':').collect();
    let [side, start, end] = parts.as_slice() else {
        return Err(format!("bad partition `{v}` (N,N,...:START_MS:END_MS)"));
    };
    let side = side.split(',').map(|n| parse_num("partition", n).map(NodeId)).collect::<Result<BTreeSet<_>, _>>()?;
    Ok(PartitionSpec { side, start: ms(parse_num("partition", start)?), end: ms(parse_num("partition", end)?) })
}

fn render_partition(p: &PartitionSpec) -> String {
    let side: Vec<String> = p.side.iter().map(|n| n.0.to_string()).collect();
    format!("{}:{}:{}", side.join(","), fmt_ms(p.start), fmt_ms(p.end))
}

/// `AT_MS:CLIENTS[,AT_MS:CLIENTS...]`; an empty string clears the ramp.
pub fn parse_ramp(v: &str) -> Result<Vec<RampStep>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|step| {
            let (at, clients) = step.split_once(':').ok_or_else(|| format!("bad ramp step `{step}` (AT_MS:CLIENTS)"))?;
            Ok(RampStep { at: ms(parse_num("ramp", at)?), clients: parse_num("ramp", clients)? })
        })
        .collect()
}

fn render_ramp(r: &[RampStep]) -> String {
    r.iter().map(|s| format!("{}:{}", fmt_ms(s.at), s.clients)).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Sets one key. Repeatable keys (`crash`, `partition`) append.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match (section, key) {
            ("experiment", "protocol") => self.protocol = v.parse()?,
            ("experiment", "nodes") => self.sim.node_count = parse_num(key, v)?,
            ("experiment", "seed") => self.sim.seed = parse_num(key, v)?,
            ("experiment", "max_time_ms") => self.sim.max_virtual_time = ms(parse_num(key, v)?),
            ("experiment", "buckets_ms") => self.bucket = ms(parse_num(key, v)?),
            ("workload", "kind") => {
                self.workload.kind = match v {
                    "kv" | "key_value" => WorkloadKind::KeyValue,
                    "queue" => WorkloadKind::Queue,
                    _ => return Err(format!("unknown workload kind `{v}` (kv or queue)")),
                }
            }
            ("workload", "ops") => self.workload.op_count = parse_num(key, v)?,
            ("workload", "clients") => self.workload.client_concurrency = parse_num(key, v)?,
            ("workload", "payload_bytes") => self.workload.payload_bytes = parse_num(key, v)?,
            ("workload", "mix") => self.workload.mix = parse_num(key, v)?,
            ("workload", "timeout_ms") => self.workload.client_timeout = ms(parse_num(key, v)?),
            ("workload", "keyspace") => self.workload.keyspace = parse_num(key, v)?,
            ("workload", "ramp") => self.workload.ramp = parse_ramp(v)?,
            ("network", "latency") => self.sim.latency = parse_latency(v)?,
            ("network", "drop") => self.sim.drop_probability = parse_num(key, v)?,
            ("network", "duplicate") => self.sim.duplicate_probability = parse_num(key, v)?,
            ("network", "processing_base_us") => self.sim.processing.base_us = parse_num(key, v)?,
            ("network", "processing_per_kb_us") => self.sim.processing.per_kb_us = parse_num(key, v)?,
            ("faults", "crash") => self.faults.crashes.push(parse_crash(v)?),
            ("faults", "partition") => self.faults.partitions.push(parse_partition(v)?),
            ("queue", "sync_delay_ms") => self.sync_delay_ms = parse_num(key, v)?,
            _ => return Err(format!("unknown key `{key}` in section [{section}]")),
        }
        Ok(())
    }

    /// Applies config text on top of `self`. Keys before the first header
    /// belong to `default_section`.
    pub fn apply_text(&mut self, text: &str, default_section: &str) -> Result<(), ConfigError> {
        let mut section = default_section.to_string();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError::Syntax { line: i + 1, message };
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| err(format!("unterminated section header `{line}`")))?;
                section = name.trim().to_string();
                if !["experiment", "workload", "network", "faults", "queue"].contains(&section.as_str()) {
                    return Err(err(format!("unknown section [{section}]")));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            self.set(&section, key.trim(), value).map_err(err)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text, "experiment")?;
        Ok(cfg)
    }

    /// Canonical rendering; `parse(to_text(c)) == c` for every valid `c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[experiment]\nprotocol = {}", self.protocol);
        s.push_str(&self.body_text());
        s
    }

    /// Everything except the protocol line, used to match comparison runs.
    pub fn body_text(&self) -> String {
        let mut s = String::new();
        let w = &self.workload;
        let kind = match w.kind {
            WorkloadKind::KeyValue => "kv",
            WorkloadKind::Queue => "queue",
        };
        let _ = writeln!(s, "nodes = {}", self.sim.node_count);
        let _ = writeln!(s, "seed = {}", self.sim.seed);
        let _ = writeln!(s, "max_time_ms = {}", fmt_ms(self.sim.max_virtual_time));
        let _ = writeln!(s, "buckets_ms = {}", fmt_ms(self.bucket));
        let _ = writeln!(s, "\n[workload]\nkind = {kind}\nops = {}\nclients = {}", w.op_count, w.client_concurrency);
        let _ = writeln!(s, "payload_bytes = {}\nmix = {}\ntimeout_ms = {}", w.payload_bytes, w.mix, fmt_ms(w.client_timeout));
        let _ = writeln!(s, "keyspace = {}\nramp = {}", w.keyspace, render_ramp(&w.ramp));
        let _ = writeln!(s, "\n[network]\nlatency = {}", render_latency(&self.sim.latency));
        let _ = writeln!(s, "drop = {}\nduplicate = {}", self.sim.drop_probability, self.sim.duplicate_probability);
        let _ = writeln!(
            s,
            "processing_base_us = {}\nprocessing_per_kb_us = {}",
            self.sim.processing.base_us, self.sim.processing.per_kb_us
        );
        s.push_str("\n[faults]\n");
        for c in &self.faults.crashes {
            let _ = writeln!(s, "crash = {}", render_crash(c));
        }
        for p in &self.faults.partitions {
            let _ = writeln!(s, "partition = {}", render_partition(p));
        }
        let _ = writeln!(s, "\n[queue]\nsync_delay_ms = {}", self.sync_delay_ms);
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: String| ConfigError::Invalid(e);
        self.sim.validate().map_err(|e| bad(e.to_string()))?;
        self.workload.validate().map_err(|e| bad(e.to_string()))?;
        self.faults.validate(self.sim.node_count).map_err(|e| bad(e.to_string()))?;
        if self.protocol == ProtocolKind::Baseline && self.workload.kind != WorkloadKind::Queue {
            return Err(bad("the baseline protocol only runs the queue workload".into()));
        }
        if self.bucket == SimTime::ZERO {
            return Err(bad("buckets_ms must be positive".into()));
        }
        Ok(())
    }
}

/// First line of every trace file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub protocol: ProtocolKind,
    pub config: ExperimentConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderChange {
    pub time: SimTime,
    pub node: NodeId,
    pub epoch: u64,
}

/// Everything one run produces, with the typed trace already erased.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    /// Header plus one JSON record per event; `None` when not rendered.
    pub trace: Option<String>,
    pub samples: Vec<MetricsSample>,
    pub summary: RunSummary,
    pub outcome: RunOutcome,
    pub verdict: Verdict,
    pub collisions: CollisionReport,
    pub leaders: Vec<LeaderChange>,
    pub crashes: usize,
    pub messages_sent: u64,
    pub messages_dropped: u64,
}

impl ExperimentOutput {
    pub fn metrics_csv(&self) -> String {
        to_csv(&self.samples, self.config.sim.node_count)
    }

    pub fn record(&self) -> RunRecord {
        RunRecord {
            protocol: self.config.protocol.to_string(),
            meta: self.config.body_text(),
            samples: self.samples.clone(),
            summary: self.summary.clone(),
        }
    }

    /// Human-readable summary printed by `run`.
    pub fn report(&self) -> String {
        let c = &self.config;
        let s = &self.summary;
        let mut out = String::new();
        let _ = writeln!(out, "protocol {} on {} nodes, seed {}", c.protocol, c.sim.node_count, c.sim.seed);
        let o = &self.outcome;
        let _ = writeln!(out, "ops issued {}, completed {}, virtual end {}", o.issued, o.completed, o.end_time);
        let _ = writeln!(out, "writes {} (mean {:.3} ms, max {:.3} ms)", s.write_ops, s.mean_write_latency_ms, s.max_write_latency_ms);
        let _ = writeln!(out, "reads {} (mean {:.3} ms, max {:.3} ms)", s.read_ops, s.mean_read_latency_ms, s.max_read_latency_ms);
        let _ = writeln!(out, "node load mean {:.3}, variance {:.4}", s.mean_load, s.load_variance);
        let _ = writeln!(out, "messages sent {}, dropped {}", self.messages_sent, self.messages_dropped);
        let epochs: Vec<String> = self.leaders.iter().map(|l| format!("{}@{}={}", l.node, l.time, l.epoch)).collect();
        let _ = writeln!(out, "leader changes {}{}", self.leaders.len(), if epochs.is_empty() { String::new() } else { format!(": {}", epochs.join(", ")) });
        let _ = writeln!(out, "crashes {}, longest write gap after first crash {:.3} ms", self.crashes, s.availability_gap_ms);
        if c.workload.kind == WorkloadKind::Queue {
            let _ = writeln!(out, "queue: duplicate pops {}, ghost jobs {}", self.collisions.duplicate_pops, self.collisions.ghost_jobs);
        }
        let _ = writeln!(out, "livelock {}", if o.livelock { "yes" } else { "no" });
        if self.verdict.is_clean() {
            let _ = writeln!(out, "checker: clean");
        } else {
            let _ = writeln!(out, "checker: {} violations", self.verdict.violations.len());
        }
        out
    }
}

fn execute<P: Protocol>(protocol: P, config: &ExperimentConfig, render: bool) -> Result<ExperimentOutput, ExperimentError> {
    let n = config.sim.node_count;
    let out = run(protocol, config.sim.clone(), config.faults.clone(), config.workload.clone())?;
    let samples = sample(&out.trace, config.bucket, n);
    let summary = RunSummary::compute(&out.trace, &samples);
    let verdict = check_all(&out.trace, config.protocol, n, config.sim.max_virtual_time);
    let collisions = audit(&out.trace);
    let (mut leaders, mut crashes, mut sent, mut dropped) = (Vec::new(), 0, 0, 0);
    for ev in &out.trace {
        match &ev.kind {
            TraceKind::Leader { epoch, .. } => leaders.push(LeaderChange { time: ev.time, node: ev.node.expect("leaders are nodes"), epoch: *epoch }),
            TraceKind::Crash => crashes += 1,
            TraceKind::Send { .. } => sent += 1,
            TraceKind::Drop { .. } => dropped += 1,
            _ => {}
        }
    }
    let trace = render.then(|| render_trace(config, &out.trace));
    Ok(ExperimentOutput {
        config: config.clone(),
        trace,
        samples,
        summary,
        outcome: out.outcome,
        verdict,
        collisions,
        leaders,
        crashes,
        messages_sent: sent,
        messages_dropped: dropped,
    })
}

pub fn render_trace<M: Serialize>(config: &ExperimentConfig, events: &[TraceEvent<M>]) -> String {
    let header = TraceHeader { format: TRACE_FORMAT.into(), protocol: config.protocol, config: config.clone() };
    let mut text = encode_line(&header);
    for ev in events {
        text.push_str(&encode_line(ev));
    }
    text
}

fn dispatch(config: &ExperimentConfig, render: bool) -> Result<ExperimentOutput, ExperimentError> {
    config.validate()?;
    let n = config.sim.node_count;
    match config.protocol {
        ProtocolKind::Raft => execute(Raft::new(RaftConfig::new(n)), config, render),
        ProtocolKind::Paxos => execute(Paxos::new(PaxosConfig::new(n)), config, render),
        ProtocolKind::Ct => execute(ChandraToueg::new(CtConfig::new(n)), config, render),
        ProtocolKind::Baseline => execute(Baseline::new(BaselineConfig::new(n, config.sync_delay_ms)), config, render),
    }
}

/// Runs one experiment and renders its trace.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    dispatch(config, true)
}

/// Runs one experiment without rendering the trace text.
pub fn evaluate(config: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    dispatch(config, false)
}

/// The safety-fuzz world for `seed`: 4 nodes, 500 queue ops, 1% drop, and
/// random crash/restart episodes that never exceed the fault bound.
pub fn fuzz_config(protocol: ProtocolKind, seed: u64) -> ExperimentConfig {
    fuzz_config_sized(protocol, seed, 4)
}

/// [`fuzz_config`] on a cluster of `n` nodes.
pub fn fuzz_config_sized(protocol: ProtocolKind, seed: u64, n: usize) -> ExperimentConfig {
    let mut sim = SimConfig::new(n, seed);
    sim.drop_probability = 0.01;
    sim.max_virtual_time = SimTime::from_millis(120_000);
    let mut rng = stream(seed, Stream::Faults);
    let faults = FaultPlan::random(&mut rng, n, (SimTime::from_millis(200), SimTime::from_millis(3000)), 3, SimTime::from_millis(1500));
    let workload = WorkloadSpec {
        op_count: 500,
        client_concurrency: 4,
        payload_bytes: 200,
        mix: 0.5,
        kind: WorkloadKind::Queue,
        ..WorkloadSpec::default()
    };
    ExperimentConfig { protocol, sim, workload, faults, ..ExperimentConfig::default() }
}

/// Ramped write-heavy load on 4 nodes with the current leader crashed
/// mid-run and restarted later.
pub fn leader_crash_config(protocol: ProtocolKind, seed: u64) -> ExperimentConfig {
    let mut sim = SimConfig::new(4, seed);
    sim.max_virtual_time = SimTime::from_millis(120_000);
    let workload = WorkloadSpec {
        op_count: 3000,
        client_concurrency: 8,
        payload_bytes: 1000,
        mix: 0.9,
        kind: WorkloadKind::KeyValue,
        ramp: vec![
            RampStep { at: SimTime::ZERO, clients: 2 },
            RampStep { at: SimTime::from_millis(1000), clients: 4 },
            RampStep { at: SimTime::from_millis(2000), clients: 8 },
        ],
        ..WorkloadSpec::default()
    };
    let faults = FaultPlan {
        crashes: vec![CrashSpec {
            target: CrashTarget::Leader,
            at: SimTime::from_millis(2500),
            restart_at: Some(SimTime::from_millis(5000)),
        }],
        partitions: vec![],
    };
    ExperimentConfig { protocol, sim, workload, faults, bucket: SimTime::from_millis(250), ..ExperimentConfig::default() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trips() {
        let mut cfg = leader_crash_config(ProtocolKind::Paxos, 9);
        cfg.faults.partitions.push(PartitionSpec { side: [NodeId(1), NodeId(3)].into(), start: ms(10.5), end: ms(20.0) });
        cfg.sim.latency = LatencyModel::LogNormal { mu: 1.5, sigma: 0.25 };
        let text = cfg.to_text();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg, "{text}");
    }

    #[test]
    fn bad_lines_carry_line_numbers() {
        let err = ExperimentConfig::parse("protocol = raft\n\nnodes four\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 3, .. }), "{err}");
        let err = ExperimentConfig::parse("[network]\nlatency = gaussian:1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }));
        assert!(ExperimentConfig::parse("[wat]\n").is_err());
    }

    #[test]
    fn fault_syntax() {
        let c = parse_crash("leader:1500").unwrap();
        assert_eq!((c.target, c.at, c.restart_at), (CrashTarget::Leader, ms(1500.0), None));
        let c = parse_crash("2:100:400").unwrap();
        assert_eq!(c.target, CrashTarget::Node(NodeId(2)));
        assert_eq!(c.restart_at, Some(ms(400.0)));
        let p = parse_partition("1,2:5:9").unwrap();
        assert_eq!(p.side.len(), 2);
        assert_eq!(parse_ramp("0:1, 2000:3").unwrap()[1], RampStep { at: ms(2000.0), clients: 3 });
    }

    #[test]
    fn baseline_requires_queue_workload() {
        let cfg = ExperimentConfig { protocol: ProtocolKind::Baseline, ..ExperimentConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fuzz_plans_stay_within_the_fault_bound() {
        for seed in 0..50 {
            let cfg = fuzz_config(ProtocolKind::Raft, seed);
            assert!(cfg.faults.max_concurrent_crashes() <= 1);
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn small_runs_are_clean_for_every_protocol() {
        for p in ProtocolKind::CONSENSUS {
            let mut cfg = fuzz_config(p, 3);
            cfg.workload.op_count = 100;
            let out = run_experiment(&cfg).unwrap();
            assert!(out.verdict.is_clean(), "{p}: {:?}", out.verdict.violations);
            assert!(!out.outcome.livelock, "{p}");
            assert!(out.trace.unwrap().starts_with("{\"format\":\"quorumlab-trace/1\""));
        }
    }
}
