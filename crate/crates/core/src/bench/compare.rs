//! Side-by-side summaries of runs that differ only in protocol.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::MetricsSample;
use crate::consensus::OpClass;
use crate::sim::{SimTime, TraceEvent, TraceKind};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub write_ops: u64,
    pub read_ops: u64,
    pub max_write_latency_ms: f64,
    pub mean_write_latency_ms: f64,
    pub max_read_latency_ms: f64,
    pub mean_read_latency_ms: f64,
    pub mean_load: f64,
    /// Population variance of every (node, bucket) load value.
    pub load_variance: f64,
    /// Coefficient of variation of per-bucket write throughput.
    pub write_rps_cv: f64,
    /// Longest stretch without a completed write, measured from the first
    /// crash (or from time zero in crash-free runs) to the last write.
    pub availability_gap_ms: f64,
    pub net_sent_kb: f64,
}

fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var)
}

impl RunSummary {
    pub fn compute<M>(trace: &[TraceEvent<M>], samples: &[MetricsSample]) -> Self {
        let mut s = RunSummary::default();
        let mut write_sum = 0.0;
        let mut read_sum = 0.0;
        let mut writes_at = Vec::new();
        let mut first_crash = None;
        for ev in trace {
            match &ev.kind {
                TraceKind::ClientResp { class, latency_us, .. } => {
                    let ms = *latency_us as f64 / 1000.0;
                    match class {
                        OpClass::Write => {
                            s.write_ops += 1;
                            write_sum += ms;
                            s.max_write_latency_ms = s.max_write_latency_ms.max(ms);
                            writes_at.push(ev.time);
                        }
                        OpClass::Read => {
                            s.read_ops += 1;
                            read_sum += ms;
                            s.max_read_latency_ms = s.max_read_latency_ms.max(ms);
                        }
                    }
                }
                TraceKind::Crash if first_crash.is_none() => first_crash = Some(ev.time),
                TraceKind::Send { bytes, .. } => s.net_sent_kb += *bytes as f64 / 1000.0,
                _ => {}
            }
        }
        if s.write_ops > 0 {
            s.mean_write_latency_ms = write_sum / s.write_ops as f64;
        }
        if s.read_ops > 0 {
            s.mean_read_latency_ms = read_sum / s.read_ops as f64;
        }
        let loads = samples.iter().flat_map(|b| b.node_load.iter().copied());
        (s.mean_load, s.load_variance) = mean_var(loads);
        let (rps_mean, rps_var) = mean_var(samples.iter().map(|b| b.write_rps));
        s.write_rps_cv = if rps_mean > 0.0 { rps_var.sqrt() / rps_mean } else { 0.0 };
        let from = first_crash.unwrap_or(SimTime::ZERO);
        let mut prev = from;
        let mut gap = SimTime::ZERO;
        for t in writes_at.into_iter().filter(|t| *t >= from) {
            gap = gap.max(t - prev);
            prev = t;
        }
        if prev == from && first_crash.is_some() {
            // No write completed after the crash at all.
            let end = trace.last().map_or(from, |e| e.time);
            gap = end - from;
        }
        s.availability_gap_ms = gap.as_millis_f64();
        s
    }

    fn metrics(&self) -> [(&'static str, f64); 10] {
        [
            ("max_write_latency_ms", self.max_write_latency_ms),
            ("mean_write_latency_ms", self.mean_write_latency_ms),
            ("max_read_latency_ms", self.max_read_latency_ms),
            ("mean_read_latency_ms", self.mean_read_latency_ms),
            ("mean_load", self.mean_load),
            ("load_variance", self.load_variance),
            ("write_rps_cv", self.write_rps_cv),
            ("availability_gap_ms", self.availability_gap_ms),
            ("net_sent_kb", self.net_sent_kb),
            ("write_ops", self.write_ops as f64),
        ]
    }
}

/// One finished run. `meta` is the canonical description of everything
/// except the protocol (workload, network, faults, seed, cluster size).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub protocol: String,
    pub meta: String,
    pub samples: Vec<MetricsSample>,
    pub summary: RunSummary,
}

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("need at least two runs to compare, got {0}")]
    TooFew(usize),
    #[error("run `{protocol}` was made with a different configuration than `{first}`")]
    Mismatch { first: String, protocol: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub runs: Vec<RunRecord>,
    /// `(metric, value of run i / value of run 0)`; 0/0 counts as 1.
    pub ratios: Vec<(String, Vec<f64>)>,
}

/// Reference measurements from the original Cassandra stress experiments on
/// virtual machines. They document the shape of the comparison; simulated
/// absolute values are not expected to match them.
pub const REFERENCE_POINTS: [(&str, &str, &str); 4] = [
    ("write latency (ms/op)", "~4000", "~20"),
    ("read latency (ms/op)", "~4.5", "~2.2"),
    ("OS load", "~2", "~0.4"),
    ("write requests (per s)", "14", "11"),
];

pub fn ratio(x: f64, base: f64) -> f64 {
    if base == 0.0 {
        if x == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        x / base
    }
}

pub fn compare(runs: Vec<RunRecord>) -> Result<ComparisonReport, CompareError> {
    if runs.len() < 2 {
        return Err(CompareError::TooFew(runs.len()));
    }
    if let Some(bad) = runs.iter().find(|r| r.meta != runs[0].meta) {
        return Err(CompareError::Mismatch { first: runs[0].protocol.clone(), protocol: bad.protocol.clone() });
    }
    let base = runs[0].summary.metrics();
    let ratios = base
        .iter()
        .enumerate()
        .map(|(k, (name, b))| (name.to_string(), runs.iter().map(|r| ratio(r.summary.metrics()[k].1, *b)).collect()))
        .collect();
    Ok(ComparisonReport { runs, ratios })
}

impl ComparisonReport {
    pub fn text(&self) -> String {
        let mut out = String::new();
        let names: Vec<&str> = self.runs.iter().map(|r| r.protocol.as_str()).collect();
        let _ = writeln!(out, "comparison: {}", names.join(" vs "));
        let _ = writeln!(out, "config: {}", self.runs[0].meta);
        let _ = writeln!(out);
        let _ = write!(out, "{:<24}", "metric");
        for n in &names {
            let _ = write!(out, "{n:>14}");
        }
        for n in names.iter().skip(1) {
            let _ = write!(out, "{:>14}", format!("{n}/{}", names[0]));
        }
        out.push('\n');
        for (k, (metric, ratios)) in self.ratios.iter().enumerate() {
            let _ = write!(out, "{metric:<24}");
            for r in &self.runs {
                let _ = write!(out, "{:>14.3}", r.summary.metrics()[k].1);
            }
            for x in ratios.iter().skip(1) {
                let _ = write!(out, "{x:>14.3}");
            }
            out.push('\n');
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "reference measurements (Cassandra on VMs; shape only, not expected values):");
        let _ = writeln!(out, "{:<24}{:>10}{:>10}", "", "paxos", "raft");
        for (what, paxos, raft) in REFERENCE_POINTS {
            let _ = writeln!(out, "{what:<24}{paxos:>10}{raft:>10}");
        }
        out
    }

    /// Paired per-bucket series for plotting: one row per bucket, one
    /// column group per run.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("bucket_start_ms");
        for r in &self.runs {
            let p = &r.protocol;
            let _ = write!(out, ",{p}_write_latency_mean_ms,{p}_write_latency_max_ms,{p}_read_latency_mean_ms,{p}_write_rps,{p}_read_rps,{p}_mean_load");
        }
        out.push('\n');
        let rows = self.runs.iter().map(|r| r.samples.len()).max().unwrap_or(0);
        for i in 0..rows {
            let start = self.runs.iter().find_map(|r| r.samples.get(i)).map_or(0, |s| s.bucket_start.as_micros() / 1000);
            let _ = write!(out, "{start}");
            for r in &self.runs {
                match r.samples.get(i) {
                    Some(s) => {
                        let load = if s.node_load.is_empty() { 0.0 } else { s.node_load.iter().sum::<f64>() / s.node_load.len() as f64 };
                        let _ = write!(
                            out,
                            ",{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}",
                            s.write.mean_ms, s.write.max_ms, s.read.mean_ms, s.write_rps, s.read_rps, load
                        );
                    }
                    None => out.push_str(",,,,,,"),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::metrics::{sample, DEFAULT_BUCKET};
    use crate::consensus::{AppResult, ClientId, CommandId};
    use crate::sim::NodeId;

    fn write_at(ms: u64) -> TraceEvent<()> {
        TraceEvent::new(
            SimTime::from_millis(ms),
            None,
            TraceKind::ClientResp {
                client: ClientId(0),
                command: CommandId(ms),
                class: OpClass::Write,
                server: NodeId(1),
                latency_us: 5000,
                result: AppResult::Ok,
            },
        )
    }

    fn record(protocol: &str, meta: &str, trace: &[TraceEvent<()>]) -> RunRecord {
        let samples = sample(trace, DEFAULT_BUCKET, 1);
        let summary = RunSummary::compute(trace, &samples);
        RunRecord { protocol: protocol.into(), meta: meta.into(), samples, summary }
    }

    #[test]
    fn identical_runs_have_unit_ratios() {
        let trace = vec![write_at(10), write_at(20)];
        let report = compare(vec![record("raft", "m", &trace), record("raft", "m", &trace)]).unwrap();
        assert!(report.ratios.iter().all(|(_, r)| r.iter().all(|x| *x == 1.0)), "{:?}", report.ratios);
    }

    #[test]
    fn mismatched_configs_are_refused() {
        let trace = vec![write_at(10)];
        let err = compare(vec![record("raft", "n=4", &trace), record("paxos", "n=8", &trace)]).unwrap_err();
        assert!(matches!(err, CompareError::Mismatch { .. }));
        assert_eq!(compare(vec![record("raft", "m", &trace)]).unwrap_err(), CompareError::TooFew(1));
    }

    #[test]
    fn availability_gap_starts_at_the_crash() {
        let mut trace = vec![write_at(10), write_at(100)];
        trace.push(TraceEvent::new(SimTime::from_millis(120), Some(NodeId(1)), TraceKind::Crash));
        trace.extend([write_at(400), write_at(450)]);
        let r = record("raft", "m", &trace);
        assert_eq!(r.summary.availability_gap_ms, 280.0);
    }
}
