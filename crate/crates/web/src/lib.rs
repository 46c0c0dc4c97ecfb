//! Browser bindings for the simulator. Every export takes plain strings or
//! numbers and returns a JSON document, so the page needs no generated
//! types beyond the wasm-bindgen glue.

use std::collections::BTreeMap;

use quorumlab::bench::MetricsSample;
use quorumlab::consensus::AppResult;
use quorumlab::experiment::{evaluate, fuzz_config, leader_crash_config, ExperimentConfig, ExperimentOutput, ProtocolKind};
use quorumlab::queue::audit;
use quorumlab::queue::baseline::BaselineModel;
use quorumlab::sim::{SimTime, TraceKind};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Bucket {
    start_ms: f64,
    write_mean_ms: f64,
    write_max_ms: f64,
    write_rps: f64,
    mean_load: f64,
}

impl From<&MetricsSample> for Bucket {
    fn from(s: &MetricsSample) -> Self {
        let load = if s.node_load.is_empty() { 0.0 } else { s.node_load.iter().sum::<f64>() / s.node_load.len() as f64 };
        Bucket {
            start_ms: s.bucket_start.as_millis_f64(),
            write_mean_ms: s.write.mean_ms,
            write_max_ms: s.write.max_ms,
            write_rps: s.write_rps,
            mean_load: load,
        }
    }
}

#[derive(Serialize)]
struct Marker {
    time_ms: f64,
    label: String,
}

#[derive(Serialize)]
struct RunView {
    protocol: String,
    report: String,
    buckets: Vec<Bucket>,
    markers: Vec<Marker>,
    clean: bool,
}

#[derive(Serialize)]
struct ErrorView {
    error: String,
}

fn error(e: impl ToString) -> String {
    serde_json::to_string(&ErrorView { error: e.to_string() }).expect("plain struct")
}

fn view(out: &ExperimentOutput) -> RunView {
    let mut markers: Vec<Marker> =
        out.leaders.iter().map(|l| Marker { time_ms: l.time.as_millis_f64(), label: format!("{} leads ({})", l.node, l.epoch) }).collect();
    for c in &out.config.faults.crashes {
        markers.push(Marker { time_ms: c.at.as_millis_f64(), label: "crash".into() });
        if let Some(r) = c.restart_at {
            markers.push(Marker { time_ms: r.as_millis_f64(), label: "restart".into() });
        }
    }
    markers.sort_by(|a, b| a.time_ms.total_cmp(&b.time_ms));
    RunView {
        protocol: out.config.protocol.to_string(),
        report: out.report(),
        buckets: out.samples.iter().map(Bucket::from).collect(),
        markers,
        clean: out.verdict.is_clean(),
    }
}

/// Config text for a built-in scenario (`leader-crash` or `fuzz`).
#[wasm_bindgen]
pub fn scenario_text(name: &str, protocol: &str, seed: u32) -> String {
    let Ok(p) = protocol.parse::<ProtocolKind>() else {
        return String::new();
    };
    match name {
        "leader-crash" => leader_crash_config(p, seed.into()).to_text(),
        "fuzz" => fuzz_config(p, seed.into()).to_text(),
        _ => ExperimentConfig { protocol: p, ..ExperimentConfig::default() }.to_text(),
    }
}

/// Runs one experiment described by config text.
#[wasm_bindgen]
pub fn run_config(text: &str) -> String {
    let cfg = match ExperimentConfig::parse(text) {
        Ok(c) => c,
        Err(e) => return error(e),
    };
    match evaluate(&cfg) {
        Ok(out) => serde_json::to_string(&view(&out)).expect("plain struct"),
        Err(e) => error(e),
    }
}

/// Runs the same config under each comma-separated protocol.
#[wasm_bindgen]
pub fn compare_protocols(text: &str, protocols: &str) -> String {
    let base = match ExperimentConfig::parse(text) {
        Ok(c) => c,
        Err(e) => return error(e),
    };
    let mut runs = Vec::new();
    for name in protocols.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let Ok(p) = name.parse::<ProtocolKind>() else {
            return error(format!("unknown protocol `{name}`"));
        };
        let cfg = ExperimentConfig { protocol: p, ..base.clone() };
        match evaluate(&cfg) {
            Ok(out) => runs.push(view(&out)),
            Err(e) => return error(e),
        }
    }
    serde_json::to_string(&runs).expect("plain struct")
}

#[derive(Serialize)]
struct Pop {
    time_ms: f64,
    worker: u32,
    job: Option<u64>,
    duplicate: bool,
}

#[derive(Serialize)]
struct CollisionView {
    delay_ms: u32,
    pops: Vec<Pop>,
    duplicate_pops: u64,
}

/// Two workers popping shared jobs from two eventually consistent replicas
/// that sync every `delay_ms`.
#[wasm_bindgen]
pub fn collision_demo(delay_ms: u32, seed: u32) -> String {
    let (model, ops) = BaselineModel::two_worker_schedule(SimTime::from_millis(delay_ms.into()), seed.into(), 100, 40);
    let trace = model.run(&ops);
    let report = audit(&trace);
    let mut taken: BTreeMap<u64, Vec<u32>> = BTreeMap::new();
    let mut pops = Vec::new();
    for ev in &trace {
        if let TraceKind::ClientResp { client, result: AppResult::Popped { job }, .. } = &ev.kind {
            let job = job.map(|j| j.0);
            if let Some(j) = job {
                taken.entry(j).or_default().push(client.0);
            }
            pops.push(Pop { time_ms: ev.time.as_millis_f64(), worker: client.0, job, duplicate: false });
        }
    }
    for p in &mut pops {
        p.duplicate = p.job.is_some_and(|j| taken[&j].iter().any(|w| *w != p.worker));
    }
    serde_json::to_string(&CollisionView { delay_ms, pops, duplicate_pops: report.duplicate_pops }).expect("plain struct")
}
