use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use quorumlab::bench::{sample, WorkloadSpec};
use quorumlab::consensus::{AppResult, ProtocolEvent, Reply, WireSize};
use quorumlab::experiment::{fuzz_config, run_experiment, ProtocolKind};
use quorumlab::raft::{Raft, RaftConfig, RaftMessage};
use quorumlab::sim::faults::{CrashSpec, CrashTarget, FaultPlan, PartitionSpec};
use quorumlab::sim::rng::{stream, Stream};
use quorumlab::sim::trace::decode;
use quorumlab::sim::{run, LatencyModel, TraceEvent, TraceKind};
use quorumlab::{Action, NodeId, Protocol, SimConfig, SimTime};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Minimal protocols for exercising the harness on its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Ping;

impl WireSize for Ping {
    fn wire_size(&self) -> u32 {
        16
    }
}

/// Node 1 sends `sends` pings to node 2 at boot. Every node answers client
/// requests at once.
struct Stub {
    nodes: usize,
    sends: usize,
}

impl Protocol for Stub {
    type State = (NodeId, u64);
    type Message = Ping;
    type Durable = ();

    fn name(&self) -> &'static str {
        "stub"
    }

    fn cluster_size(&self) -> usize {
        self.nodes
    }

    fn init(&self, id: NodeId) -> Self::State {
        (id, 0)
    }

    fn step(&self, (id, n): Self::State, event: ProtocolEvent<Ping>) -> (Self::State, Vec<Action<Ping>>) {
        match event {
            ProtocolEvent::Start if id == NodeId(1) && self.nodes > 1 => {
                ((id, n), (0..self.sends).map(|_| Action::Send { to: NodeId(2), msg: Ping }).collect())
            }
            ProtocolEvent::Message { .. } => ((id, n + 1), Vec::new()),
            ProtocolEvent::ClientRequest { client, command } => {
                ((id, n + 1), vec![Action::Respond { client, command: command.id, reply: Reply::Ok { result: AppResult::Ok } }])
            }
            _ => ((id, n), Vec::new()),
        }
    }

    fn durable(&self, _: &Self::State) {}

    fn recover(&self, id: NodeId, _: ()) -> Self::State {
        (id, 0)
    }

    fn progress(&self, &(id, n): &Self::State) -> u64 {
        // The sender never "catches up", so a ping run only stops once the
        // event queue drains.
        if id == NodeId(1) && self.sends > 0 { u64::MAX } else { n }
    }
}

fn idle() -> WorkloadSpec {
    WorkloadSpec { op_count: 0, ..WorkloadSpec::default() }
}

fn ping_run(drop: f64, seed: u64) -> Vec<TraceEvent<Ping>> {
    let mut cfg = SimConfig::new(2, seed);
    cfg.drop_probability = drop;
    run(Stub { nodes: 2, sends: 1000 }, cfg, FaultPlan::none(), idle()).unwrap().trace
}

fn count(trace: &[TraceEvent<Ping>], kind: &str) -> usize {
    trace.iter().filter(|e| e.kind_name() == kind).count()
}

#[test]
fn no_loss_delivers_everything() {
    let t = ping_run(0.0, 3);
    assert_eq!(count(&t, "deliver"), 1000);
    assert_eq!(count(&t, "drop"), 0);
}

#[test]
fn total_loss_delivers_nothing() {
    let t = ping_run(1.0, 3);
    assert_eq!(count(&t, "deliver"), 0);
    assert_eq!(count(&t, "drop"), 1000);
}

#[test]
fn half_loss_matches_an_independent_draw_of_the_drop_stream() {
    for seed in [1, 2, 99] {
        let mut rng = stream(seed, Stream::Drops);
        let expected = (0..1000).filter(|_| rng.random::<f64>() >= 0.5).count();
        let t = ping_run(0.5, seed);
        assert_eq!(count(&t, "deliver"), expected, "seed {seed}");
        assert!((400..600).contains(&expected));
    }
}

#[test]
fn closed_loop_throughput_follows_concurrency_over_round_trip() {
    let mut cfg = SimConfig::new(1, 5);
    cfg.latency = LatencyModel::Fixed { ms: 500.0 };
    let workload = WorkloadSpec { op_count: 100, client_concurrency: 5, client_timeout: SimTime::from_millis(10_000), ..WorkloadSpec::default() };
    let out = run(Stub { nodes: 1, sends: 0 }, cfg.clone(), FaultPlan::none(), workload.clone()).unwrap();
    assert!(!out.outcome.livelock);
    assert_eq!(out.outcome.completed, 100);
    // Service time: two fixed hops plus the node's handling cost.
    let cost_us = out.trace.iter().find_map(|e| match e.kind {
        TraceKind::Request { cost_us, .. } => Some(cost_us),
        _ => None,
    });
    let service_ms = 1000.0 + cost_us.unwrap() as f64 / 1000.0;
    let expected = 5.0 / (service_ms / 1000.0);
    let samples = sample(&out.trace, SimTime::from_millis(1000), 1);
    let steady: Vec<f64> = samples[2..samples.len() - 2].iter().map(|s| s.write_rps).collect();
    let rps = steady.iter().sum::<f64>() / steady.len() as f64;
    assert!((rps - expected).abs() / expected < 0.10, "rps {rps} vs law {expected}");
    assert!((rps - 5.0).abs() / 5.0 < 0.10);
}

#[test]
fn single_client_alternates_requests_and_responses() {
    let workload = WorkloadSpec { op_count: 20, client_concurrency: 1, ..WorkloadSpec::default() };
    let out = run(Stub { nodes: 1, sends: 0 }, SimConfig::new(1, 1), FaultPlan::none(), workload).unwrap();
    let kinds: Vec<&str> = out.trace.iter().map(|e| e.kind_name()).filter(|k| k.starts_with("client")).collect();
    assert_eq!(kinds.len(), 40);
    assert!(kinds.chunks(2).all(|c| c == ["client_req", "client_resp"]));
}

#[test]
fn idle_raft_cluster_only_boots() {
    let out = run(Raft::new(RaftConfig::new(3)), SimConfig::new(3, 1), FaultPlan::none(), idle()).unwrap();
    // Apart from the end-of-run log summaries.
    let events: Vec<_> = out.trace.iter().filter(|e| !matches!(e.kind, TraceKind::FinalLog { .. })).collect();
    assert_eq!(events.len(), 3);
    assert!(events.iter().all(|e| matches!(e.kind, TraceKind::Timer { label: quorumlab::consensus::Timer::Boot, .. })));
    assert!(!out.outcome.livelock);
}

#[test]
fn crashing_everyone_at_zero_decides_nothing_and_livelocks() {
    let faults = FaultPlan {
        crashes: NodeId::all(3).map(|id| CrashSpec { target: CrashTarget::Node(id), at: SimTime::ZERO, restart_at: None }).collect(),
        partitions: Vec::new(),
    };
    let mut cfg = SimConfig::new(3, 1);
    cfg.max_virtual_time = SimTime::from_millis(5000);
    let workload = WorkloadSpec { op_count: 10, ..WorkloadSpec::default() };
    let out = run(Raft::new(RaftConfig::new(3)), cfg, faults, workload).unwrap();
    assert!(out.trace.iter().all(|e| !matches!(e.kind, TraceKind::Decide { .. })));
    assert!(out.outcome.livelock);
    assert!(!out.outcome.incomplete.is_empty());
}

#[test]
fn raft_elects_a_new_term_after_the_leader_crashes() {
    let faults = FaultPlan { crashes: vec![CrashSpec { target: CrashTarget::Leader, at: SimTime::from_millis(1000), restart_at: None }], partitions: Vec::new() };
    let workload = WorkloadSpec { op_count: 400, client_concurrency: 4, ..WorkloadSpec::default() };
    let out = run(Raft::new(RaftConfig::new(4)), SimConfig::new(4, 8), faults, workload).unwrap();
    let crash = out.trace.iter().position(|e| matches!(e.kind, TraceKind::Crash)).expect("a leader existed");
    let victim = out.trace[crash].node.unwrap();
    let before = out.trace[..crash].iter().filter_map(|e| match e.kind {
        TraceKind::Leader { epoch, .. } if e.node == Some(victim) => Some(epoch),
        _ => None,
    });
    let old = before.max().unwrap();
    assert!(out.trace[crash..].iter().any(|e| matches!(e.kind, TraceKind::Leader { epoch, .. } if epoch > old)));
    assert!(!out.outcome.livelock);
}

fn check_invariants<M>(trace: &[TraceEvent<M>], faults: &FaultPlan) {
    let mut sends: BTreeMap<u64, (SimTime, NodeId, NodeId, SimTime)> = BTreeMap::new();
    let mut down: BTreeSet<NodeId> = BTreeSet::new();
    let mut prev = SimTime::ZERO;
    for (i, e) in trace.iter().enumerate() {
        assert!(e.time >= prev, "event {i} goes back in time");
        prev = e.time;
        if let Some(n) = e.node {
            match e.kind {
                TraceKind::Crash => {
                    assert!(down.insert(n));
                    continue;
                }
                TraceKind::Restart => {
                    assert!(down.remove(&n));
                    continue;
                }
                TraceKind::FinalLog { .. } => continue,
                _ => assert!(!down.contains(&n), "event {i} ({}) from crashed {n}", e.kind_name()),
            }
        }
        match &e.kind {
            TraceKind::Send { env, dst, deliver_at, .. } => {
                sends.insert(*env, (e.time, e.node.unwrap(), *dst, *deliver_at));
            }
            TraceKind::Deliver { env, src, .. } => {
                let &(sent, from, to, arrived) = sends.get(env).unwrap_or_else(|| panic!("deliver {env} has no earlier send"));
                assert_eq!((from, to), (*src, e.node.unwrap()));
                assert!(sent <= arrived && arrived <= e.time);
                assert!(!faults.blocks(from, to, sent) && !faults.blocks(from, to, arrived), "envelope {env} crossed a partition");
            }
            _ => {}
        }
    }
}

#[test]
fn harness_invariants_hold_on_fuzz_worlds() {
    for p in ProtocolKind::ALL {
        for seed in 0..6 {
            let mut cfg = fuzz_config(p, seed);
            cfg.workload.op_count = 150;
            cfg.faults.partitions.push(PartitionSpec { side: [NodeId(1)].into(), start: SimTime::from_millis(300), end: SimTime::from_millis(900) });
            if p == ProtocolKind::Raft {
                cfg.sim.duplicate_probability = 0.05;
            }
            let out = run_experiment(&cfg).unwrap();
            let (_, trace) = decode::<serde_json::Value, serde_json::Value>(out.trace.as_deref().unwrap()).unwrap();
            check_invariants(&trace, &cfg.faults);
        }
    }
}

#[test]
fn same_inputs_give_identical_traces() {
    for p in ProtocolKind::ALL {
        let cfg = fuzz_config(p, 42);
        let (a, b) = (run_experiment(&cfg).unwrap(), run_experiment(&cfg).unwrap());
        assert_eq!(a.trace, b.trace, "{p}");
        assert_eq!(a.metrics_csv(), b.metrics_csv());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn runs_are_a_function_of_their_inputs(seed in 0u64..10_000, drop in 0.0f64..0.2) {
        let mut cfg = fuzz_config(ProtocolKind::Paxos, seed);
        cfg.workload.op_count = 60;
        cfg.sim.drop_probability = drop;
        prop_assert_eq!(run_experiment(&cfg).unwrap().trace, run_experiment(&cfg).unwrap().trace);
    }

    #[test]
    fn in_flight_never_exceeds_concurrency(seed in 0u64..10_000, clients in 1usize..6) {
        let mut cfg = fuzz_config(ProtocolKind::Raft, seed);
        cfg.workload.op_count = 80;
        cfg.workload.client_concurrency = clients;
        let out = run_experiment(&cfg).unwrap();
        let (_, trace) = decode::<serde_json::Value, serde_json::Value>(out.trace.as_deref().unwrap()).unwrap();
        let mut open = BTreeSet::new();
        for e in &trace {
            match &e.kind {
                TraceKind::ClientReq { command, .. } => { open.insert(command.id); }
                TraceKind::ClientResp { command, .. } => { prop_assert!(open.remove(command)); }
                _ => {}
            }
            prop_assert!(open.len() <= clients);
        }
        let completed: u64 = sample(&trace, cfg.bucket, 4).iter().map(|s| ((s.write_rps + s.read_rps) * cfg.bucket.as_millis_f64() / 1000.0).round() as u64).sum();
        prop_assert_eq!(completed, out.outcome.completed);
    }

    #[test]
    fn raft_steps_are_pure(seed in 0u64..10_000, node in 1u32..=4) {
        let mut cfg = fuzz_config(ProtocolKind::Raft, seed);
        cfg.workload.op_count = 40;
        let text = run_experiment(&cfg).unwrap().trace.unwrap();
        let (_, trace) = decode::<serde_json::Value, RaftMessage>(&text).unwrap();
        let raft = Raft::new(RaftConfig::new(4));
        let id = NodeId(node);
        let mut state = Some(raft.init(id));
        let mut durable = None;
        for e in trace.iter().filter(|e| e.node == Some(id)) {
            let event = match &e.kind {
                TraceKind::Crash => { durable = state.take().map(|s| raft.durable(&s)); continue; }
                TraceKind::Restart => { state = durable.take().map(|d| raft.recover(id, d)); continue; }
                TraceKind::Timer { label, .. } => match label {
                    quorumlab::consensus::Timer::Boot => ProtocolEvent::Start,
                    l => ProtocolEvent::Timer(*l),
                },
                TraceKind::Deliver { src, msg, .. } => ProtocolEvent::Message { from: *src, msg: msg.clone() },
                TraceKind::Request { client, command, .. } => ProtocolEvent::ClientRequest { client: *client, command: command.clone() },
                _ => continue,
            };
            let Some(s) = state.take() else { continue };
            let first = raft.step(s.clone(), event.clone());
            let second = raft.step(s, event);
            prop_assert_eq!(&first.0, &second.0);
            prop_assert_eq!(&first.1, &second.1);
            state = Some(first.0);
        }
    }
}
