//! Re-derives node states from a recorded trace by feeding every recorded
//! input back through the step functions, and checks the outputs match.

use std::collections::BTreeMap;

use serde::Serialize;
use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::checker::{check_all, Verdict};
use crate::consensus::{Action, Protocol, ProtocolEvent, Timer};
use crate::ct::{ChandraToueg, CtConfig};
use crate::experiment::{ProtocolKind, TraceHeader, TRACE_FORMAT};
use crate::paxos::{Paxos, PaxosConfig};
use crate::queue::baseline::{Baseline, BaselineConfig};
use crate::raft::{Raft, RaftConfig};
use crate::sim::trace::{decode, TraceError};
use crate::sim::{NodeId, TraceEvent, TraceKind};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("corrupt trace: {0}")]
    Corrupt(#[from] TraceError),
    #[error("unsupported trace format `{0}`")]
    Format(String),
    #[error("event {offset} refers to node {node}, outside the {nodes}-node cluster")]
    UnknownNode { offset: usize, node: NodeId, nodes: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub node: NodeId,
    /// Offset of the input event whose outputs differ.
    pub offset: usize,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NodeFinal {
    pub node: NodeId,
    pub alive: bool,
    pub progress: u64,
    pub log_len: usize,
    pub leader_epoch: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    pub protocol: Option<ProtocolKind>,
    pub inputs_replayed: usize,
    pub nodes: Vec<NodeFinal>,
    pub mismatches: Vec<Mismatch>,
    pub verdict: Option<Verdict>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.verdict.as_ref().is_none_or(Verdict::is_clean)
    }
}

/// A node output as it appears in the trace, minus bookkeeping fields.
#[derive(Debug, PartialEq)]
enum Output<'a, M> {
    Send(NodeId, &'a M),
    Decide(u64, &'a crate::consensus::Command),
    Apply(u64, &'a crate::consensus::Command),
    Leader(u64),
    Note(&'a crate::consensus::Note),
}

fn recorded<M>(kind: &TraceKind<M>) -> Option<Output<'_, M>> {
    Some(match kind {
        TraceKind::Send { dst, msg, dup: false, .. } => Output::Send(*dst, msg),
        TraceKind::Decide { slot, command } => Output::Decide(*slot, command),
        TraceKind::Apply { index, command, .. } => Output::Apply(*index, command),
        TraceKind::Leader { epoch, .. } => Output::Leader(*epoch),
        TraceKind::Note { note } => Output::Note(note),
        _ => return None,
    })
}

fn input<M: Clone>(kind: &TraceKind<M>) -> Option<ProtocolEvent<M>> {
    Some(match kind {
        TraceKind::Timer { label: Timer::Boot, .. } => ProtocolEvent::Start,
        TraceKind::Timer { label, .. } => ProtocolEvent::Timer(*label),
        TraceKind::Deliver { src, msg, .. } => ProtocolEvent::Message { from: *src, msg: msg.clone() },
        TraceKind::Request { client, command, .. } => ProtocolEvent::ClientRequest { client: *client, command: command.clone() },
        _ => return None,
    })
}

fn describe<M: std::fmt::Debug>(o: &Option<&Output<'_, M>>) -> String {
    match o {
        Some(o) => format!("{o:?}"),
        None => "nothing".into(),
    }
}

fn replay_typed<P: Protocol>(protocol: P, nodes: usize, events: &[TraceEvent<P::Message>]) -> Result<(Vec<NodeFinal>, usize, Vec<Mismatch>), ReplayError> {
    let mut states: Vec<Option<P::State>> = NodeId::all(nodes).map(|id| Some(protocol.init(id))).collect();
    let mut durable: Vec<Option<P::Durable>> = vec![None; nodes];
    let mut mismatches = Vec::new();
    let mut replayed = 0;
    let mut i = 0;
    while i < events.len() {
        let ev = &events[i];
        let Some(node) = ev.node else {
            i += 1;
            continue;
        };
        if node.0 == 0 || node.index() >= nodes {
            return Err(ReplayError::UnknownNode { offset: i, node, nodes });
        }
        let k = node.index();
        match &ev.kind {
            TraceKind::Crash => {
                if let Some(s) = states[k].take() {
                    durable[k] = Some(protocol.durable(&s));
                }
                i += 1;
                continue;
            }
            TraceKind::Restart => {
                if let Some(d) = durable[k].take() {
                    states[k] = Some(protocol.recover(node, d));
                }
                i += 1;
                continue;
            }
            _ => {}
        }
        let Some(event) = input(&ev.kind) else {
            i += 1;
            continue;
        };
        let Some(state) = states[k].take() else {
            mismatches.push(Mismatch { node, offset: i, detail: "input recorded for a crashed node".into() });
            i += 1;
            continue;
        };
        let (state, actions) = protocol.step(state, event);
        states[k] = Some(state);
        replayed += 1;
        // The engine logs a step's outputs right after its input, so they
        // are the contiguous run of this node's events that follows.
        let mut produced = Vec::new();
        for e in &events[i + 1..] {
            if e.node != Some(node) || e.time != ev.time || input(&e.kind).is_some() || matches!(e.kind, TraceKind::Crash | TraceKind::Restart) {
                break;
            }
            if let Some(o) = recorded(&e.kind) {
                produced.push(o);
            }
        }
        let mut expected = Vec::new();
        for a in &actions {
            match a {
                Action::Send { to, msg } => expected.push(Output::Send(*to, msg)),
                Action::Broadcast { msg } => expected.extend(NodeId::all(nodes).filter(|t| *t != node).map(|t| Output::Send(t, msg))),
                Action::Decide { slot, command } => expected.push(Output::Decide(*slot, command)),
                Action::Apply { index, command, .. } => expected.push(Output::Apply(*index, command)),
                Action::BecameLeader { epoch, .. } => expected.push(Output::Leader(*epoch)),
                Action::Note(n) => expected.push(Output::Note(n)),
                _ => {}
            }
        }
        if expected != produced {
            let at = expected.iter().zip(&produced).position(|(a, b)| a != b).unwrap_or(expected.len().min(produced.len()));
            mismatches.push(Mismatch {
                node,
                offset: i,
                detail: format!("output {at}: recorded {}, replay gives {}", describe(&produced.get(at)), describe(&expected.get(at))),
            });
        }
        i += 1;
    }
    let finals = states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let node = NodeId::from_index(k);
            match s {
                Some(s) => NodeFinal {
                    node,
                    alive: true,
                    progress: protocol.progress(s),
                    log_len: protocol.final_log(s).map_or(0, |l| l.len()),
                    leader_epoch: protocol.leader_epoch(s),
                },
                None => NodeFinal { node, alive: false, progress: 0, log_len: 0, leader_epoch: None },
            }
        })
        .collect();
    Ok((finals, replayed, mismatches))
}

fn run_kind<P: Protocol>(protocol: P, header: &TraceHeader, text: &str) -> Result<ReplayReport, ReplayError>
where
    P::Message: DeserializeOwned,
{
    let (_, events) = decode::<serde_json::Value, P::Message>(text)?;
    let nodes = header.config.sim.node_count;
    let (finals, replayed, mismatches) = replay_typed(protocol, nodes, &events)?;
    let verdict = check_all(&events, header.protocol, nodes, header.config.sim.max_virtual_time);
    Ok(ReplayReport { protocol: Some(header.protocol), inputs_replayed: replayed, nodes: finals, mismatches, verdict: Some(verdict) })
}

/// Replays a complete trace file. An empty file passes with no verdicts.
pub fn replay(text: &str) -> Result<ReplayReport, ReplayError> {
    let (header, _) = decode::<TraceHeader, serde::de::IgnoredAny>(text)?;
    let Some(header) = header else {
        return Ok(ReplayReport { protocol: None, inputs_replayed: 0, nodes: Vec::new(), mismatches: Vec::new(), verdict: None });
    };
    if header.format != TRACE_FORMAT {
        return Err(ReplayError::Format(header.format));
    }
    let n = header.config.sim.node_count;
    match header.protocol {
        ProtocolKind::Raft => run_kind(Raft::new(RaftConfig::new(n)), &header, text),
        ProtocolKind::Paxos => run_kind(Paxos::new(PaxosConfig::new(n)), &header, text),
        ProtocolKind::Ct => run_kind(ChandraToueg::new(CtConfig::new(n)), &header, text),
        ProtocolKind::Baseline => run_kind(Baseline::new(BaselineConfig::new(n, header.config.sync_delay_ms)), &header, text),
    }
}

/// Per-node count of recorded inputs, handy for summaries.
pub fn inputs_per_node<M>(events: &[TraceEvent<M>]) -> BTreeMap<NodeId, usize> {
    let mut out = BTreeMap::new();
    for e in events {
        if let (Some(n), true) = (e.node, matches!(e.kind, TraceKind::Timer { .. } | TraceKind::Deliver { .. } | TraceKind::Request { .. })) {
            *out.entry(n).or_insert(0) += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{fuzz_config, run_experiment};

    #[test]
    fn fuzz_traces_replay_cleanly() {
        for p in ProtocolKind::CONSENSUS {
            let mut cfg = fuzz_config(p, 11);
            cfg.workload.op_count = 120;
            let out = run_experiment(&cfg).unwrap();
            let report = replay(out.trace.as_deref().unwrap()).unwrap();
            assert!(report.mismatches.is_empty(), "{p}: {:?}", &report.mismatches[..report.mismatches.len().min(3)]);
            assert!(report.passed());
            assert!(report.inputs_replayed > 100);
            let live_progress: Vec<u64> = report.nodes.iter().filter(|n| n.alive).map(|n| n.progress).collect();
            assert!(live_progress.iter().all(|&p| p == live_progress[0]), "{p}: {live_progress:?}");
        }
    }

    #[test]
    fn tampered_trace_diverges() {
        let mut cfg = fuzz_config(ProtocolKind::Raft, 2);
        cfg.workload.op_count = 30;
        let text = run_experiment(&cfg).unwrap().trace.unwrap();
        // Drop one delivered message from the record.
        let mut lines: Vec<&str> = text.lines().collect();
        let k = lines.iter().position(|l| l.contains("\"kind\":\"deliver\"") && l.contains("append_entries")).unwrap();
        lines.remove(k);
        let tampered = lines.join("\n") + "\n";
        assert!(!replay(&tampered).unwrap().mismatches.is_empty());
    }

    #[test]
    fn empty_and_truncated_inputs() {
        let r = replay("").unwrap();
        assert!(r.passed() && r.verdict.is_none() && r.nodes.is_empty());
        let mut cfg = fuzz_config(ProtocolKind::Ct, 1);
        cfg.workload.op_count = 10;
        let text = run_experiment(&cfg).unwrap().trace.unwrap();
        let cut = &text[..text.len() - 7];
        assert!(matches!(replay(cut), Err(ReplayError::Corrupt(_))));
    }
}
