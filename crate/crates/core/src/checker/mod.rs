//! Trace oracles: the four consensus properties, protocol-specific safety
//! invariants, and the workers'-collision audit.
//!
//! Every check is a pure function of the trace. Violations point back into
//! it by offset (0-based position in the event list, header excluded).

pub mod fixtures;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::consensus::{majority, ClientId, Command, CommandId, EntryDigest, Note, Op};
use crate::experiment::ProtocolKind;
use crate::queue::{JobId, QueueCommand};
use crate::consensus::AppResult;
use crate::sim::{NodeId, SimTime, TraceEvent, TraceKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Agreement,
    Validity,
    Integrity,
    Termination,
    StateMachineSafety,
    ElectionSafety,
    LogMatching,
    LeaderCompleteness,
    PaxosSingleValue,
    CtLockedValue,
    DuplicatePop,
    GhostJob,
}

impl Property {
    pub const ALL: [Property; 12] = [
        Property::Agreement,
        Property::Validity,
        Property::Integrity,
        Property::Termination,
        Property::StateMachineSafety,
        Property::ElectionSafety,
        Property::LogMatching,
        Property::LeaderCompleteness,
        Property::PaxosSingleValue,
        Property::CtLockedValue,
        Property::DuplicatePop,
        Property::GhostJob,
    ];
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit enum serializes");
        write!(f, "{}", s.as_str().unwrap_or("?"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub property: Property,
    pub time: SimTime,
    pub nodes: Vec<NodeId>,
    /// Offsets of the conflicting events in the trace.
    pub evidence: Vec<usize>,
    pub detail: String,
}

impl Violation {
    fn new(property: Property, trace_time: SimTime, nodes: impl IntoIterator<Item = NodeId>, evidence: Vec<usize>, detail: String) -> Self {
        let nodes: BTreeSet<NodeId> = nodes.into_iter().collect();
        Violation { property, time: trace_time, nodes: nodes.into_iter().collect(), evidence, detail }
    }

    /// One JSON record per line.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("violations serialize")
    }
}

fn at<M>(trace: &[TraceEvent<M>], offsets: &[usize]) -> SimTime {
    offsets.iter().map(|&i| trace[i].time).max().unwrap_or(SimTime::ZERO)
}

fn nodes_of<M>(trace: &[TraceEvent<M>], offsets: &[usize]) -> Vec<NodeId> {
    offsets.iter().filter_map(|&i| trace[i].node).collect()
}

fn conflict<M>(trace: &[TraceEvent<M>], property: Property, evidence: Vec<usize>, detail: String) -> Violation {
    Violation::new(property, at(trace, &evidence), nodes_of(trace, &evidence), evidence, detail)
}

/// Groups `(key, value, offset)` observations and reports every key seen
/// with more than one value. The evidence is the first event of each value.
fn single_valued<M, K: Ord + fmt::Display>(
    trace: &[TraceEvent<M>],
    property: Property,
    what: &str,
    items: impl Iterator<Item = (K, CommandId, usize)>,
) -> Vec<Violation> {
    let mut by_key: BTreeMap<K, BTreeMap<CommandId, usize>> = BTreeMap::new();
    for (k, v, off) in items {
        by_key.entry(k).or_default().entry(v).or_insert(off);
    }
    by_key
        .into_iter()
        .filter(|(_, vals)| vals.len() > 1)
        .map(|(k, vals)| {
            let names: Vec<String> = vals.keys().map(|v| v.to_string()).collect();
            let evidence: Vec<usize> = vals.into_values().collect();
            conflict(trace, property, evidence, format!("{what} {k} holds {}", names.join(" and ")))
        })
        .collect()
}

fn decisions<M>(trace: &[TraceEvent<M>]) -> impl Iterator<Item = (usize, NodeId, u64, &Command)> {
    trace.iter().enumerate().filter_map(|(i, e)| match (&e.kind, e.node) {
        (TraceKind::Decide { slot, command }, Some(n)) => Some((i, n, *slot, command)),
        _ => None,
    })
}

fn applies<M>(trace: &[TraceEvent<M>]) -> impl Iterator<Item = (usize, NodeId, u64, &Command)> {
    trace.iter().enumerate().filter_map(|(i, e)| match (&e.kind, e.node) {
        (TraceKind::Apply { index, command, .. }, Some(n)) => Some((i, n, *index, command)),
        _ => None,
    })
}

/// Per slot, every decide and apply carries the same command.
pub fn check_agreement<M>(trace: &[TraceEvent<M>]) -> Vec<Violation> {
    let items = decisions(trace).chain(applies(trace)).map(|(i, _, slot, c)| (slot, c.id, i));
    single_valued(trace, Property::Agreement, "slot", items)
}

/// Decided values are protocol no-ops or commands some client submitted,
/// byte for byte.
pub fn check_validity<M>(trace: &[TraceEvent<M>]) -> Vec<Violation> {
    let mut proposed: BTreeMap<CommandId, BTreeSet<&Command>> = BTreeMap::new();
    for ev in trace {
        if let TraceKind::ClientReq { command, .. } | TraceKind::Request { command, .. } = &ev.kind {
            proposed.entry(command.id).or_default().insert(command);
        }
    }
    let mut out = Vec::new();
    let mut reported = BTreeSet::new();
    for (i, _, slot, command) in decisions(trace) {
        let ok = match command.op {
            Op::Noop => command.id.is_noop(),
            _ => !command.id.is_noop() && proposed.get(&command.id).is_some_and(|s| s.contains(command)),
        };
        if !ok && reported.insert(command.id) {
            out.push(conflict(trace, Property::Validity, vec![i], format!("slot {slot} decided {} which no client proposed", command.id)));
        }
    }
    out
}

/// Each node decides each slot at most once, and applies each index at most
/// once.
pub fn check_integrity<M>(trace: &[TraceEvent<M>]) -> Vec<Violation> {
    let mut out = Vec::new();
    for (kind, events) in [("decided", decisions(trace).collect::<Vec<_>>()), ("applied", applies(trace).collect())] {
        let mut seen: BTreeMap<(NodeId, u64), usize> = BTreeMap::new();
        for (i, node, slot, _) in events {
            if let Some(&first) = seen.get(&(node, slot)) {
                out.push(conflict(trace, Property::Integrity, vec![first, i], format!("{node} {kind} slot {slot} twice")));
            } else {
                seen.insert((node, slot), i);
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Termination {
    /// More than `n - majority(n)` nodes were down at once.
    NotApplicable { max_crashed: usize },
    Checked(Vec<Violation>),
}

impl Termination {
    pub fn violations(&self) -> &[Violation] {
        match self {
            Termination::NotApplicable { .. } => &[],
            Termination::Checked(v) => v,
        }
    }
}

/// Every submitted client operation was answered by `budget`, and every node
/// alive at the end applied every client command applied anywhere. Nodes
/// that crash and stay down are exempt.
pub fn check_termination<M>(trace: &[TraceEvent<M>], nodes: usize, budget: SimTime) -> Termination {
    let mut down = BTreeSet::new();
    let mut max_crashed = 0;
    for ev in trace {
        match (&ev.kind, ev.node) {
            (TraceKind::Crash, Some(n)) => {
                down.insert(n);
                max_crashed = max_crashed.max(down.len());
            }
            (TraceKind::Restart, Some(n)) => {
                down.remove(&n);
            }
            _ => {}
        }
    }
    if nodes == 0 || max_crashed > nodes - majority(nodes) {
        return Termination::NotApplicable { max_crashed };
    }
    let mut out = Vec::new();
    let mut open: BTreeMap<(ClientId, CommandId), usize> = BTreeMap::new();
    for (i, ev) in trace.iter().enumerate() {
        match &ev.kind {
            TraceKind::ClientReq { client, command, .. } => {
                open.entry((*client, command.id)).or_insert(i);
            }
            TraceKind::ClientResp { client, command, latency_us, .. } => {
                if ev.time > budget {
                    out.push(conflict(trace, Property::Termination, vec![i], format!("{command} answered after the budget ({latency_us} us)")));
                }
                open.remove(&(*client, *command));
            }
            _ => {}
        }
    }
    for ((client, command), i) in open {
        out.push(conflict(trace, Property::Termination, vec![i], format!("{client} never got an answer for {command}")));
    }
    let mut applied: BTreeMap<NodeId, BTreeSet<CommandId>> = BTreeMap::new();
    let mut first_apply: BTreeMap<CommandId, usize> = BTreeMap::new();
    for (i, node, _, command) in applies(trace) {
        if !command.is_noop() {
            applied.entry(node).or_default().insert(command.id);
            first_apply.entry(command.id).or_insert(i);
        }
    }
    let empty = BTreeSet::new();
    for node in NodeId::all(nodes).filter(|n| !down.contains(n)) {
        let mine = applied.get(&node).unwrap_or(&empty);
        let missing: Vec<(&CommandId, &usize)> = first_apply.iter().filter(|(c, _)| !mine.contains(c)).collect();
        if let Some((c, &i)) = missing.first() {
            let mut v = conflict(trace, Property::Termination, vec![i], format!("{node} is alive but never applied {c} ({} missing)", missing.len()));
            v.nodes = vec![node];
            out.push(v);
        }
    }
    Termination::Checked(out)
}

/// State machine safety: one command per applied index across nodes.
pub fn check_state_machine_safety<M>(trace: &[TraceEvent<M>]) -> Vec<Violation> {
    let items = applies(trace).map(|(i, _, index, c)| (index, c.id, i));
    single_valued(trace, Property::StateMachineSafety, "index", items)
}

/// At most one node claims leadership per epoch.
pub fn check_election_safety<M>(trace: &[TraceEvent<M>]) -> Vec<Violation> {
    let mut by_epoch: BTreeMap<u64, BTreeMap<NodeId, usize>> = BTreeMap::new();
    for (i, ev) in trace.iter().enumerate() {
        if let (TraceKind::Leader { epoch, .. }, Some(n)) = (&ev.kind, ev.node) {
            by_epoch.entry(*epoch).or_default().entry(n).or_insert(i);
        }
    }
    by_epoch
        .into_iter()
        .filter(|(_, l)| l.len() > 1)
        .map(|(epoch, leaders)| {
            let evidence: Vec<usize> = leaders.into_values().collect();
            conflict(trace, Property::ElectionSafety, evidence, format!("epoch {epoch} has several leaders"))
        })
        .collect()
}

fn entry_at(log: &[EntryDigest], index: u64) -> Option<&EntryDigest> {
    log.binary_search_by_key(&index, |e| e.index).ok().map(|k| &log[k])
}

/// Final logs agree on the whole prefix up to any index where their terms
/// match.
pub fn check_log_matching<M>(trace: &[TraceEvent<M>]) -> Vec<Violation> {
    let logs: Vec<(usize, NodeId, &Vec<EntryDigest>)> = trace
        .iter()
        .enumerate()
        .filter_map(|(i, e)| match (&e.kind, e.node) {
            (TraceKind::FinalLog { log }, Some(n)) => Some((i, n, log)),
            _ => None,
        })
        .collect();
    let mut out = Vec::new();
    for (a, &(ia, na, la)) in logs.iter().enumerate() {
        for &(ib, nb, lb) in &logs[a + 1..] {
            let Some(top) = la.iter().rev().find(|e| entry_at(lb, e.index).is_some_and(|o| o.term == e.term)).map(|e| e.index) else {
                continue;
            };
            let differs = la.iter().take_while(|e| e.index <= top).find(|e| entry_at(lb, e.index) != Some(*e));
            if let Some(e) = differs {
                out.push(conflict(
                    trace,
                    Property::LogMatching,
                    vec![ia, ib],
                    format!("{na} and {nb} match at index {top} but differ at index {}", e.index),
                ));
            }
        }
    }
    out
}

/// A leader elected after a slot was decided holds the decided command at
/// that index.
pub fn check_leader_completeness<M>(trace: &[TraceEvent<M>]) -> Vec<Violation> {
    let mut first_decide: BTreeMap<u64, (usize, CommandId)> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, ev) in trace.iter().enumerate() {
        match &ev.kind {
            TraceKind::Decide { slot, command } => {
                first_decide.entry(*slot).or_insert((i, command.id));
            }
            TraceKind::Leader { epoch, log } => {
                for (&slot, &(d, command)) in &first_decide {
                    if trace[d].time >= ev.time {
                        continue;
                    }
                    if entry_at(log, slot).map(|e| e.command) != Some(command) {
                        out.push(conflict(
                            trace,
                            Property::LeaderCompleteness,
                            vec![d, i],
                            format!("leader of epoch {epoch} lacks decided slot {slot} ({command})"),
                        ));
                        break;
                    }
                }
            }
            _ => {}
        }
    }
    out
}

/// Raft's safety bundle: state machine safety, election safety, log
/// matching and leader completeness.
pub fn check_raft_safety<M>(trace: &[TraceEvent<M>]) -> Vec<Violation> {
    let mut out = check_state_machine_safety(trace);
    out.extend(check_election_safety(trace));
    out.extend(check_log_matching(trace));
    out.extend(check_leader_completeness(trace));
    out
}

/// Per slot, every decide event names the same command.
pub fn check_paxos_single_value<M>(trace: &[TraceEvent<M>]) -> Vec<Violation> {
    let items = decisions(trace).map(|(i, _, slot, c)| (slot, c.id, i));
    single_valued(trace, Property::PaxosSingleValue, "slot", items)
}

/// Once a majority acks a value in round `r` of an instance, any coordinator
/// of a later round sees an estimate stamped at least `r` and picks that
/// value.
pub fn check_ct_locked_value<M>(trace: &[TraceEvent<M>]) -> Vec<Violation> {
    let mut locks: Vec<(usize, u64, u64, CommandId)> = Vec::new();
    let mut collects = Vec::new();
    for (i, ev) in trace.iter().enumerate() {
        match &ev.kind {
            TraceKind::Note { note: Note::CtLocked { instance, round, value } } => locks.push((i, *instance, *round, *value)),
            TraceKind::Note { note: Note::CtCollected { instance, round, estimates, chosen } } => {
                collects.push((i, *instance, *round, estimates, *chosen))
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    for &(li, inst, r, value) in &locks {
        for &(ci, cinst, cr, estimates, chosen) in &collects {
            if cinst != inst || cr <= r {
                continue;
            }
            let best = estimates.iter().filter_map(|(_, ts, _)| *ts).max();
            if chosen != value || best < Some(r) {
                out.push(conflict(
                    trace,
                    Property::CtLockedValue,
                    vec![li, ci],
                    format!("instance {inst}: {value} locked in round {r} but round {cr} chose {chosen} (best stamp {best:?})"),
                ));
            }
        }
    }
    out
}

/// Workers' collision audit: no job reaches two workers, and no worker gets
/// a job nobody enqueued.
pub fn check_queue<M>(trace: &[TraceEvent<M>]) -> Vec<Violation> {
    let mut enqueued = BTreeSet::new();
    let mut takers: BTreeMap<JobId, BTreeMap<ClientId, usize>> = BTreeMap::new();
    for (i, ev) in trace.iter().enumerate() {
        match &ev.kind {
            TraceKind::ClientReq { command, .. } => {
                if let Op::Queue { cmd: QueueCommand::Enqueue { job } } = &command.op {
                    enqueued.insert(job.id);
                }
            }
            TraceKind::ClientResp { client, result: AppResult::Popped { job: Some(job) }, .. } => {
                takers.entry(*job).or_default().entry(*client).or_insert(i);
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    for (job, workers) in takers {
        let evidence: Vec<usize> = workers.values().copied().collect();
        if workers.len() > 1 {
            let who: Vec<String> = workers.keys().map(|c| c.to_string()).collect();
            out.push(conflict(trace, Property::DuplicatePop, evidence.clone(), format!("job {} popped by {}", job.0, who.join(" and "))));
        }
        if !enqueued.contains(&job) {
            out.push(conflict(trace, Property::GhostJob, evidence, format!("job {} was never enqueued", job.0)));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub violations: Vec<Violation>,
    pub termination: Termination,
}

impl Verdict {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, property: Property) -> usize {
        self.violations.iter().filter(|v| v.property == property).count()
    }
}

/// Runs every check that applies to `protocol`. Termination violations are
/// included in `violations` when the precondition holds.
pub fn check_all<M>(trace: &[TraceEvent<M>], protocol: ProtocolKind, nodes: usize, budget: SimTime) -> Verdict {
    let mut violations = check_agreement(trace);
    violations.extend(check_validity(trace));
    violations.extend(check_integrity(trace));
    match protocol {
        ProtocolKind::Raft => violations.extend(check_raft_safety(trace)),
        ProtocolKind::Paxos => {
            violations.extend(check_paxos_single_value(trace));
            violations.extend(check_state_machine_safety(trace));
            violations.extend(check_election_safety(trace));
        }
        ProtocolKind::Ct => {
            violations.extend(check_state_machine_safety(trace));
            violations.extend(check_ct_locked_value(trace));
        }
        ProtocolKind::Baseline => {}
    }
    violations.extend(check_queue(trace));
    let termination = if protocol == ProtocolKind::Baseline {
        Termination::NotApplicable { max_crashed: 0 }
    } else {
        check_termination(trace, nodes, budget)
    };
    violations.extend(termination.violations().iter().cloned());
    Verdict { violations, termination }
}
