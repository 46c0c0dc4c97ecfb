//! Hand-built traces for mutation-style self-tests of the checker: one
//! violating trace per property plus clean traces that must pass.

use crate::consensus::{AppResult, ClientId, Command, CommandId, EntryDigest, Note, Op};
use crate::experiment::ProtocolKind;
use crate::queue::{Job, JobId, QueueCommand};
use crate::sim::{NodeId, SimTime, TraceEvent, TraceKind};

use super::Property;

pub type Event = TraceEvent<()>;

pub fn put(seq: u32) -> Command {
    Command { id: CommandId::client(ClientId(0), seq), op: Op::Put { key: seq, bytes: 8 } }
}

fn ms(t: u64) -> SimTime {
    SimTime::from_millis(t)
}

pub fn request(t: u64, node: u32, command: Command) -> Event {
    TraceEvent::new(ms(t), None, TraceKind::ClientReq { client: ClientId(0), target: NodeId(node), attempt: 1, command })
}

pub fn response(t: u64, client: u32, command: &Command, result: AppResult) -> Event {
    TraceEvent::new(
        ms(t),
        None,
        TraceKind::ClientResp { client: ClientId(client), command: command.id, class: command.class(), server: NodeId(1), latency_us: 1000, result },
    )
}

pub fn decide(t: u64, node: u32, slot: u64, command: Command) -> Event {
    TraceEvent::new(ms(t), Some(NodeId(node)), TraceKind::Decide { slot, command })
}

pub fn apply(t: u64, node: u32, index: u64, command: Command) -> Event {
    TraceEvent::new(ms(t), Some(NodeId(node)), TraceKind::Apply { index, command, result: AppResult::Ok })
}

pub fn leader(t: u64, node: u32, epoch: u64, log: Vec<EntryDigest>) -> Event {
    TraceEvent::new(ms(t), Some(NodeId(node)), TraceKind::Leader { epoch, log })
}

pub fn final_log(t: u64, node: u32, log: Vec<EntryDigest>) -> Event {
    TraceEvent::new(ms(t), Some(NodeId(node)), TraceKind::FinalLog { log })
}

pub fn crash(t: u64, node: u32) -> Event {
    TraceEvent::new(ms(t), Some(NodeId(node)), TraceKind::Crash)
}

pub fn note(t: u64, node: u32, note: Note) -> Event {
    TraceEvent::new(ms(t), Some(NodeId(node)), TraceKind::Note { note })
}

pub fn digest(index: u64, term: u64, command: &Command) -> EntryDigest {
    EntryDigest { index, term, command: command.id }
}

fn job(id: u64) -> Command {
    let job = Job { id: JobId(id), payload_bytes: 8, enqueued_at: SimTime::ZERO };
    Command { id: CommandId::client(ClientId(0), id as u32), op: Op::Queue { cmd: QueueCommand::Enqueue { job } } }
}

fn pop(client: u32, seq: u32) -> Command {
    Command { id: CommandId::client(ClientId(client), seq), op: Op::Queue { cmd: QueueCommand::Pop { worker: ClientId(client) } } }
}

pub struct Fixture {
    pub name: &'static str,
    pub protocol: ProtocolKind,
    pub nodes: usize,
    /// The property the trace breaks; `None` for clean traces.
    pub breaks: Option<Property>,
    pub trace: Vec<Event>,
}

/// A three-node run where two writes commit everywhere.
fn clean_raft_trace() -> Vec<Event> {
    let (a, b) = (put(1), put(2));
    let mut t = vec![leader(1, 1, 1, vec![]), request(2, 1, a.clone()), request(2, 1, b.clone())];
    for node in 1..=3 {
        t.push(decide(5, node, 1, a.clone()));
        t.push(apply(5, node, 1, a.clone()));
        t.push(decide(6, node, 2, b.clone()));
        t.push(apply(6, node, 2, b.clone()));
    }
    t.push(response(7, 0, &a, AppResult::Ok));
    t.push(response(8, 0, &b, AppResult::Ok));
    t.push(leader(20, 2, 2, vec![digest(1, 1, &a), digest(2, 1, &b)]));
    for node in 1..=3 {
        t.push(final_log(30, node, vec![digest(1, 1, &a), digest(2, 1, &b)]));
    }
    t
}

pub fn violating() -> Vec<Fixture> {
    let (a, b, c) = (put(1), put(2), put(3));
    let fx = |name, protocol, breaks, trace| Fixture { name, protocol, nodes: 3, breaks: Some(breaks), trace };
    vec![
        fx(
            "two nodes decide different values for one slot",
            ProtocolKind::Paxos,
            Property::Agreement,
            vec![request(1, 1, a.clone()), request(1, 2, b.clone()), decide(5, 1, 1, a.clone()), decide(6, 2, 1, b.clone())],
        ),
        fx("decide of a never-proposed value", ProtocolKind::Raft, Property::Validity, vec![decide(5, 1, 1, a.clone())]),
        fx(
            "one node decides a slot twice",
            ProtocolKind::Ct,
            Property::Integrity,
            vec![request(1, 1, a.clone()), decide(5, 1, 1, a.clone()), decide(6, 1, 1, a.clone())],
        ),
        fx("request never answered", ProtocolKind::Raft, Property::Termination, vec![request(1, 1, a.clone())]),
        fx(
            "conflicting applies at index 3",
            ProtocolKind::Raft,
            Property::StateMachineSafety,
            vec![request(1, 1, a.clone()), request(1, 1, b.clone()), apply(5, 1, 3, a.clone()), apply(6, 2, 3, b.clone())],
        ),
        fx(
            "two leaders in term 5",
            ProtocolKind::Raft,
            Property::ElectionSafety,
            vec![leader(5, 1, 5, vec![]), leader(6, 2, 5, vec![])],
        ),
        fx(
            "final logs share a term at index 2 but differ at index 1",
            ProtocolKind::Raft,
            Property::LogMatching,
            vec![
                final_log(9, 1, vec![digest(1, 1, &a), digest(2, 2, &b)]),
                final_log(9, 2, vec![digest(1, 1, &c), digest(2, 2, &b)]),
            ],
        ),
        fx(
            "new leader is missing a decided entry",
            ProtocolKind::Raft,
            Property::LeaderCompleteness,
            vec![request(1, 1, a.clone()), decide(5, 1, 1, a.clone()), leader(9, 2, 3, vec![])],
        ),
        fx(
            "two chosen values in one slot",
            ProtocolKind::Paxos,
            Property::PaxosSingleValue,
            vec![request(1, 1, a.clone()), request(1, 2, b.clone()), decide(5, 3, 4, a.clone()), decide(7, 3, 4, b.clone())],
        ),
        fx(
            "later round overrides a locked value",
            ProtocolKind::Ct,
            Property::CtLockedValue,
            vec![
                note(5, 1, Note::CtLocked { instance: 1, round: 0, value: a.id }),
                note(
                    9,
                    2,
                    Note::CtCollected {
                        instance: 1,
                        round: 1,
                        estimates: vec![(NodeId(2), None, b.id), (NodeId(3), None, b.id)],
                        chosen: b.id,
                    },
                ),
            ],
        ),
        fx(
            "two workers receive the same job",
            ProtocolKind::Baseline,
            Property::DuplicatePop,
            vec![
                request(1, 1, job(1)),
                response(10, 1, &pop(1, 1), AppResult::Popped { job: Some(JobId(1)) }),
                response(11, 2, &pop(2, 1), AppResult::Popped { job: Some(JobId(1)) }),
            ],
        ),
        fx(
            "worker receives a job nobody enqueued",
            ProtocolKind::Baseline,
            Property::GhostJob,
            vec![response(10, 1, &pop(1, 1), AppResult::Popped { job: Some(JobId(7)) })],
        ),
    ]
}

pub fn clean() -> Vec<Fixture> {
    let (a, b) = (put(1), put(2));
    let ct = vec![
        request(1, 1, a.clone()),
        note(5, 1, Note::CtLocked { instance: 1, round: 0, value: a.id }),
        note(
            9,
            2,
            Note::CtCollected {
                instance: 1,
                round: 1,
                estimates: vec![(NodeId(1), Some(0), a.id), (NodeId(2), None, b.id)],
                chosen: a.id,
            },
        ),
        decide(10, 1, 1, a.clone()),
        decide(10, 2, 1, a.clone()),
        decide(10, 3, 1, a.clone()),
        apply(10, 1, 1, a.clone()),
        apply(10, 2, 1, a.clone()),
        apply(10, 3, 1, a.clone()),
        response(11, 0, &a, AppResult::Ok),
    ];
    let queue = vec![
        request(1, 1, job(1)),
        request(1, 1, job(2)),
        response(10, 1, &pop(1, 1), AppResult::Popped { job: Some(JobId(1)) }),
        response(11, 2, &pop(2, 1), AppResult::Popped { job: Some(JobId(2)) }),
    ];
    let with_crash = {
        let mut t = clean_raft_trace();
        t.insert(0, crash(0, 3));
        t.retain(|e| e.node != Some(NodeId(3)) || matches!(e.kind, TraceKind::Crash));
        t
    };
    let fx = |name, protocol, trace| Fixture { name, protocol, nodes: 3, breaks: None, trace };
    vec![
        fx("three-node raft run", ProtocolKind::Raft, clean_raft_trace()),
        fx("raft run with one node down throughout", ProtocolKind::Raft, with_crash),
        fx("chandra-toueg lock respected", ProtocolKind::Ct, ct),
        fx("distinct pops", ProtocolKind::Baseline, queue),
        fx("empty trace", ProtocolKind::Paxos, vec![]),
    ]
}

#[cfg(test)]
mod tests {
    use super::super::check_all;
    use super::*;

    #[test]
    fn every_property_has_a_fixture() {
        let covered: Vec<Property> = violating().iter().filter_map(|f| f.breaks).collect();
        for p in Property::ALL {
            assert!(covered.contains(&p), "no fixture for {p}");
        }
    }

    #[test]
    fn violating_fixtures_are_flagged() {
        for f in violating() {
            let verdict = check_all(&f.trace, f.protocol, f.nodes, SimTime::from_millis(1000));
            let p = f.breaks.unwrap();
            assert!(verdict.count(p) > 0, "{}: expected {p}, got {:?}", f.name, verdict.violations);
        }
    }

    #[test]
    fn clean_fixtures_pass() {
        for f in clean() {
            let verdict = check_all(&f.trace, f.protocol, f.nodes, SimTime::from_millis(1000));
            assert!(verdict.is_clean(), "{}: {:?}", f.name, verdict.violations);
        }
    }
}
