//! Multi-decree Paxos with a weak leader.
//!
//! Phase 1 (proposed/promise) runs once per leadership and covers every
//! slot; phase 2 (accept/ack) runs per slot with at most `window` slots in
//! flight. Any node may become leader; a new leader learns the values its
//! predecessors left half-accepted from the promises, which carry every
//! value the acceptor has ever accepted.
//!
//! Reads are ordered through the log like writes.

pub mod model;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::consensus::{
    majority, Action, ClientId, Command, CommandId, Delay, Durability, EntryDigest, Protocol, ProtocolEvent, Replica, Reply, Role, Timer, WireSize,
    HEADER_BYTES,
};
use crate::sim::{NodeId, SimTime};

/// Leader order number; compared by counter, then proposer id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Ballot {
    pub counter: u64,
    pub proposer: NodeId,
}

impl Ballot {
    pub const ZERO: Ballot = Ballot { counter: 0, proposer: NodeId(0) };

    pub fn new(counter: u64, proposer: NodeId) -> Self {
        Ballot { counter, proposer }
    }

    /// Unique leadership epoch for traces.
    pub fn epoch(self) -> u64 {
        (self.counter << 16) | (self.proposer.0 as u64 & 0xffff)
    }
}

impl fmt::Display for Ballot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.counter, self.proposer)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaxosConfig {
    pub nodes: usize,
    pub leadership_min_ms: u64,
    pub leadership_max_ms: u64,
    pub heartbeat_ms: u64,
    /// Slots the leader keeps in phase 2 at once.
    pub window: usize,
    pub catchup_batch: usize,
    /// Drops the promise check on proposed and accept messages. Only for
    /// showing that the model checker finds the resulting split decision.
    #[doc(hidden)]
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unsafe_skip_promise_check: bool,
}

impl PaxosConfig {
    pub fn new(nodes: usize) -> Self {
        PaxosConfig {
            nodes,
            leadership_min_ms: 150,
            leadership_max_ms: 300,
            heartbeat_ms: 50,
            window: 1,
            catchup_batch: 64,
            unsafe_skip_promise_check: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PaxosMessage {
    Proposed { ballot: Ballot },
    Promise { ballot: Ballot, accepted: Vec<(u64, Ballot, Command)> },
    Reject { ballot: Ballot, promised: Ballot },
    Accept { ballot: Ballot, slot: u64, command: Command },
    Ack { ballot: Ballot, slot: u64 },
    Commit { slot: u64, command: Command },
    Heartbeat { ballot: Ballot, chosen_upto: u64 },
    CatchUp { from: u64 },
    Chosen { entries: Vec<(u64, Command)> },
}

impl WireSize for PaxosMessage {
    fn wire_size(&self) -> u32 {
        HEADER_BYTES
            + match self {
                PaxosMessage::Proposed { .. } => 12,
                PaxosMessage::Promise { accepted, .. } => 16 + accepted.iter().map(|(_, _, c)| 20 + c.wire_size()).sum::<u32>(),
                PaxosMessage::Reject { .. } => 24,
                PaxosMessage::Accept { command, .. } => 20 + command.wire_size(),
                PaxosMessage::Ack { .. } => 20,
                PaxosMessage::Commit { command, .. } => 8 + command.wire_size(),
                PaxosMessage::Heartbeat { .. } => 20,
                PaxosMessage::CatchUp { .. } => 8,
                PaxosMessage::Chosen { entries } => 4 + entries.iter().map(|(_, c)| 8 + c.wire_size()).sum::<u32>(),
            }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Campaign {
    pub ballot: Ballot,
    pub promises: BTreeSet<NodeId>,
    /// Highest-ballot accepted value per slot among the promises so far.
    pub recovered: BTreeMap<u64, (Ballot, Command)>,
}

/// A value waiting for a slot. Recovered values keep their slot; fresh
/// client commands take the next free one.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Proposal {
    pub slot: Option<u64>,
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InFlight {
    pub command: Command,
    pub acks: BTreeSet<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PaxosState {
    pub id: NodeId,
    pub promised: Ballot,
    pub accepted: BTreeMap<u64, (Ballot, Command)>,
    pub chosen: BTreeMap<u64, Command>,
    pub role: Role,
    /// Ballot of the leader this node currently follows (its own when leading).
    pub leader_ballot: Option<Ballot>,
    pub max_counter_seen: u64,
    pub campaign: Option<Campaign>,
    pub next_slot: u64,
    pub inflight: BTreeMap<u64, InFlight>,
    pub backlog: VecDeque<Proposal>,
    pub pending_clients: BTreeMap<CommandId, ClientId>,
    /// Every slot up to here is chosen and applied.
    pub applied_upto: u64,
    pub replica: Replica,
    /// Whether the leader (or a campaigning proposer) was heard from since
    /// the leadership timer last fired.
    pub heard: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaxosDurable {
    pub promised: Ballot,
    pub accepted: BTreeMap<u64, (Ballot, Command)>,
    pub chosen: BTreeMap<u64, Command>,
    pub applied_upto: u64,
    pub replica: Replica,
}

impl PaxosState {
    pub fn new(id: NodeId) -> Self {
        PaxosState {
            id,
            promised: Ballot::ZERO,
            accepted: BTreeMap::new(),
            chosen: BTreeMap::new(),
            role: Role::Acceptor,
            leader_ballot: None,
            max_counter_seen: 0,
            campaign: None,
            next_slot: 1,
            inflight: BTreeMap::new(),
            backlog: VecDeque::new(),
            pending_clients: BTreeMap::new(),
            applied_upto: 0,
            replica: Replica::new(),
            heard: false,
        }
    }

    /// Ballot this node is leading or campaigning with.
    pub fn own_ballot(&self) -> Option<Ballot> {
        match self.role {
            Role::Leader => self.leader_ballot,
            Role::Candidate => self.campaign.as_ref().map(|c| c.ballot),
            _ => None,
        }
    }

    fn first_unchosen(&self) -> u64 {
        let mut s = self.applied_upto + 1;
        while self.chosen.contains_key(&s) {
            s += 1;
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct Paxos {
    pub config: PaxosConfig,
}

type Actions = Vec<Action<PaxosMessage>>;

impl Paxos {
    pub fn new(config: PaxosConfig) -> Self {
        Paxos { config }
    }

    fn quorum(&self) -> usize {
        majority(self.config.nodes)
    }

    fn arm_leadership(&self, out: &mut Actions) {
        out.push(Action::SetTimer {
            timer: Timer::Leadership,
            delay: Delay::Uniform {
                min: SimTime::from_millis(self.config.leadership_min_ms),
                max: SimTime::from_millis(self.config.leadership_max_ms),
            },
        });
    }

    fn arm_heartbeat(&self, out: &mut Actions) {
        out.push(Action::SetTimer { timer: Timer::Heartbeat, delay: Delay::Fixed(SimTime::from_millis(self.config.heartbeat_ms)) });
    }

    /// Mints a ballot above every one seen and asks for promises.
    pub fn propose_leadership(&self, s: &mut PaxosState, out: &mut Actions) {
        let counter = s.max_counter_seen.max(s.promised.counter) + 1;
        s.max_counter_seen = counter;
        let ballot = Ballot::new(counter, s.id);
        s.promised = ballot;
        s.role = Role::Candidate;
        s.leader_ballot = None;
        let mut campaign = Campaign { ballot, promises: BTreeSet::from([s.id]), recovered: BTreeMap::new() };
        for (&slot, (b, c)) in &s.accepted {
            campaign.recovered.insert(slot, (*b, c.clone()));
        }
        s.campaign = Some(campaign);
        out.push(Action::Persist(Durability::Promise));
        out.push(Action::Broadcast { msg: PaxosMessage::Proposed { ballot } });
        self.arm_leadership(out);
        self.maybe_lead(s, out);
    }

    /// Gives up leadership or candidacy after seeing `higher`.
    fn step_down(&self, s: &mut PaxosState, higher: Ballot, out: &mut Actions) {
        s.max_counter_seen = s.max_counter_seen.max(higher.counter);
        if !matches!(s.role, Role::Leader | Role::Candidate) {
            return;
        }
        if s.role == Role::Leader {
            out.push(Action::CancelTimer { timer: Timer::Heartbeat });
        }
        s.role = Role::Acceptor;
        s.campaign = None;
        s.inflight.clear();
        s.backlog.clear();
        let hint = Some(higher.proposer).filter(|p| *p != s.id && p.0 > 0);
        for (command, client) in std::mem::take(&mut s.pending_clients) {
            out.push(Action::Respond { client, command, reply: Reply::NotLeader { hint } });
        }
        self.arm_leadership(out);
    }

    /// Adopts `ballot` as the highest promise if it is newer.
    fn observe(&self, s: &mut PaxosState, ballot: Ballot, out: &mut Actions) {
        if ballot > s.promised {
            s.promised = ballot;
            out.push(Action::Persist(Durability::Promise));
        }
        if s.own_ballot().is_some_and(|own| own < ballot) {
            self.step_down(s, ballot, out);
        }
        s.max_counter_seen = s.max_counter_seen.max(ballot.counter);
    }

    /// Returns whether a promise was sent.
    pub fn on_proposed(&self, s: &mut PaxosState, from: NodeId, ballot: Ballot, out: &mut Actions) -> bool {
        if ballot > s.promised || self.config.unsafe_skip_promise_check {
            self.observe(s, ballot, out);
            s.heard = true;
            let accepted = s.accepted.iter().map(|(&slot, (b, c))| (slot, *b, c.clone())).collect();
            out.push(Action::Send { to: from, msg: PaxosMessage::Promise { ballot, accepted } });
            true
        } else {
            s.max_counter_seen = s.max_counter_seen.max(ballot.counter);
            out.push(Action::Send { to: from, msg: PaxosMessage::Reject { ballot, promised: s.promised } });
            false
        }
    }

    fn on_promise(&self, s: &mut PaxosState, from: NodeId, ballot: Ballot, accepted: Vec<(u64, Ballot, Command)>, out: &mut Actions) {
        let Some(c) = s.campaign.as_mut().filter(|c| c.ballot == ballot && s.role == Role::Candidate) else { return };
        c.promises.insert(from);
        for (slot, b, command) in accepted {
            match c.recovered.get(&slot) {
                Some((prev, _)) if *prev >= b => {}
                _ => {
                    c.recovered.insert(slot, (b, command));
                }
            }
        }
        self.maybe_lead(s, out);
    }

    fn maybe_lead(&self, s: &mut PaxosState, out: &mut Actions) {
        let Some(c) = s.campaign.as_ref() else { return };
        if s.role != Role::Candidate || c.promises.len() < self.quorum() {
            return;
        }
        let c = s.campaign.take().expect("checked above");
        s.role = Role::Leader;
        s.leader_ballot = Some(c.ballot);
        let log = s.chosen.iter().map(|(&index, command)| EntryDigest { index, term: 0, command: command.id }).collect();
        out.push(Action::BecameLeader { epoch: c.ballot.epoch(), log });
        out.push(Action::CancelTimer { timer: Timer::Leadership });

        // Re-propose everything past the chosen prefix: constrained values
        // where some promise carried one, no-ops for the gaps.
        let first = s.first_unchosen();
        let last = c.recovered.keys().next_back().copied().unwrap_or(0).max(s.chosen.keys().next_back().copied().unwrap_or(0));
        let mut recovery = VecDeque::new();
        for slot in first..=last {
            if s.chosen.contains_key(&slot) {
                continue;
            }
            let command = match c.recovered.get(&slot) {
                Some((_, command)) => command.clone(),
                None => Command::noop((c.ballot.counter << 24) | (slot & 0xff_ffff), s.id),
            };
            recovery.push_back(Proposal { slot: Some(slot), command });
        }
        s.next_slot = last.max(first - 1) + 1;
        recovery.extend(std::mem::take(&mut s.backlog));
        s.backlog = recovery;
        out.push(Action::Broadcast { msg: PaxosMessage::Heartbeat { ballot: c.ballot, chosen_upto: s.applied_upto } });
        self.arm_heartbeat(out);
        self.pump(s, out);
    }

    /// Starts phase 2 for queued proposals while the window has room.
    pub fn pump(&self, s: &mut PaxosState, out: &mut Actions) {
        let Some(ballot) = s.leader_ballot.filter(|_| s.role == Role::Leader) else { return };
        while s.inflight.len() < self.config.window.max(1) {
            let Some(p) = s.backlog.pop_front() else { break };
            let slot = match p.slot {
                Some(slot) => slot,
                None => {
                    let slot = s.next_slot;
                    s.next_slot += 1;
                    slot
                }
            };
            if s.chosen.contains_key(&slot) {
                continue;
            }
            self.phase2_accept(s, ballot, slot, p.command, out);
        }
    }

    fn phase2_accept(&self, s: &mut PaxosState, ballot: Ballot, slot: u64, command: Command, out: &mut Actions) {
        s.accepted.insert(slot, (ballot, command.clone()));
        out.push(Action::Persist(Durability::Accepted));
        s.inflight.insert(slot, InFlight { command: command.clone(), acks: BTreeSet::from([s.id]) });
        out.push(Action::Broadcast { msg: PaxosMessage::Accept { ballot, slot, command } });
        self.on_majority_ack(s, slot, out);
    }

    /// Returns whether the value was accepted.
    pub fn on_accept(&self, s: &mut PaxosState, from: NodeId, ballot: Ballot, slot: u64, command: Command, out: &mut Actions) -> bool {
        if ballot >= s.promised || self.config.unsafe_skip_promise_check {
            self.observe(s, ballot, out);
            s.leader_ballot = Some(ballot);
            s.heard = true;
            s.accepted.insert(slot, (ballot, command));
            out.push(Action::Persist(Durability::Accepted));
            out.push(Action::Send { to: from, msg: PaxosMessage::Ack { ballot, slot } });
            true
        } else {
            out.push(Action::Send { to: from, msg: PaxosMessage::Reject { ballot, promised: s.promised } });
            false
        }
    }

    fn on_ack(&self, s: &mut PaxosState, from: NodeId, ballot: Ballot, slot: u64, out: &mut Actions) {
        if s.role != Role::Leader || s.leader_ballot != Some(ballot) {
            return;
        }
        let Some(f) = s.inflight.get_mut(&slot) else { return };
        f.acks.insert(from);
        self.on_majority_ack(s, slot, out);
    }

    fn on_majority_ack(&self, s: &mut PaxosState, slot: u64, out: &mut Actions) {
        let Some(f) = s.inflight.get(&slot) else { return };
        if f.acks.len() < self.quorum() {
            return;
        }
        let f = s.inflight.remove(&slot).expect("checked above");
        out.push(Action::Broadcast { msg: PaxosMessage::Commit { slot, command: f.command.clone() } });
        self.learn(s, slot, f.command, out);
        self.pump(s, out);
    }

    fn learn(&self, s: &mut PaxosState, slot: u64, command: Command, out: &mut Actions) {
        if let Some(prev) = s.chosen.get(&slot) {
            debug_assert_eq!(prev, &command, "two values chosen for slot {slot}");
            return;
        }
        s.chosen.insert(slot, command.clone());
        out.push(Action::Persist(Durability::Chosen));
        out.push(Action::Decide { slot, command });
        while let Some(command) = s.chosen.get(&(s.applied_upto + 1)).cloned() {
            s.applied_upto += 1;
            let (result, note) = s.replica.execute(&command);
            if let Some(note) = note {
                out.push(Action::Note(note));
            }
            out.push(Action::Apply { index: s.applied_upto, command: command.clone(), result: result.clone() });
            if let Some(client) = s.pending_clients.remove(&command.id) {
                let result = s.replica.result_of(command.id).cloned().unwrap_or(result);
                out.push(Action::Respond { client, command: command.id, reply: Reply::Ok { result } });
            }
        }
    }

    fn on_reject(&self, s: &mut PaxosState, ballot: Ballot, promised: Ballot, out: &mut Actions) {
        if s.own_ballot() == Some(ballot) && promised > ballot {
            self.step_down(s, promised, out);
        }
        s.max_counter_seen = s.max_counter_seen.max(promised.counter);
    }

    fn on_heartbeat(&self, s: &mut PaxosState, from: NodeId, ballot: Ballot, chosen_upto: u64, out: &mut Actions) {
        if ballot < s.promised {
            out.push(Action::Send { to: from, msg: PaxosMessage::Reject { ballot, promised: s.promised } });
            return;
        }
        self.observe(s, ballot, out);
        s.leader_ballot = Some(ballot);
        s.heard = true;
        if s.applied_upto < chosen_upto {
            out.push(Action::Send { to: from, msg: PaxosMessage::CatchUp { from: s.applied_upto + 1 } });
        }
    }

    fn on_leadership_timer(&self, s: &mut PaxosState, out: &mut Actions) {
        if s.role == Role::Leader {
            return;
        }
        if s.heard {
            s.heard = false;
            self.arm_leadership(out);
        } else {
            self.propose_leadership(s, out);
        }
    }

    fn on_heartbeat_timer(&self, s: &mut PaxosState, out: &mut Actions) {
        let Some(ballot) = s.leader_ballot.filter(|_| s.role == Role::Leader) else { return };
        out.push(Action::Broadcast { msg: PaxosMessage::Heartbeat { ballot, chosen_upto: s.applied_upto } });
        // Accepts or acks may have been lost.
        for (&slot, f) in &s.inflight {
            for peer in NodeId::all(self.config.nodes).filter(|p| !f.acks.contains(p)) {
                out.push(Action::Send { to: peer, msg: PaxosMessage::Accept { ballot, slot, command: f.command.clone() } });
            }
        }
        self.arm_heartbeat(out);
    }

    fn on_client_request(&self, s: &mut PaxosState, client: ClientId, command: Command, out: &mut Actions) {
        if let Some(result) = s.replica.result_of(command.id) {
            out.push(Action::Respond { client, command: command.id, reply: Reply::Ok { result: result.clone() } });
            return;
        }
        match s.role {
            Role::Leader | Role::Candidate => {
                if s.pending_clients.insert(command.id, client).is_none() {
                    s.backlog.push_back(Proposal { slot: None, command });
                    self.pump(s, out);
                }
            }
            _ => {
                let hint = s.leader_ballot.map(|b| b.proposer).filter(|p| *p != s.id && p.0 > 0);
                out.push(Action::Respond { client, command: command.id, reply: Reply::NotLeader { hint } });
            }
        }
    }
}

impl Protocol for Paxos {
    type State = PaxosState;
    type Message = PaxosMessage;
    type Durable = PaxosDurable;

    fn name(&self) -> &'static str {
        "paxos"
    }

    fn cluster_size(&self) -> usize {
        self.config.nodes
    }

    fn init(&self, id: NodeId) -> PaxosState {
        PaxosState::new(id)
    }

    fn step(&self, mut s: PaxosState, event: ProtocolEvent<PaxosMessage>) -> (PaxosState, Actions) {
        let mut out = Vec::new();
        match event {
            ProtocolEvent::Start => self.arm_leadership(&mut out),
            ProtocolEvent::Timer(Timer::Leadership) => self.on_leadership_timer(&mut s, &mut out),
            ProtocolEvent::Timer(Timer::Heartbeat) => self.on_heartbeat_timer(&mut s, &mut out),
            ProtocolEvent::Timer(_) => {}
            ProtocolEvent::ClientRequest { client, command } => self.on_client_request(&mut s, client, command, &mut out),
            ProtocolEvent::Message { from, msg } => match msg {
                PaxosMessage::Proposed { ballot } => {
                    self.on_proposed(&mut s, from, ballot, &mut out);
                }
                PaxosMessage::Promise { ballot, accepted } => self.on_promise(&mut s, from, ballot, accepted, &mut out),
                PaxosMessage::Reject { ballot, promised } => self.on_reject(&mut s, ballot, promised, &mut out),
                PaxosMessage::Accept { ballot, slot, command } => {
                    self.on_accept(&mut s, from, ballot, slot, command, &mut out);
                }
                PaxosMessage::Ack { ballot, slot } => self.on_ack(&mut s, from, ballot, slot, &mut out),
                PaxosMessage::Commit { slot, command } => {
                    s.heard = true;
                    self.learn(&mut s, slot, command, &mut out);
                }
                PaxosMessage::Heartbeat { ballot, chosen_upto } => self.on_heartbeat(&mut s, from, ballot, chosen_upto, &mut out),
                PaxosMessage::CatchUp { from: first } => {
                    let entries: Vec<(u64, Command)> =
                        s.chosen.range(first..).take(self.config.catchup_batch).map(|(&slot, c)| (slot, c.clone())).collect();
                    if !entries.is_empty() {
                        out.push(Action::Send { to: from, msg: PaxosMessage::Chosen { entries } });
                    }
                }
                PaxosMessage::Chosen { entries } => {
                    for (slot, command) in entries {
                        self.learn(&mut s, slot, command, &mut out);
                    }
                }
            },
        }
        (s, out)
    }

    fn durable(&self, s: &PaxosState) -> PaxosDurable {
        PaxosDurable {
            promised: s.promised,
            accepted: s.accepted.clone(),
            chosen: s.chosen.clone(),
            applied_upto: s.applied_upto,
            replica: s.replica.clone(),
        }
    }

    fn recover(&self, id: NodeId, d: PaxosDurable) -> PaxosState {
        PaxosState {
            max_counter_seen: d.promised.counter,
            promised: d.promised,
            accepted: d.accepted,
            chosen: d.chosen,
            applied_upto: d.applied_upto,
            replica: d.replica,
            ..PaxosState::new(id)
        }
    }

    fn leader_epoch(&self, s: &PaxosState) -> Option<u64> {
        s.leader_ballot.filter(|_| s.role == Role::Leader).map(Ballot::epoch)
    }

    fn progress(&self, s: &PaxosState) -> u64 {
        s.replica.applied()
    }

    fn final_log(&self, s: &PaxosState) -> Option<Vec<EntryDigest>> {
        Some(
            s.chosen
                .iter()
                .map(|(&index, c)| EntryDigest { index, term: s.accepted.get(&index).map_or(0, |(b, _)| b.counter), command: c.id })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::Op;

    fn paxos(n: usize) -> Paxos {
        Paxos::new(PaxosConfig::new(n))
    }

    fn cmd(seq: u32) -> Command {
        Command { id: CommandId::client(ClientId(0), seq), op: Op::Put { key: seq, bytes: 10 } }
    }

    fn sent(out: &Actions) -> Vec<PaxosMessage> {
        out.iter()
            .filter_map(|a| match a {
                Action::Send { msg, .. } | Action::Broadcast { msg } => Some(msg.clone()),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn ballots_order_by_counter_then_proposer() {
        assert!(Ballot::new(2, NodeId(1)) > Ballot::new(1, NodeId(5)));
        assert!(Ballot::new(2, NodeId(2)) > Ballot::new(2, NodeId(1)));
    }

    #[test]
    fn new_ballot_exceeds_highest_seen() {
        let p = paxos(3);
        let mut s = PaxosState::new(NodeId(1));
        s.max_counter_seen = 3;
        let mut out = Vec::new();
        p.propose_leadership(&mut s, &mut out);
        assert_eq!(s.promised, Ballot::new(4, NodeId(1)));
        assert!(matches!(sent(&out)[..], [PaxosMessage::Proposed { ballot }] if ballot.counter == 4));
    }

    #[test]
    fn concurrent_proposers_mint_distinct_ballots() {
        let p = paxos(3);
        let (mut a, mut b) = (PaxosState::new(NodeId(1)), PaxosState::new(NodeId(2)));
        let mut out = Vec::new();
        p.propose_leadership(&mut a, &mut out);
        p.propose_leadership(&mut b, &mut out);
        assert_ne!(a.promised, b.promised);
    }

    #[test]
    fn higher_ballot_gets_a_promise_with_accepted_values() {
        let p = paxos(3);
        let mut s = PaxosState::new(NodeId(3));
        s.promised = Ballot::new(2, NodeId(1));
        s.accepted.insert(1, (Ballot::new(2, NodeId(1)), cmd(1)));
        let mut out = Vec::new();
        assert!(p.on_proposed(&mut s, NodeId(2), Ballot::new(3, NodeId(2)), &mut out));
        assert_eq!(s.promised, Ballot::new(3, NodeId(2)));
        assert!(matches!(&sent(&out)[..], [PaxosMessage::Promise { accepted, .. }] if accepted.len() == 1));
    }

    #[test]
    fn lower_ballot_is_rejected() {
        let p = paxos(3);
        let mut s = PaxosState::new(NodeId(3));
        s.promised = Ballot::new(3, NodeId(2));
        let mut out = Vec::new();
        assert!(!p.on_proposed(&mut s, NodeId(1), Ballot::new(2, NodeId(1)), &mut out));
        assert_eq!(s.promised, Ballot::new(3, NodeId(2)));
        assert!(matches!(sent(&out)[..], [PaxosMessage::Reject { .. }]));
        assert!(!p.on_accept(&mut s, NodeId(1), Ballot::new(2, NodeId(1)), 1, cmd(1), &mut out));
        assert!(s.accepted.is_empty());
    }

    fn candidate(p: &Paxos, id: u32) -> PaxosState {
        let mut s = PaxosState::new(NodeId(id));
        let mut out = Vec::new();
        p.propose_leadership(&mut s, &mut out);
        s
    }

    fn accept_for(out: &Actions, slot: u64) -> Option<Command> {
        sent(out).into_iter().find_map(|m| match m {
            PaxosMessage::Accept { slot: s, command, .. } if s == slot => Some(command),
            _ => None,
        })
    }

    #[test]
    fn leader_proposes_client_value_when_nothing_was_accepted() {
        let p = paxos(3);
        let mut s = candidate(&p, 1);
        let mut out = Vec::new();
        p.on_client_request(&mut s, ClientId(0), cmd(9), &mut out);
        let ballot = s.promised;
        p.on_promise(&mut s, NodeId(2), ballot, vec![], &mut out);
        assert_eq!(s.role, Role::Leader);
        assert_eq!(accept_for(&out, 1), Some(cmd(9)));
    }

    #[test]
    fn leader_reproposes_highest_ballot_accepted_value() {
        let p = paxos(5);
        let mut s = candidate(&p, 1);
        s.max_counter_seen = 5;
        let ballot = s.promised;
        let mut out = Vec::new();
        p.on_client_request(&mut s, ClientId(0), cmd(9), &mut out);
        let (x, y) = (cmd(1), cmd(2));
        p.on_promise(&mut s, NodeId(2), ballot, vec![(1, Ballot::new(1, NodeId(4)), y)], &mut out);
        p.on_promise(&mut s, NodeId(3), ballot, vec![(1, Ballot::new(2, NodeId(3)), x.clone())], &mut out);
        assert_eq!(s.role, Role::Leader);
        assert_eq!(accept_for(&out, 1), Some(x));
        // The client's command waits for the next free slot.
        assert_eq!(s.backlog.front().map(|p| &p.command), Some(&cmd(9)));
    }

    #[test]
    fn three_acks_of_four_commit_and_stale_acks_do_not_count() {
        let p = paxos(4);
        let mut s = candidate(&p, 1);
        let ballot = s.promised;
        let mut out = Vec::new();
        p.on_promise(&mut s, NodeId(2), ballot, vec![], &mut out);
        p.on_promise(&mut s, NodeId(3), ballot, vec![], &mut out);
        assert_eq!(s.role, Role::Leader);
        p.on_client_request(&mut s, ClientId(0), cmd(1), &mut out);
        out.clear();
        p.on_ack(&mut s, NodeId(2), Ballot::new(0, NodeId(2)), 1, &mut out);
        p.on_ack(&mut s, NodeId(2), ballot, 1, &mut out);
        assert!(s.chosen.is_empty(), "self + one ack is 2 of 4");
        p.on_ack(&mut s, NodeId(3), ballot, 1, &mut out);
        assert_eq!(s.chosen.get(&1), Some(&cmd(1)));
        assert!(sent(&out).iter().any(|m| matches!(m, PaxosMessage::Commit { slot: 1, .. })));
    }

    #[test]
    fn commits_apply_in_slot_order() {
        let p = paxos(3);
        let mut s = PaxosState::new(NodeId(2));
        let mut out = Vec::new();
        p.learn(&mut s, 2, cmd(2), &mut out);
        assert_eq!(s.applied_upto, 0);
        p.learn(&mut s, 1, cmd(1), &mut out);
        let applied: Vec<u64> = out.iter().filter_map(|a| if let Action::Apply { index, .. } = a { Some(*index) } else { None }).collect();
        assert_eq!(applied, [1, 2]);
    }

    #[test]
    fn promise_never_decreases() {
        let p = paxos(3);
        let mut s = PaxosState::new(NodeId(3));
        let mut out = Vec::new();
        let ballots = [3, 1, 4, 1, 5, 2].map(|c| Ballot::new(c, NodeId(1)));
        let mut max = Ballot::ZERO;
        for b in ballots {
            p.on_proposed(&mut s, NodeId(1), b, &mut out);
            p.on_accept(&mut s, NodeId(1), b, 1, cmd(1), &mut out);
            max = max.max(b);
            assert_eq!(s.promised, max);
        }
    }

    /// An old leader crashed after getting its value accepted by one
    /// acceptor; the next leader must finish that value, not its own.
    #[test]
    fn partially_accepted_value_survives_leader_crash() {
        use crate::bench::WorkloadSpec;
        use crate::sim::{run, FaultPlan, SimConfig};
        let p = paxos(3);
        let mut acceptor = PaxosState::new(NodeId(3));
        let old = Ballot::new(1, NodeId(1));
        let mut out = Vec::new();
        p.on_proposed(&mut acceptor, NodeId(1), old, &mut out);
        p.on_accept(&mut acceptor, NodeId(1), old, 1, cmd(7), &mut out);
        let mut new_leader = candidate(&p, 2);
        new_leader.max_counter_seen = 1;
        let ballot = new_leader.promised;
        out.clear();
        p.on_proposed(&mut acceptor, NodeId(2), ballot, &mut out);
        let PaxosMessage::Promise { accepted, .. } = sent(&out).remove(0) else { panic!("expected a promise") };
        out.clear();
        p.on_client_request(&mut new_leader, ClientId(1), cmd(8), &mut out);
        p.on_promise(&mut new_leader, NodeId(3), ballot, accepted, &mut out);
        assert_eq!(accept_for(&out, 1), Some(cmd(7)));

        let out = run(paxos(3), SimConfig::new(3, 11), FaultPlan::none(), WorkloadSpec { op_count: 100, mix: 0.7, ..WorkloadSpec::default() }).unwrap();
        assert!(!out.outcome.livelock);
        assert_eq!(out.outcome.completed, 100);
    }
}
