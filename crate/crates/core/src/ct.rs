//! Chandra-Toueg consensus with a rotating coordinator over an eventually
//! strong failure detector.
//!
//! Each log slot is one consensus instance, run to completion before the
//! next starts. Within an instance, round `r` is coordinated by
//! [`coordinator_of`]`(r, n)`. Every participant sends its preference and
//! timestamp to the coordinator, which adopts the most recent one among a
//! majority and proposes it; participants adopt and ack, or nack when the
//! detector suspects the coordinator. A majority of acks decides, and the
//! decision is rebroadcast by every node on first receipt.
//!
//! There is no leader, so any node accepts client requests. The receiving
//! node broadcasts the command (`Submit`) so every node can offer it as its
//! input. Reads are ordered through the log.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::consensus::{
    majority, Action, ClientId, Command, CommandId, Delay, Durability, EntryDigest, Note, Protocol, ProtocolEvent, Replica, Reply, Role, Timer, WireSize,
    HEADER_BYTES,
};
use crate::sim::{NodeId, SimTime};

/// Coordinator of round `r` among nodes `1..=n`.
pub fn coordinator_of(round: u64, n: usize) -> NodeId {
    assert!(n >= 1, "cluster needs at least one node");
    NodeId((round % n as u64) as u32 + 1)
}

/// Picks the estimate with the most recent timestamp, lowest sender id on
/// ties. `estimates` iterates in sender order.
pub fn collect<'a>(estimates: impl IntoIterator<Item = (NodeId, Option<u64>, &'a Command)>) -> Option<(NodeId, &'a Command)> {
    let mut best: Option<(NodeId, Option<u64>, &Command)> = None;
    for (from, ts, value) in estimates {
        match best {
            Some((_, best_ts, _)) if ts <= best_ts => {}
            _ => best = Some((from, ts, value)),
        }
    }
    best.map(|(from, _, value)| (from, value))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtConfig {
    pub nodes: usize,
    /// Detector tick.
    pub tick_ms: u64,
    /// Liveness beacons go out every this many ticks.
    pub alive_ticks: u32,
    /// Silent ticks before a node is suspected, before any backoff.
    pub suspect_after_ticks: u32,
    /// Cap on the per-node timeout, as a multiple of `suspect_after_ticks`.
    pub max_backoff: u32,
    /// Estimates and proposals are resent every this many ticks.
    pub resend_ticks: u32,
    pub catchup_batch: usize,
}

impl CtConfig {
    pub fn new(nodes: usize) -> Self {
        CtConfig { nodes, tick_ms: 25, alive_ticks: 2, suspect_after_ticks: 8, max_backoff: 16, resend_ticks: 4, catchup_batch: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CtMessage {
    Submit { command: Command },
    Estimate { instance: u64, round: u64, preference: Command, timestamp: Option<u64> },
    Propose { instance: u64, round: u64, value: Command },
    Ack { instance: u64, round: u64 },
    Nack { instance: u64, round: u64 },
    Decide { instance: u64, value: Command },
    /// Heartbeat carrying the sender's position, so nodes left behind in an
    /// older round of the same instance can catch up.
    Alive { instance: u64, round: u64, engaged: bool },
    Fetch { from: u64 },
    Catchup { entries: Vec<(u64, Command)> },
}

impl WireSize for CtMessage {
    fn wire_size(&self) -> u32 {
        HEADER_BYTES
            + match self {
                CtMessage::Submit { command } => command.wire_size(),
                CtMessage::Estimate { preference, .. } => 25 + preference.wire_size(),
                CtMessage::Propose { value, .. } => 16 + value.wire_size(),
                CtMessage::Ack { .. } | CtMessage::Nack { .. } => 16,
                CtMessage::Decide { value, .. } => 8 + value.wire_size(),
                CtMessage::Alive { .. } => 17,
                CtMessage::Fetch { .. } => 8,
                CtMessage::Catchup { entries } => 4 + entries.iter().map(|(_, c)| 8 + c.wire_size()).sum::<u32>(),
            }
    }
}

/// Timeout-based failure detector counted in ticks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Detector {
    pub silent: BTreeMap<NodeId, u32>,
    pub suspect_after: BTreeMap<NodeId, u32>,
    pub suspected: BTreeSet<NodeId>,
}

impl Detector {
    fn new(id: NodeId, config: &CtConfig) -> Self {
        let peers: Vec<NodeId> = NodeId::all(config.nodes).filter(|p| *p != id).collect();
        Detector {
            silent: peers.iter().map(|&p| (p, 0)).collect(),
            suspect_after: peers.into_iter().map(|p| (p, config.suspect_after_ticks)).collect(),
            suspected: BTreeSet::new(),
        }
    }

    fn tick(&mut self) {
        for (p, silent) in self.silent.iter_mut() {
            *silent += 1;
            if *silent > self.suspect_after[p] {
                self.suspected.insert(*p);
            }
        }
    }

    /// Records a message from `p`; a suspected node that speaks again was
    /// falsely suspected, so its timeout doubles.
    fn heard(&mut self, p: NodeId, cap: u32) {
        if let Some(s) = self.silent.get_mut(&p) {
            *s = 0;
        }
        if self.suspected.remove(&p) {
            let t = self.suspect_after.get_mut(&p).expect("known peer");
            *t = (*t * 2).min(cap);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoordRound {
    pub round: u64,
    pub estimates: BTreeMap<NodeId, (Option<u64>, Command)>,
    pub proposal: Option<Command>,
    pub acks: BTreeSet<NodeId>,
    pub nacks: BTreeSet<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CtState {
    pub id: NodeId,
    /// Instance (log slot) being decided; starts at 1.
    pub instance: u64,
    pub round: u64,
    pub preference: Option<Command>,
    /// Round in which `preference` was last adopted from a coordinator.
    pub timestamp: Option<u64>,
    /// Whether this node has offered an input to the current instance.
    pub engaged: bool,
    pub round_ticks: u32,
    pub coord: Option<CoordRound>,
    pub decided: BTreeMap<u64, Command>,
    /// Every instance up to here is applied.
    pub applied: u64,
    pub pending: VecDeque<Command>,
    pub pending_clients: BTreeMap<CommandId, ClientId>,
    pub replica: Replica,
    pub detector: Detector,
    pub ticks: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CtDurable {
    pub instance: u64,
    pub round: u64,
    pub preference: Option<Command>,
    pub timestamp: Option<u64>,
    pub decided: BTreeMap<u64, Command>,
    pub applied: u64,
    pub replica: Replica,
}

impl CtState {
    pub fn role(&self, n: usize) -> Role {
        if coordinator_of(self.round, n) == self.id {
            Role::Coordinator
        } else {
            Role::Participant
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChandraToueg {
    pub config: CtConfig,
}

type Actions = Vec<Action<CtMessage>>;

impl ChandraToueg {
    pub fn new(config: CtConfig) -> Self {
        ChandraToueg { config }
    }

    fn n(&self) -> usize {
        self.config.nodes
    }

    fn quorum(&self) -> usize {
        majority(self.config.nodes)
    }

    fn fresh(&self, id: NodeId) -> CtState {
        CtState {
            id,
            instance: 1,
            round: 0,
            preference: None,
            timestamp: None,
            engaged: false,
            round_ticks: 0,
            coord: None,
            decided: BTreeMap::new(),
            applied: 0,
            pending: VecDeque::new(),
            pending_clients: BTreeMap::new(),
            replica: Replica::new(),
            detector: Detector::new(id, &self.config),
            ticks: 0,
        }
    }

    fn note_command(&self, s: &mut CtState, command: &Command) {
        if command.is_noop() || s.replica.result_of(command.id).is_some() || s.pending.iter().any(|c| c.id == command.id) {
            return;
        }
        s.pending.push_back(command.clone());
    }

    /// Offers this node's input to the current instance.
    pub fn engage(&self, s: &mut CtState, out: &mut Actions) {
        if s.engaged || s.decided.contains_key(&s.instance) {
            return;
        }
        while s.pending.front().is_some_and(|c| s.replica.result_of(c.id).is_some()) {
            s.pending.pop_front();
        }
        s.engaged = true;
        if s.preference.is_none() {
            s.preference = Some(s.pending.front().cloned().unwrap_or_else(|| Command::noop(s.instance, s.id)));
        }
        let round = s.round;
        self.enter_round(s, round, out);
    }

    fn enter_round(&self, s: &mut CtState, round: u64, out: &mut Actions) {
        s.round = round;
        s.round_ticks = 0;
        out.push(Action::Persist(Durability::Estimate));
        self.send_estimate(s, out);
    }

    /// Step 1: send `(round, preference, timestamp)` to the coordinator.
    pub fn send_estimate(&self, s: &mut CtState, out: &mut Actions) {
        let Some(preference) = s.preference.clone() else { return };
        let (instance, round, timestamp) = (s.instance, s.round, s.timestamp);
        let coordinator = coordinator_of(round, self.n());
        if coordinator == s.id {
            self.on_estimate(s, s.id, instance, round, preference, timestamp, out);
        } else {
            out.push(Action::Send { to: coordinator, msg: CtMessage::Estimate { instance, round, preference, timestamp } });
        }
    }

    /// Answers messages about instances other than the current one.
    /// Returns true when the message was fully handled.
    fn off_instance(&self, s: &mut CtState, from: NodeId, instance: u64, out: &mut Actions) -> bool {
        if instance < s.instance {
            if let Some(value) = s.decided.get(&instance) {
                out.push(Action::Send { to: from, msg: CtMessage::Decide { instance, value: value.clone() } });
            }
            true
        } else if instance > s.instance {
            out.push(Action::Send { to: from, msg: CtMessage::Fetch { from: s.instance } });
            true
        } else {
            false
        }
    }

    /// Step 2: the coordinator collects a majority of estimates.
    #[allow(clippy::too_many_arguments)]
    fn on_estimate(&self, s: &mut CtState, from: NodeId, instance: u64, round: u64, preference: Command, timestamp: Option<u64>, out: &mut Actions) {
        if self.off_instance(s, from, instance, out) {
            return;
        }
        self.note_command(s, &preference);
        self.engage(s, out);
        if s.instance != instance || coordinator_of(round, self.n()) != s.id {
            return;
        }
        if round > s.round {
            // Others moved past rounds this node never saw; catch up.
            self.enter_round(s, round, out);
            if s.instance != instance {
                return;
            }
        }
        match &s.coord {
            Some(c) if c.round > round => return,
            Some(c) if c.round == round => {}
            _ => {
                s.coord = Some(CoordRound { round, estimates: BTreeMap::new(), proposal: None, acks: BTreeSet::new(), nacks: BTreeSet::new() })
            }
        }
        let c = s.coord.as_mut().expect("set above");
        if let Some(value) = &c.proposal {
            if from != s.id {
                out.push(Action::Send { to: from, msg: CtMessage::Propose { instance, round, value: value.clone() } });
            }
            return;
        }
        c.estimates.insert(from, (timestamp, preference));
        if c.estimates.len() < self.quorum() {
            return;
        }
        let (_, chosen) = collect(c.estimates.iter().map(|(p, (ts, v))| (*p, *ts, v))).expect("majority is non-empty");
        let chosen = chosen.clone();
        let estimates = c.estimates.iter().map(|(p, (ts, v))| (*p, *ts, v.id)).collect();
        out.push(Action::Note(Note::CtCollected { instance, round, estimates, chosen: chosen.id }));
        c.proposal = Some(chosen.clone());
        out.push(Action::Broadcast { msg: CtMessage::Propose { instance, round, value: chosen.clone() } });
        self.on_propose(s, s.id, instance, round, chosen, out);
    }

    /// Steps 3-4 on the participant side: adopt and ack.
    fn on_propose(&self, s: &mut CtState, from: NodeId, instance: u64, round: u64, value: Command, out: &mut Actions) {
        if self.off_instance(s, from, instance, out) {
            return;
        }
        self.note_command(s, &value);
        if round < s.round || coordinator_of(round, self.n()) != from {
            return;
        }
        s.engaged = true;
        s.preference = Some(value);
        s.timestamp = Some(round);
        s.round = round;
        out.push(Action::Persist(Durability::Estimate));
        if from == s.id {
            self.on_ack(s, s.id, instance, round, out);
        } else {
            out.push(Action::Send { to: from, msg: CtMessage::Ack { instance, round } });
        }
        if s.instance == instance {
            self.enter_round(s, round + 1, out);
        }
    }

    /// Step 4, second case: the coordinator is suspected.
    pub fn nack_and_advance(&self, s: &mut CtState, out: &mut Actions) {
        let coordinator = coordinator_of(s.round, self.n());
        out.push(Action::Send { to: coordinator, msg: CtMessage::Nack { instance: s.instance, round: s.round } });
        let next = s.round + 1;
        self.enter_round(s, next, out);
    }

    /// Step 5: a majority of acks decides.
    fn on_ack(&self, s: &mut CtState, from: NodeId, instance: u64, round: u64, out: &mut Actions) {
        if self.off_instance(s, from, instance, out) {
            return;
        }
        let Some(c) = s.coord.as_mut().filter(|c| c.round == round) else { return };
        let Some(value) = c.proposal.clone() else { return };
        c.acks.insert(from);
        if c.acks.len() < self.quorum() {
            return;
        }
        out.push(Action::Note(Note::CtLocked { instance, round, value: value.id }));
        s.coord = None;
        out.push(Action::Broadcast { msg: CtMessage::Decide { instance, value: value.clone() } });
        self.learn(s, instance, value, out);
    }

    fn on_nack(&self, s: &mut CtState, from: NodeId, instance: u64, round: u64) {
        if let Some(c) = s.coord.as_mut().filter(|c| c.round == round && s.instance == instance) {
            c.nacks.insert(from);
        }
    }

    /// Step 6: rebroadcast a decision on first receipt, then decide.
    fn on_decide(&self, s: &mut CtState, from: NodeId, instance: u64, value: Command, out: &mut Actions) {
        if s.decided.contains_key(&instance) {
            return;
        }
        out.push(Action::Broadcast { msg: CtMessage::Decide { instance, value: value.clone() } });
        if instance > s.instance {
            out.push(Action::Send { to: from, msg: CtMessage::Fetch { from: s.instance } });
        }
        self.learn(s, instance, value, out);
    }

    fn learn(&self, s: &mut CtState, instance: u64, value: Command, out: &mut Actions) {
        if s.decided.contains_key(&instance) {
            return;
        }
        s.decided.insert(instance, value.clone());
        s.pending.retain(|c| c.id != value.id);
        out.push(Action::Persist(Durability::Decided));
        out.push(Action::Decide { slot: instance, command: value });
        while let Some(command) = s.decided.get(&(s.applied + 1)).cloned() {
            s.applied += 1;
            let (result, note) = s.replica.execute(&command);
            if let Some(note) = note {
                out.push(Action::Note(note));
            }
            out.push(Action::Apply { index: s.applied, command: command.clone(), result: result.clone() });
            if let Some(client) = s.pending_clients.remove(&command.id) {
                let result = s.replica.result_of(command.id).cloned().unwrap_or(result);
                out.push(Action::Respond { client, command: command.id, reply: Reply::Ok { result } });
            }
        }
        if !s.decided.contains_key(&s.instance) {
            return;
        }
        while s.decided.contains_key(&s.instance) {
            s.instance += 1;
        }
        s.round = 0;
        s.preference = None;
        s.timestamp = None;
        s.engaged = false;
        s.round_ticks = 0;
        s.coord = None;
        if !s.pending.is_empty() {
            self.engage(s, out);
        }
    }

    fn on_tick(&self, s: &mut CtState, out: &mut Actions) {
        out.push(Action::SetTimer { timer: Timer::Detector, delay: Delay::Fixed(SimTime::from_millis(self.config.tick_ms)) });
        s.ticks += 1;
        s.detector.tick();
        if s.ticks.is_multiple_of(self.config.alive_ticks.max(1) as u64) {
            out.push(Action::Broadcast { msg: CtMessage::Alive { instance: s.instance, round: s.round, engaged: s.engaged } });
        }
        if !s.engaged {
            return;
        }
        s.round_ticks += 1;
        let coordinator = coordinator_of(s.round, self.n());
        if coordinator != s.id && s.detector.suspected.contains(&coordinator) {
            self.nack_and_advance(s, out);
            return;
        }
        if !s.round_ticks.is_multiple_of(self.config.resend_ticks.max(1)) {
            return;
        }
        if coordinator != s.id {
            self.send_estimate(s, out);
        }
        if let Some(c) = &s.coord {
            if let Some(value) = &c.proposal {
                for peer in NodeId::all(self.n()).filter(|p| *p != s.id && !c.acks.contains(p) && !c.nacks.contains(p)) {
                    out.push(Action::Send { to: peer, msg: CtMessage::Propose { instance: s.instance, round: c.round, value: value.clone() } });
                }
            }
        }
    }

    fn on_client_request(&self, s: &mut CtState, client: ClientId, command: Command, out: &mut Actions) {
        if let Some(result) = s.replica.result_of(command.id) {
            out.push(Action::Respond { client, command: command.id, reply: Reply::Ok { result: result.clone() } });
            return;
        }
        s.pending_clients.insert(command.id, client);
        out.push(Action::Broadcast { msg: CtMessage::Submit { command: command.clone() } });
        self.note_command(s, &command);
        self.engage(s, out);
    }
}

impl Protocol for ChandraToueg {
    type State = CtState;
    type Message = CtMessage;
    type Durable = CtDurable;

    fn name(&self) -> &'static str {
        "ct"
    }

    fn cluster_size(&self) -> usize {
        self.config.nodes
    }

    fn init(&self, id: NodeId) -> CtState {
        self.fresh(id)
    }

    fn step(&self, mut s: CtState, event: ProtocolEvent<CtMessage>) -> (CtState, Actions) {
        let mut out = Vec::new();
        match event {
            ProtocolEvent::Start => {
                out.push(Action::SetTimer { timer: Timer::Detector, delay: Delay::Fixed(SimTime::from_millis(self.config.tick_ms)) });
                if s.engaged {
                    self.send_estimate(&mut s, &mut out);
                }
            }
            ProtocolEvent::Timer(Timer::Detector) => self.on_tick(&mut s, &mut out),
            ProtocolEvent::Timer(_) => {}
            ProtocolEvent::ClientRequest { client, command } => self.on_client_request(&mut s, client, command, &mut out),
            ProtocolEvent::Message { from, msg } => {
                s.detector.heard(from, self.config.suspect_after_ticks * self.config.max_backoff.max(1));
                match msg {
                    CtMessage::Submit { command } => {
                        self.note_command(&mut s, &command);
                        self.engage(&mut s, &mut out);
                    }
                    CtMessage::Estimate { instance, round, preference, timestamp } => {
                        self.on_estimate(&mut s, from, instance, round, preference, timestamp, &mut out)
                    }
                    CtMessage::Propose { instance, round, value } => self.on_propose(&mut s, from, instance, round, value, &mut out),
                    CtMessage::Ack { instance, round } => self.on_ack(&mut s, from, instance, round, &mut out),
                    CtMessage::Nack { instance, round } => self.on_nack(&mut s, from, instance, round),
                    CtMessage::Decide { instance, value } => self.on_decide(&mut s, from, instance, value, &mut out),
                    CtMessage::Alive { instance, round, engaged } => {
                        if instance > s.instance {
                            out.push(Action::Send { to: from, msg: CtMessage::Fetch { from: s.instance } });
                        } else if instance == s.instance && engaged {
                            // Skipping rounds is safe: it looks the same as
                            // being too slow to take part in them.
                            if round > s.round && s.engaged {
                                self.enter_round(&mut s, round, &mut out);
                            } else if round > s.round {
                                s.round = round;
                            }
                            self.engage(&mut s, &mut out);
                        }
                    }
                    CtMessage::Fetch { from: first } => {
                        let entries: Vec<(u64, Command)> =
                            s.decided.range(first..).take(self.config.catchup_batch).map(|(&i, c)| (i, c.clone())).collect();
                        if !entries.is_empty() {
                            out.push(Action::Send { to: from, msg: CtMessage::Catchup { entries } });
                        }
                    }
                    CtMessage::Catchup { entries } => {
                        for (instance, value) in entries {
                            self.learn(&mut s, instance, value, &mut out);
                        }
                    }
                }
            }
        }
        (s, out)
    }

    fn durable(&self, s: &CtState) -> CtDurable {
        CtDurable {
            instance: s.instance,
            round: s.round,
            preference: s.preference.clone(),
            timestamp: s.timestamp,
            decided: s.decided.clone(),
            applied: s.applied,
            replica: s.replica.clone(),
        }
    }

    fn recover(&self, id: NodeId, d: CtDurable) -> CtState {
        CtState {
            instance: d.instance,
            round: d.round,
            engaged: d.preference.is_some(),
            preference: d.preference,
            timestamp: d.timestamp,
            decided: d.decided,
            applied: d.applied,
            replica: d.replica,
            ..self.fresh(id)
        }
    }

    fn leader_epoch(&self, s: &CtState) -> Option<u64> {
        (s.engaged && coordinator_of(s.round, self.n()) == s.id).then_some((s.instance << 20) | (s.round & 0xf_ffff))
    }

    fn progress(&self, s: &CtState) -> u64 {
        s.replica.applied()
    }

    fn final_log(&self, s: &CtState) -> Option<Vec<EntryDigest>> {
        Some(s.decided.iter().map(|(&index, c)| EntryDigest { index, term: 0, command: c.id }).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::Op;

    fn ct(n: usize) -> ChandraToueg {
        ChandraToueg::new(CtConfig::new(n))
    }

    fn cmd(seq: u32) -> Command {
        Command { id: CommandId::client(ClientId(0), seq), op: Op::Put { key: seq, bytes: 10 } }
    }

    fn sent(out: &Actions) -> Vec<(Option<NodeId>, CtMessage)> {
        out.iter()
            .filter_map(|a| match a {
                Action::Send { to, msg } => Some((Some(*to), msg.clone())),
                Action::Broadcast { msg } => Some((None, msg.clone())),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn coordinator_rotates() {
        assert_eq!(coordinator_of(1, 4), NodeId(2));
        assert_eq!(coordinator_of(4, 4), NodeId(1));
        assert_eq!(coordinator_of(0, 4), NodeId(1));
        let mut counts = BTreeMap::new();
        for r in 0..16 {
            *counts.entry(coordinator_of(r, 4)).or_insert(0) += 1;
        }
        assert!(counts.values().all(|&c| c == 4));
    }

    #[test]
    fn most_recent_timestamp_wins_then_lowest_sender() {
        let (a, b, c) = (cmd(1), cmd(2), cmd(3));
        let picked = collect([(NodeId(1), Some(0), &a), (NodeId(2), Some(2), &b), (NodeId(3), Some(1), &c)]);
        assert_eq!(picked.map(|p| p.1), Some(&b));
        let ties = collect([(NodeId(2), None, &b), (NodeId(3), None, &c), (NodeId(4), None, &a)]);
        assert_eq!(ties.map(|p| p.0), Some(NodeId(2)));
        // Adoption in round 0 beats never having adopted.
        let round0 = collect([(NodeId(1), None, &a), (NodeId(2), Some(0), &b)]);
        assert_eq!(round0.map(|p| p.1), Some(&b));
    }

    #[test]
    fn fresh_instance_sends_input_with_no_timestamp() {
        let p = ct(4);
        let mut s = p.init(NodeId(3));
        let (s2, out) = p.step(s.clone(), ProtocolEvent::ClientRequest { client: ClientId(0), command: cmd(1) });
        assert!(sent(&out).iter().any(|m| matches!(m, (Some(NodeId(1)), CtMessage::Estimate { round: 0, timestamp: None, preference, .. }) if *preference == cmd(1))));
        s = s2;
        assert!(s.engaged);
    }

    #[test]
    fn adopting_sets_timestamp_to_the_round() {
        let p = ct(4);
        let mut s = p.init(NodeId(3));
        s.round = 3;
        s.engaged = true;
        s.preference = Some(cmd(1));
        let mut out = Vec::new();
        p.on_propose(&mut s, coordinator_of(3, 4), 1, 3, cmd(2), &mut out);
        assert_eq!(s.timestamp, Some(3));
        assert_eq!(s.round, 4);
        let msgs = sent(&out);
        assert!(msgs.iter().any(|m| matches!(m, (Some(NodeId(4)), CtMessage::Ack { round: 3, .. }))));
        assert!(msgs.iter().any(|m| matches!(m, (Some(NodeId(1)), CtMessage::Estimate { round: 4, timestamp: Some(3), .. }))));
    }

    #[test]
    fn single_node_decides_its_input() {
        let p = ct(1);
        let s = p.init(NodeId(1));
        let (s, out) = p.step(s, ProtocolEvent::ClientRequest { client: ClientId(0), command: cmd(5) });
        assert_eq!(s.decided.get(&1), Some(&cmd(5)));
        assert!(out.iter().any(|a| matches!(a, Action::Respond { reply: Reply::Ok { .. }, .. })));
    }

    #[test]
    fn suspected_coordinator_gets_a_nack() {
        let p = ct(4);
        let mut s = p.init(NodeId(2));
        let mut out = Vec::new();
        p.on_client_request(&mut s, ClientId(0), cmd(1), &mut out);
        for _ in 0..=CtConfig::new(4).suspect_after_ticks {
            out.clear();
            p.on_tick(&mut s, &mut out);
        }
        assert!(sent(&out).iter().any(|m| matches!(m, (Some(NodeId(1)), CtMessage::Nack { round: 0, .. }))));
        assert_eq!(s.round, 1);
        // Late proposal for round 0 is ignored.
        let before = (s.preference.clone(), s.timestamp);
        out.clear();
        p.on_propose(&mut s, NodeId(1), 1, 0, cmd(9), &mut out);
        assert_eq!((s.preference.clone(), s.timestamp), before);
    }

    #[test]
    fn false_suspicion_doubles_the_timeout() {
        let config = CtConfig::new(3);
        let mut d = Detector::new(NodeId(1), &config);
        for _ in 0..=config.suspect_after_ticks {
            d.tick();
        }
        assert!(d.suspected.contains(&NodeId(2)));
        d.heard(NodeId(2), 128);
        assert!(!d.suspected.contains(&NodeId(2)));
        assert_eq!(d.suspect_after[&NodeId(2)], 16);
        assert_eq!(d.suspect_after[&NodeId(3)], 8);
    }

    fn coordinator_with_proposal(p: &ChandraToueg, n: usize) -> CtState {
        let mut s = p.init(NodeId(1));
        let mut out = Vec::new();
        p.on_client_request(&mut s, ClientId(0), cmd(1), &mut out);
        for peer in 2..=majority(n) as u32 {
            p.on_estimate(&mut s, NodeId(peer), 1, 0, cmd(1), None, &mut out);
        }
        assert!(s.coord.as_ref().unwrap().proposal.is_some());
        s
    }

    #[test]
    fn three_acks_of_four_decide() {
        let p = ct(4);
        let mut s = coordinator_with_proposal(&p, 4);
        let mut out = Vec::new();
        p.on_ack(&mut s, NodeId(2), 1, 0, &mut out);
        assert!(s.decided.is_empty());
        p.on_ack(&mut s, NodeId(3), 1, 0, &mut out);
        assert_eq!(s.decided.get(&1), Some(&cmd(1)));
        assert!(sent(&out).iter().any(|m| matches!(m, (None, CtMessage::Decide { instance: 1, .. }))));
    }

    #[test]
    fn two_acks_two_nacks_do_not_decide() {
        let p = ct(4);
        let mut s = coordinator_with_proposal(&p, 4);
        let mut out = Vec::new();
        p.on_ack(&mut s, NodeId(2), 1, 0, &mut out);
        p.on_nack(&mut s, NodeId(3), 1, 0);
        p.on_nack(&mut s, NodeId(4), 1, 0);
        assert!(s.decided.is_empty());
    }

    #[test]
    fn decision_is_rebroadcast_once() {
        let p = ct(3);
        let s = p.init(NodeId(2));
        let (s, out) = p.step(s, ProtocolEvent::Message { from: NodeId(1), msg: CtMessage::Decide { instance: 1, value: cmd(1) } });
        assert_eq!(sent(&out).iter().filter(|m| matches!(m, (None, CtMessage::Decide { .. }))).count(), 1);
        let (_, out) = p.step(s, ProtocolEvent::Message { from: NodeId(3), msg: CtMessage::Decide { instance: 1, value: cmd(1) } });
        assert!(sent(&out).is_empty());
    }

    #[test]
    fn simulated_cluster_completes_with_a_crashed_coordinator() {
        use crate::bench::WorkloadSpec;
        use crate::sim::{run, CrashSpec, CrashTarget, FaultPlan, SimConfig};
        let faults = FaultPlan { crashes: vec![CrashSpec { target: CrashTarget::Node(NodeId(1)), at: SimTime::from_millis(30), restart_at: None }], partitions: vec![] };
        let out = run(ct(4), SimConfig::new(4, 3), faults, WorkloadSpec { op_count: 100, mix: 0.5, ..WorkloadSpec::default() }).unwrap();
        assert!(!out.outcome.livelock, "{:?}", out.outcome);
        assert_eq!(out.outcome.completed, 100);
    }
}
