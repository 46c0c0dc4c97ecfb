//! Raft: randomized-timeout leader election, heartbeat failure detection,
//! log replication with majority commit.
//!
//! Only servers whose logs are at least as up to date as a majority can win
//! an election, so a new leader already holds every committed entry and
//! never has to learn history from its followers.
//!
//! Reads are served by the leader without logging: the read waits for the
//! commit index observed on arrival to be applied and for a majority to
//! acknowledge a heartbeat round sent after the read arrived.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::consensus::{
    majority, Action, ClientId, Command, CommandId, Delay, Durability, EntryDigest, LogEntry, OpClass, Protocol, ProtocolEvent, Replica, Reply, Role, Timer,
    WireSize, HEADER_BYTES,
};
use crate::sim::{NodeId, SimTime};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaftConfig {
    pub nodes: usize,
    pub election_min_ms: u64,
    pub election_max_ms: u64,
    pub heartbeat_ms: u64,
    /// Maximum entries per AppendEntries.
    pub max_batch: usize,
}

impl RaftConfig {
    pub fn new(nodes: usize) -> Self {
        RaftConfig { nodes, election_min_ms: 150, election_max_ms: 300, heartbeat_ms: 50, max_batch: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RaftMessage {
    RequestVote { term: u64, last_index: u64, last_term: u64 },
    Vote { term: u64, granted: bool },
    AppendEntries { term: u64, prev_index: u64, prev_term: u64, entries: Vec<LogEntry>, leader_commit: u64, round: u64 },
    /// `match_index` is the last matching index on success and a backoff
    /// hint (the follower's usable log end) on failure.
    AppendResp { term: u64, success: bool, match_index: u64, round: u64 },
}

impl WireSize for RaftMessage {
    fn wire_size(&self) -> u32 {
        HEADER_BYTES
            + match self {
                RaftMessage::RequestVote { .. } => 24,
                RaftMessage::Vote { .. } => 9,
                RaftMessage::AppendEntries { entries, .. } => 40 + entries.iter().map(LogEntry::wire_size).sum::<u32>(),
                RaftMessage::AppendResp { .. } => 25,
            }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeerProgress {
    pub next_index: u64,
    pub match_index: u64,
    /// Highest heartbeat round this peer acknowledged in the current term.
    pub acked_round: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingRead {
    pub client: ClientId,
    pub command: Command,
    pub read_index: u64,
    pub round: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RaftState {
    pub id: NodeId,
    pub current_term: u64,
    pub voted_for: Option<NodeId>,
    pub log: Vec<LogEntry>,
    pub commit_index: u64,
    pub last_applied: u64,
    pub role: Role,
    pub leader_hint: Option<NodeId>,
    pub peers: BTreeMap<NodeId, PeerProgress>,
    pub votes_received: BTreeSet<NodeId>,
    pub replica: Replica,
    pub pending_writes: BTreeMap<u64, (ClientId, CommandId)>,
    pub pending_reads: Vec<PendingRead>,
    /// Heartbeat rounds broadcast in the current term.
    pub round: u64,
}

/// Survives a crash: term, vote, log, and the applied state machine with
/// its `last_applied` watermark.
#[derive(Clone, Debug, PartialEq)]
pub struct RaftDurable {
    pub current_term: u64,
    pub voted_for: Option<NodeId>,
    pub log: Vec<LogEntry>,
    pub last_applied: u64,
    pub replica: Replica,
}

impl RaftState {
    pub fn new(id: NodeId) -> Self {
        RaftState {
            id,
            current_term: 0,
            voted_for: None,
            log: Vec::new(),
            commit_index: 0,
            last_applied: 0,
            role: Role::Follower,
            leader_hint: None,
            peers: BTreeMap::new(),
            votes_received: BTreeSet::new(),
            replica: Replica::new(),
            pending_writes: BTreeMap::new(),
            pending_reads: Vec::new(),
            round: 0,
        }
    }

    pub fn last_index(&self) -> u64 {
        self.log.len() as u64
    }

    pub fn last_term(&self) -> u64 {
        self.log.last().map_or(0, |e| e.term)
    }

    pub fn term_at(&self, index: u64) -> Option<u64> {
        match index {
            0 => Some(0),
            i => self.log.get(i as usize - 1).map(|e| e.term),
        }
    }

    /// Raft's up-to-date rule: higher last term wins, equal last terms
    /// compare by length.
    pub fn candidate_is_up_to_date(&self, last_index: u64, last_term: u64) -> bool {
        last_term > self.last_term() || (last_term == self.last_term() && last_index >= self.last_index())
    }
}

#[derive(Clone, Debug)]
pub struct Raft {
    pub config: RaftConfig,
}

type Actions = Vec<Action<RaftMessage>>;

impl Raft {
    pub fn new(config: RaftConfig) -> Self {
        Raft { config }
    }

    fn quorum(&self) -> usize {
        majority(self.config.nodes)
    }

    fn election_delay(&self) -> Delay {
        Delay::Uniform { min: SimTime::from_millis(self.config.election_min_ms), max: SimTime::from_millis(self.config.election_max_ms) }
    }

    fn reset_election(&self, out: &mut Actions) {
        out.push(Action::SetTimer { timer: Timer::Election, delay: self.election_delay() });
    }

    fn peers_of(&self, id: NodeId) -> impl Iterator<Item = NodeId> {
        NodeId::all(self.config.nodes).filter(move |p| *p != id)
    }

    pub fn on_election_timeout(&self, s: &mut RaftState, out: &mut Actions) {
        if s.role == Role::Leader {
            return;
        }
        s.current_term += 1;
        s.role = Role::Candidate;
        s.voted_for = Some(s.id);
        s.leader_hint = None;
        s.votes_received = BTreeSet::from([s.id]);
        out.push(Action::Persist(Durability::Term));
        out.push(Action::Broadcast { msg: RaftMessage::RequestVote { term: s.current_term, last_index: s.last_index(), last_term: s.last_term() } });
        self.reset_election(out);
        if s.votes_received.len() >= self.quorum() {
            self.on_majority_votes(s, out);
        }
    }

    fn step_down(&self, s: &mut RaftState, term: u64, out: &mut Actions) {
        if term > s.current_term {
            s.current_term = term;
            s.voted_for = None;
            out.push(Action::Persist(Durability::Term));
        }
        if s.role == Role::Leader {
            out.push(Action::CancelTimer { timer: Timer::Heartbeat });
            self.reset_election(out);
            for (_, (client, command)) in std::mem::take(&mut s.pending_writes) {
                out.push(Action::Respond { client, command, reply: Reply::NotLeader { hint: None } });
            }
            for r in std::mem::take(&mut s.pending_reads) {
                out.push(Action::Respond { client: r.client, command: r.command.id, reply: Reply::NotLeader { hint: None } });
            }
        }
        s.role = Role::Follower;
        s.votes_received.clear();
    }

    /// Returns whether the vote was granted.
    pub fn on_vote_request(&self, s: &mut RaftState, candidate: NodeId, term: u64, last_index: u64, last_term: u64, out: &mut Actions) -> bool {
        if term > s.current_term {
            self.step_down(s, term, out);
            s.leader_hint = None;
        }
        let free = s.voted_for.is_none() || s.voted_for == Some(candidate);
        let granted = term == s.current_term && free && s.candidate_is_up_to_date(last_index, last_term);
        if granted {
            s.voted_for = Some(candidate);
            out.push(Action::Persist(Durability::Vote));
            self.reset_election(out);
        }
        out.push(Action::Send { to: candidate, msg: RaftMessage::Vote { term: s.current_term, granted } });
        granted
    }

    fn on_vote(&self, s: &mut RaftState, from: NodeId, term: u64, granted: bool, out: &mut Actions) {
        if term > s.current_term {
            self.step_down(s, term, out);
            return;
        }
        if s.role != Role::Candidate || term != s.current_term || !granted {
            return;
        }
        s.votes_received.insert(from);
        if s.votes_received.len() >= self.quorum() {
            self.on_majority_votes(s, out);
        }
    }

    pub fn on_majority_votes(&self, s: &mut RaftState, out: &mut Actions) {
        if s.role != Role::Candidate || s.votes_received.len() < self.quorum() {
            return;
        }
        s.role = Role::Leader;
        s.leader_hint = Some(s.id);
        s.round = 0;
        let next = s.last_index() + 1;
        s.peers = self.peers_of(s.id).map(|p| (p, PeerProgress { next_index: next, match_index: 0, acked_round: 0 })).collect();
        out.push(Action::BecameLeader { epoch: s.current_term, log: s.log.iter().map(LogEntry::digest).collect() });
        out.push(Action::CancelTimer { timer: Timer::Election });
        // A current-term entry lets the leader commit (and read) promptly.
        let index = next;
        s.log.push(LogEntry { term: s.current_term, index, command: Command::noop(s.current_term, s.id) });
        out.push(Action::Persist(Durability::Log));
        self.broadcast_append(s, out);
        out.push(Action::SetTimer { timer: Timer::Heartbeat, delay: Delay::Fixed(SimTime::from_millis(self.config.heartbeat_ms)) });
        self.advance_commit(s, out);
    }

    fn append_for(&self, s: &RaftState, peer: NodeId) -> RaftMessage {
        let p = s.peers[&peer];
        let prev_index = p.next_index.saturating_sub(1).min(s.last_index());
        let start = prev_index as usize;
        let end = (start + self.config.max_batch).min(s.log.len());
        RaftMessage::AppendEntries {
            term: s.current_term,
            prev_index,
            prev_term: s.term_at(prev_index).unwrap_or(0),
            entries: s.log[start..end].to_vec(),
            leader_commit: s.commit_index,
            round: s.round,
        }
    }

    fn send_append(&self, s: &mut RaftState, peer: NodeId, out: &mut Actions) {
        let msg = self.append_for(s, peer);
        if let RaftMessage::AppendEntries { prev_index, entries, .. } = &msg {
            // Optimistic pipelining; a nack rewinds next_index.
            let sent_to = prev_index + entries.len() as u64;
            let p = s.peers.get_mut(&peer).expect("known peer");
            p.next_index = p.next_index.max(sent_to + 1);
        }
        out.push(Action::Send { to: peer, msg });
    }

    fn broadcast_append(&self, s: &mut RaftState, out: &mut Actions) {
        s.round += 1;
        for peer in self.peers_of(s.id).collect::<Vec<_>>() {
            self.send_append(s, peer, out);
        }
    }

    /// Follower side of replication. Returns `(success, match_or_hint)`.
    #[allow(clippy::too_many_arguments)]
    pub fn on_append_entries(
        &self,
        s: &mut RaftState,
        leader: NodeId,
        term: u64,
        prev_index: u64,
        prev_term: u64,
        entries: Vec<LogEntry>,
        leader_commit: u64,
        round: u64,
        out: &mut Actions,
    ) -> (bool, u64) {
        if term < s.current_term {
            out.push(Action::Send { to: leader, msg: RaftMessage::AppendResp { term: s.current_term, success: false, match_index: 0, round } });
            return (false, 0);
        }
        if term > s.current_term || s.role != Role::Follower {
            self.step_down(s, term, out);
        }
        s.leader_hint = Some(leader);
        self.reset_election(out);
        if s.term_at(prev_index) != Some(prev_term) {
            let hint = s.last_index().min(prev_index.saturating_sub(1)).max(s.commit_index);
            out.push(Action::Send { to: leader, msg: RaftMessage::AppendResp { term: s.current_term, success: false, match_index: hint, round } });
            return (false, hint);
        }
        let mut changed = false;
        for entry in entries.iter() {
            match s.term_at(entry.index) {
                Some(t) if t == entry.term => {}
                Some(_) => {
                    debug_assert!(entry.index > s.commit_index, "leader overwrote a committed entry");
                    s.log.truncate(entry.index as usize - 1);
                    s.log.push(entry.clone());
                    changed = true;
                }
                None => {
                    s.log.push(entry.clone());
                    changed = true;
                }
            }
        }
        if changed {
            out.push(Action::Persist(Durability::Log));
        }
        let matched = prev_index + entries.len() as u64;
        if leader_commit > s.commit_index {
            let new_commit = leader_commit.min(matched);
            if new_commit > s.commit_index {
                s.commit_index = new_commit;
                self.apply_committed(s, out);
            }
        }
        out.push(Action::Send { to: leader, msg: RaftMessage::AppendResp { term: s.current_term, success: true, match_index: matched, round } });
        (true, matched)
    }

    #[allow(clippy::too_many_arguments)]
    fn on_append_resp(&self, s: &mut RaftState, from: NodeId, term: u64, success: bool, match_index: u64, round: u64, out: &mut Actions) {
        if term > s.current_term {
            self.step_down(s, term, out);
            s.leader_hint = None;
            return;
        }
        if s.role != Role::Leader || term != s.current_term {
            return;
        }
        let last = s.last_index();
        let Some(p) = s.peers.get_mut(&from) else { return };
        p.acked_round = p.acked_round.max(round);
        if success {
            p.match_index = p.match_index.max(match_index);
            p.next_index = p.next_index.max(p.match_index + 1);
            let behind = p.match_index < last && match_index >= p.match_index;
            self.advance_commit(s, out);
            if behind && s.peers[&from].next_index <= s.last_index() {
                self.send_append(s, from, out);
            }
        } else {
            p.next_index = (p.next_index.saturating_sub(1)).min(match_index + 1).max(p.match_index + 1).max(1);
            self.send_append(s, from, out);
        }
        self.serve_reads(s, out);
    }

    /// Leader commit rule: the highest index stored on a majority whose
    /// entry is from the current term.
    pub fn advance_commit(&self, s: &mut RaftState, out: &mut Actions) {
        if s.role != Role::Leader {
            return;
        }
        let mut target = s.commit_index;
        for n in (s.commit_index + 1..=s.last_index()).rev() {
            if s.term_at(n) != Some(s.current_term) {
                break;
            }
            let replicas = 1 + s.peers.values().filter(|p| p.match_index >= n).count();
            if replicas >= self.quorum() {
                target = n;
                break;
            }
        }
        if target > s.commit_index {
            s.commit_index = target;
            self.apply_committed(s, out);
        }
        self.serve_reads(s, out);
    }

    fn apply_committed(&self, s: &mut RaftState, out: &mut Actions) {
        while s.last_applied < s.commit_index {
            s.last_applied += 1;
            let entry = s.log[s.last_applied as usize - 1].clone();
            out.push(Action::Decide { slot: entry.index, command: entry.command.clone() });
            let (result, note) = s.replica.execute(&entry.command);
            if let Some(note) = note {
                out.push(Action::Note(note));
            }
            out.push(Action::Apply { index: entry.index, command: entry.command.clone(), result: result.clone() });
            if let Some((client, command)) = s.pending_writes.remove(&entry.index) {
                let result = s.replica.result_of(command).cloned().unwrap_or(result);
                out.push(Action::Respond { client, command, reply: Reply::Ok { result } });
            }
        }
    }

    fn serve_reads(&self, s: &mut RaftState, out: &mut Actions) {
        if s.role != Role::Leader || s.pending_reads.is_empty() {
            return;
        }
        // Until an entry of this term commits, the commit index may be stale.
        if s.term_at(s.commit_index) != Some(s.current_term) {
            return;
        }
        let quorum = self.quorum();
        let acked = |round: u64| 1 + s.peers.values().filter(|p| p.acked_round >= round).count() >= quorum;
        let (ready, waiting): (Vec<_>, Vec<_>) =
            std::mem::take(&mut s.pending_reads).into_iter().partition(|r| acked(r.round) && s.last_applied >= r.read_index);
        s.pending_reads = waiting;
        for r in ready {
            let result = s.replica.read(&r.command);
            out.push(Action::Respond { client: r.client, command: r.command.id, reply: Reply::Ok { result } });
        }
        // Reads that arrived after the latest round need one more.
        if s.pending_reads.iter().any(|r| r.round > s.round) {
            self.broadcast_append(s, out);
        }
    }

    fn on_client_request(&self, s: &mut RaftState, client: ClientId, command: Command, out: &mut Actions) {
        if s.role != Role::Leader {
            let hint = s.leader_hint.filter(|h| *h != s.id);
            out.push(Action::Respond { client, command: command.id, reply: Reply::NotLeader { hint } });
            return;
        }
        if let Some(result) = s.replica.result_of(command.id) {
            out.push(Action::Respond { client, command: command.id, reply: Reply::Ok { result: result.clone() } });
            return;
        }
        match command.class() {
            OpClass::Read => {
                let outstanding = s.pending_reads.iter().any(|r| r.round > s.round);
                s.pending_reads.push(PendingRead { client, read_index: s.commit_index, round: s.round + 1, command });
                if self.quorum() == 1 {
                    s.round += 1;
                    self.serve_reads(s, out);
                } else if !outstanding {
                    self.broadcast_append(s, out);
                }
            }
            OpClass::Write => {
                let index = s.last_index() + 1;
                let id = command.id;
                s.log.push(LogEntry { term: s.current_term, index, command });
                s.pending_writes.insert(index, (client, id));
                out.push(Action::Persist(Durability::Log));
                for peer in self.peers_of(s.id).collect::<Vec<_>>() {
                    if s.peers[&peer].next_index == index {
                        self.send_append(s, peer, out);
                    }
                }
                self.advance_commit(s, out);
            }
        }
    }
}

impl Protocol for Raft {
    type State = RaftState;
    type Message = RaftMessage;
    type Durable = RaftDurable;

    fn name(&self) -> &'static str {
        "raft"
    }

    fn cluster_size(&self) -> usize {
        self.config.nodes
    }

    fn init(&self, id: NodeId) -> RaftState {
        RaftState::new(id)
    }

    fn step(&self, mut s: RaftState, event: ProtocolEvent<RaftMessage>) -> (RaftState, Actions) {
        let mut out = Vec::new();
        match event {
            ProtocolEvent::Start => self.reset_election(&mut out),
            ProtocolEvent::Timer(Timer::Election) => self.on_election_timeout(&mut s, &mut out),
            ProtocolEvent::Timer(Timer::Heartbeat) => {
                if s.role == Role::Leader {
                    self.broadcast_append(&mut s, &mut out);
                    out.push(Action::SetTimer { timer: Timer::Heartbeat, delay: Delay::Fixed(SimTime::from_millis(self.config.heartbeat_ms)) });
                }
            }
            ProtocolEvent::Timer(_) => {}
            ProtocolEvent::Message { from, msg } => match msg {
                RaftMessage::RequestVote { term, last_index, last_term } => {
                    self.on_vote_request(&mut s, from, term, last_index, last_term, &mut out);
                }
                RaftMessage::Vote { term, granted } => self.on_vote(&mut s, from, term, granted, &mut out),
                RaftMessage::AppendEntries { term, prev_index, prev_term, entries, leader_commit, round } => {
                    self.on_append_entries(&mut s, from, term, prev_index, prev_term, entries, leader_commit, round, &mut out);
                }
                RaftMessage::AppendResp { term, success, match_index, round } => {
                    self.on_append_resp(&mut s, from, term, success, match_index, round, &mut out)
                }
            },
            ProtocolEvent::ClientRequest { client, command } => self.on_client_request(&mut s, client, command, &mut out),
        }
        (s, out)
    }

    fn durable(&self, s: &RaftState) -> RaftDurable {
        RaftDurable {
            current_term: s.current_term,
            voted_for: s.voted_for,
            log: s.log.clone(),
            last_applied: s.last_applied,
            replica: s.replica.clone(),
        }
    }

    fn recover(&self, id: NodeId, d: RaftDurable) -> RaftState {
        RaftState {
            current_term: d.current_term,
            voted_for: d.voted_for,
            log: d.log,
            commit_index: d.last_applied,
            last_applied: d.last_applied,
            replica: d.replica,
            ..RaftState::new(id)
        }
    }

    fn leader_epoch(&self, s: &RaftState) -> Option<u64> {
        (s.role == Role::Leader).then_some(s.current_term)
    }

    fn progress(&self, s: &RaftState) -> u64 {
        s.replica.applied()
    }

    fn final_log(&self, s: &RaftState) -> Option<Vec<EntryDigest>> {
        Some(s.log.iter().map(LogEntry::digest).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::Op;

    fn raft(n: usize) -> Raft {
        Raft::new(RaftConfig::new(n))
    }

    fn entry(index: u64, term: u64) -> LogEntry {
        LogEntry { term, index, command: Command { id: CommandId::client(ClientId(0), index as u32), op: Op::Put { key: 1, bytes: 1 } } }
    }

    fn with_log(id: u32, terms: &[u64]) -> RaftState {
        let mut s = RaftState::new(NodeId(id));
        s.log = terms.iter().enumerate().map(|(i, t)| entry(i as u64 + 1, *t)).collect();
        s.current_term = terms.last().copied().unwrap_or(0);
        s
    }

    fn sends(out: &Actions) -> Vec<&RaftMessage> {
        out.iter()
            .filter_map(|a| match a {
                Action::Send { msg, .. } | Action::Broadcast { msg } => Some(msg),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn follower_times_out_into_candidacy() {
        let r = raft(4);
        let mut s = RaftState::new(NodeId(1));
        s.current_term = 1;
        let (s, out) = r.step(s, ProtocolEvent::Timer(Timer::Election));
        assert_eq!(s.role, Role::Candidate);
        assert_eq!(s.current_term, 2);
        assert_eq!(s.voted_for, Some(NodeId(1)));
        assert!(matches!(sends(&out)[..], [RaftMessage::RequestVote { term: 2, .. }]));
        assert!(out.iter().any(|a| matches!(a, Action::SetTimer { timer: Timer::Election, delay: Delay::Uniform { .. } })));
    }

    #[test]
    fn leader_ignores_election_timeout() {
        let r = raft(4);
        let mut s = RaftState::new(NodeId(1));
        s.role = Role::Leader;
        s.current_term = 3;
        let before = s.clone();
        let (s, out) = r.step(s, ProtocolEvent::Timer(Timer::Election));
        assert_eq!(s, before);
        assert!(out.is_empty());
    }

    #[test]
    fn vote_denied_when_candidate_last_term_is_older() {
        let r = raft(3);
        let mut voter = with_log(1, &[1, 2]);
        let mut out = Vec::new();
        assert!(!r.on_vote_request(&mut voter, NodeId(2), 3, 3, 1, &mut out));
        assert_eq!(voter.voted_for, None);
    }

    #[test]
    fn vote_granted_on_equal_logs() {
        let r = raft(3);
        let mut voter = with_log(1, &[1, 2]);
        let mut out = Vec::new();
        assert!(r.on_vote_request(&mut voter, NodeId(2), 2, 2, 2, &mut out));
        assert_eq!(voter.voted_for, Some(NodeId(2)));
        // Only one vote per term.
        assert!(!r.on_vote_request(&mut voter, NodeId(3), 2, 5, 2, &mut out));
    }

    #[test]
    fn becomes_leader_on_majority_of_four() {
        let r = raft(4);
        let mut s = with_log(1, &[1]);
        s.role = Role::Candidate;
        s.votes_received = [NodeId(1), NodeId(2)].into();
        let mut out = Vec::new();
        let term = s.current_term;
        r.on_vote(&mut s, NodeId(3), term, false, &mut out);
        r.on_majority_votes(&mut s, &mut out);
        assert_eq!(s.role, Role::Candidate, "2 votes of 4 is not a majority");
        r.on_vote(&mut s, NodeId(3), term, true, &mut out);
        assert_eq!(s.role, Role::Leader);
        // next_index starts at old log length + 1, so the first append
        // carries prev_index 1 and the leader's fresh no-op.
        let appends: Vec<_> = sends(&out).into_iter().filter(|m| matches!(m, RaftMessage::AppendEntries { .. })).collect();
        assert_eq!(appends.len(), 3);
        assert!(appends.iter().all(|m| matches!(m, RaftMessage::AppendEntries { prev_index: 1, entries, .. } if entries.len() == 1)));
    }

    #[test]
    fn heartbeat_with_matching_prev_is_acked() {
        let r = raft(3);
        let mut s = with_log(2, &[1, 1]);
        let mut out = Vec::new();
        let (ok, m) = r.on_append_entries(&mut s, NodeId(1), 1, 2, 1, vec![], 0, 1, &mut out);
        assert!(ok);
        assert_eq!(m, 2);
        assert!(out.iter().any(|a| matches!(a, Action::SetTimer { timer: Timer::Election, .. })));
    }

    #[test]
    fn mismatched_prev_is_rejected_without_touching_the_log() {
        let r = raft(3);
        let mut s = with_log(2, &[1, 1, 1, 1, 1]);
        let before = s.log.clone();
        let mut out = Vec::new();
        let (ok, _) = r.on_append_entries(&mut s, NodeId(1), 2, 5, 2, vec![entry(6, 2)], 0, 1, &mut out);
        assert!(!ok);
        assert_eq!(s.log, before);
    }

    #[test]
    fn stale_leader_is_told_the_newer_term_and_steps_down() {
        let r = raft(3);
        let mut follower = with_log(2, &[1]);
        follower.current_term = 4;
        let mut out = Vec::new();
        r.on_append_entries(&mut follower, NodeId(1), 3, 1, 1, vec![], 0, 1, &mut out);
        assert!(matches!(sends(&out)[..], [RaftMessage::AppendResp { term: 4, success: false, .. }]));
        let mut leader = with_log(1, &[1]);
        leader.current_term = 3;
        leader.role = Role::Leader;
        let (leader, _) = r.step(leader, ProtocolEvent::Message { from: NodeId(2), msg: RaftMessage::AppendResp { term: 4, success: false, match_index: 0, round: 1 } });
        assert_eq!(leader.role, Role::Follower);
        assert_eq!(leader.current_term, 4);
    }

    fn leader_with_matches(terms: &[u64], term: u64, matches: &[u64]) -> RaftState {
        let mut s = with_log(5, terms);
        s.current_term = term;
        s.role = Role::Leader;
        s.peers = matches
            .iter()
            .enumerate()
            .map(|(i, m)| (NodeId(i as u32 + 1), PeerProgress { next_index: m + 1, match_index: *m, acked_round: 0 }))
            .collect();
        s
    }

    #[test]
    fn commit_advances_to_majority_match_in_current_term() {
        let r = raft(5);
        let mut s = leader_with_matches(&[1, 1, 2, 2, 2], 2, &[5, 5, 3, 2]);
        let mut out = Vec::new();
        r.advance_commit(&mut s, &mut out);
        assert_eq!(s.commit_index, 5);
        let applied: Vec<u64> = out.iter().filter_map(|a| if let Action::Apply { index, .. } = a { Some(*index) } else { None }).collect();
        assert_eq!(applied, [1, 2, 3, 4, 5]);
    }

    /// The classic unsafe case: an entry from an older term replicated on a
    /// majority must not be committed by counting replicas alone.
    #[test]
    fn old_term_majority_does_not_commit() {
        let r = raft(5);
        let mut s = leader_with_matches(&[1, 2], 4, &[2, 2, 0, 0]);
        let mut out = Vec::new();
        r.advance_commit(&mut s, &mut out);
        assert_eq!(s.commit_index, 0);
    }

    #[test]
    fn commit_frozen_without_followers() {
        let r = raft(5);
        let mut s = leader_with_matches(&[3, 3], 3, &[0, 0, 0, 0]);
        let mut out = Vec::new();
        r.advance_commit(&mut s, &mut out);
        assert_eq!(s.commit_index, 0);
    }

    /// Two-node divergence: the follower holds a stale term-1 entry at index
    /// 5; replaying leader/follower exchanges converges the logs.
    #[test]
    fn divergent_follower_converges_to_leader_log() {
        let r = raft(2);
        let mut leader = with_log(1, &[1, 1, 1, 1, 2, 2]);
        leader.current_term = 2;
        leader.role = Role::Leader;
        leader.peers = [(NodeId(2), PeerProgress { next_index: 7, match_index: 0, acked_round: 0 })].into();
        let mut follower = with_log(2, &[1, 1, 1, 1, 1]);
        follower.current_term = 2;
        let mut to_follower = vec![r.append_for(&leader, NodeId(2))];
        for _ in 0..10 {
            let Some(msg) = to_follower.pop() else { break };
            let (f, out) = r.step(follower, ProtocolEvent::Message { from: NodeId(1), msg });
            follower = f;
            for m in sends(&out).into_iter().cloned().collect::<Vec<_>>() {
                let (l, out) = r.step(leader, ProtocolEvent::Message { from: NodeId(2), msg: m });
                leader = l;
                to_follower.extend(sends(&out).into_iter().cloned());
            }
        }
        assert_eq!(follower.log, leader.log);
        assert_eq!(follower.log[4].term, 2);
    }

    #[test]
    fn unrelated_message_leaves_follower_unchanged() {
        let r = raft(3);
        let s = with_log(2, &[1]);
        let before = s.clone();
        let (s, out) = r.step(s.clone(), ProtocolEvent::Message { from: NodeId(3), msg: RaftMessage::AppendResp { term: 1, success: true, match_index: 1, round: 1 } });
        assert_eq!(s, before);
        assert!(out.is_empty());
    }

    #[test]
    fn simulated_cluster_completes_a_mixed_workload() {
        use crate::bench::WorkloadSpec;
        use crate::sim::{run, FaultPlan, SimConfig};
        let workload = WorkloadSpec { op_count: 200, mix: 0.5, ..WorkloadSpec::default() };
        let out = run(raft(3), SimConfig::new(3, 7), FaultPlan::none(), workload).unwrap();
        assert!(!out.outcome.livelock, "{:?}", out.outcome);
        assert_eq!(out.outcome.completed, 200);
    }
}
