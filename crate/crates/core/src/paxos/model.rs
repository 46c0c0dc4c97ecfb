//! Exhaustive interleaving search over a single-slot Paxos instance.
//!
//! Three nodes, two of which propose different values. Every transition
//! either delivers one in-flight message (in any order, with loss modelled
//! by never delivering) or fires the leadership timer at a proposer. The
//! search is a depth-first walk that remembers 64-bit fingerprints of
//! visited world states with the shallowest depth each was reached at.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{Hash, Hasher};

use super::{Paxos, PaxosConfig, PaxosMessage, PaxosState};
use crate::consensus::{Action, ClientId, Command, CommandId, Op, Protocol, ProtocolEvent, Timer};
use crate::sim::NodeId;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct World {
    nodes: Vec<PaxosState>,
    /// (from, to, message), kept sorted so equal multisets hash equally.
    network: Vec<(NodeId, NodeId, PaxosMessage)>,
    timer_fires: Vec<u8>,
    decided: BTreeMap<u64, BTreeSet<CommandId>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Step {
    Deliver { from: NodeId, to: NodeId, msg: PaxosMessage },
    FireLeadership(NodeId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counterexample {
    pub slot: u64,
    pub values: Vec<CommandId>,
    pub steps: Vec<Step>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelCheckReport {
    pub states_explored: u64,
    pub max_depth: usize,
    pub counterexample: Option<Counterexample>,
}

#[derive(Clone, Copy, Debug)]
pub struct ModelCheckParams {
    pub depth: usize,
    /// Extra leadership-timer firings allowed per proposer.
    pub timer_budget: u8,
    pub broken: bool,
}

impl Default for ModelCheckParams {
    fn default() -> Self {
        ModelCheckParams { depth: 12, timer_budget: 1, broken: false }
    }
}

const PROPOSERS: [NodeId; 2] = [NodeId(1), NodeId(2)];

fn value(proposer: NodeId) -> Command {
    Command { id: CommandId::client(ClientId(proposer.0), 1), op: Op::Put { key: 0, bytes: 1 } }
}

struct Checker {
    protocol: Paxos,
    params: ModelCheckParams,
    visited: HashMap<u64, usize>,
    explored: u64,
    trail: Vec<Step>,
    found: Option<Counterexample>,
}

impl Checker {
    /// Steps `node` and returns whether anything observable changed.
    fn apply(&self, world: &mut World, node: NodeId, event: ProtocolEvent<PaxosMessage>) -> bool {
        let i = node.index();
        let before = std::mem::replace(&mut world.nodes[i], PaxosState::new(node));
        let (state, actions) = self.protocol.step(before.clone(), event);
        let changed = state != before || actions.iter().any(|a| matches!(a, Action::Send { .. } | Action::Broadcast { .. } | Action::Decide { .. }));
        world.nodes[i] = state;
        for action in actions {
            match action {
                Action::Send { to, msg } => world.network.push((node, to, msg)),
                Action::Broadcast { msg } => {
                    for to in NodeId::all(world.nodes.len()).filter(|t| *t != node) {
                        world.network.push((node, to, msg.clone()));
                    }
                }
                Action::Decide { slot, command } => {
                    world.decided.entry(slot).or_default().insert(command.id);
                }
                _ => {}
            }
        }
        world.network.sort();
        changed
    }

    fn violation(world: &World) -> Option<(u64, Vec<CommandId>)> {
        world.decided.iter().find(|(_, v)| v.len() > 1).map(|(slot, v)| (*slot, v.iter().copied().collect()))
    }

    fn dfs(&mut self, world: World, depth: usize) {
        if self.found.is_some() {
            return;
        }
        let mut h = DefaultHasher::new();
        world.hash(&mut h);
        match self.visited.get(&h.finish()) {
            Some(&d) if d <= depth => return,
            _ => {
                self.visited.insert(h.finish(), depth);
            }
        }
        self.explored += 1;
        if let Some((slot, values)) = Self::violation(&world) {
            self.found = Some(Counterexample { slot, values, steps: self.trail.clone() });
            return;
        }
        if depth == self.params.depth {
            return;
        }
        let mut seen = BTreeSet::new();
        for k in 0..world.network.len() {
            let (from, to, msg) = world.network[k].clone();
            if !seen.insert((from, to, msg.clone())) {
                continue;
            }
            let mut next = world.clone();
            next.network.remove(k);
            // A delivery that changes nothing leaves a world with fewer
            // options than this one; nothing new can come of it.
            if !self.apply(&mut next, to, ProtocolEvent::Message { from, msg: msg.clone() }) {
                continue;
            }
            self.trail.push(Step::Deliver { from, to, msg });
            self.dfs(next, depth + 1);
            self.trail.pop();
        }
        for (p, proposer) in PROPOSERS.iter().enumerate() {
            if world.timer_fires[p] >= self.params.timer_budget {
                continue;
            }
            let mut next = world.clone();
            next.timer_fires[p] += 1;
            // A fresh campaign needs the timer to find no recent leader.
            next.nodes[proposer.index()].heard = false;
            self.apply(&mut next, *proposer, ProtocolEvent::Timer(Timer::Leadership));
            self.trail.push(Step::FireLeadership(*proposer));
            self.dfs(next, depth + 1);
            self.trail.pop();
        }
    }
}

/// Runs the search. Each proposer starts by booting, campaigning and
/// receiving one client value (A at node 1, B at node 2).
pub fn check_single_slot(params: ModelCheckParams) -> ModelCheckReport {
    let mut config = PaxosConfig::new(3);
    config.unsafe_skip_promise_check = params.broken;
    let protocol = Paxos::new(config);
    let mut checker = Checker { protocol, params, visited: HashMap::new(), explored: 0, trail: Vec::new(), found: None };
    let mut world = World {
        nodes: NodeId::all(3).map(|id| checker.protocol.init(id)).collect(),
        network: Vec::new(),
        timer_fires: vec![0; PROPOSERS.len()],
        decided: BTreeMap::new(),
    };
    for id in NodeId::all(3) {
        checker.apply(&mut world, id, ProtocolEvent::Start);
    }
    for p in PROPOSERS {
        checker.apply(&mut world, p, ProtocolEvent::Timer(Timer::Leadership));
        checker.apply(&mut world, p, ProtocolEvent::ClientRequest { client: ClientId(p.0), command: value(p) });
    }
    checker.dfs(world, 0);
    ModelCheckReport { states_explored: checker.explored, max_depth: params.depth, counterexample: checker.found }
}
