use std::cmp::Reverse;
use std::collections::{BTreeMap, VecDeque};

use rand::Rng;

use super::queue::EventQueue;
use super::rng::{stream, Stream, StreamRng};
use super::trace::{DropReason, TraceEvent, TraceKind};
use super::{CrashTarget, FaultPlan, NodeId, SimConfig, SimError, SimTime};
use crate::bench::{Driver, WorkloadSpec};
use crate::consensus::{Action, AppResult, ClientId, Command, CommandId, Delay, Op, Protocol, ProtocolEvent, Reply, Timer, WireSize};
use crate::queue::QueueCommand;

/// Delay before a client retries when a node answered "not leader" without
/// naming one.
const CLIENT_BACKOFF: SimTime = SimTime::from_millis(20);
/// Delay before a client follows an explicit leader hint.
const CLIENT_REDIRECT: SimTime = SimTime::from_millis(1);

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub end_time: SimTime,
    pub issued: u64,
    pub completed: u64,
    /// Requests still outstanding when the run stopped.
    pub incomplete: Vec<CommandId>,
    /// The virtual-time budget ran out (or the queue drained) with client
    /// operations still pending.
    pub livelock: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutput<M> {
    pub trace: Vec<TraceEvent<M>>,
    pub outcome: RunOutcome,
}

enum Input<M> {
    Start,
    Message { env: u64, src: NodeId, bytes: u32, msg: M },
    Timer { timer: Timer, gen: u64 },
    Request { client: ClientId, command: Command },
}

struct Queued<M> {
    input: Input<M>,
    arrived: SimTime,
}

enum Event<M> {
    /// `incarnation` guards timers and boot against crash/restart; messages
    /// and requests are accepted by any live incarnation.
    Arrive { node: NodeId, incarnation: Option<u64>, input: Input<M> },
    Wake { node: NodeId, incarnation: u64 },
    Crash(usize),
    Restart(usize),
    ClientReply { client: usize, command: CommandId, server: NodeId, reply: Reply },
    ClientTimeout { client: usize, attempt: u32 },
    ClientRetry { client: usize, attempt: u32 },
    Ramp(usize),
}

struct NodeSlot<P: Protocol> {
    state: Option<P::State>,
    durable: Option<P::Durable>,
    incarnation: u64,
    timers: BTreeMap<Timer, u64>,
    busy_until: SimTime,
    inbox: VecDeque<Queued<P::Message>>,
    waking: bool,
    crashed_progress: u64,
}

/// One self-contained simulation world.
pub struct Simulation<P: Protocol> {
    protocol: P,
    config: SimConfig,
    faults: FaultPlan,
    queue: EventQueue<Event<P::Message>>,
    nodes: Vec<NodeSlot<P>>,
    driver: Driver,
    trace: Vec<TraceEvent<P::Message>>,
    latency_rng: StreamRng,
    drop_rng: StreamRng,
    dup_rng: StreamRng,
    timeout_rng: StreamRng,
    client_rng: StreamRng,
    next_env: u64,
    next_timer_gen: u64,
    victims: Vec<Option<NodeId>>,
}

/// Runs one world to completion.
pub fn run<P: Protocol>(protocol: P, config: SimConfig, faults: FaultPlan, workload: WorkloadSpec) -> Result<RunOutput<P::Message>, SimError> {
    Ok(Simulation::new(protocol, config, faults, workload)?.run())
}

impl<P: Protocol> Simulation<P> {
    pub fn new(protocol: P, config: SimConfig, faults: FaultPlan, workload: WorkloadSpec) -> Result<Self, SimError> {
        config.validate()?;
        faults.validate(config.node_count)?;
        workload.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if protocol.cluster_size() != config.node_count {
            return Err(SimError::InvalidConfig(format!(
                "protocol configured for {} nodes, simulator for {}",
                protocol.cluster_size(),
                config.node_count
            )));
        }
        let seed = config.seed;
        let nodes = (0..config.node_count)
            .map(|_| NodeSlot {
                state: None,
                durable: None,
                incarnation: 0,
                timers: BTreeMap::new(),
                busy_until: SimTime::ZERO,
                inbox: VecDeque::new(),
                waking: false,
                crashed_progress: 0,
            })
            .collect();
        let driver = Driver::new(workload, config.node_count, stream(seed, Stream::Workload));
        let victims = vec![None; faults.crashes.len()];
        Ok(Simulation {
            protocol,
            config,
            faults,
            queue: EventQueue::new(),
            nodes,
            driver,
            trace: Vec::new(),
            latency_rng: stream(seed, Stream::Latency),
            drop_rng: stream(seed, Stream::Drops),
            dup_rng: stream(seed, Stream::Duplication),
            timeout_rng: stream(seed, Stream::Timeouts),
            client_rng: stream(seed, Stream::ClientLinks),
            next_env: 0,
            next_timer_gen: 0,
            victims,
        })
    }

    fn schedule(&mut self, at: SimTime, event: Event<P::Message>) {
        self.queue.schedule(at, event).expect("engine never schedules into the past");
    }

    fn log(&mut self, time: SimTime, node: Option<NodeId>, kind: TraceKind<P::Message>) {
        self.trace.push(TraceEvent::new(time, node, kind));
    }

    /// Node an arrival-time drop is attributed to: the sender, unless it has
    /// crashed since, so that crashed nodes stay silent in the trace.
    fn owner(&self, src: NodeId) -> Option<NodeId> {
        self.nodes[src.index()].state.is_some().then_some(src)
    }

    fn slot(&mut self, node: NodeId) -> &mut NodeSlot<P> {
        &mut self.nodes[node.index()]
    }

    pub fn run(mut self) -> RunOutput<P::Message> {
        for id in NodeId::all(self.config.node_count) {
            self.nodes[id.index()].state = Some(self.protocol.init(id));
            self.schedule(SimTime::ZERO, Event::Arrive { node: id, incarnation: Some(0), input: Input::Start });
        }
        for i in 0..self.faults.crashes.len() {
            let at = self.faults.crashes[i].at;
            self.schedule(at, Event::Crash(i));
        }
        let ramp: Vec<SimTime> = self.driver.spec().ramp.iter().map(|s| s.at).collect();
        for (i, at) in ramp.into_iter().enumerate() {
            if at > SimTime::ZERO {
                self.schedule(at, Event::Ramp(i));
            }
        }
        let initial = self.driver.spec().concurrency_at(SimTime::ZERO);
        for idx in 0..initial {
            self.driver.clients[idx].active = true;
            self.issue(idx, SimTime::ZERO);
        }

        let budget = self.config.max_virtual_time;
        let mut end = SimTime::ZERO;
        loop {
            match self.queue.peek_time() {
                None => break,
                Some(t) if t > budget => {
                    end = budget;
                    break;
                }
                _ => {}
            }
            let (now, event) = self.queue.pop().expect("peeked");
            end = now;
            self.handle(now, event);
            if self.queue.peek_time() != Some(now) && self.driver.done() && self.converged() {
                break;
            }
        }

        for id in NodeId::all(self.config.node_count) {
            let log = self.nodes[id.index()].state.as_ref().and_then(|s| self.protocol.final_log(s));
            if let Some(log) = log {
                self.log(end, Some(id), TraceKind::FinalLog { log });
            }
        }
        let incomplete: Vec<CommandId> = self.driver.clients.iter().filter_map(|c| c.inflight.as_ref().map(|f| f.command.id)).collect();
        let outcome = RunOutcome {
            end_time: end,
            issued: self.driver.issued(),
            completed: self.driver.completed(),
            livelock: !self.driver.done(),
            incomplete,
        };
        RunOutput { trace: self.trace, outcome }
    }

    fn converged(&self) -> bool {
        let live: Vec<u64> = self.nodes.iter().filter_map(|n| n.state.as_ref().map(|s| self.protocol.progress(s))).collect();
        let Some(&live_max) = live.iter().max() else {
            return true;
        };
        let target = if self.protocol.progress_is_durable() {
            self.nodes.iter().filter(|n| n.state.is_none()).map(|n| n.crashed_progress).fold(live_max, u64::max)
        } else {
            live_max
        };
        live.iter().all(|&p| p == target)
    }

    fn handle(&mut self, now: SimTime, event: Event<P::Message>) {
        match event {
            Event::Arrive { node, incarnation, input } => self.arrive(now, node, incarnation, input),
            Event::Wake { node, incarnation } => {
                let slot = self.slot(node);
                if slot.incarnation != incarnation || slot.state.is_none() {
                    return;
                }
                slot.waking = false;
                if let Some(q) = slot.inbox.pop_front() {
                    self.process(now, node, q);
                }
                self.ensure_wake(node);
            }
            Event::Crash(i) => self.crash(now, i),
            Event::Restart(i) => self.restart(now, i),
            Event::ClientReply { client, command, server, reply } => self.client_reply(now, client, command, server, reply),
            Event::ClientTimeout { client, attempt } | Event::ClientRetry { client, attempt } => {
                let c = &mut self.driver.clients[client];
                let Some(f) = c.inflight.as_mut() else { return };
                if f.attempt != attempt {
                    return;
                }
                f.attempt += 1;
                if matches!(event, Event::ClientTimeout { .. }) {
                    c.target = next_node(c.target, self.config.node_count);
                }
                self.transmit(client, now);
            }
            Event::Ramp(i) => self.ramp(now, i),
        }
    }

    fn arrive(&mut self, now: SimTime, node: NodeId, incarnation: Option<u64>, input: Input<P::Message>) {
        let alive = self.nodes[node.index()].state.is_some();
        if let Some(inc) = incarnation {
            if !alive || self.nodes[node.index()].incarnation != inc {
                return;
            }
        }
        if let Input::Message { env, src, .. } = &input {
            let (env, src) = (*env, *src);
            if !alive {
                let owner = self.owner(src);
                self.log(now, owner, TraceKind::Drop { env, dst: node, reason: DropReason::DeadNode });
                return;
            }
            if self.faults.blocks(src, node, now) {
                let owner = self.owner(src);
                self.log(now, owner, TraceKind::Drop { env, dst: node, reason: DropReason::Partition });
                return;
            }
        }
        if !alive {
            return;
        }
        let slot = self.slot(node);
        let q = Queued { input, arrived: now };
        if slot.busy_until > now || !slot.inbox.is_empty() {
            slot.inbox.push_back(q);
            self.ensure_wake(node);
        } else {
            self.process(now, node, q);
        }
    }

    fn ensure_wake(&mut self, node: NodeId) {
        let slot = self.slot(node);
        if slot.waking || slot.inbox.is_empty() || slot.state.is_none() {
            return;
        }
        slot.waking = true;
        let (at, inc) = (slot.busy_until, slot.incarnation);
        let at = at.max(self.queue.now());
        self.schedule(at, Event::Wake { node, incarnation: inc });
    }

    fn process(&mut self, now: SimTime, node: NodeId, q: Queued<P::Message>) {
        let wait_us = (now - q.arrived).as_micros();
        let mut env = 0;
        let (event, bytes) = match q.input {
            Input::Start => (ProtocolEvent::Start, 0),
            Input::Timer { timer, gen } => {
                let slot = self.slot(node);
                if slot.timers.get(&timer) != Some(&gen) {
                    return;
                }
                slot.timers.remove(&timer);
                (ProtocolEvent::Timer(timer), 0)
            }
            Input::Message { env: e, bytes, src, msg } => {
                env = e;
                (ProtocolEvent::Message { from: src, msg }, bytes)
            }
            Input::Request { client, command } => {
                let bytes = command.wire_size();
                (ProtocolEvent::ClientRequest { client, command }, bytes)
            }
        };
        let cost = self.config.processing.cost(bytes);
        let cost_us = cost.as_micros();
        let kind = match &event {
            ProtocolEvent::Start => TraceKind::Timer { label: Timer::Boot, wait_us, cost_us },
            ProtocolEvent::Timer(t) => TraceKind::Timer { label: *t, wait_us, cost_us },
            ProtocolEvent::Message { from, msg } => TraceKind::Deliver { env, src: *from, bytes, wait_us, cost_us, msg: msg.clone() },
            ProtocolEvent::ClientRequest { client, command } => {
                TraceKind::Request { client: *client, command: command.clone(), wait_us, cost_us }
            }
        };
        self.log(now, Some(node), kind);
        let state = self.slot(node).state.take().expect("processing a live node");
        let (state, actions) = self.protocol.step(state, event);
        let depart = now + cost;
        let slot = self.slot(node);
        slot.state = Some(state);
        slot.busy_until = depart;
        for action in actions {
            self.act(now, depart, node, action);
        }
    }

    fn act(&mut self, now: SimTime, depart: SimTime, node: NodeId, action: Action<P::Message>) {
        match action {
            Action::Send { to, msg } => self.send(now, depart, node, to, msg),
            Action::Broadcast { msg } => {
                for to in NodeId::all(self.config.node_count).filter(|&to| to != node) {
                    self.send(now, depart, node, to, msg.clone());
                }
            }
            Action::SetTimer { timer, delay } => {
                let delay = match delay {
                    Delay::Fixed(d) => d,
                    Delay::Uniform { min, max } => {
                        if min >= max {
                            min
                        } else {
                            SimTime::from_micros(self.timeout_rng.random_range(min.as_micros()..=max.as_micros()))
                        }
                    }
                };
                self.next_timer_gen += 1;
                let gen = self.next_timer_gen;
                let slot = self.slot(node);
                slot.timers.insert(timer, gen);
                let inc = slot.incarnation;
                self.schedule(depart + delay, Event::Arrive { node, incarnation: Some(inc), input: Input::Timer { timer, gen } });
            }
            Action::CancelTimer { timer } => {
                self.slot(node).timers.remove(&timer);
            }
            Action::Decide { slot, command } => self.log(now, Some(node), TraceKind::Decide { slot, command }),
            Action::Apply { index, command, result } => self.log(now, Some(node), TraceKind::Apply { index, command, result }),
            Action::BecameLeader { epoch, log } => self.log(now, Some(node), TraceKind::Leader { epoch, log }),
            Action::Note(note) => self.log(now, Some(node), TraceKind::Note { note }),
            Action::Persist(_) => {}
            Action::Respond { client, command, reply } => {
                let lat = self.config.latency.sample(&mut self.client_rng);
                let client = client.0 as usize;
                if client < self.driver.clients.len() {
                    self.schedule(depart + lat, Event::ClientReply { client, command, server: node, reply });
                }
            }
        }
    }

    /// One drop draw per send, always taken; latency and duplication draws
    /// only for messages that survive.
    fn send(&mut self, now: SimTime, depart: SimTime, src: NodeId, dst: NodeId, msg: P::Message) {
        let bytes = msg.wire_size();
        let lost = self.drop_rng.random::<f64>() < self.config.drop_probability;
        let blocked = self.faults.blocks(src, dst, now);
        let env = self.next_env;
        self.next_env += 1;
        if lost || blocked {
            self.log(now, Some(src), TraceKind::Send { env, dst, bytes, deliver_at: depart, dup: false, msg });
            let reason = if lost { DropReason::Random } else { DropReason::Partition };
            self.log(now, Some(src), TraceKind::Drop { env, dst, reason });
            return;
        }
        let duplicate = self.dup_rng.random::<f64>() < self.config.duplicate_probability;
        let at = depart + self.config.latency.sample(&mut self.latency_rng);
        self.log(now, Some(src), TraceKind::Send { env, dst, bytes, deliver_at: at, dup: false, msg: msg.clone() });
        if duplicate {
            let dup_env = self.next_env;
            self.next_env += 1;
            let dup_at = depart + self.config.latency.sample(&mut self.latency_rng);
            self.log(now, Some(src), TraceKind::Send { env: dup_env, dst, bytes, deliver_at: dup_at, dup: true, msg: msg.clone() });
            self.schedule(dup_at, Event::Arrive { node: dst, incarnation: None, input: Input::Message { env: dup_env, src, bytes, msg: msg.clone() } });
        }
        self.schedule(at, Event::Arrive { node: dst, incarnation: None, input: Input::Message { env, src, bytes, msg } });
    }

    fn crash(&mut self, now: SimTime, i: usize) {
        let spec = self.faults.crashes[i].clone();
        let victim = match spec.target {
            CrashTarget::Node(id) => Some(id).filter(|id| self.nodes[id.index()].state.is_some()),
            CrashTarget::Leader => NodeId::all(self.config.node_count)
                .filter_map(|id| {
                    let s = self.nodes[id.index()].state.as_ref()?;
                    self.protocol.leader_epoch(s).map(|e| (e, Reverse(id)))
                })
                .max()
                .map(|(_, Reverse(id))| id),
        };
        self.victims[i] = victim;
        let Some(node) = victim else { return };
        let state = self.slot(node).state.take().expect("victim is alive");
        let progress = self.protocol.progress(&state);
        let durable = self.protocol.durable(&state);
        let slot = self.slot(node);
        slot.durable = Some(durable);
        slot.crashed_progress = progress;
        slot.incarnation += 1;
        slot.timers.clear();
        slot.busy_until = now;
        slot.waking = false;
        let lost: Vec<Queued<P::Message>> = slot.inbox.drain(..).collect();
        for q in lost {
            if let Input::Message { env, src, .. } = q.input {
                let owner = self.owner(src);
                self.log(now, owner, TraceKind::Drop { env, dst: node, reason: DropReason::DeadNode });
            }
        }
        self.log(now, Some(node), TraceKind::Crash);
        if let Some(at) = spec.restart_at {
            self.schedule(at, Event::Restart(i));
        }
    }

    fn restart(&mut self, now: SimTime, i: usize) {
        let Some(node) = self.victims[i] else { return };
        let slot = self.slot(node);
        if slot.state.is_some() {
            return;
        }
        let durable = slot.durable.take().expect("crashed node keeps its durable state");
        let state = self.protocol.recover(node, durable);
        let slot = self.slot(node);
        slot.state = Some(state);
        slot.busy_until = now;
        let inc = slot.incarnation;
        self.log(now, Some(node), TraceKind::Restart);
        self.arrive(now, node, Some(inc), Input::Start);
    }

    fn issue(&mut self, idx: usize, now: SimTime) {
        let c = &mut self.driver.clients[idx];
        if c.retiring {
            c.active = false;
            c.retiring = false;
            return;
        }
        let Some(command) = self.driver.next_command(idx, now) else { return };
        let c = &mut self.driver.clients[idx];
        c.inflight = Some(crate::bench::driver::InFlight { command, first_issued: now, attempt: 1, target: c.target });
        self.transmit(idx, now);
    }

    fn transmit(&mut self, idx: usize, now: SimTime) {
        let c = &mut self.driver.clients[idx];
        let f = c.inflight.as_mut().expect("transmitting an in-flight request");
        f.target = c.target;
        let (client, target, attempt, command) = (c.id, c.target, f.attempt, f.command.clone());
        self.log(now, None, TraceKind::ClientReq { client, target, attempt, command: command.clone() });
        let lat = self.config.latency.sample(&mut self.client_rng);
        self.schedule(now + lat, Event::Arrive { node: target, incarnation: None, input: Input::Request { client, command } });
        let timeout = self.driver.spec().client_timeout;
        self.schedule(now + timeout, Event::ClientTimeout { client: idx, attempt });
    }

    fn client_reply(&mut self, now: SimTime, idx: usize, command: CommandId, server: NodeId, reply: Reply) {
        let n = self.config.node_count;
        let c = &mut self.driver.clients[idx];
        let Some(f) = c.inflight.as_ref() else { return };
        if f.command.id != command {
            return;
        }
        match reply {
            Reply::Ok { result } => {
                let f = c.inflight.take().expect("checked above");
                if let (Op::Queue { cmd: QueueCommand::Pop { .. } }, AppResult::Popped { job: Some(job) }) = (&f.command.op, &result) {
                    c.held_job = Some(*job);
                }
                let client = c.id;
                self.driver.mark_completed();
                self.log(
                    now,
                    None,
                    TraceKind::ClientResp {
                        client,
                        command,
                        class: f.command.class(),
                        server,
                        latency_us: (now - f.first_issued).as_micros(),
                        result,
                    },
                );
                self.issue(idx, now);
            }
            Reply::NotLeader { hint } => {
                let attempt = f.attempt;
                let (target, delay) = match hint.filter(|h| *h != server && h.0 >= 1 && h.index() < n) {
                    Some(h) => (h, CLIENT_REDIRECT),
                    None => (next_node(server, n), CLIENT_BACKOFF),
                };
                c.target = target;
                self.schedule(now + delay, Event::ClientRetry { client: idx, attempt });
            }
        }
    }

    fn ramp(&mut self, now: SimTime, i: usize) {
        let target = self.driver.spec().ramp[i].clients;
        let active: Vec<usize> = (0..self.driver.clients.len()).filter(|&k| self.driver.clients[k].active && !self.driver.clients[k].retiring).collect();
        if target > active.len() {
            let mut need = target - active.len();
            for k in 0..self.driver.clients.len() {
                if need == 0 {
                    break;
                }
                let c = &mut self.driver.clients[k];
                if c.active && c.retiring {
                    c.retiring = false;
                    need -= 1;
                } else if !c.active {
                    c.active = true;
                    need -= 1;
                    self.issue(k, now);
                }
            }
        } else {
            for &k in active.iter().rev().take(active.len() - target) {
                let c = &mut self.driver.clients[k];
                if c.inflight.is_some() {
                    c.retiring = true;
                } else {
                    c.active = false;
                }
            }
        }
    }
}

fn next_node(id: NodeId, n: usize) -> NodeId {
    NodeId::from_index(id.index().wrapping_add(1) % n)
}
