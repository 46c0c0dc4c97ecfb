//! Eventually consistent job queue without consensus.
//!
//! Every replica serves pops from its local copy and exchanges its full
//! job and removal sets with the others every `sync_delay`. A worker
//! connected to a replica that has not yet heard about a removal can pop
//! the same job again.
//!
//! Two drivers are provided: [`Baseline`] runs inside the simulator like
//! the consensus protocols, and [`BaselineModel`] replays a hand-written
//! schedule of operations with exact visibility delays.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Job, JobId, QueueCommand};
use crate::consensus::{
    Action, AppResult, ClientId, Command, CommandId, Delay, Op, OpClass, Protocol, ProtocolEvent, Replica, Reply, Timer, WireSize, HEADER_BYTES,
};
use crate::sim::rng::{stream, Stream};
use crate::sim::{NodeId, SimTime, TraceEvent, TraceKind};

/// State-based (join semilattice) queue replica.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BaselineReplica {
    jobs: BTreeMap<(SimTime, JobId), Job>,
    removed: BTreeSet<JobId>,
    completed: BTreeSet<JobId>,
}

impl BaselineReplica {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enqueue(&mut self, job: Job) {
        self.jobs.insert((job.enqueued_at, job.id), job);
    }

    /// Oldest job this replica believes is still queued.
    pub fn pop(&mut self) -> Option<JobId> {
        let id = self.jobs.values().map(|j| j.id).find(|id| !self.removed.contains(id))?;
        self.removed.insert(id);
        Some(id)
    }

    pub fn complete(&mut self, job: JobId) {
        self.completed.insert(job);
    }

    pub fn merge(&mut self, other: &BaselineReplica) {
        self.jobs.extend(other.jobs.iter().map(|(k, v)| (*k, *v)));
        self.removed.extend(other.removed.iter().copied());
        self.completed.extend(other.completed.iter().copied());
    }

    pub fn queued(&self) -> usize {
        self.jobs.values().filter(|j| !self.removed.contains(&j.id)).count()
    }

    /// Size of the merged knowledge; grows monotonically and is equal on
    /// replicas that have converged.
    pub fn knowledge(&self) -> u64 {
        (self.jobs.len() + self.removed.len() + self.completed.len()) as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub nodes: usize,
    /// Anti-entropy period; 0 pushes the full state after every mutation.
    pub sync_delay_ms: u64,
}

impl BaselineConfig {
    pub fn new(nodes: usize, sync_delay_ms: u64) -> Self {
        BaselineConfig { nodes, sync_delay_ms }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BaselineMessage {
    Sync { jobs: Vec<Job>, removed: Vec<JobId>, completed: Vec<JobId> },
}

impl WireSize for BaselineMessage {
    fn wire_size(&self) -> u32 {
        let BaselineMessage::Sync { jobs, removed, completed } = self;
        HEADER_BYTES + 12 + jobs.iter().map(|j| 20 + j.payload_bytes).sum::<u32>() + 8 * (removed.len() + completed.len()) as u32
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineState {
    pub id: NodeId,
    pub queue: BaselineReplica,
    /// Key/value commands are served from local, unsynchronized registers.
    pub kv: Replica,
    pub dirty: bool,
}

#[derive(Clone, Debug)]
pub struct Baseline {
    pub config: BaselineConfig,
}

impl Baseline {
    pub fn new(config: BaselineConfig) -> Self {
        Baseline { config }
    }

    fn sync_msg(s: &BaselineState) -> BaselineMessage {
        BaselineMessage::Sync {
            jobs: s.queue.jobs.values().copied().collect(),
            removed: s.queue.removed.iter().copied().collect(),
            completed: s.queue.completed.iter().copied().collect(),
        }
    }

    fn arm(&self, out: &mut Vec<Action<BaselineMessage>>) {
        if self.config.sync_delay_ms > 0 {
            out.push(Action::SetTimer { timer: Timer::Sync, delay: Delay::Fixed(SimTime::from_millis(self.config.sync_delay_ms)) });
        }
    }

    fn execute(s: &mut BaselineState, command: &Command) -> AppResult {
        match &command.op {
            Op::Queue { cmd } => {
                s.dirty = true;
                match cmd {
                    QueueCommand::Enqueue { job } => {
                        s.queue.enqueue(*job);
                        AppResult::Ok
                    }
                    QueueCommand::Pop { .. } => AppResult::Popped { job: s.queue.pop() },
                    QueueCommand::Complete { job } => {
                        s.queue.complete(*job);
                        AppResult::Ok
                    }
                }
            }
            _ if command.class() == OpClass::Read => s.kv.read(command),
            _ => s.kv.execute(command).0,
        }
    }
}

impl Protocol for Baseline {
    type State = BaselineState;
    type Message = BaselineMessage;
    type Durable = BaselineState;

    fn name(&self) -> &'static str {
        "baseline"
    }

    fn cluster_size(&self) -> usize {
        self.config.nodes
    }

    fn init(&self, id: NodeId) -> BaselineState {
        BaselineState { id, queue: BaselineReplica::new(), kv: Replica::new(), dirty: false }
    }

    fn step(&self, mut s: BaselineState, event: ProtocolEvent<BaselineMessage>) -> (BaselineState, Vec<Action<BaselineMessage>>) {
        let mut out = Vec::new();
        match event {
            ProtocolEvent::Start => self.arm(&mut out),
            ProtocolEvent::Timer(Timer::Sync) => {
                if s.dirty {
                    out.push(Action::Broadcast { msg: Self::sync_msg(&s) });
                    s.dirty = false;
                }
                self.arm(&mut out);
            }
            ProtocolEvent::Timer(_) => {}
            ProtocolEvent::Message { msg: BaselineMessage::Sync { jobs, removed, completed }, .. } => {
                let before = s.queue.knowledge();
                let other = BaselineReplica {
                    jobs: jobs.into_iter().map(|j| ((j.enqueued_at, j.id), j)).collect(),
                    removed: removed.into_iter().collect(),
                    completed: completed.into_iter().collect(),
                };
                s.queue.merge(&other);
                // Relay news so the group converges even when a direct sync was lost.
                if s.queue.knowledge() != before {
                    s.dirty = true;
                    if self.config.sync_delay_ms == 0 {
                        out.push(Action::Broadcast { msg: Self::sync_msg(&s) });
                        s.dirty = false;
                    }
                }
            }
            ProtocolEvent::ClientRequest { client, command } => {
                let result = Self::execute(&mut s, &command);
                if self.config.sync_delay_ms == 0 && s.dirty {
                    out.push(Action::Broadcast { msg: Self::sync_msg(&s) });
                    s.dirty = false;
                }
                out.push(Action::Respond { client, command: command.id, reply: Reply::Ok { result } });
            }
        }
        (s, out)
    }

    fn durable(&self, s: &BaselineState) -> BaselineState {
        s.clone()
    }

    fn recover(&self, _id: NodeId, d: BaselineState) -> BaselineState {
        d
    }

    fn progress(&self, s: &BaselineState) -> u64 {
        s.queue.knowledge()
    }

    fn progress_is_durable(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelOpKind {
    Enqueue(Job),
    Pop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelOp {
    pub at: SimTime,
    pub replica: usize,
    pub worker: ClientId,
    pub kind: ModelOpKind,
}

/// Client id under which preloaded jobs appear in model traces.
pub const LOADER: ClientId = ClientId(0xffff);

/// Schedule-driven baseline: an update made at replica `r` at time `t` is
/// visible at every other replica from `t + delay` on.
#[derive(Clone, Debug)]
pub struct BaselineModel {
    pub replicas: usize,
    pub delay: SimTime,
    /// Jobs present on every replica before the schedule starts.
    pub preloaded: Vec<Job>,
}

impl BaselineModel {
    /// Runs `ops` (any order; sorted by time, ties in input order) and
    /// returns the client-visible trace.
    pub fn run(&self, ops: &[ModelOp]) -> Vec<TraceEvent<()>> {
        let mut order: Vec<usize> = (0..ops.len()).collect();
        order.sort_by_key(|&i| (ops[i].at, i));
        let mut replicas = vec![BaselineReplica::new(); self.replicas];
        for r in replicas.iter_mut() {
            for job in &self.preloaded {
                r.enqueue(*job);
            }
        }
        // Local updates as (visible_at, origin, delta).
        let mut updates: Vec<(SimTime, usize, BaselineReplica)> = Vec::new();
        let mut seq: BTreeMap<ClientId, u32> = BTreeMap::new();
        let mut trace = Vec::new();
        for (k, job) in self.preloaded.iter().enumerate() {
            let command = Command { id: CommandId::client(LOADER, k as u32 + 1), op: Op::Queue { cmd: QueueCommand::Enqueue { job: *job } } };
            trace.push(TraceEvent::new(SimTime::ZERO, None, TraceKind::ClientReq { client: LOADER, target: NodeId(1), attempt: 1, command }));
        }
        for &i in &order {
            let op = ops[i];
            for (visible, origin, delta) in &updates {
                if *origin != op.replica && *visible <= op.at {
                    replicas[op.replica].merge(delta);
                }
            }
            let n = seq.entry(op.worker).or_insert(0);
            *n += 1;
            let id = CommandId::client(op.worker, *n);
            let target = NodeId::from_index(op.replica);
            let mut delta = BaselineReplica::new();
            let (command, result) = match op.kind {
                ModelOpKind::Enqueue(job) => {
                    replicas[op.replica].enqueue(job);
                    delta.enqueue(job);
                    (Command { id, op: Op::Queue { cmd: QueueCommand::Enqueue { job } } }, AppResult::Ok)
                }
                ModelOpKind::Pop => {
                    let job = replicas[op.replica].pop();
                    if let Some(j) = job {
                        delta.removed.insert(j);
                    }
                    (Command { id, op: Op::Queue { cmd: QueueCommand::Pop { worker: op.worker } } }, AppResult::Popped { job })
                }
            };
            updates.push((op.at + self.delay, op.replica, delta));
            trace.push(TraceEvent::new(op.at, None, TraceKind::ClientReq { client: op.worker, target, attempt: 1, command: command.clone() }));
            trace.push(TraceEvent::new(
                op.at,
                None,
                TraceKind::ClientResp { client: op.worker, command: command.id, class: OpClass::Write, server: target, latency_us: 0, result },
            ));
        }
        trace
    }

    /// Two replicas share preloaded job 1; worker 0 pops at replica 0 at
    /// t=10 ms and worker 1 pops at replica 1 at t=60 ms.
    pub fn two_pop_scenario(delay: SimTime) -> (BaselineModel, Vec<ModelOp>) {
        let job = Job { id: JobId(1), payload_bytes: 100, enqueued_at: SimTime::ZERO };
        let model = BaselineModel { replicas: 2, delay, preloaded: vec![job] };
        let ops = vec![
            ModelOp { at: SimTime::from_millis(10), replica: 0, worker: ClientId(0), kind: ModelOpKind::Pop },
            ModelOp { at: SimTime::from_millis(60), replica: 1, worker: ClientId(1), kind: ModelOpKind::Pop },
        ];
        (model, ops)
    }

    /// Seeded version of the two-worker scenario: two replicas share `jobs`
    /// preloaded jobs and each worker pops from its own replica with gaps
    /// drawn uniformly from 1..=40 ms, until `pops` pops each.
    pub fn two_worker_schedule(delay: SimTime, seed: u64, jobs: u64, pops: usize) -> (BaselineModel, Vec<ModelOp>) {
        let preloaded = (1..=jobs).map(|id| Job { id: JobId(id), payload_bytes: 100, enqueued_at: SimTime::ZERO }).collect();
        let model = BaselineModel { replicas: 2, delay, preloaded };
        let mut rng = stream(seed, Stream::Workload);
        let mut ops = Vec::with_capacity(2 * pops);
        for worker in 0..2u32 {
            let mut t = 0;
            for _ in 0..pops {
                t += rng.random_range(1_000..=40_000u64);
                ops.push(ModelOp { at: SimTime::from_micros(t), replica: worker as usize, worker: ClientId(worker), kind: ModelOpKind::Pop });
            }
        }
        (model, ops)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queue::audit;

    #[test]
    fn replicas_converge_after_merge() {
        let mut a = BaselineReplica::new();
        let mut b = BaselineReplica::new();
        a.enqueue(Job { id: JobId(1), payload_bytes: 1, enqueued_at: SimTime::ZERO });
        b.enqueue(Job { id: JobId(2), payload_bytes: 1, enqueued_at: SimTime::from_millis(1) });
        assert_eq!(a.pop(), Some(JobId(1)));
        a.merge(&b);
        b.merge(&a);
        assert_eq!(a, b);
        assert_eq!(b.queued(), 1);
    }

    #[test]
    fn slow_sync_lets_two_workers_take_one_job() {
        let (model, ops) = BaselineModel::two_pop_scenario(SimTime::from_millis(100));
        let report = audit(&model.run(&ops));
        assert_eq!(report.duplicate_pops, 1);
        assert_eq!(report.ghost_jobs, 0);
    }

    #[test]
    fn instant_sync_serializes_the_pops() {
        let (model, ops) = BaselineModel::two_pop_scenario(SimTime::ZERO);
        assert_eq!(audit(&model.run(&ops)).duplicate_pops, 0);
    }

    #[test]
    fn longer_sync_delays_never_reduce_collisions() {
        for seed in 0..200 {
            let counts: Vec<u64> = [0, 10, 100, 1000]
                .map(|ms| {
                    let (model, ops) = BaselineModel::two_worker_schedule(SimTime::from_millis(ms), seed, 100, 40);
                    audit(&model.run(&ops)).duplicate_pops
                })
                .to_vec();
            assert_eq!(counts[0], 0, "seed {seed}");
            assert!(counts.windows(2).all(|w| w[0] <= w[1]), "seed {seed}: {counts:?}");
        }
    }
}
