use rand::Rng;

use super::{WorkloadKind, WorkloadSpec};
use crate::consensus::{ClientId, Command, CommandId, Op};
use crate::queue::{Job, JobId, QueueCommand};
use crate::sim::rng::StreamRng;
use crate::sim::{NodeId, SimTime};

#[derive(Clone, Debug)]
pub struct InFlight {
    pub command: Command,
    pub first_issued: SimTime,
    pub attempt: u32,
    pub target: NodeId,
}

#[derive(Clone, Debug)]
pub struct ClientSlot {
    pub id: ClientId,
    /// Node the next attempt goes to; updated from redirects and timeouts.
    pub target: NodeId,
    pub seq: u32,
    pub inflight: Option<InFlight>,
    pub active: bool,
    pub retiring: bool,
    /// Job popped by this worker that still needs a `complete`.
    pub held_job: Option<JobId>,
}

/// Closed-loop client population. Each active client has at most one
/// request outstanding and issues the next one as soon as the previous
/// completes, until `op_count` operations have been issued.
pub struct Driver {
    spec: WorkloadSpec,
    rng: StreamRng,
    issued: u64,
    completed: u64,
    next_job: u64,
    pub clients: Vec<ClientSlot>,
}

impl Driver {
    pub fn new(spec: WorkloadSpec, nodes: usize, rng: StreamRng) -> Self {
        let clients = (0..spec.client_concurrency)
            .map(|i| ClientSlot {
                id: ClientId(i as u32),
                target: NodeId::from_index(i % nodes),
                seq: 0,
                inflight: None,
                active: false,
                retiring: false,
                held_job: None,
            })
            .collect();
        Driver { spec, rng, issued: 0, completed: 0, next_job: 1, clients }
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn outstanding(&self) -> usize {
        self.clients.iter().filter(|c| c.inflight.is_some()).count()
    }

    pub fn done(&self) -> bool {
        self.issued >= self.spec.op_count && self.outstanding() == 0
    }

    pub fn mark_completed(&mut self) {
        self.completed += 1;
    }

    /// Draws the next command for client `idx`, or `None` once the op budget
    /// is spent. Draw order per op: one class draw, then one key draw for
    /// key/value ops.
    pub fn next_command(&mut self, idx: usize, now: SimTime) -> Option<Command> {
        if self.issued >= self.spec.op_count {
            return None;
        }
        self.issued += 1;
        let client = &mut self.clients[idx];
        client.seq += 1;
        let id = CommandId::client(client.id, client.seq);
        let write = self.rng.random::<f64>() < self.spec.mix;
        let op = match self.spec.kind {
            WorkloadKind::KeyValue => {
                let key = self.rng.random_range(0..self.spec.keyspace);
                if write {
                    Op::Put { key, bytes: self.spec.payload_bytes }
                } else {
                    Op::Get { key }
                }
            }
            WorkloadKind::Queue => {
                if let Some(job) = client.held_job.take() {
                    Op::Queue { cmd: QueueCommand::Complete { job } }
                } else if write {
                    let job = Job { id: JobId(self.next_job), payload_bytes: self.spec.payload_bytes, enqueued_at: now };
                    self.next_job += 1;
                    Op::Queue { cmd: QueueCommand::Enqueue { job } }
                } else {
                    Op::Queue { cmd: QueueCommand::Pop { worker: client.id } }
                }
            }
        };
        Some(Command { id, op })
    }
}
