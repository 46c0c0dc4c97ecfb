//! Replicated job queue and the collision audit.
//!
//! In consensus mode the queue only changes through committed commands, so
//! every replica pops jobs in the same order and no job reaches two workers.
//! [`baseline`] drops consensus in favour of local pops plus periodic
//! anti-entropy, which lets two workers take the same head job.

pub mod baseline;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::consensus::{AppResult, ClientId, Op};
use crate::sim::{SimTime, TraceEvent, TraceKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Job {
    pub id: JobId,
    pub payload_bytes: u32,
    pub enqueued_at: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "queue", rename_all = "snake_case")]
pub enum QueueCommand {
    Enqueue { job: Job },
    Pop { worker: ClientId },
    Complete { job: JobId },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum QueueOutcome {
    Enqueued,
    /// Head job, or `None` when the queue is empty. Pops never block.
    Popped(Option<JobId>),
    Completed,
    UnknownJob(JobId),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct QueueState {
    pending: VecDeque<Job>,
    known: BTreeSet<JobId>,
    in_progress: BTreeMap<JobId, ClientId>,
    done: BTreeSet<JobId>,
    enqueues: u64,
    pops: u64,
}

impl QueueState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&mut self, cmd: &QueueCommand) -> QueueOutcome {
        match cmd {
            QueueCommand::Enqueue { job } => {
                if self.known.insert(job.id) {
                    self.pending.push_back(*job);
                    self.enqueues += 1;
                }
                QueueOutcome::Enqueued
            }
            QueueCommand::Pop { worker } => match self.pending.pop_front() {
                Some(job) => {
                    self.in_progress.insert(job.id, *worker);
                    self.pops += 1;
                    QueueOutcome::Popped(Some(job.id))
                }
                None => QueueOutcome::Popped(None),
            },
            QueueCommand::Complete { job } => {
                if self.in_progress.remove(job).is_some() || self.done.contains(job) {
                    self.done.insert(*job);
                    QueueOutcome::Completed
                } else if self.known.contains(job) {
                    // Completing a job nobody popped yet: accepted as a no-op.
                    QueueOutcome::Completed
                } else {
                    QueueOutcome::UnknownJob(*job)
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn head(&self) -> Option<&Job> {
        self.pending.front()
    }

    pub fn enqueues(&self) -> u64 {
        self.enqueues
    }

    pub fn pops(&self) -> u64 {
        self.pops
    }

    pub fn completed(&self) -> usize {
        self.done.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionReport {
    /// Jobs handed to two or more distinct workers.
    pub duplicate_pops: u64,
    /// Jobs handed out that no client ever enqueued.
    pub ghost_jobs: u64,
}

/// Counts workers' collisions from the client-visible side of a trace.
pub fn audit<M>(trace: &[TraceEvent<M>]) -> CollisionReport {
    let mut enqueued = BTreeSet::new();
    let mut takers: BTreeMap<JobId, BTreeSet<ClientId>> = BTreeMap::new();
    for ev in trace {
        match &ev.kind {
            TraceKind::ClientReq { command, .. } => {
                if let Op::Queue { cmd: QueueCommand::Enqueue { job } } = &command.op {
                    enqueued.insert(job.id);
                }
            }
            TraceKind::ClientResp { client, result: AppResult::Popped { job: Some(job) }, .. } => {
                takers.entry(*job).or_default().insert(*client);
            }
            _ => {}
        }
    }
    CollisionReport {
        duplicate_pops: takers.values().filter(|w| w.len() >= 2).count() as u64,
        ghost_jobs: takers.keys().filter(|j| !enqueued.contains(j)).count() as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job(id: u64) -> Job {
        Job { id: JobId(id), payload_bytes: 8, enqueued_at: SimTime::ZERO }
    }

    #[test]
    fn pop_on_empty_queue_is_empty_and_harmless() {
        let mut q = QueueState::new();
        let before = q.clone();
        assert_eq!(q.apply(&QueueCommand::Pop { worker: ClientId(0) }), QueueOutcome::Popped(None));
        assert_eq!(q, before);
    }

    #[test]
    fn pops_are_fifo() {
        let mut q = QueueState::new();
        q.apply(&QueueCommand::Enqueue { job: job(1) });
        q.apply(&QueueCommand::Enqueue { job: job(2) });
        assert_eq!(q.apply(&QueueCommand::Pop { worker: ClientId(0) }), QueueOutcome::Popped(Some(JobId(1))));
        assert_eq!(q.apply(&QueueCommand::Pop { worker: ClientId(1) }), QueueOutcome::Popped(Some(JobId(2))));
    }

    #[test]
    fn completing_an_unknown_job_is_reported() {
        let mut q = QueueState::new();
        assert_eq!(q.apply(&QueueCommand::Complete { job: JobId(9) }), QueueOutcome::UnknownJob(JobId(9)));
        q.apply(&QueueCommand::Enqueue { job: job(9) });
        q.apply(&QueueCommand::Pop { worker: ClientId(0) });
        assert_eq!(q.apply(&QueueCommand::Complete { job: JobId(9) }), QueueOutcome::Completed);
        assert_eq!(q.completed(), 1);
    }

    #[test]
    fn empty_trace_audits_clean() {
        let trace: Vec<TraceEvent<()>> = Vec::new();
        assert_eq!(audit(&trace), CollisionReport::default());
    }
}
