use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Command, CommandId, Note, Op};
use crate::queue::{JobId, QueueOutcome, QueueState};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum AppResult {
    Ok,
    /// Version (writer command id) of a key, if ever written.
    Value { version: Option<CommandId> },
    Popped { job: Option<JobId> },
    UnknownJob { job: JobId },
}

/// The replicated state machine: versioned registers plus a job queue.
///
/// Commands are applied at most once per id; re-applying a command (a client
/// retry that got logged twice) returns the first result.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Replica {
    registers: BTreeMap<u32, CommandId>,
    pub queue: QueueState,
    results: BTreeMap<CommandId, AppResult>,
    applied: u64,
}

impl Replica {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of distinct client commands applied.
    pub fn applied(&self) -> u64 {
        self.applied
    }

    pub fn result_of(&self, id: CommandId) -> Option<&AppResult> {
        self.results.get(&id)
    }

    pub fn execute(&mut self, command: &Command) -> (AppResult, Option<Note>) {
        if command.is_noop() {
            return (AppResult::Ok, None);
        }
        if let Some(r) = self.results.get(&command.id) {
            return (r.clone(), None);
        }
        let (result, note) = match &command.op {
            Op::Noop => (AppResult::Ok, None),
            Op::Put { key, .. } => {
                self.registers.insert(*key, command.id);
                (AppResult::Ok, None)
            }
            Op::Get { .. } => (self.read(command), None),
            Op::Queue { cmd } => match self.queue.apply(cmd) {
                QueueOutcome::Enqueued | QueueOutcome::Completed => (AppResult::Ok, None),
                QueueOutcome::Popped(job) => (AppResult::Popped { job }, None),
                QueueOutcome::UnknownJob(job) => (AppResult::UnknownJob { job }, Some(Note::UnknownJob { job })),
            },
        };
        self.results.insert(command.id, result.clone());
        self.applied += 1;
        (result, note)
    }

    /// Serves a read without logging it.
    pub fn read(&self, command: &Command) -> AppResult {
        match &command.op {
            Op::Get { key } => AppResult::Value { version: self.registers.get(key).copied() },
            _ => AppResult::Ok,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::ClientId;
    use crate::queue::{Job, QueueCommand};
    use crate::sim::SimTime;

    #[test]
    fn duplicate_commands_apply_once() {
        let mut r = Replica::new();
        let job = Job { id: JobId(1), payload_bytes: 10, enqueued_at: SimTime::ZERO };
        let enq = Command { id: CommandId::client(ClientId(0), 1), op: Op::Queue { cmd: QueueCommand::Enqueue { job } } };
        let pop = Command { id: CommandId::client(ClientId(1), 1), op: Op::Queue { cmd: QueueCommand::Pop { worker: ClientId(1) } } };
        r.execute(&enq);
        let first = r.execute(&pop).0;
        let again = r.execute(&pop).0;
        assert_eq!(first, AppResult::Popped { job: Some(JobId(1)) });
        assert_eq!(again, first);
        assert_eq!(r.applied(), 2);
    }

    #[test]
    fn reads_see_latest_writer() {
        let mut r = Replica::new();
        let put = Command { id: CommandId::client(ClientId(0), 1), op: Op::Put { key: 7, bytes: 100 } };
        let get = Command { id: CommandId::client(ClientId(1), 1), op: Op::Get { key: 7 } };
        assert_eq!(r.read(&get), AppResult::Value { version: None });
        r.execute(&put);
        assert_eq!(r.read(&get), AppResult::Value { version: Some(put.id) });
    }
}
