//! The contract shared by every protocol: commands, log entries, the
//! `(state, event) -> (state, actions)` step function and quorum math.

mod app;

use std::fmt;
use std::fmt::Debug;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::queue::{JobId, QueueCommand};
use crate::sim::{NodeId, SimTime};

pub use app::{AppResult, Replica};

/// Quorum size: `floor(n/2) + 1`.
pub fn majority(n: usize) -> usize {
    n / 2 + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Unique identity of a command. Client commands pack `(client + 1, seq)`;
/// protocol-internal no-ops set the top bit and pack `(epoch, node)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CommandId(pub u64);

const NOOP_BIT: u64 = 1 << 63;

impl CommandId {
    pub fn client(client: ClientId, seq: u32) -> Self {
        CommandId(((client.0 as u64 + 1) << 32) | seq as u64)
    }

    pub fn noop(epoch: u64, node: NodeId) -> Self {
        CommandId(NOOP_BIT | ((epoch & 0x7fff_ffff_ffff) << 16) | (node.0 as u64 & 0xffff))
    }

    pub fn is_noop(self) -> bool {
        self.0 & NOOP_BIT != 0
    }

    pub fn client_id(self) -> Option<ClientId> {
        (!self.is_noop() && self.0 >> 32 > 0).then(|| ClientId((self.0 >> 32) as u32 - 1))
    }
}

impl fmt::Display for CommandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.client_id() {
            Some(c) => write!(f, "{c}#{}", self.0 & 0xffff_ffff),
            None => write!(f, "noop:{:x}", self.0 & !NOOP_BIT),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    Read,
    Write,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Noop,
    Put { key: u32, bytes: u32 },
    Get { key: u32 },
    Queue { cmd: QueueCommand },
}

/// An opaque application command as far as the protocols are concerned.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Command {
    pub id: CommandId,
    #[serde(flatten)]
    pub op: Op,
}

impl Command {
    pub fn noop(epoch: u64, node: NodeId) -> Self {
        Command { id: CommandId::noop(epoch, node), op: Op::Noop }
    }

    pub fn is_noop(&self) -> bool {
        matches!(self.op, Op::Noop)
    }

    pub fn class(&self) -> OpClass {
        match self.op {
            Op::Get { .. } => OpClass::Read,
            _ => OpClass::Write,
        }
    }

    pub fn payload_bytes(&self) -> u32 {
        match &self.op {
            Op::Noop | Op::Get { .. } => 0,
            Op::Put { bytes, .. } => *bytes,
            Op::Queue { cmd: QueueCommand::Enqueue { job } } => job.payload_bytes,
            Op::Queue { .. } => 0,
        }
    }
}

impl WireSize for Command {
    fn wire_size(&self) -> u32 {
        16 + self.payload_bytes()
    }
}

/// One replicated command. `term` is the Raft term, the Paxos ballot
/// counter, or the Chandra-Toueg round, depending on the protocol.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LogEntry {
    pub term: u64,
    pub index: u64,
    pub command: Command,
}

impl LogEntry {
    pub fn digest(&self) -> EntryDigest {
        EntryDigest { index: self.index, term: self.term, command: self.command.id }
    }
}

impl WireSize for LogEntry {
    fn wire_size(&self) -> u32 {
        16 + self.command.wire_size()
    }
}

/// Compact log summary used by trace snapshots and the checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntryDigest {
    pub index: u64,
    pub term: u64,
    pub command: CommandId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Follower,
    Candidate,
    Leader,
    Acceptor,
    Coordinator,
    Participant,
}

/// Timer labels. A node may have at most one live timer per label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timer {
    /// Pseudo-timer marking node start (and restart).
    Boot,
    Election,
    Heartbeat,
    Leadership,
    Detector,
    Sync,
    /// Free label for externally defined protocols.
    Custom(u32),
}

/// Timer delay. `Uniform` is drawn by the harness from its seeded
/// protocol-timeout stream, keeping step functions deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Delay {
    Fixed(SimTime),
    Uniform { min: SimTime, max: SimTime },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ProtocolEvent<M> {
    /// Node boot or restart; protocols arm their initial timers here.
    Start,
    Message { from: NodeId, msg: M },
    Timer(Timer),
    ClientRequest { client: ClientId, command: Command },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "reply", rename_all = "snake_case")]
pub enum Reply {
    Ok { result: AppResult },
    NotLeader { hint: Option<NodeId> },
}

/// Which durable fields a step changed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Durability {
    Term,
    Vote,
    Log,
    Promise,
    Accepted,
    Chosen,
    Estimate,
    Decided,
}

/// Structured observations a protocol wants in the trace.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "note", rename_all = "snake_case")]
pub enum Note {
    Ignored { reason: String },
    UnknownJob { job: JobId },
    /// A Chandra-Toueg coordinator picked `chosen` from `estimates`
    /// (sender, timestamp, value). A `None` timestamp means the sender never
    /// adopted a coordinator's value in this instance.
    CtCollected { instance: u64, round: u64, estimates: Vec<(NodeId, Option<u64>, CommandId)>, chosen: CommandId },
    /// A majority acked `value` in `round`.
    CtLocked { instance: u64, round: u64, value: CommandId },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Action<M> {
    Send { to: NodeId, msg: M },
    /// Send to every other node.
    Broadcast { msg: M },
    SetTimer { timer: Timer, delay: Delay },
    CancelTimer { timer: Timer },
    /// A slot's value became known to this node.
    Decide { slot: u64, command: Command },
    /// A command was applied to the local state machine.
    Apply { index: u64, command: Command, result: AppResult },
    Respond { client: ClientId, command: CommandId, reply: Reply },
    Persist(Durability),
    BecameLeader { epoch: u64, log: Vec<EntryDigest> },
    Note(Note),
}

/// Serialized size estimate used for network accounting and processing cost.
pub trait WireSize {
    fn wire_size(&self) -> u32;
}

impl WireSize for () {
    fn wire_size(&self) -> u32 {
        0
    }
}

/// Fixed per-message framing overhead (addresses, type tag, epoch).
pub const HEADER_BYTES: u32 = 24;

/// A consensus protocol as a pure state machine.
///
/// `step` must be a deterministic function of its inputs: no clocks and no
/// randomness. All durable fields a protocol changes must be covered by
/// `durable`, which the harness captures when the node crashes.
pub trait Protocol {
    type State: Clone + Debug + PartialEq;
    type Message: Clone + Debug + PartialEq + WireSize + Serialize + DeserializeOwned;
    type Durable: Clone + Debug;

    fn name(&self) -> &'static str;

    fn cluster_size(&self) -> usize;

    fn init(&self, id: NodeId) -> Self::State;

    fn step(&self, state: Self::State, event: ProtocolEvent<Self::Message>) -> (Self::State, Vec<Action<Self::Message>>);

    fn durable(&self, state: &Self::State) -> Self::Durable;

    fn recover(&self, id: NodeId, durable: Self::Durable) -> Self::State;

    /// `Some(epoch)` if the node currently acts as leader.
    fn leader_epoch(&self, _state: &Self::State) -> Option<u64> {
        None
    }

    /// Monotone count of client commands this node has applied.
    fn progress(&self, state: &Self::State) -> u64;

    /// Whether a crashed node's progress survives the crash. When true, the
    /// run is only quiescent once every live node has caught up with the
    /// most advanced node, crashed or not.
    fn progress_is_durable(&self) -> bool {
        true
    }

    fn final_log(&self, _state: &Self::State) -> Option<Vec<EntryDigest>> {
        None
    }
}
