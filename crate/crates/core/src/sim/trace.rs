//! Append-only run audit. One JSON object per line with a stable field
//! order: `time`, `node`, `kind`, then the kind-specific fields.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{NodeId, SimTime};
use crate::consensus::{AppResult, ClientId, Command, CommandId, EntryDigest, Note, OpClass, Timer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Lost by the random drop model.
    Random,
    /// Crossed an active partition.
    Partition,
    /// Reached a crashed node (or was queued there when it crashed).
    DeadNode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceKind<M> {
    Send { env: u64, dst: NodeId, bytes: u32, deliver_at: SimTime, dup: bool, msg: M },
    /// A message handed to the destination's step function. `wait_us` is
    /// time spent queued behind earlier inputs, `cost_us` the handling cost.
    Deliver { env: u64, src: NodeId, bytes: u32, wait_us: u64, cost_us: u64, msg: M },
    Drop { env: u64, dst: NodeId, reason: DropReason },
    Timer { label: Timer, wait_us: u64, cost_us: u64 },
    Crash,
    Restart,
    Decide { slot: u64, command: Command },
    Apply { index: u64, command: Command, result: AppResult },
    Leader { epoch: u64, log: Vec<EntryDigest> },
    /// A client request handed to a node's step function.
    Request { client: ClientId, command: Command, wait_us: u64, cost_us: u64 },
    ClientReq { client: ClientId, target: NodeId, attempt: u32, command: Command },
    ClientResp { client: ClientId, command: CommandId, class: OpClass, server: NodeId, latency_us: u64, result: AppResult },
    Note { note: Note },
    FinalLog { log: Vec<EntryDigest> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent<M> {
    pub time: SimTime,
    pub node: Option<NodeId>,
    #[serde(flatten)]
    pub kind: TraceKind<M>,
}

impl<M> TraceEvent<M> {
    pub fn new(time: SimTime, node: Option<NodeId>, kind: TraceKind<M>) -> Self {
        TraceEvent { time, node, kind }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            TraceKind::Send { .. } => "send",
            TraceKind::Deliver { .. } => "deliver",
            TraceKind::Drop { .. } => "drop",
            TraceKind::Timer { .. } => "timer",
            TraceKind::Crash => "crash",
            TraceKind::Restart => "restart",
            TraceKind::Decide { .. } => "decide",
            TraceKind::Apply { .. } => "apply",
            TraceKind::Leader { .. } => "leader",
            TraceKind::Request { .. } => "request",
            TraceKind::ClientReq { .. } => "client_req",
            TraceKind::ClientResp { .. } => "client_resp",
            TraceKind::Note { .. } => "note",
            TraceKind::FinalLog { .. } => "final_log",
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Corrupt { line: usize, source: serde_json::Error },
    #[error("trace is missing its header line")]
    MissingHeader,
    #[error("trace is truncated (last line has no terminating newline)")]
    Truncated,
    #[error("line {line}: time goes backwards")]
    NonMonotone { line: usize },
}

pub fn encode_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("trace records are always serializable");
    s.push('\n');
    s
}

pub fn encode_events<M: Serialize>(events: &[TraceEvent<M>]) -> String {
    events.iter().map(encode_line).collect()
}

/// Parses a header line followed by event lines. Every line, including the
/// last, must end in `\n`; a missing final newline means the writer was cut
/// off.
pub fn decode<H: DeserializeOwned, M: DeserializeOwned>(text: &str) -> Result<(Option<H>, Vec<TraceEvent<M>>), TraceError> {
    if text.is_empty() {
        return Ok((None, Vec::new()));
    }
    if !text.ends_with('\n') {
        return Err(TraceError::Truncated);
    }
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or(TraceError::MissingHeader)?;
    let header: H = serde_json::from_str(header).map_err(|source| TraceError::Corrupt { line: hline + 1, source })?;
    let mut events: Vec<TraceEvent<M>> = Vec::new();
    for (i, line) in lines {
        let ev: TraceEvent<M> = serde_json::from_str(line).map_err(|source| TraceError::Corrupt { line: i + 1, source })?;
        if events.last().is_some_and(|last| last.time > ev.time) {
            return Err(TraceError::NonMonotone { line: i + 1 });
        }
        events.push(ev);
    }
    Ok((Some(header), events))
}
