//! A deterministic discrete-event laboratory for crash-fault consensus.
//!
//! Three protocols (Raft, multi-decree Paxos and Chandra-Toueg) run as pure
//! step functions inside a single-threaded simulator with a virtual clock,
//! a seeded network model and scripted crash/partition faults. Every run is a
//! pure function of its configuration and seed, and emits an append-only
//! trace that the [`checker`] audits and the [`bench`] module turns into
//! time-bucketed metrics.
//!
//! The replicated state machine is a small key/value register store plus a
//! job queue ([`queue`]); the queue makes "two workers popped the same job"
//! observable, and [`queue::baseline`] provides an eventually consistent
//! replica group that exhibits exactly that failure.

pub mod bench;
pub mod checker;
pub mod consensus;
pub mod ct;
pub mod experiment;
pub mod fuzz;
pub mod paxos;
pub mod queue;
pub mod raft;
pub mod replay;
pub mod sim;

pub use consensus::{majority, Action, Command, CommandId, LogEntry, Protocol, ProtocolEvent, Role};
pub use sim::{NodeId, SimConfig, SimTime};
