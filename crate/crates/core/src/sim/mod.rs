//! Discrete-event engine: virtual clock, event queue, network model, faults.

mod engine;
pub mod faults;
pub mod queue;
pub mod rng;
pub mod trace;

use std::fmt;
use std::ops::{Add, Sub};

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use engine::{run, RunOutcome, RunOutput, Simulation};
pub use faults::{CrashSpec, CrashTarget, FaultPlan, PartitionSpec};
pub use trace::{DropReason, TraceEvent, TraceKind};

/// Node identifiers are 1-based, matching the rotating-coordinator formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(index: usize) -> Self {
        NodeId(index as u32 + 1)
    }

    /// All ids of an `n`-node cluster, in ascending order.
    pub fn all(n: usize) -> impl Iterator<Item = NodeId> {
        (1..=n as u32).map(NodeId)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Virtual time in integer microseconds. Serialized as (fractional)
/// milliseconds; values below 2^53 us round-trip exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1000)
    }

    pub fn from_millis_f64(ms: f64) -> Self {
        SimTime((ms * 1000.0).round().max(0.0) as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.as_millis_f64())
    }
}

impl Serialize for SimTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_multiple_of(1000) {
            s.serialize_u64(self.0 / 1000)
        } else {
            s.serialize_f64(self.as_millis_f64())
        }
    }
}

impl<'de> Deserialize<'de> for SimTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let ms = f64::deserialize(d)?;
        if !ms.is_finite() || ms < 0.0 {
            return Err(serde::de::Error::custom("time must be a nonnegative number of ms"));
        }
        Ok(SimTime::from_millis_f64(ms))
    }
}

/// One-way message latency distribution, in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum LatencyModel {
    Fixed { ms: f64 },
    Uniform { min_ms: f64, max_ms: f64 },
    /// `exp(N(mu, sigma))` milliseconds.
    LogNormal { mu: f64, sigma: f64 },
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Uniform { min_ms: 1.0, max_ms: 10.0 }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = match *self {
            LatencyModel::Fixed { ms } => ms.is_finite() && ms >= 0.0,
            LatencyModel::Uniform { min_ms, max_ms } => {
                min_ms.is_finite() && max_ms.is_finite() && min_ms >= 0.0 && min_ms <= max_ms
            }
            LatencyModel::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(format!("bad latency model {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimTime {
        let ms = match *self {
            LatencyModel::Fixed { ms } => ms,
            LatencyModel::Uniform { min_ms, max_ms } => {
                if min_ms == max_ms {
                    min_ms
                } else {
                    rng.random_range(min_ms..=max_ms)
                }
            }
            LatencyModel::LogNormal { mu, sigma } => match LogNormal::new(mu, sigma) {
                Ok(d) => d.sample(rng),
                Err(_) => mu.exp(),
            },
        };
        SimTime::from_millis_f64(ms)
    }
}

/// Per-input processing cost at a node. A node handles one input at a time;
/// inputs arriving while it is busy wait in a FIFO inbox.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessingCost {
    pub base_us: u64,
    pub per_kb_us: u64,
}

impl Default for ProcessingCost {
    fn default() -> Self {
        ProcessingCost { base_us: 50, per_kb_us: 40 }
    }
}

impl ProcessingCost {
    pub fn cost(&self, bytes: u32) -> SimTime {
        SimTime::from_micros(self.base_us + (bytes as u64 * self.per_kb_us) / 1000)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub node_count: usize,
    pub seed: u64,
    pub latency: LatencyModel,
    pub drop_probability: f64,
    pub duplicate_probability: f64,
    pub max_virtual_time: SimTime,
    pub processing: ProcessingCost,
}

impl SimConfig {
    pub fn new(node_count: usize, seed: u64) -> Self {
        SimConfig {
            node_count,
            seed,
            latency: LatencyModel::default(),
            drop_probability: 0.0,
            duplicate_probability: 0.0,
            max_virtual_time: SimTime::from_millis(600_000),
            processing: ProcessingCost::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.node_count == 0 {
            return Err(SimError::InvalidConfig("node_count must be at least 1".into()));
        }
        for (name, p) in [("drop_probability", self.drop_probability), ("duplicate_probability", self.duplicate_probability)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::InvalidConfig(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        self.latency.validate()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("event scheduled at {at} but the clock is already at {now}")]
    PastEvent { at: SimTime, now: SimTime },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
