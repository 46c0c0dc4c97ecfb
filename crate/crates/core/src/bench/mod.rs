//! Closed-loop workload generation, metrics bucketing and protocol
//! comparison.
//!
//! The stress-tool parameters map onto [`WorkloadSpec`] as: `-n` is
//! `op_count`, `-t` is `client_concurrency`, `-b`/`-c` set
//! `payload_bytes`, and `-o insert` is `mix = 1.0`.

pub mod compare;
pub mod driver;
pub mod metrics;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;

pub use compare::{compare, ComparisonReport, RunRecord, RunSummary};
pub use driver::Driver;
pub use metrics::{sample, MetricsSample, DEFAULT_BUCKET};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    /// Register puts (writes) and gets (reads).
    KeyValue,
    /// Enqueue (the write fraction), pop, and complete-after-pop.
    Queue,
}

/// From `at` onwards the driver keeps `clients` requests outstanding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RampStep {
    pub at: SimTime,
    pub clients: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub op_count: u64,
    pub client_concurrency: usize,
    pub payload_bytes: u32,
    /// Write fraction in `[0, 1]`.
    pub mix: f64,
    pub kind: WorkloadKind,
    pub ramp: Vec<RampStep>,
    pub client_timeout: SimTime,
    pub keyspace: u32,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            op_count: 1000,
            client_concurrency: 5,
            payload_bytes: 1000,
            mix: 1.0,
            kind: WorkloadKind::KeyValue,
            ramp: Vec::new(),
            client_timeout: SimTime::from_millis(500),
            keyspace: 1000,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("client_concurrency must be at least 1")]
    NoClients,
    #[error("mix must lie in [0, 1], got {0}")]
    Mix(f64),
    #[error("ramp step at {at} asks for {clients} clients, above client_concurrency {max}")]
    RampTooHigh { at: SimTime, clients: usize, max: usize },
    #[error("ramp steps must be in increasing time order")]
    RampOrder,
    #[error("keyspace must be at least 1")]
    Keyspace,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.client_concurrency == 0 {
            return Err(WorkloadError::NoClients);
        }
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(WorkloadError::Mix(self.mix));
        }
        if self.keyspace == 0 {
            return Err(WorkloadError::Keyspace);
        }
        for w in self.ramp.windows(2) {
            if w[1].at <= w[0].at {
                return Err(WorkloadError::RampOrder);
            }
        }
        if let Some(s) = self.ramp.iter().find(|s| s.clients > self.client_concurrency) {
            return Err(WorkloadError::RampTooHigh { at: s.at, clients: s.clients, max: self.client_concurrency });
        }
        Ok(())
    }

    /// Target number of active clients at `t`.
    pub fn concurrency_at(&self, t: SimTime) -> usize {
        if self.ramp.is_empty() {
            return self.client_concurrency;
        }
        self.ramp.iter().take_while(|s| s.at <= t).last().map_or(0, |s| s.clients)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_schedule_lookup() {
        let spec = WorkloadSpec {
            client_concurrency: 4,
            ramp: vec![
                RampStep { at: SimTime::ZERO, clients: 1 },
                RampStep { at: SimTime::from_millis(100), clients: 4 },
            ],
            ..WorkloadSpec::default()
        };
        spec.validate().unwrap();
        assert_eq!(spec.concurrency_at(SimTime::from_millis(50)), 1);
        assert_eq!(spec.concurrency_at(SimTime::from_millis(100)), 4);
        let bad = WorkloadSpec { client_concurrency: 2, ..spec };
        assert!(matches!(bad.validate(), Err(WorkloadError::RampTooHigh { .. })));
    }
}
