use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NodeId, SimError, SimTime};
use crate::consensus::majority;

/// Which node a scripted crash hits. `Leader` resolves at crash time to the
/// live node reporting the highest leadership epoch (lowest id on ties).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashTarget {
    Node(NodeId),
    Leader,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashSpec {
    pub target: CrashTarget,
    pub at: SimTime,
    pub restart_at: Option<SimTime>,
}

/// Bipartition: nodes in `side` cannot exchange messages with nodes outside
/// it during `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub side: BTreeSet<NodeId>,
    pub start: SimTime,
    pub end: SimTime,
}

impl PartitionSpec {
    pub fn active_at(&self, t: SimTime) -> bool {
        self.start <= t && t < self.end
    }

    pub fn separates(&self, a: NodeId, b: NodeId) -> bool {
        self.side.contains(&a) != self.side.contains(&b)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub crashes: Vec<CrashSpec>,
    pub partitions: Vec<PartitionSpec>,
}

impl FaultPlan {
    pub fn none() -> Self {
        FaultPlan::default()
    }

    pub fn validate(&self, n: usize) -> Result<(), SimError> {
        for c in &self.crashes {
            if let CrashTarget::Node(id) = c.target {
                if id.0 == 0 || id.index() >= n {
                    return Err(SimError::InvalidConfig(format!("crash targets unknown node {id}")));
                }
            }
            if let Some(r) = c.restart_at {
                if r <= c.at {
                    return Err(SimError::InvalidConfig(format!("restart at {r} is not after crash at {}", c.at)));
                }
            }
        }
        for p in &self.partitions {
            if p.end <= p.start {
                return Err(SimError::InvalidConfig(format!("partition [{}, {}) is empty", p.start, p.end)));
            }
            if p.side.iter().any(|id| id.0 == 0 || id.index() >= n) {
                return Err(SimError::InvalidConfig("partition names an unknown node".into()));
            }
        }
        Ok(())
    }

    pub fn blocks(&self, a: NodeId, b: NodeId, t: SimTime) -> bool {
        self.partitions.iter().any(|p| p.active_at(t) && p.separates(a, b))
    }

    /// Upper bound on simultaneously crashed nodes, assuming every crash hits
    /// a distinct node (true for the plans produced by [`FaultPlan::random`]).
    pub fn max_concurrent_crashes(&self) -> usize {
        let mut edges: Vec<(SimTime, i32)> = Vec::new();
        for c in &self.crashes {
            edges.push((c.at, 1));
            edges.push((c.restart_at.unwrap_or(SimTime::MAX), -1));
        }
        edges.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        let (mut cur, mut best) = (0i32, 0i32);
        for (_, d) in edges {
            cur += d;
            best = best.max(cur);
        }
        best as usize
    }

    /// Random crash/restart episodes that never take down more than
    /// `n - majority(n)` nodes at once. Episodes are sequential and each
    /// restarts before the next begins.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize, window: (SimTime, SimTime), max_episodes: usize, max_down: SimTime) -> Self {
        let tolerated = n.saturating_sub(majority(n));
        let mut plan = FaultPlan::default();
        if tolerated == 0 || max_episodes == 0 {
            return plan;
        }
        let episodes = rng.random_range(1..=max_episodes);
        let (lo, hi) = (window.0.as_micros(), window.1.as_micros().max(window.0.as_micros() + 1));
        let mut t = lo;
        for _ in 0..episodes {
            if t >= hi {
                break;
            }
            let at = rng.random_range(t..hi);
            let down = rng.random_range(max_down.as_micros() / 10..=max_down.as_micros().max(1));
            let count = rng.random_range(1..=tolerated);
            let mut victims: Vec<NodeId> = NodeId::all(n).collect();
            for i in 0..count {
                let j = rng.random_range(i..victims.len());
                victims.swap(i, j);
            }
            for v in &victims[..count] {
                plan.crashes.push(CrashSpec {
                    target: CrashTarget::Node(*v),
                    at: SimTime::from_micros(at),
                    restart_at: Some(SimTime::from_micros(at + down)),
                });
            }
            t = at + down + 1;
        }
        plan
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rng::{stream, Stream};

    #[test]
    fn random_plans_respect_the_fault_bound() {
        for seed in 0..200 {
            let mut rng = stream(seed, Stream::Faults);
            let plan = FaultPlan::random(&mut rng, 5, (SimTime::from_millis(100), SimTime::from_millis(2000)), 3, SimTime::from_millis(800));
            plan.validate(5).unwrap();
            assert!(plan.max_concurrent_crashes() <= 2, "seed {seed}: {plan:?}");
        }
    }

    #[test]
    fn restart_must_follow_crash() {
        let plan = FaultPlan {
            crashes: vec![CrashSpec {
                target: CrashTarget::Node(NodeId(1)),
                at: SimTime::from_millis(10),
                restart_at: Some(SimTime::from_millis(10)),
            }],
            partitions: vec![],
        };
        assert!(plan.validate(3).is_err());
    }

    #[test]
    fn partition_blocks_only_across_sides_while_active() {
        let plan = FaultPlan {
            crashes: vec![],
            partitions: vec![PartitionSpec {
                side: [NodeId(1), NodeId(2)].into(),
                start: SimTime::from_millis(5),
                end: SimTime::from_millis(10),
            }],
        };
        assert!(plan.blocks(NodeId(1), NodeId(3), SimTime::from_millis(5)));
        assert!(!plan.blocks(NodeId(1), NodeId(2), SimTime::from_millis(6)));
        assert!(!plan.blocks(NodeId(1), NodeId(3), SimTime::from_millis(10)));
    }
}
