//! Seeded safety fuzzing: many independent worlds per protocol, each checked
//! against every trace oracle.

use std::ops::Range;

use serde::Serialize;

use crate::checker::{Termination, Violation};
use crate::experiment::{evaluate, fuzz_config_sized, ExperimentError, ProtocolKind};
use crate::sim::SimTime;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub violations: Vec<Violation>,
    pub livelock: bool,
    /// Termination was checked (the fault bound held).
    pub termination_checked: bool,
    pub duplicate_pops: u64,
    pub ghost_jobs: u64,
    pub end_time: SimTime,
}

impl SeedResult {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && !self.livelock
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FuzzReport {
    pub protocol: ProtocolKind,
    pub runs: u64,
    pub livelocks: u64,
    pub termination_skipped: u64,
    pub duplicate_pops: u64,
    pub ghost_jobs: u64,
    /// Seeds with a violation or a livelock.
    pub failures: Vec<SeedResult>,
}

impl FuzzReport {
    pub fn is_clean(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn fuzz_seed(protocol: ProtocolKind, seed: u64, nodes: usize) -> Result<SeedResult, ExperimentError> {
    let out = evaluate(&fuzz_config_sized(protocol, seed, nodes))?;
    Ok(SeedResult {
        seed,
        termination_checked: matches!(out.verdict.termination, Termination::Checked(_)),
        violations: out.verdict.violations,
        livelock: out.outcome.livelock,
        duplicate_pops: out.collisions.duplicate_pops,
        ghost_jobs: out.collisions.ghost_jobs,
        end_time: out.outcome.end_time,
    })
}

#[cfg(feature = "parallel")]
fn run_all(protocol: ProtocolKind, seeds: Range<u64>, nodes: usize) -> Vec<Result<SeedResult, ExperimentError>> {
    use rayon::prelude::*;
    seeds.into_par_iter().map(|s| fuzz_seed(protocol, s, nodes)).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_all(protocol: ProtocolKind, seeds: Range<u64>, nodes: usize) -> Vec<Result<SeedResult, ExperimentError>> {
    seeds.map(|s| fuzz_seed(protocol, s, nodes)).collect()
}

/// Runs every seed in `seeds` on the default 4-node fuzz world.
pub fn fuzz(protocol: ProtocolKind, seeds: Range<u64>) -> Result<FuzzReport, ExperimentError> {
    fuzz_sized(protocol, seeds, 4)
}

/// Runs every seed in `seeds` on `nodes` nodes. Results are collected in
/// seed order, so the report does not depend on how work was scheduled.
pub fn fuzz_sized(protocol: ProtocolKind, seeds: Range<u64>, nodes: usize) -> Result<FuzzReport, ExperimentError> {
    let mut report =
        FuzzReport { protocol, runs: 0, livelocks: 0, termination_skipped: 0, duplicate_pops: 0, ghost_jobs: 0, failures: Vec::new() };
    for r in run_all(protocol, seeds, nodes) {
        let r = r?;
        report.runs += 1;
        report.livelocks += r.livelock as u64;
        report.termination_skipped += !r.termination_checked as u64;
        report.duplicate_pops += r.duplicate_pops;
        report.ghost_jobs += r.ghost_jobs;
        if !r.is_clean() {
            report.failures.push(r);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_few_seeds_are_clean_and_repeatable() {
        for p in ProtocolKind::CONSENSUS {
            let a = fuzz(p, 0..4).unwrap();
            assert!(a.is_clean(), "{p}: {:?}", a.failures);
            assert_eq!(a, fuzz(p, 0..4).unwrap());
        }
    }
}
