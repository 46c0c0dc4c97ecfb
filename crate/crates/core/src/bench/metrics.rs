//! Time-bucketed metrics computed from a finished trace.
//!
//! CSV columns, in order:
//!
//! `bucket_start_ms, write_ops, write_latency_mean_ms, write_latency_max_ms,
//! read_ops, read_latency_mean_ms, read_latency_max_ms, write_rps, read_rps`,
//! then `load_n<i>` for every node, then `sent_kb_s_n<i>`, then
//! `recv_kb_s_n<i>`. Floats use three decimals; KB is 1000 bytes.
//!
//! `load` is the time-averaged number of inputs a node is serving or has
//! queued, the analogue of a Unix load average. With no queueing it is the
//! fraction of time the node's handler is busy.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::consensus::OpClass;
use crate::sim::{SimTime, TraceEvent, TraceKind};

pub const DEFAULT_BUCKET: SimTime = SimTime::from_millis(1000);

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub ops: u64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSample {
    pub bucket_start: SimTime,
    pub write: LatencyStats,
    pub read: LatencyStats,
    pub write_rps: f64,
    pub read_rps: f64,
    pub node_load: Vec<f64>,
    pub net_sent_kb_s: Vec<f64>,
    pub net_recv_kb_s: Vec<f64>,
}

impl MetricsSample {
    fn empty(bucket_start: SimTime, nodes: usize) -> Self {
        MetricsSample {
            bucket_start,
            write: LatencyStats::default(),
            read: LatencyStats::default(),
            write_rps: 0.0,
            read_rps: 0.0,
            node_load: vec![0.0; nodes],
            net_sent_kb_s: vec![0.0; nodes],
            net_recv_kb_s: vec![0.0; nodes],
        }
    }
}

fn add_latency(stats: &mut LatencyStats, ms: f64) {
    // Running sum kept in mean_ms until finalization.
    stats.ops += 1;
    stats.mean_ms += ms;
    stats.max_ms = stats.max_ms.max(ms);
}

/// Aggregates `trace` into buckets of width `bucket` covering `[0, end)`,
/// where `end` is the last event time.
pub fn sample<M>(trace: &[TraceEvent<M>], bucket: SimTime, nodes: usize) -> Vec<MetricsSample> {
    assert!(bucket > SimTime::ZERO, "bucket width must be positive");
    let width = bucket.as_micros();
    let Some(end) = trace.iter().map(|e| e.time.as_micros()).max() else {
        return Vec::new();
    };
    let count = (end / width + 1) as usize;
    let mut out: Vec<MetricsSample> = (0..count).map(|i| MetricsSample::empty(SimTime::from_micros(i as u64 * width), nodes)).collect();
    let index = |t: u64| ((t / width) as usize).min(count - 1);
    let mut busy = vec![vec![0u64; nodes]; count];
    // Adds `[from, to)` to a node's load integral, split across buckets.
    let mut occupy = |node: usize, from: u64, to: u64| {
        let mut t = from;
        while t < to {
            let b = index(t);
            let bucket_end = ((b as u64 + 1) * width).max(t + 1);
            let upto = if b == count - 1 { to } else { to.min(bucket_end) };
            busy[b][node] += upto - t;
            t = upto;
        }
    };
    for ev in trace {
        let t = ev.time.as_micros();
        let node = ev.node.map(|n| n.index());
        match &ev.kind {
            TraceKind::ClientResp { class, latency_us, .. } => {
                let ms = *latency_us as f64 / 1000.0;
                let s = &mut out[index(t)];
                match class {
                    OpClass::Write => add_latency(&mut s.write, ms),
                    OpClass::Read => add_latency(&mut s.read, ms),
                }
            }
            TraceKind::Send { bytes, .. } => {
                if let Some(n) = node.filter(|n| *n < nodes) {
                    out[index(t)].net_sent_kb_s[n] += *bytes as f64;
                }
            }
            TraceKind::Deliver { bytes, wait_us, cost_us, .. } => {
                if let Some(n) = node.filter(|n| *n < nodes) {
                    out[index(t)].net_recv_kb_s[n] += *bytes as f64;
                    occupy(n, t - wait_us, t + cost_us);
                }
            }
            TraceKind::Timer { wait_us, cost_us, .. } | TraceKind::Request { wait_us, cost_us, .. } => {
                if let Some(n) = node.filter(|n| *n < nodes) {
                    occupy(n, t - wait_us, t + cost_us);
                }
            }
            _ => {}
        }
    }
    let secs = width as f64 / 1e6;
    for (s, busy) in out.iter_mut().zip(busy) {
        for st in [&mut s.write, &mut s.read] {
            if st.ops > 0 {
                st.mean_ms /= st.ops as f64;
            }
        }
        s.write_rps = s.write.ops as f64 / secs;
        s.read_rps = s.read.ops as f64 / secs;
        for (load, b) in s.node_load.iter_mut().zip(&busy) {
            *load = *b as f64 / width as f64;
        }
        for kb in s.net_sent_kb_s.iter_mut().chain(s.net_recv_kb_s.iter_mut()) {
            *kb /= 1000.0 * secs;
        }
    }
    out
}

pub fn csv_header(nodes: usize) -> String {
    let mut h = String::from(
        "bucket_start_ms,write_ops,write_latency_mean_ms,write_latency_max_ms,read_ops,read_latency_mean_ms,read_latency_max_ms,write_rps,read_rps",
    );
    for prefix in ["load", "sent_kb_s", "recv_kb_s"] {
        for n in 1..=nodes {
            let _ = write!(h, ",{prefix}_n{n}");
        }
    }
    h
}

/// Renders samples as CSV with a header row.
pub fn to_csv(samples: &[MetricsSample], nodes: usize) -> String {
    let mut out = csv_header(nodes);
    out.push('\n');
    for s in samples {
        let _ = write!(
            out,
            "{},{},{:.3},{:.3},{},{:.3},{:.3},{:.3},{:.3}",
            s.bucket_start.as_micros() / 1000,
            s.write.ops,
            s.write.mean_ms,
            s.write.max_ms,
            s.read.ops,
            s.read.mean_ms,
            s.read.max_ms,
            s.write_rps,
            s.read_rps
        );
        for series in [&s.node_load, &s.net_sent_kb_s, &s.net_recv_kb_s] {
            for v in series {
                let _ = write!(out, ",{v:.3}");
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::{AppResult, ClientId, CommandId};
    use crate::sim::NodeId;

    fn resp(t_ms: u64, class: OpClass, latency_ms: u64) -> TraceEvent<()> {
        TraceEvent::new(
            SimTime::from_millis(t_ms),
            None,
            TraceKind::ClientResp {
                client: ClientId(0),
                command: CommandId(t_ms),
                class,
                server: NodeId(1),
                latency_us: latency_ms * 1000,
                result: AppResult::Ok,
            },
        )
    }

    #[test]
    fn single_op_sets_mean_and_max() {
        let s = sample(&[resp(500, OpClass::Write, 7)], DEFAULT_BUCKET, 1);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].write.mean_ms, s[0].write.max_ms), (7.0, 7.0));
        assert!(s.iter().all(|b| b.read.ops == 0 && b.read_rps == 0.0));
    }

    /// Ten ops over two 100 ms buckets, worked out by hand:
    /// bucket 0 writes 2,4,6 (mean 4, max 6), reads 1,3 (mean 2, max 3);
    /// bucket 1 writes 10,20 (mean 15, max 20), reads 5,5,8 (mean 6, max 8).
    /// Node 1 sends 500 B at t=10 and 1500 B at t=150; node 2 receives the
    /// first at t=20 after waiting 10 ms and is served for 40 ms.
    #[test]
    fn hand_built_ten_op_fixture() {
        let mut trace = vec![
            resp(10, OpClass::Write, 2),
            resp(20, OpClass::Write, 4),
            resp(30, OpClass::Write, 6),
            resp(40, OpClass::Read, 1),
            resp(50, OpClass::Read, 3),
            resp(110, OpClass::Write, 10),
            resp(120, OpClass::Write, 20),
            resp(130, OpClass::Read, 5),
            resp(140, OpClass::Read, 5),
            resp(199, OpClass::Read, 8),
        ];
        trace.push(TraceEvent::new(
            SimTime::from_millis(10),
            Some(NodeId(1)),
            TraceKind::Send { env: 0, dst: NodeId(2), bytes: 500, deliver_at: SimTime::from_millis(20), dup: false, msg: () },
        ));
        trace.push(TraceEvent::new(
            SimTime::from_millis(150),
            Some(NodeId(1)),
            TraceKind::Send { env: 1, dst: NodeId(2), bytes: 1500, deliver_at: SimTime::from_millis(160), dup: false, msg: () },
        ));
        trace.push(TraceEvent::new(
            SimTime::from_millis(80),
            Some(NodeId(2)),
            TraceKind::Deliver { env: 0, src: NodeId(1), bytes: 500, wait_us: 10_000, cost_us: 40_000, msg: () },
        ));
        trace.sort_by_key(|e| e.time);
        let s = sample(&trace, SimTime::from_millis(100), 2);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].write.ops, s[0].write.mean_ms, s[0].write.max_ms), (3, 4.0, 6.0));
        assert_eq!((s[0].read.ops, s[0].read.mean_ms, s[0].read.max_ms), (2, 2.0, 3.0));
        assert_eq!((s[1].write.ops, s[1].write.mean_ms, s[1].write.max_ms), (2, 15.0, 20.0));
        assert_eq!((s[1].read.ops, s[1].read.mean_ms, s[1].read.max_ms), (3, 6.0, 8.0));
        assert_eq!((s[0].write_rps, s[0].read_rps), (30.0, 20.0));
        assert_eq!((s[1].write_rps, s[1].read_rps), (20.0, 30.0));
        // 500 B in 0.1 s = 5 KB/s; 1500 B = 15 KB/s.
        assert_eq!(s[0].net_sent_kb_s, vec![5.0, 0.0]);
        assert_eq!(s[1].net_sent_kb_s, vec![15.0, 0.0]);
        assert_eq!(s[0].net_recv_kb_s, vec![0.0, 5.0]);
        // Node 2 holds the message over [70, 120): 30 ms in bucket 0, 20 in bucket 1.
        assert!((s[0].node_load[1] - 0.3).abs() < 1e-12);
        assert!((s[1].node_load[1] - 0.2).abs() < 1e-12);
        let ops: u64 = s.iter().map(|b| b.write.ops + b.read.ops).sum();
        assert_eq!(ops, 10);
        let csv = to_csv(&s, 2);
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "0,3,4.000,6.000,2,2.000,3.000,30.000,20.000,0.000,0.300,5.000,0.000,0.000,5.000"
        );
    }

    #[test]
    fn empty_trace_has_no_buckets() {
        assert!(sample::<()>(&[], DEFAULT_BUCKET, 3).is_empty());
    }
}
