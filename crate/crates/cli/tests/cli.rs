use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn quorumlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quorumlab")).args(args).current_dir(dir).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    ["trace.jsonl", "metrics.csv", "report.txt"].iter().map(|f| (f.to_string(), fs::read(dir.join(f)).unwrap())).collect()
}

#[test]
fn flags_and_config_file_give_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("net.conf"), "latency = uniform:2:6\ndrop = 0.01\n").unwrap();
    fs::write(d.join("faults.conf"), "crash = leader:400:900\n").unwrap();
    let flags = quorumlab(
        &[
            "run", "--protocol", "raft", "--nodes", "4", "--ops", "300", "--clients", "3", "--payload-bytes", "500", "--mix", "0.8",
            "--seed", "7", "--ramp", "0:1,200:3", "--buckets-ms", "250", "--net", "net.conf", "--faults", "faults.conf", "--out", "a",
        ],
        d,
    );
    assert_eq!(code(&flags), 0, "{}", String::from_utf8_lossy(&flags.stderr));
    fs::write(
        d.join("exp.conf"),
        "protocol = raft\nnodes = 4\nseed = 7\nbuckets_ms = 250\n\n[workload]\nops = 300\nclients = 3\npayload_bytes = 500\nmix = 0.8\n\
         ramp = 0:1,200:3\n\n[network]\nlatency = uniform:2:6\ndrop = 0.01\n\n[faults]\ncrash = leader:400:900\n",
    )
    .unwrap();
    let file = quorumlab(&["run", "exp.conf", "--out", "b"], d);
    assert_eq!(code(&file), 0, "{}", String::from_utf8_lossy(&file.stderr));
    assert_eq!(files(&d.join("a")), files(&d.join("b")));
    let report = fs::read_to_string(d.join("a/report.txt")).unwrap();
    assert!(report.contains("leader changes"), "{report}");
}

#[test]
fn repeated_runs_write_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for out in ["x", "y"] {
        let o = quorumlab(&["run", "--protocol", "paxos", "--nodes", "4", "--ops", "200", "--seed", "7", "--out", out], d);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(files(&d.join("x")), files(&d.join("y")));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&quorumlab(&["run", "--protocol", "zab"], d)), 2);
    assert_eq!(code(&quorumlab(&["run", "--protocol", "baseline"], d)), 2, "baseline needs the queue workload");
    assert_eq!(code(&quorumlab(&["run", "missing.conf"], d)), 1);
    fs::write(d.join("dead.conf"), "crash = 1:0\ncrash = 2:0\ncrash = 3:0\n").unwrap();
    let o = quorumlab(&["run", "--nodes", "3", "--ops", "5", "--faults", "dead.conf", "--check"], d);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&quorumlab(&["fuzz", "--protocol", "raft", "--seeds", "3"], d)), 0);
}

#[test]
fn compare_reports_ratios_and_refuses_mismatched_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = quorumlab(&["compare", "--protocols", "raft,raft", "--ops", "200", "--seed", "3"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(d.join("out/report.txt")).unwrap();
    assert!(report.contains("raft/raft"));
    assert!(fs::read_to_string(d.join("out/compare.csv")).unwrap().starts_with("bucket_start_ms,"));

    fs::write(d.join("a.conf"), "protocol = raft\nnodes = 4\n").unwrap();
    fs::write(d.join("b.conf"), "protocol = paxos\nnodes = 5\n").unwrap();
    let o = quorumlab(&["compare", "a.conf", "b.conf", "--ops", "50"], d);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("differ"));
}

#[test]
fn replay_checks_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = quorumlab(&["run", "--scenario", "fuzz", "--protocol", "ct", "--ops", "80", "--seed", "4"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = quorumlab(&["replay", "out/trace.jsonl"], d);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stdout));
    assert!(String::from_utf8_lossy(&r.stdout).contains("verdict: pass"));

    let text = fs::read_to_string(d.join("out/trace.jsonl")).unwrap();
    fs::write(d.join("cut.jsonl"), &text[..text.len() / 2]).unwrap();
    assert_eq!(code(&quorumlab(&["replay", "cut.jsonl"], d)), 5);
    fs::write(d.join("empty.jsonl"), "").unwrap();
    let e = quorumlab(&["replay", "empty.jsonl"], d);
    assert_eq!(code(&e), 0);
    assert!(String::from_utf8_lossy(&e.stdout).contains("verdict: pass"));
}
