use quorumlab_web::{collision_demo, compare_protocols, run_config, scenario_text};
use serde_json::Value;

fn json(s: &str) -> Value {
    serde_json::from_str(s).expect("exports return JSON")
}

#[test]
fn scenario_text_round_trips_through_run_config() {
    let text = scenario_text("fuzz", "raft", 3).replace("ops = 500", "ops = 60");
    let v = json(&run_config(&text));
    assert_eq!(v["protocol"], "raft");
    assert_eq!(v["clean"], true);
    assert!(!v["buckets"].as_array().unwrap().is_empty());
    assert!(v["markers"].as_array().unwrap().iter().any(|m| m["label"] == "crash"));
}

#[test]
fn bad_input_is_reported_not_thrown() {
    assert!(json(&run_config("nodes = many")).get("error").is_some());
    assert!(json(&compare_protocols("[workload]\nops = 10", "raft,zab")).get("error").is_some());
    assert_eq!(scenario_text("fuzz", "zab", 1), "");
}

#[test]
fn compare_returns_one_view_per_protocol() {
    let v = json(&compare_protocols("[workload]\nops = 50\nclients = 2", "raft, paxos"));
    let runs = v.as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[1]["protocol"], "paxos");
}

#[test]
fn collision_demo_marks_duplicates() {
    let fast = json(&collision_demo(0, 7));
    assert_eq!(fast["duplicate_pops"], 0);
    let slow = json(&collision_demo(1000, 7));
    let dups = slow["duplicate_pops"].as_u64().unwrap();
    assert!(dups > 0);
    let marked = slow["pops"].as_array().unwrap().iter().filter(|p| p["duplicate"] == true).count() as u64;
    assert_eq!(marked, 2 * dups);
}
