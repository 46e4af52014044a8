use hdnet::experiments::{run_scenario, Format, OutputDir};
use hdnet::scenario::load_named_or_path;
use std::fs;

fn small(name: &str, horizon: usize) -> hdnet::scenario::Scenario {
    let mut cfg = load_named_or_path(name).unwrap();
    cfg.run.horizon = horizon;
    cfg.resolve(cfg.run.seeds[0]).unwrap()
}

#[test]
fn trace_and_metrics_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = OutputDir::new(dir.path(), Format::Csv).unwrap();
    let sc = small("two_queue_downlink", 500);
    let r = run_scenario(&sc, 1, Some(&out)).unwrap();

    let trace = fs::read_to_string(dir.path().join("two_queue_downlink-hd-0-s1.trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 501);
    let metrics: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("two_queue_downlink-hd-0-s1.metrics.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(metrics["seed"], 1);
    assert_eq!(metrics["metrics"]["q_bar"], r.record.q_bar);

    run_scenario(&sc, 2, Some(&out)).unwrap();
    let store = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let lines: Vec<_> = store.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("scenario,policy"));
}

#[test]
fn reruns_are_byte_identical() {
    let sc = small("power_minimization", 2000);
    let read = |d: &std::path::Path| {
        fs::read(d.join("power_minimization-hd-0-s1.metrics.json")).unwrap()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_scenario(&sc, 1, Some(&OutputDir::new(a.path(), Format::Json).unwrap())).unwrap();
    run_scenario(&sc, 1, Some(&OutputDir::new(b.path(), Format::Json).unwrap())).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(
        fs::read(a.path().join("power_minimization-hd-0-s1.trace.csv")).unwrap(),
        fs::read(b.path().join("power_minimization-hd-0-s1.trace.csv")).unwrap()
    );
}
