use std::path::Path;
use std::process::{Command, Output};

use trafficforge_core::behavior::TrajectoryFile;
use trafficforge_core::metrics::PredictionRecord;
use trafficforge_core::synthetic::{
    intersection_map, intersection_scene, reference_trajectories, IntersectionLayout, ReferenceParams, SceneParams,
};
use trafficforge_core::Vec2;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trafficforge"))
        .args(args)
        .env_remove("TRAFFICFORGE_LOG")
        .output()
        .unwrap()
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn write_inputs(dir: &Path) {
    let layout = IntersectionLayout::default();
    std::fs::write(dir.join("map.json"), serde_json::to_string(&intersection_map(&layout)).unwrap()).unwrap();
    let real = reference_trajectories(&ReferenceParams::default(), 60, 4);
    std::fs::write(dir.join("real.json"), serde_json::to_string(&TrajectoryFile::from_points(&real)).unwrap())
        .unwrap();
    let scenes: Vec<_> = (0..3)
        .map(|i| intersection_scene(&layout, &SceneParams::default(), &format!("s{i}"), i))
        .collect();
    std::fs::write(dir.join("scenes.json"), serde_json::to_string(&scenes).unwrap()).unwrap();
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    let out = run(&["simulate", "--help"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("--seed"));
}

#[test]
fn usage_errors_are_validation_errors() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    write_inputs(tmp.path());
    // --seed is mandatory for simulation
    let out = run(&[
        "simulate", "--map", &s(&tmp.path().join("map.json")), "--tracklets", &s(&tmp.path().join("scenes.json")),
        "--pool", "p.json", "--out", &s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn missing_map_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out_path = tmp.path().join("graph.json");
    let out = run(&["build-graph", "--map", "/nonexistent/map.json", "--out", &s(&out_path)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/map.json"));
    assert!(!out_path.exists());
}

#[test]
fn invalid_config_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    write_inputs(tmp.path());
    let d = tmp.path();
    assert!(run(&["profile-pool", "--trajectories", &s(&d.join("real.json")), "--out", &s(&d.join("pool.json"))])
        .status
        .success());
    let out_dir = d.join("logs");
    let out = run(&[
        "simulate", "--map", &s(&d.join("map.json")), "--tracklets", &s(&d.join("scenes.json")),
        "--pool", &s(&d.join("pool.json")), "--out", &s(&out_dir), "--seed", "1",
        "--set", "sim.dt=-0.1", "--set", "sim.bogus=3",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sim.dt") && err.contains("sim.bogus"), "{err}");
    assert!(!out_dir.exists());
}

#[test]
fn end_to_end_with_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    write_inputs(tmp.path());
    let d = tmp.path();
    assert!(run(&["build-graph", "--map", &s(&d.join("map.json")), "--out", &s(&d.join("graph.json"))]).status.success());
    assert!(run(&["profile-pool", "--trajectories", &s(&d.join("real.json")), "--out", &s(&d.join("pool.json"))])
        .status
        .success());
    let out = run(&[
        "simulate", "--map", &s(&d.join("graph.json")), "--tracklets", &s(&d.join("scenes.json")),
        "--pool", &s(&d.join("pool.json")), "--out", &s(&d.join("logs")), "--seed", "5", "--jobs", "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("logs/manifest.json")).unwrap()).unwrap();
    assert!(!manifest["logs"].as_array().unwrap().is_empty());

    // render rejects an observation window longer than the sequence
    let bad = run(&[
        "render", "--logs", &s(&d.join("logs")), "--map", &s(&d.join("graph.json")), "--t-obs", "40",
        "--seq-len", "30", "--out", &s(&d.join("bev_bad")),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(!d.join("bev_bad").exists());

    let gt: Vec<Vec2> = (1..=50).map(|k| Vec2::new(k as f64, 0.0)).collect();
    let lines: Vec<String> = (0..6)
        .map(|i| {
            let samples = (0..6)
                .map(|j| gt.iter().map(|p| *p + Vec2::new(0.0, 0.1 * (i + j) as f64)).collect())
                .collect();
            let rec = PredictionRecord { agent_id: i, gt: gt.clone(), samples, dt: 0.1 };
            serde_json::to_string(&rec).unwrap()
        })
        .collect();
    std::fs::write(d.join("pred.jsonl"), lines.join("\n")).unwrap();
    let out = run(&[
        "metrics", "--predictions", &s(&d.join("pred.jsonl")), "--logs", &s(&d.join("logs")),
        "--map", &s(&d.join("graph.json")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let horizons = report["predictions"]["horizons"].as_array().unwrap();
    assert_eq!(horizons.len(), 5);
    assert!(horizons.iter().all(|h| h["min_ade"].is_number() && h["nll"].is_number()));
    assert!(report["simulation"]["diversity"]["y_wasserstein"]["mean"].is_number());

    let pretty = run(&["metrics", "--predictions", &s(&d.join("pred.jsonl")), "--pretty"]);
    assert!(String::from_utf8_lossy(&pretty.stdout).contains("minADE"));

    // realism needs a seed
    let out = run(&["metrics", "--logs", &s(&d.join("logs")), "--real", &s(&d.join("real.json"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn log_level_comes_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    write_inputs(tmp.path());
    let d = tmp.path();
    let out = Command::new(env!("CARGO_BIN_EXE_trafficforge"))
        .args(["build-graph", "--map", &s(&d.join("map.json")), "--out", &s(&d.join("g.json"))])
        .env("TRAFFICFORGE_LOG", "info")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("edges"));
}
