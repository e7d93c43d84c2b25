use std::fs;
use std::process::{Command, Output};

fn dhs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dhs")).args(args).env("RUST_LOG", "warn").output().expect("dhs runs")
}

#[test]
fn grid_convert_round_trips_through_the_binary_format() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("scene.json");
    fs::write(
        &json,
        r#"{"voxel_size":0.1,"origin":[0,0,0],"dims":[20,20,10],"boxes":[{"min":[0.5,0,0.5],"max":[1.0,0.8,1.2],"tag":"table"}]}"#,
    )
    .unwrap();
    let grid = dir.path().join("scene.grid");
    let back = dir.path().join("back.json");
    let grid2 = dir.path().join("back.grid");
    for (a, b) in [(&json, &grid), (&grid, &back), (&back, &grid2)] {
        let out = dhs(&["grid", "convert", a.to_str().unwrap(), b.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(fs::read(&grid).unwrap(), fs::read(&grid2).unwrap());

    let bad = dhs(&["grid", "convert", json.to_str().unwrap(), back.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn bench_on_an_empty_directory_exits_with_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dhs(&["bench", "--scenarios", dir.path().to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let missing = dhs(&["run", "--scenario", "/nonexistent/scenario.json", "--out", dir.path().to_str().unwrap()]);
    assert!(!missing.status.success());
}

#[test]
fn gen_data_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = a.path().join("spec.json");
    fs::write(&cfg, r#"{"num_scenes": 2, "clips_per_scene": 3}"#).unwrap();
    for d in [&a, &b] {
        let out = dhs(&["gen-data", "--config", cfg.to_str().unwrap(), "--seed", "4", "--out", d.path().join("ds").to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let manifest = |d: &tempfile::TempDir| fs::read(d.path().join("ds/manifest.json")).unwrap();
    assert_eq!(manifest(&a), manifest(&b));
}
