use std::fs;
use std::path::Path;
use std::process::Command;

fn uraloc(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_uraloc")).args(args).output().expect("binary runs")
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name).display().to_string()
}

const SMALL: &str = r#"
name = "small"
seed = 2

[[arrays]]
mx = 3
my = 4

[[sources]]
direction_deg = [30.0, 60.0]

[impairments]
pll_phases_deg = [0.0, 40.0, -80.0]
cfo_hz = 1500.0
snr_db = 25.0

[estimator]
grid_step_deg = 2.0
"#;

#[test]
fn simulate_writes_captures_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = uraloc(&["simulate", "--scenario", &scenario("two-array.toml"), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["array-0.capture", "array-1.capture", "bridge-0-1.capture", "truth.toml", "calibration/array-0.capture"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let truth = fs::read_to_string(out.join("truth.toml")).unwrap();
    assert!(truth.contains("simulation_only = true"));
}

#[test]
fn saved_profile_reproduces_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("small.toml");
    fs::write(&file, SMALL).unwrap();
    let file = file.to_str().unwrap();
    let cal = dir.path().join("cal");
    assert!(uraloc(&["calibrate", "--scenario", file, "--out", cal.to_str().unwrap()]).status.success());
    let profile = cal.join("profile.toml");
    let a = uraloc(&["aoa", "--scenario", file, "--out", dir.path().join("a").to_str().unwrap()]);
    let b = uraloc(&[
        "aoa",
        "--scenario",
        file,
        "--profile",
        profile.to_str().unwrap(),
        "--out",
        dir.path().join("b").to_str().unwrap(),
    ]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(fs::read(dir.path().join("a/peaks.toml")).unwrap(), fs::read(dir.path().join("b/peaks.toml")).unwrap());
}

#[test]
fn seed_flag_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("small.toml");
    fs::write(&file, SMALL).unwrap();
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = uraloc(&["simulate", "--scenario", file.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        fs::read(out.join("array-0.capture")).unwrap()
    };
    assert_eq!(run("5", "x"), run("5", "y"));
    assert_ne!(run("5", "x"), run("6", "z"));
}

#[test]
fn failures_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, SMALL.replace("mx = 3", "mx = 3\nspacing = 1.0")).unwrap();
    let o = uraloc(&["aoa", "--scenario", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("scenario:") && err.contains("line"), "{err}");

    let o = uraloc(&["simulate", "--scenario", &scenario("track.toml"), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least one source"));

    let one_array = dir.path().join("one.toml");
    fs::write(&one_array, SMALL.replace("direction_deg = [30.0, 60.0]", "position_m = [1.0, 0.5, 0.3]")).unwrap();
    let o = uraloc(&["locate", "--scenario", one_array.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: locate:"));

    let profile = dir.path().join("broken-profile.toml");
    fs::write(&profile, "not a profile").unwrap();
    let o = uraloc(&[
        "calibrate",
        "--scenario",
        one_array.to_str().unwrap(),
        "--profile",
        profile.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: calibrate:"));
}

#[test]
fn bench_separates_timings_from_results() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("idle.toml");
    // no estimator methods and one array: only simulation and calibration run
    fs::write(&file, SMALL.replace("grid_step_deg = 2.0", "grid_step_deg = 2.0\nmethods = []")).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = uraloc(&["bench", "--scenario", file.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (fs::read(out.join("bench-results.toml")).unwrap(), fs::read_to_string(out.join("timings.toml")).unwrap())
    };
    let (a, timings) = run("a");
    let (b, _) = run("b");
    assert_eq!(a, b);
    let doc: toml::Table = toml::from_str(&timings).unwrap();
    let stages = doc["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 2);
    for s in stages {
        assert!(s["median_s"].as_float().unwrap() < 0.5);
    }
}
