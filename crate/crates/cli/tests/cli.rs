use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use stackelberg_heat::presets;
use stackelberg_heat::scenario::BoxRegion;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stackelberg-heat"))
}

fn run(args: &[&str], out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--jobs")
        .arg("2")
        .output()
        .unwrap()
}

fn run_stdin(args: &[&str], out: &Path, input: &str) -> Output {
    let mut child = bin()
        .args(args)
        .arg("--out")
        .arg(out)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(input.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_passes_on_tiny_and_writes_junit() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--preset", "tiny"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let xml = fs::read_to_string(dir.path().join("suite.xml")).unwrap();
    assert!(xml.contains("failures=\"0\""));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "verify");
    assert!(manifest["outputs"]["suite.xml"].is_string());
}

#[test]
fn inverted_box_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = presets::tiny(2);
    config.follower_boxes[0] = BoxRegion::new(vec![3.0, 1.0], vec![1.0, -1.0]);
    let path = dir.path().join("bad.json");
    fs::write(&path, config.to_json_string().unwrap()).unwrap();
    let o = run(
        &["solve-state", "--scenario", path.to_str().unwrap()],
        &dir.path().join("out"),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("follower_boxes[0]"), "{}", stderr(&o));
}

#[test]
fn negative_margin_warns_but_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = presets::tiny(2);
    config.alpha = vec![20.0, 20.0];
    let o = run_stdin(
        &["solve-nash"],
        dir.path(),
        &config.to_json_string().unwrap(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["margin"].as_f64().unwrap() <= 0.0);
    assert!(report["warning"].as_str().unwrap().contains("margin"));
    assert!(dir.path().join("follower_1.bin").exists());
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(
            &[
                "controllability",
                "--preset",
                "tiny",
                "--eps-sweep",
                "1e-1,1e-2",
                "--deterministic",
            ],
            out,
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for name in [
        "controllability.csv",
        "physical_controls.csv",
        "manifest.json",
        "report.json",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs"
        );
    }
    let manifest = fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(!manifest.contains("\"seconds\""));
}

#[test]
fn scenario_is_read_from_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let json = presets::tiny(1).to_json_string().unwrap();
    let o = run_stdin(&["solve-state", "--scenario", "-"], dir.path(), &json);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("final_state.bin").exists());
    assert!(dir.path().join("checkpoints/state_0004.bin").exists());
    let echoed = fs::read_to_string(dir.path().join("scenario.json")).unwrap();
    assert_eq!(
        echoed.trim_end(),
        presets::tiny(1).normalized().to_json_string().unwrap()
    );
}

#[test]
fn bad_arguments_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["spectrum", "--preset", "tiny", "--grid", "nonsense"][..],
        &["spectrum", "--preset", "nowhere"][..],
        &["solve-leader", "--preset", "tiny", "--eps-sweep", "1e-1,-1"][..],
        &["frobnicate"][..],
    ] {
        let o = run(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn spectrum_lists_the_lowest_eigenvalues() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["spectrum", "--preset", "desk", "--count", "3"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    let values: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 3);
    for (k, v) in values.iter().enumerate() {
        assert!((v - (0.5 + 0.5 * k as f64)).abs() < 1e-2, "{k}: {v}");
    }
}

#[test]
fn eps_sweep_parser() {
    assert_eq!(
        stackelberg_heat_cli::parse_eps_sweep("1e-1, 1e-2").unwrap(),
        vec![0.1, 0.01]
    );
    assert!(stackelberg_heat_cli::parse_eps_sweep("").is_err());
    assert!(stackelberg_heat_cli::parse_eps_sweep("0.1,x").is_err());
}
