use std::path::Path;
use std::process::{Command, Output};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/recorded_sample.jsonl");

fn repgame(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repgame"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, runs: u32) -> String {
    let path = dir.join("config.json");
    let cfg = format!(
        r#"{{
            "game": "PGG",
            "pgg": {{ "numAgents": 3, "contributionCost": 10, "multiplicationFactors": [2.0], "rounds": 10 }},
            "languages": ["en"],
            "backends": ["mock"],
            "runs": {runs},
            "masterSeed": 3
        }}"#
    );
    std::fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_exits_zero() {
    let o = repgame(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("pipeline"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(repgame(&["frobnicate"]).status.code(), Some(1));
    let o = repgame(&["pipeline", "--stages", "run,plot"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("plot"), "{}", stderr(&o));
}

#[test]
fn invalid_config_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 0);
    let o = repgame(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("runs"), "{}", stderr(&o));
}

#[test]
fn missing_model_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1);
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    assert_eq!(repgame(&["pipeline", "--stages", "run,encode", "--config", &cfg, "--out", out]).status.code(), Some(0));
    let o = repgame(&["classify", "--config", &cfg, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lstm.json"), "{}", stderr(&o));
}

#[test]
fn mock_run_writes_trajectories_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 2);
    let out = dir.path().join("out");
    let o = repgame(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let printed = String::from_utf8_lossy(&o.stdout).trim().to_string();
    assert_eq!(Path::new(&printed), out.join("manifest.json"));
    let lines = std::fs::read_to_string(out.join("trajectories.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);
}

#[test]
fn default_config_is_mockable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = repgame(&["run", "--mock", "--out", out.to_str().unwrap(), "--workers", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines = std::fs::read_to_string(out.join("trajectories.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 180);
}

#[test]
fn input_cannot_be_combined_with_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = repgame(&["pipeline", "--mock", "--input", FIXTURE, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--input"), "{}", stderr(&o));
}

#[test]
fn recorded_logs_are_analyzed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = repgame(&["analyze", "--mock", "--input", FIXTURE, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for stem in ["pd_total_penalties", "pgg_cooperation_rate", "pgg_end_game"] {
        assert!(out.join("reports").join(format!("{stem}.csv")).is_file(), "{stem}");
    }
}
