//! Exit-code and artifact contracts of the `disagg` binary:
//! 0 success, 1 validation error (bad inputs, schema violations, missing
//! files), 2 runtime error. Error messages name the offending artifact.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_disagg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut command = Command::new(env!("CARGO_BIN_EXE_disagg"));
    command.args(args);
    for (key, value) in env {
        command.env(key, value);
    }
    command.output().expect("binary runs")
}

fn generate_small(dir: &Path) {
    let config = dir.join("synth.json");
    std::fs::write(
        &config,
        r#"{ "seed": 5, "n_regions": 2, "agents_per_region": 30, "substations_per_region": 3, "urbanization_clusters": 2 }"#,
    )
    .unwrap();
    let out = run(&[
        "generate",
        "--out",
        dir.join("scen").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert!(out.status.success());
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["evaluate", "--help"]).status.code(), Some(0));
}

#[test]
fn unknown_flag_exits_one() {
    assert_eq!(run(&["generate", "--bogus"]).status.code(), Some(1));
}

#[test]
fn missing_scenario_exits_one_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = run(&[
        "train",
        "--scenario",
        missing.to_str().unwrap(),
        "--out",
        dir.path().join("params.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nowhere"), "stderr must name the path: {stderr}");
}

#[test]
fn manifest_with_zero_methods_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path());
    let manifest = dir.path().join("manifest.json");
    std::fs::write(
        &manifest,
        format!(
            r#"{{ "version": 1, "scenario": "{}", "output_dir": "{}", "method_sets": [], "methods": [] }}"#,
            dir.path().join("scen").display(),
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let out = run(&["evaluate", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no methods"));
}

#[test]
fn schema_violation_exits_one_and_names_artifact() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path());
    // corrupt one agent radiance value
    let agents = dir.path().join("scen").join("agents.csv");
    let text = std::fs::read_to_string(&agents).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[1].split(',').map(String::from).collect();
    fields[8] = "not_a_number".into();
    lines[1] = fields.join(",");
    std::fs::write(&agents, lines.join("\n")).unwrap();

    let out = run(&[
        "train",
        "--scenario",
        dir.path().join("scen").to_str().unwrap(),
        "--out",
        dir.path().join("params.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("agents.csv"), "names the file: {stderr}");
    assert!(stderr.contains("ntl"), "names the column: {stderr}");
    assert!(stderr.contains("row 1"), "names the row: {stderr}");
}

#[test]
fn invalid_method_spec_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path());
    let manifest = dir.path().join("manifest.json");
    std::fs::write(
        &manifest,
        format!(
            r#"{{
  "version": 1,
  "scenario": "{}",
  "output_dir": "{}",
  "method_sets": [],
  "methods": [ {{ "base": "gpm", "integration": "prior_loss", "aux": ["ntl"] }} ]
}}"#,
            dir.path().join("scen").display(),
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let out = run(&["evaluate", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("prior-loss"));
}

#[test]
fn out_dir_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("synth.json");
    std::fs::write(
        &config,
        r#"{ "seed": 5, "n_regions": 2, "agents_per_region": 30, "substations_per_region": 3, "urbanization_clusters": 2 }"#,
    )
    .unwrap();
    let target = dir.path().join("from_env");
    let out = run_env(
        &["generate", "--config", config.to_str().unwrap()],
        &[("DISAGG_OUT_DIR", target.to_str().unwrap())],
    );
    assert!(out.status.success());
    assert!(target.join("agents.csv").exists());

    // without the flag and without the variable the command fails validation
    let out = Command::new(env!("CARGO_BIN_EXE_disagg"))
        .args(["generate", "--config", config.to_str().unwrap()])
        .env_remove("DISAGG_OUT_DIR")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn generate_never_mutates_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("synth.json");
    let body = r#"{ "seed": 5, "n_regions": 2, "agents_per_region": 30, "substations_per_region": 3, "urbanization_clusters": 2 }"#;
    std::fs::write(&config, body).unwrap();
    let out = run(&[
        "generate",
        "--out",
        dir.path().join("scen").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&config).unwrap(), body);
}
