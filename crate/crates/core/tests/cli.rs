use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TANDEM: &str = r#"{
  "experiment": {"kind": "traffic"},
  "model": {"network": {
    "arrivals": [{"family": "exponential", "rate": 1.0}, null],
    "services": [{"family": "exponential", "rate": 2.0}, {"family": "exponential", "rate": 1.25}],
    "routing": [[0.0, 1.0], [0.0, 0.0]]
  }}
}"#;

fn mm1_2(threshold: f64) -> String {
    format!(
        r#"{{
  "experiment": {{"kind": "oracle-compare", "tv_threshold": {threshold}}},
  "model": {{"finite_queue": {{
    "arrival": {{"family": "exponential", "rate": 0.8}},
    "service": {{"family": "exponential", "rate": 1.0}},
    "ell0": 2
  }}}},
  "horizon": {{"events": 200000}}
}}"#
    )
}

fn palmbar(dir: &Path, config: &str, args: &[&str], env_seed: Option<&str>) -> Output {
    let path = dir.join("config.json");
    fs::write(&path, config).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_palmbar"));
    cmd.arg("run").arg(&path).arg("--out").arg(dir.join("out")).args(args);
    cmd.env_remove("PALM_BAR_SEED");
    if let Some(s) = env_seed {
        cmd.env("PALM_BAR_SEED", s);
    }
    cmd.output().unwrap()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("out/summary.json")).unwrap()).unwrap()
}

#[test]
fn traffic_prints_throughputs_and_loads() {
    let dir = tempfile::tempdir().unwrap();
    let out = palmbar(dir.path(), TANDEM, &[], None);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("alpha = (1, 1)"), "{stdout}");
    assert!(stdout.contains("rho = (0.5, 0.8)"), "{stdout}");
    let csv = fs::read_to_string(dir.path().join("out/traffic.csv")).unwrap();
    assert!(csv.starts_with("# config_sha256="));
    assert!(csv.contains("\n# seed=0\n"));
}

#[test]
fn oracle_compare_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = palmbar(dir.path(), &mm1_2(0.01), &["--seed", "4"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8(out.stdout).unwrap().contains("TV distance at station 0"));

    let dir = tempfile::tempdir().unwrap();
    let out = palmbar(dir.path(), &mm1_2(1e-9), &["--seed", "4"], None);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(summary(dir.path())["verdict"], serde_json::json!(false));
}

#[test]
fn schema_errors_name_the_field_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = TANDEM.replace("\"routing\"", "\"routes\"");
    let out = palmbar(dir.path(), &bad, &[], None);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 6"), "{err}");
    assert!(err.contains("routes"), "{err}");
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    palmbar(dir.path(), TANDEM, &[], Some("77"));
    assert_eq!(summary(dir.path())["provenance"]["seed"], 77);
    palmbar(dir.path(), TANDEM, &["--seed", "5"], Some("77"));
    assert_eq!(summary(dir.path())["provenance"]["seed"], 5);
    let out = palmbar(dir.path(), TANDEM, &[], Some("seven"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn json_format_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = palmbar(
        dir.path(),
        &mm1_2(0.05),
        &["--format", "json", "--events", "5000", "--reps", "2", "--warmup", "0.1", "--threads", "2"],
        None,
    );
    assert_eq!(out.status.code(), Some(0));
    let tv: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out/tv.json")).unwrap()).unwrap();
    assert_eq!(tv["columns"][1], "tv");
    let config = &tv["provenance"]["config"];
    assert_eq!(config["horizon"]["events"], 5000);
    assert_eq!(config["replications"], 2);
    assert_eq!(config["warmup"], 0.1);
}
