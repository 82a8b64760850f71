use std::process::{Command, Output};

fn gnk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gnk")).args(args).current_dir(env!("CARGO_MANIFEST_DIR")).output().unwrap()
}

fn strip_timestamp(s: &str) -> String {
    let mut v: serde_json::Value = serde_json::from_str(s).unwrap();
    v["manifest"]["timestamp"] = serde_json::Value::Null;
    v.to_string()
}

#[test]
fn verify_smoke_run_is_fast_and_passes() {
    let t = std::time::Instant::now();
    let out = gnk(&["verify", "groupoid", "--samples", "10"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(t.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn verify_all_passes_and_json_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("report.json");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let out = gnk(&["verify", "all", "--seed", "42", "--json", p.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        runs.push(std::fs::read_to_string(&p).unwrap());
    }
    let (ja, jb) = (&runs[0], &runs[1]);
    assert_eq!(strip_timestamp(ja), strip_timestamp(jb));
    let v: serde_json::Value = serde_json::from_str(ja).unwrap();
    assert_eq!(v["manifest"]["seed"], 42);
    assert_eq!(v["passed"], true);
}

#[test]
fn tightened_tolerance_fails_with_diagnostics() {
    let out = gnk(&["verify", "algebroid", "--samples", "5", "--tol", "exp_derivative=1e-14"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("worst offenders"));
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(gnk(&["verify", "bogus"]).status.code(), Some(2));
    assert_eq!(gnk(&["verify", "jet", "--tol", "nope=1"]).status.code(), Some(2));
    assert_eq!(gnk(&["noether", "--config", "/no/such/file.toml"]).status.code(), Some(2));
}

#[test]
fn noether_dilation_scenario_notes_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    let csv = dir.path().join("csv");
    let out = gnk(&["noether", "--config", "klein_gordon_dilation", "--csv", csv.to_str().unwrap(), "--json", json.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("rejected"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["report"]["generators"].as_array().unwrap().len(), 5);
    let files = std::fs::read_dir(&csv).unwrap().count();
    assert_eq!(files, 8);
}

#[test]
fn noether_reads_config_files() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/mechanics.toml");
    assert_eq!(gnk(&["noether", "--config", path]).status.code(), Some(0));
}

#[test]
fn list_reports_builtins() {
    let out = gnk(&["list", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["groupoids"].as_array().unwrap().len(), 4);
    assert_eq!(v["scenarios"].as_array().unwrap().len(), 3);
}

#[test]
fn gnk_threads_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_gnk")).args(["list"]).env("GNK_THREADS", "zero").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_gnk")).args(["verify", "jet", "--samples", "3"]).env("GNK_THREADS", "2").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}
