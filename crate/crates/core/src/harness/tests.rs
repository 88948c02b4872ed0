use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::*;

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const P2P: &str = r#"
name = "t"
[clos]
hosts = 2
gpus_per_host = 1
nics_per_host = 2
leaves = 2
spines = 2
nic_gbps = 100.0
[workload]
kind = "p2p"
bytes = 8388608
"#;

#[test]
fn lists_unique_scenarios() {
    let s = list_scenarios();
    assert!(s.len() >= 6);
    let names: HashSet<_> = s.iter().map(|s| s.name).collect();
    assert_eq!(names.len(), s.len());
    assert!(s.iter().all(|s| !s.description.is_empty()));
}

#[test]
fn unknown_scenario_is_reported() {
    let e = run_scenario("nope", &ScenarioParams::default()).unwrap_err();
    assert!(matches!(e, HarnessError::UnknownScenario(ref n) if n == "nope"));
}

#[test]
fn zero_window_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "c.toml",
        &format!("window_sizes = [8, 0]\n{P2P}"),
    );
    let d = validate_config(&p, &Overrides::default());
    assert_eq!(d.len(), 1, "{d:?}");
    assert_eq!(d[0].severity, Severity::Error);
    assert_eq!(d[0].field, "window_sizes[1]");
    assert!(d[0].message.contains("window size must be ≥ 1"));
}

#[test]
fn zero_window_from_env_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.toml", P2P);
    let o = Overrides {
        window_size: Some(0),
        ..Default::default()
    };
    let d = validate_config(&p, &o);
    assert!(d
        .iter()
        .any(|d| d.message.contains("window size must be ≥ 1")));
}

#[test]
fn unknown_fault_port_is_diagnosed() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "f.toml",
        "[[fault]]\nport = \"h9.nic0\"\nat_s = 1.0\nstate = \"down\"\n",
    );
    let p = write(dir.path(), "c.toml", &format!("faults = \"f.toml\"\n{P2P}"));
    let d = validate_config(&p, &Overrides::default());
    assert!(
        d.iter()
            .any(|d| d.field == "fault[0].port" && d.message.contains("h9.nic0")),
        "{d:?}"
    );
    let e = run_config(&p, &Overrides::default()).unwrap_err();
    assert!(matches!(e, HarnessError::Config(_)));
}

#[test]
fn fault_needs_exactly_one_time() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "f.toml",
        "[[fault]]\nport = \"h0.nic0\"\nstate = \"down\"\n",
    );
    let p = write(dir.path(), "c.toml", &format!("faults = \"f.toml\"\n{P2P}"));
    let d = validate_config(&p, &Overrides::default());
    assert!(d.iter().any(|d| d.field == "fault[0].at"), "{d:?}");
}

#[test]
fn missing_topology_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "c.toml",
        "topology = \"absent.toml\"\n[workload]\nkind = \"p2p\"\nbytes = 1\n",
    );
    let e = run_config(&p, &Overrides::default()).unwrap_err();
    let HarnessError::Config(d) = &e else {
        panic!("{e}")
    };
    assert!(d.iter().any(|d| d.field == "topology"));
    assert!(
        e.to_string()
            .contains(&dir.path().join("absent.toml").display().to_string()),
        "{e}"
    );
}

#[test]
fn missing_config_is_a_config_error() {
    let e = run_config(Path::new("/nonexistent/run.toml"), &Overrides::default()).unwrap_err();
    assert!(matches!(e, HarnessError::Config(_)));
    assert!(e.to_string().contains("/nonexistent/run.toml"));
}

#[test]
fn unknown_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.toml", &format!("bogus = 1\n{P2P}"));
    let d = validate_config(&p, &Overrides::default());
    assert!(d.iter().any(|d| d.message.contains("bogus")), "{d:?}");
}

#[test]
fn bad_host_index_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.toml", &format!("{P2P}dst_host = 5\n"));
    let d = validate_config(&p, &Overrides::default());
    assert!(d.iter().any(|d| d.field == "workload.dst_host"), "{d:?}");
}

#[test]
fn shipped_configs_are_clean() {
    let dir = configs_dir();
    for name in ["defaults.toml", "failover-p2p.toml", "pipeline.toml"] {
        let d = validate_config(&dir.join(name), &Overrides::default());
        assert!(d.is_empty(), "{name}: {d:?}");
    }
}

#[test]
fn defaults_file_matches_stack_defaults() {
    let cfg = load_run_config(&configs_dir().join("defaults.toml"), &Overrides::default()).unwrap();
    assert_eq!(cfg.transport.timeout_exponent, 18);
    assert_eq!(cfg.transport.retry_count, 7);
    assert_eq!(cfg.transport.qp_number, 2);
    assert_eq!(cfg.window_sizes, vec![8]);
    let Workload::Allreduce(r) = &cfg.workload else {
        panic!()
    };
    assert_eq!(r.channels, Some(32));
    assert_eq!(r.nbytes, 4 << 30);
}

#[test]
fn env_overrides_parse() {
    let env = |k: &str| match k {
        "CCLSIM_IB_TIMEOUT" => Some("14".to_string()),
        "CCLSIM_IB_RETRY_CNT" => Some(" 3 ".to_string()),
        "CCLSIM_WINDOW_SIZE" => Some("32".to_string()),
        "CCLSIM_QP_NUMBER" => Some("1".to_string()),
        "CCLSIM_CHANNEL_NUMBER" => Some("4".to_string()),
        _ => None,
    };
    let o = Overrides::from_lookup(env).unwrap();
    assert_eq!(
        o,
        Overrides {
            ib_timeout: Some(14),
            ib_retry_cnt: Some(3),
            window_size: Some(32),
            qp_number: Some(1),
            channel_number: Some(4),
        }
    );
    let cfg = load_run_config(&configs_dir().join("defaults.toml"), &o).unwrap();
    assert_eq!(cfg.transport.timeout_exponent, 14);
    assert_eq!(cfg.transport.retry_count, 3);
    assert_eq!(cfg.transport.qp_number, 1);
    assert_eq!(cfg.window_sizes, vec![32]);
    let Workload::Allreduce(r) = &cfg.workload else {
        panic!()
    };
    assert_eq!(r.channels, Some(4));
}

#[test]
fn env_override_garbage_is_diagnosed() {
    let d = Overrides::from_lookup(|k| (k == "CCLSIM_IB_TIMEOUT").then(|| "soon".to_string()))
        .unwrap_err();
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].field, "CCLSIM_IB_TIMEOUT");
    assert_eq!(
        Overrides::from_lookup(|_| None).unwrap(),
        Overrides::default()
    );
}

#[test]
fn config_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "c.toml",
        &format!("window_sizes = [1, 8]\n{P2P}messages = 16\n"),
    );
    let mut out = run_config(&p, &Overrides::default()).unwrap();
    assert!(out.summary.status.is_completed());
    assert_eq!(out.summary.integrity, Some(true));
    assert_eq!(out.summary.monitor.len(), 2);
    let written = out.write(&dir.path().join("out")).unwrap();
    assert!(written.iter().any(|p| p.ends_with("summary.json")));
    assert!(written.iter().any(|p| p.ends_with("samples_w8.csv")));
    let json: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json["status"]["state"], "completed");
    assert_eq!(json["files"].as_array().unwrap().len(), out.files.len());
}

#[test]
fn permanent_fault_aborts_the_run() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "f.toml",
        "[[fault]]\nport = \"h0.nic0\"\nat_ns = 0\nstate = \"down\"\n[[fault]]\nport = \"h0.nic1\"\nat_ns = 0\nstate = \"down\"\n",
    );
    let body = format!("faults = \"f.toml\"\nhorizon_s = 5.0\n{P2P}[transport]\ntimeout_exponent = 4\nretry_count = 1\n");
    let p = write(dir.path(), "c.toml", &body);
    let out = run_config(&p, &Overrides::default()).unwrap();
    assert!(!out.summary.status.is_completed(), "{}", out.summary);
    assert_eq!(out.summary.makespan_ns, None);
}

fn run_twice(name: &str, params: &ScenarioParams) {
    let a = run_scenario(name, params).unwrap();
    let b = run_scenario(name, params).unwrap();
    assert_eq!(a.summary.to_json(), b.summary.to_json(), "{name}");
    assert_eq!(a.files, b.files, "{name}");
}

#[test]
fn scenarios_are_deterministic() {
    let params = ScenarioParams {
        seed: 11,
        trials: Some(20),
        ..Default::default()
    };
    for name in [
        "p2p-modes",
        "monitor-figure11",
        "pipeline-1f1b",
        "fuzz-failover",
        "trigger-discrimination",
    ] {
        run_twice(name, &params);
    }
}

#[test]
fn config_runs_are_deterministic() {
    let p = configs_dir().join("failover-p2p.toml");
    let a = run_config(&p, &Overrides::default()).unwrap();
    let b = run_config(&p, &Overrides::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seed_changes_randomized_output() {
    let p = |seed| ScenarioParams {
        seed,
        trials: Some(10),
        ..Default::default()
    };
    let a = run_scenario("fuzz-failover", &p(1)).unwrap();
    let b = run_scenario("fuzz-failover", &p(2)).unwrap();
    assert_ne!(a.files, b.files);
}
