use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn multiphase(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multiphase"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("MULTIPHASE_OUT_DIR")
        .output()
        .unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn min_crb_prints_value_and_six_minimizers() {
    let dir = tempfile::tempdir().unwrap();
    let o = multiphase(&["min-crb", "--device", "ideal"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("min Tr(F^-1) = 3.866025"), "{text}");
    assert!(text.contains("minimizers (6):"));
    let v = json(&dir.path().join("min_crb.json"));
    assert_eq!(v["minimizers"].as_array().unwrap().len(), 6);
    assert_eq!(v["config"]["particles"], 2000);
}

#[test]
fn missing_config_is_a_config_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = multiphase(&["campaign", "--config", "missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.toml"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let o = multiphase(&["run", "--set", "policy.kk=3"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kk"), "{}", stderr(&o));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "probes = 10\nparticels = 50\n").unwrap();
    let o = multiphase(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("particels"), "{}", stderr(&o));
}

#[test]
fn invalid_values_name_the_key_and_domain() {
    let dir = tempfile::tempdir().unwrap();
    let o = multiphase(&["run", "--set", "resample.a=1.5"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("resample.a"), "{}", stderr(&o));

    let o = multiphase(&["run", "--strategy", "greedy"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("greedy"));

    let o = multiphase(&["posterior-snapshot", "--probes", "5", "--steps", "9"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--steps"));
}

#[test]
fn help_lists_defaults_and_exits_zero() {
    let o = Command::new(env!("CARGO_BIN_EXE_multiphase"))
        .args(["campaign", "--help"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    for key in ["probes = 100", "particles = 2000", "a = 0.98", "trigger_fraction = 0.5", "K = 20"] {
        assert!(text.contains(key), "missing {key}");
    }
}

#[test]
fn campaign_writes_outputs_with_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let o = multiphase(
        &[
            "campaign", "--probes", "12", "--repetitions", "2", "--phase-pairs", "2",
            "--particles", "300", "--seed", "7", "--traces", "--set", "policy.utility_grid=6",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("campaign.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "N,L,L1,L2,cross,L_wrapped,L1_wrapped,L2_wrapped,cross_wrapped,cov_trace,crb");
    assert_eq!(lines.len(), 13);
    let v = json(&dir.path().join("campaign.json"));
    assert_eq!(v["config"]["seed"], 7);
    assert_eq!(v["config"]["policy"]["utility_grid"], 6);
    assert_eq!(v["runs"], 4);
    assert_eq!(v["failures"].as_array().unwrap().len(), 0);
    let traces = std::fs::read_dir(dir.path().join("traces")).unwrap().count();
    assert_eq!(traces, 4);
    // no temporary files are left behind
    for e in std::fs::read_dir(dir.path()).unwrap() {
        let name = e.unwrap().file_name().into_string().unwrap();
        assert!(!name.starts_with('.'), "{name}");
    }
}

#[test]
fn out_dir_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_multiphase"))
        .args(["fisher-scan", "--grid", "6"])
        .env("MULTIPHASE_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("fisher_scan.csv")).unwrap();
    assert_eq!(csv.lines().count(), 37);
    assert!(dir.path().join("fisher_scan.json").exists());
}

#[test]
fn hardware_fixture_runs_with_fixed_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("hardware.toml");
    let o = multiphase(&["campaign", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&dir.path().join("campaign.json"));
    assert_eq!(v["crb"]["trace"], 4.2);
    assert_eq!(v["config"]["hardware_mode"], true);
    assert_eq!(v["phase_pairs"].as_array().unwrap().len(), 2);
}

#[test]
fn posterior_snapshot_writes_clouds() {
    let dir = tempfile::tempdir().unwrap();
    let o = multiphase(
        &[
            "posterior-snapshot", "--probes", "10", "--particles", "100", "--steps", "0,10",
            "--phi1", "1.0", "--phi2", "2.5",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let prior = std::fs::read_to_string(dir.path().join("posterior_N000.csv")).unwrap();
    assert_eq!(prior.lines().next(), Some("phi1,phi2,w"));
    assert_eq!(prior.lines().count(), 101);
    let v = json(&dir.path().join("snapshot.json"));
    assert_eq!(v["true_phi"]["phi1"], 1.0);
    assert_eq!(v["snapshots"].as_array().unwrap().len(), 2);
}

#[test]
fn threads_flag_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["campaign", "--probes", "8", "--repetitions", "3", "--phase-pairs", "2", "--particles", "200"];
    let o1 = multiphase(&[&args[..], &["--threads", "1"]].concat(), a.path());
    let o2 = multiphase(&[&args[..], &["--threads", "3"]].concat(), b.path());
    assert!(o1.status.success() && o2.status.success());
    for f in ["campaign.csv", "campaign.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
    let o = multiphase(&["run", "--threads", "0"], a.path());
    assert_eq!(o.status.code(), Some(1));
}
