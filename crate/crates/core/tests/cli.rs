use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_purispec");

const CONFIG: &str = r#"
[model]
kind = "ising"
L = 4
h_x = 1.0
h_z = 0.05
r_z = 2.0

[times]
t_obs = [6.0, 15.0]

[ensemble]
n_realizations = 3
base_seed = 11
"#;

fn run(dir: &Path, args: &[&str], config: &str) -> (i32, String) {
    let cfg = dir.join("config.toml");
    fs::write(&cfg, config).unwrap();
    let out = Command::new(BIN).arg("--config").arg(&cfg).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, acc: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(base, &p, acc);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                acc.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(root, root, &mut acc);
    acc
}

#[test]
fn outputs_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    for task in ["dos", "pr", "fock", "thermo"] {
        let mut trees = Vec::new();
        for threads in ["1", "3"] {
            let out = dir.path().join(format!("{task}_{threads}"));
            let (code, err) = run(dir.path(), &[task, "--threads", threads, "--out", out.to_str().unwrap()], CONFIG);
            assert_eq!(code, 0, "{task}: {err}");
            let mut files = tree(&out);
            files.remove("manifest.json");
            trees.push(files);
        }
        assert!(trees[0].len() > 3, "{task} wrote {:?}", trees[0].keys());
        assert_eq!(trees[0], trees[1], "{task} output depends on the thread count");
    }
}

#[test]
fn manifest_lists_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let (code, err) = run(dir.path(), &["pr", "--out", out.to_str().unwrap(), "--seed-offset", "2"], CONFIG);
    assert_eq!(code, 0, "{err}");
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([13, 14, 15]));
    assert_eq!(manifest["command"], "pr");
    let mut files = tree(&out);
    files.remove("manifest.json");
    let listed = manifest["files"].as_array().unwrap();
    assert_eq!(listed.len(), files.len());
    for entry in listed {
        let bytes = &files[entry["path"].as_str().unwrap()];
        assert_eq!(entry["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(bytes)));
    }
    let agg = String::from_utf8(files["aggregate/pr.csv"].clone()).unwrap();
    assert_eq!(agg.lines().next().unwrap(), "sigma_index,pr_m_mean,pr_m_stderr,pr_r_mean,pr_r_stderr,n");
    assert_eq!(agg.lines().count(), 17);
    let per_seed = String::from_utf8(files["seed_14/pr.csv"].clone()).unwrap();
    assert_eq!(per_seed.lines().next().unwrap(), "sigma_index,pr_m,pr_r");
}

#[test]
fn rerun_reproduces_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let mut sums = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let (code, err) = run(dir.path(), &["observable", "--out", out.to_str().unwrap()], CONFIG);
        assert_eq!(code, 0, "{err}");
        let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
        sums.push(m["files"].clone());
    }
    assert_eq!(sums[0], sums[1]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    let (code, err) = run(dir.path(), &["dos", "--out", o], "[model]\nkind = \"ising\"\nL = 2\nwat = 1\n");
    assert_eq!(code, 2);
    assert!(err.contains("line"), "{err}");
    let (code, _) = run(dir.path(), &["dos", "--out", o], "[model]\nkind = \"ising\"\nL = 99\n");
    assert_eq!(code, 2);
    let (code, _) = run(dir.path(), &["verify", "--out", o], "[model]\nkind = \"ising\"\nL = 8\nh_x = 1.0\n");
    assert_eq!(code, 2);

    let missing = Command::new(BIN).args(["dos", "--config", "/nonexistent/config.toml"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(4));
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let (code, _) = run(dir.path(), &["dos", "--out", blocker.join("sub").to_str().unwrap()], CONFIG);
    assert_eq!(code, 4);
    let no_config = Command::new(BIN).arg("dos").output().unwrap();
    assert_eq!(no_config.status.code(), Some(2));
}

#[test]
fn every_subcommand_runs() {
    let dir = tempfile::tempdir().unwrap();
    let small = r#"
[model]
kind = "ising"
L = 4
h_x = 0.7
h_z = 0.1
r_z = 1.0
seed = 3

[times]
t_obs = [8.0]

[window]
e_minus = -0.5
e_plus = 0.5
t_sc = 2.0
sweep_points = 4

[entropy]
t_max = 2.0
dt = 0.5

[verify]
t_max = 3.0
probe_trials = 5
"#;
    for task in ["dos", "thermo", "observable", "eth", "fock", "pr", "uhlmann", "entropy", "verify"] {
        let out = dir.path().join(task);
        let (code, err) = run(dir.path(), &[task, "--out", out.to_str().unwrap()], small);
        assert_eq!(code, 0, "{task}: {err}");
        assert!(out.join("manifest.json").exists());
    }
    let eth = fs::read_to_string(dir.path().join("eth/seed_3/eth.csv")).unwrap();
    assert_eq!(eth.lines().next().unwrap(), "T[1/J_z],sigma_signal,sigma_exact_ref");
    assert_eq!(eth.lines().count(), 5);
    let verify: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("verify/seed_3/verify.json")).unwrap()).unwrap();
    assert!(verify.as_array().unwrap().iter().all(|c| c["pass"] == true));
}
