use std::path::PathBuf;
use std::process::{Command, Output};

fn cvrrw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvrrw")).args(args).output().expect("binary runs")
}

fn bundled(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "configs", name].iter().collect();
    p.display().to_string()
}

fn scratch(name: &str, text: &str) -> String {
    let dir = std::env::temp_dir().join(format!("cvrrw-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn graph_validate_reports_invariants() {
    let out = cvrrw(&["graph", "validate", &bundled("complete_like_leaf_finite.cfg")]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("core is complete"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn zero_replicas_is_a_config_error() {
    let out = cvrrw(&["--replicas", "0", "simulate", &bundled("kd_uniform.cfg")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_key_is_a_config_error() {
    let text = std::fs::read_to_string(bundled("kd_uniform.cfg")).unwrap().replace("[run]", "[run]\nhorizn = 3");
    let out = cvrrw(&["simulate", &scratch("typo.cfg", &text)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn truncation_exits_three() {
    let text = std::fs::read_to_string(bundled("kd_uniform.cfg"))
        .unwrap()
        .replace("[run]", "[run]\nevent_cap = 10");
    let cfg = scratch("capped.cfg", &text.replace("engine = \"hybrid\"", "engine = \"direct\""));
    let out = cvrrw(&["simulate", &cfg]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulate_passes_and_is_reproducible() {
    let run = || {
        let out = cvrrw(&["simulate", &bundled("kd_uniform.cfg")]);
        assert_eq!(out.status.code(), Some(0));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        v["body"].clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn sample_is_seeded() {
    let a = cvrrw(&["--seed", "5", "sample", "gamma", "--shapes", "1,2", "--count", "4"]);
    let b = cvrrw(&["--seed", "5", "sample", "gamma", "--shapes", "1,2", "--count", "4"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8(a.stdout).unwrap().lines().count(), 5);
}

#[test]
fn qmatrix_methods_agree() {
    let out = cvrrw(&["qmatrix", &bundled("engines.cfg"), "--times", "0.1,0.2,0.3"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let q = |m: &str| -> Vec<f64> {
        v[m]["q"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap())).collect()
    };
    let base = q("linear_solve");
    for m in ["hitting_formula", "kd_closed", "quadrature"] {
        for (x, y) in base.iter().zip(q(m)) {
            assert!((x - y).abs() < 1e-6, "{m}");
        }
    }
}

#[test]
fn acceptance_subset() {
    let out = cvrrw(&["acceptance", "--only", "10,11"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains(" PASS ")).count(), 2);
}

#[test]
fn mixture_test_rejects_other_kinds() {
    let out = cvrrw(&["mixture-test", &bundled("kd_uniform.cfg")]);
    assert_eq!(out.status.code(), Some(2));
}
