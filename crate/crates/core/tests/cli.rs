mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::stat_oracle;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cycle-anomaly")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(dir: &Path, rel: &str) -> String {
    dir.join(rel).to_string_lossy().into_owned()
}

fn synth(dir: &Path) -> String {
    ok(&["synth", "--out", &p(dir, "data"), "--cells", "2", "--cycles", "60", "--seed", "5"]);
    p(dir, "data/measurements.csv")
}

fn csv_column(path: impl AsRef<Path>, name: &str) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name}"));
    lines.map(|l| l.split(',').nth(i).unwrap().to_string()).collect()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn mad_on_log_feature_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let meas = synth(dir.path());
    let recipe = ["--feature", "dvdq_max", "--log"];
    ok(&[&["features", "--input", &meas, "--out", &p(dir.path(), "f")], &recipe[..]].concat());
    ok(&[&["detect", "--input", &meas, "--out", &p(dir.path(), "o"), "--model", "mad"], &recipe[..]].concat());
    for cell in ["Cell-1", "Cell-2"] {
        let values: Vec<f64> = csv_column(dir.path().join(format!("f/{cell}/features.csv")), "log_dvdq_max")
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        let flags: Vec<bool> = csv_column(dir.path().join(format!("o/{cell}/mad/verdict.csv")), "flagged")
            .iter()
            .map(|s| s == "1")
            .collect();
        assert_eq!(flags, stat_oracle(&values, "mad"), "{cell}");
    }
}

#[test]
fn proxy_tuning_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let meas = synth(dir.path());
    for out in ["a", "b"] {
        ok(&["tune", "--strategy", "proxy", "--model", "knn", "--input", &meas, "--out", &p(dir.path(), out), "--trials", "20", "--seed", "7"]);
    }
    let a = tree(&dir.path().join("a"));
    assert!(a.iter().any(|(f, _)| f.ends_with("tuning/knn/pareto.csv")));
    assert_eq!(a, tree(&dir.path().join("b")));
}

#[test]
fn evaluate_writes_pass_column() {
    let dir = tempfile::tempdir().unwrap();
    let meas = synth(dir.path());
    let out = p(dir.path(), "o");
    ok(&["detect", "--input", &meas, "--out", &out, "--model", "iqr,iforest"]);
    ok(&["evaluate", "--verdicts", &out, "--labels", &p(dir.path(), "data/labels.csv"), "--out", &out]);
    let report = dir.path().join("o/report.csv");
    let scope = csv_column(&report, "scope");
    let pass = csv_column(&report, "pass");
    assert!(scope.iter().any(|s| s == "macro"));
    for (s, v) in scope.iter().zip(&pass) {
        if s == "macro" {
            assert!(v == "0" || v == "1");
        } else {
            assert!(v.is_empty());
        }
    }
    let models: std::collections::BTreeSet<String> = csv_column(dir.path().join("o/report.csv"), "model").into_iter().collect();
    assert_eq!(models.into_iter().collect::<Vec<_>>(), ["iforest", "iqr"]);
}

#[test]
fn severson_recipe_equals_explicit_spelling() {
    let dir = tempfile::tempdir().unwrap();
    let meas = synth(dir.path());
    let explicit = ["--recipe", "custom", "--feature", "dvdq_max", "--multi-feature", "dv_max,dq_max", "--log"];
    for (name, flags) in [("preset", &["--recipe", "severson"][..]), ("explicit", &explicit[..])] {
        ok(&[&["features", "--input", &meas, "--out", &p(dir.path(), &format!("{name}/f"))], flags].concat());
        ok(&[&["detect", "--input", &meas, "--out", &p(dir.path(), &format!("{name}/o")), "--seed", "2"], flags].concat());
    }
    assert_eq!(tree(&dir.path().join("preset/o")), tree(&dir.path().join("explicit/o")));
    let csvs = |name: &str| -> Vec<_> {
        tree(&dir.path().join(name).join("f")).into_iter().filter(|(f, _)| f.ends_with("features.csv")).collect()
    };
    assert_eq!(csvs("preset"), csvs("explicit"));
}

#[test]
fn bad_invocations_exit_nonzero() {
    assert_eq!(run(&["detect", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&["ingest", "--input", "/nonexistent/m.csv", "--out", "/tmp/x"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let meas = synth(dir.path());
    let out = run(&["detect", "--input", &meas, "--out", &p(dir.path(), "o"), "--model", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
