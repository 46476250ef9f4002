use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lagc_core::analysis::read_reports;
use lagc_core::engine::read_trace_csv;

const SPEC: &str = r#"
[dataset]
dimension = 4
rows_per_partition = 10
partitions = 6
smoothness = "geometric"
seed = 5

[timing]
law = "pareto"
eta = 0.05
shape = 1.5

[run]
workers = 6
redundancy = 2
epsilon = 1e-6
max_iters = 50000
seeds = 3
grid_points = 8

[[scheme]]
preset = "gd"

[[scheme]]
preset = "g-lag"
group_size = 2

[[scheme]]
name = "lagc-3"
preset = "lagc"
group_size = 3
"#;

fn lagc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lagc")).args(args).output().unwrap()
}

fn write_spec(dir: &Path, text: &str) -> String {
    let path = dir.join("spec.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        out.push((rel, fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn run_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), SPEC);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (out, jobs) in [(&a, "1"), (&b, "3")] {
        let res = lagc(&["run", "--spec", &spec, "--out", out.to_str().unwrap(), "--jobs", jobs]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), 1 + 1 + 3 * 3);
    assert_eq!(fa, fb);

    let reports = read_reports(&a.join("complexity.csv")).unwrap();
    assert_eq!(reports.len(), 3);
    assert_eq!(reports[2].scheme, "lagc-3");
    let trace = read_trace_csv(&a.join("traces").join("gd_seed0.csv")).unwrap();
    assert_eq!(trace[0].iter, 0);
    assert!(trace.last().unwrap().loss_gap <= 1e-6);
}

#[test]
fn seeds_flag_and_table_only() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), SPEC);
    let out = tmp.path().join("o");
    let res = lagc(&["run", "--spec", &spec, "--out", out.to_str().unwrap(), "--seeds", "4,9"]);
    assert!(res.status.success());
    assert!(out.join("traces").join("g-lag-m-g-2_seed9.csv").exists());
    assert!(!out.join("traces").join("g-lag-m-g-2_seed0.csv").exists());

    let only = tmp.path().join("t");
    let res = lagc(&["run", "--spec", &spec, "--out", only.to_str().unwrap(), "--table-only"]);
    assert!(res.status.success());
    assert_eq!(files(&only).iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(), ["complexity.csv"]);
}

#[test]
fn table_and_validate_print() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), SPEC);
    let res = lagc(&["table", "--spec", &spec]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.contains("G-LAG(M_G=2)") && text.contains("lagc-3"));
    let res = lagc(&["validate", "--spec", &spec]);
    assert!(res.status.success());
    assert!(String::from_utf8(res.stdout).unwrap().trim_end().ends_with("ok"));
}

#[test]
fn config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_spec(tmp.path(), &SPEC.replace("group_size = 3", "group_size = 4"));
    let res = lagc(&["validate", "--spec", &bad]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("integer divisor"));

    let unknown = write_spec(tmp.path(), &SPEC.replace("seed = 5", "seed = 5\ncolour = 1"));
    assert_eq!(lagc(&["run", "--spec", &unknown]).status.code(), Some(1));

    let missing = tmp.path().join("nope.toml");
    assert_eq!(lagc(&["validate", "--spec", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two_and_clean_up() {
    let tmp = tempfile::tempdir().unwrap();
    // step far above 2/L diverges
    let spec = write_spec(tmp.path(), &SPEC.replace("seeds = 3", "seeds = 1\nstep_scale = 5.0"));
    let out = tmp.path().join("div");
    let res = lagc(&["run", "--spec", &spec, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.join("complexity.csv").exists());
}

#[test]
fn oracle_matches_closed_form() {
    let res = lagc(&["oracle", "--eta", "0.1", "--max-b", "3", "--samples", "200000"]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    let errors: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().last().unwrap().parse().unwrap())
        .collect();
    assert_eq!(errors.len(), 6);
    assert!(errors.iter().all(|&e| e < 0.02), "{text}");
}
