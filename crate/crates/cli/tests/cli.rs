use std::process::{Command, Output};

use serde_json::Value;

const PARAMS: [&str; 6] = ["--q", "0.4", "--mu", "0.5", "--nu", "0.1"];

fn qmunu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmunu"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn with_params<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(PARAMS);
    v
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Header and data rows of a CSV report, comments dropped.
fn csv_rows(o: &Output) -> Vec<Vec<String>> {
    stdout(o)
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn field(rows: &[Vec<String>], row: usize, name: &str) -> String {
    let idx = rows[0].iter().position(|c| c == name).expect("column exists");
    rows[row][idx].clone()
}

fn num(rows: &[Vec<String>], row: usize, name: &str) -> f64 {
    field(rows, row, name).parse().unwrap()
}

#[test]
fn verify_all_passes_with_json_report() {
    let out = qmunu(&with_params(&["verify", "all"]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["pass"], Value::Bool(true));
    let rows = doc["rows"].as_array().unwrap();
    for suite in ["qseries", "dist", "intertwine", "binexp", "evolution", "pipeline"] {
        assert!(rows.iter().any(|r| r["suite"] == suite), "missing suite {suite}");
    }
    assert!(rows.iter().all(|r| r["pass"] == Value::Bool(true)));
    assert_eq!(doc["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn moment_at_time_zero_is_one() {
    let out = qmunu(&with_params(&["moments", "--n-vec", "1", "--t", "0"]));
    assert_eq!(out.status.code(), Some(0));
    let rows = csv_rows(&out);
    assert!((num(&rows, 1, "value") - 1.0).abs() < 1e-12);
}

#[test]
fn csv_has_hash_comment_and_header() {
    let out = qmunu(&with_params(&["moments", "--n-vec", "2,1", "--t", "2"]));
    let text = stdout(&out);
    let first = text.lines().next().unwrap();
    let hash = first.split("config-sha256=").nth(1).expect("hash comment");
    assert_eq!(hash.len(), 64);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "n_vec,t,value,imag_residual,change,nodes,doublings");
}

#[test]
fn contour_and_exact_agree() {
    let args = ["--n-vec", "3,2,1", "--t", "4"];
    let c = csv_rows(&qmunu(&with_params(&[&["moments"][..], &args].concat())));
    let e = csv_rows(&qmunu(&with_params(&[&["exact"][..], &args].concat())));
    let (vc, ve) = (num(&c, 1, "value"), num(&e, 1, "value_f64"));
    assert!((vc - ve).abs() < 1e-8 * ve, "{vc} vs {ve}");
    assert!(field(&e, 1, "value").contains('/'));
}

#[test]
fn fredholm_kernels_agree() {
    let base = ["fredholm", "--zeta-re", "-0.25", "--zeta-im", "0.1", "--n", "2", "--t", "3"];
    let mb = csv_rows(&qmunu(&with_params(&[&base[..], &["--type", "mb"]].concat())));
    let ca = csv_rows(&qmunu(&with_params(&[&base[..], &["--type", "cauchy"]].concat())));
    for col in ["det_re", "det_im"] {
        assert!((num(&mb, 1, col) - num(&ca, 1, col)).abs() < 1e-6);
    }
}

#[test]
fn simulations_match_exact_moment() {
    let exact = csv_rows(&qmunu(&with_params(&["exact", "--observable", "2,1", "--t", "3"])));
    let target = num(&exact, 1, "value_f64");
    for process in ["tasep", "boson"] {
        let out = qmunu(&with_params(&[
            "simulate",
            "--process",
            process,
            "--observable",
            "q-moment:2,1",
            "--t",
            "3",
            "--replicas",
            "200000",
            "--seed",
            "5",
        ]));
        assert_eq!(out.status.code(), Some(0));
        let rows = csv_rows(&out);
        let z = (num(&rows, 1, "mean") - target).abs() / num(&rows, 1, "stderr");
        assert!(z < 4.0, "{process}: z = {z}");
    }
}

#[test]
fn outputs_are_byte_identical_across_thread_counts() {
    let run = |threads: &str| {
        stdout(&qmunu(&with_params(&[
            "simulate",
            "--process",
            "tasep",
            "--observable",
            "q-moment:2,2",
            "--t",
            "4",
            "--replicas",
            "50000",
            "--threads",
            threads,
        ])))
    };
    let a = run("1");
    assert_eq!(a, run("1"));
    assert_eq!(a, run("3"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "q = 0.4\nmu = \"1/2\"\nnu = 0.1\nn-vec = [2, 1]\nt = 1\n").unwrap();
    let p = path.to_str().unwrap();
    let from_file = csv_rows(&qmunu(&["exact", "--config", p, "--t", "3"]));
    let from_flags = csv_rows(&qmunu(&with_params(&["exact", "--n-vec", "2,1", "--t", "3"])));
    assert_eq!(field(&from_file, 1, "value"), field(&from_flags, 1, "value"));
    assert_eq!(field(&from_file, 1, "t"), "3");
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "q = 0.4\nmu = 0.5\nnu = 0.1\nbogus-key = 3\n").unwrap();
    let out = qmunu(&["moments", "--config", path.to_str().unwrap(), "--n-vec", "1", "--t", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bogus-key"), "{}", stderr(&out));

    std::fs::write(&path, "q = \"two fifths\"\n").unwrap();
    let out = qmunu(&["moments", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_two() {
    let out = qmunu(&["moments", "--n-vec", "1", "--t", "0", "--mu", "0.5", "--nu", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    let report: Value = serde_json::from_str(stderr(&out).lines().last().unwrap()).unwrap();
    assert_eq!(report["field"], "q");

    let out = qmunu(&["moments", "--q", "0.4", "--mu", "0.05", "--nu", "0.1", "--n-vec", "1", "--t", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("mu"));

    assert_eq!(qmunu(&["moments", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(qmunu(&["verify", "nothing"]).status.code(), Some(2));
}

#[test]
fn tolerance_failure_exits_with_one() {
    let out = qmunu(&with_params(&["verify", "qseries", "--tol", "0"]));
    assert_eq!(out.status.code(), Some(1));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["pass"], Value::Bool(false));
}

#[test]
fn inversion_writes_plot_and_normalized_pmf() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("pmf.svg");
    let out = qmunu(&[
        "invert",
        "--q",
        "1/2",
        "--mu",
        "2/5",
        "--nu",
        "1/10",
        "--n",
        "1",
        "--t",
        "1",
        "--format",
        "json",
        "--plot",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let total: f64 = doc["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["probability"].as_f64().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9);
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
}

#[test]
fn plot_unavailable_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("x.svg");
    let out = qmunu(&with_params(&["moments", "--n-vec", "1", "--t", "1", "--plot", svg.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_flag_writes_file_and_ring_runs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ring.csv");
    let out = qmunu(&with_params(&[
        "stationarity",
        "--replicas",
        "20000",
        "--t",
        "20",
        "--out",
        path.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("n,expected,observed,stderr,z"));
}
