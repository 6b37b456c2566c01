use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use chn_cli::CSV_HEADER;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn chn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chn")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn check_row_ranges(rows: &[Vec<String>]) {
    for r in rows {
        assert_eq!(r.len(), 10, "{r:?}");
        let cov: f64 = r[4].parse().unwrap();
        assert!((0.0..=1.0).contains(&cov), "{r:?}");
        for (i, cell) in r.iter().enumerate() {
            if cell == "inf" {
                assert!(i == 6 || i == 7, "inf outside the delay columns: {r:?}");
            }
        }
        if r[6] != "inf" {
            assert!(r[6].parse::<f64>().unwrap() >= 1.0 - 1e-9, "{r:?}");
        }
    }
}

#[test]
fn eval_prints_one_analytic_row() {
    let out = chn(&["eval", "--config", &config("is.json"), "--file", "2", "--tau-db", "-5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(&stdout(&out));
    assert_eq!(rows.len(), 1);
    check_row_ranges(&rows);
    let cov: f64 = rows[0][4].parse().unwrap();
    assert!(cov > 0.0 && cov < 1.0);
    assert_eq!(rows[0][3], "analytic");
}

#[test]
fn eval_with_both_engines() {
    let out = chn(&[
        "eval", "--config", &config("is_half_activity.json"), "--file", "2", "--tau-db", "-5", "--engine", "both",
        "--samples", "20000", "--seed", "4",
    ]);
    assert!(out.status.success());
    let rows = rows(&stdout(&out));
    assert_eq!(rows.iter().map(|r| r[3].as_str()).collect::<Vec<_>>(), ["analytic", "mc"]);
    assert_eq!(rows[1][8], "20000");
    assert_eq!(rows[1][9], "4");
    check_row_ranges(&rows);
}

#[test]
fn malformed_config_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"tiers":[{"density":-1,"tx_power":0,"pathloss_exponent":2,"activity_prob":2,
            "caching_probs":[0.3,0.6],"cache_size":1}],"num_files":2}"#,
    )
    .unwrap();
    for sub in [vec!["validate"], vec!["eval", "--file", "1", "--tau-db", "0"]] {
        let mut args: Vec<&str> = sub.clone();
        args.extend(["--config", bad.to_str().unwrap()]);
        let out = chn(&args);
        assert_eq!(out.status.code(), Some(2));
        let err = String::from_utf8_lossy(&out.stderr);
        for needle in ["density", "tx_power", "pathloss_exponent", "activity_prob", "caching_probs sum to"] {
            assert!(err.contains(needle), "missing {needle} in {err}");
        }
    }
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(chn(&["validate", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn file_out_of_range_or_uncached_exits_3() {
    let out = chn(&["eval", "--config", &config("is.json"), "--file", "3", "--tau-db", "0"]);
    assert_eq!(out.status.code(), Some(3));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("uncached.json");
    std::fs::write(
        &path,
        r#"{"tiers":[{"density":1,"tx_power":1,"pathloss_exponent":4,"activity_prob":1,
            "caching_probs":[1,0],"cache_size":1}],"num_files":2}"#,
    )
    .unwrap();
    let out = chn(&["eval", "--config", path.to_str().unwrap(), "--file", "2", "--tau-db", "0"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn threshold_sweep_has_one_row_per_cell_in_order() {
    let out = chn(&["sweep", "--config", &config("is.json"), "--tau-db", "-10:10:1", "--files", "1,2"]);
    assert!(out.status.success());
    let rows = rows(&stdout(&out));
    assert_eq!(rows.len(), 42);
    check_row_ranges(&rows);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], "tau_db");
        assert_eq!(r[1].parse::<f64>().unwrap(), -10.0 + (i / 2) as f64);
        assert_eq!(r[2], ((i % 2) + 1).to_string());
    }
}

#[test]
fn density_ratio_leaves_identical_placement_unchanged() {
    let out = chn(&[
        "sweep", "--config", &config("is.json"), "--var", "density_ratio", "--values", "1,2,4", "--tau-db", "-5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(&stdout(&out));
    assert_eq!(rows.len(), 6);
    for file in ["1", "2"] {
        let cov: Vec<f64> = rows.iter().filter(|r| r[2] == file).map(|r| r[4].parse().unwrap()).collect();
        assert!(cov.iter().all(|c| (c - cov[0]).abs() <= 1e-9), "file {file}: {cov:?}");
    }
}

#[test]
fn activity_sweep_coverage_is_nonincreasing() {
    let out = chn(&[
        "sweep", "--config", &config("is.json"), "--var", "activity:1", "--range", "0:1:0.125", "--tau-db", "-5",
        "--files", "1",
    ]);
    assert!(out.status.success());
    let cov: Vec<f64> = rows(&stdout(&out)).iter().map(|r| r[4].parse().unwrap()).collect();
    assert_eq!(cov.len(), 9);
    assert!(cov.windows(2).all(|w| w[1] <= w[0]), "{cov:?}");
}

#[test]
fn csv_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let out = chn(&[
            "sweep", "--config", &config("ds.json"), "--tau-db", "-6:6:3", "--engine", "both", "--samples", "3000",
            "--seed", "21", "--out", path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        std::fs::read(path).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    assert_eq!(rows(std::str::from_utf8(&a).unwrap()).len(), 5 * 2 * 2);
}

#[test]
fn failed_sweep_leaves_no_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let out = chn(&[
        "sweep", "--config", &config("is.json"), "--tau-db", "-5:5:5", "--files", "1,3", "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!path.exists());
    let out = chn(&[
        "sweep", "--config", &config("is.json"), "--tau-db", "0", "--engine", "mc", "--samples", "500",
        "--window-radius", "0.01", "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(!path.exists());
}

#[test]
fn bad_grid_is_rejected() {
    for grid in ["5:-5:1", "0:1:0", "0:1"] {
        let out = chn(&["sweep", "--config", &config("is.json"), "--tau-db", grid]);
        assert!(!out.status.success(), "{grid}");
    }
}

#[test]
fn compare_marks_divergent_delay_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("single.json");
    std::fs::write(
        &path,
        r#"{"tiers":[{"density":1,"tx_power":1,"pathloss_exponent":4,"activity_prob":1,
            "caching_probs":[0.5,0.5],"cache_size":1}],"num_files":2}"#,
    )
    .unwrap();
    let args = [
        "compare", "--config", path.to_str().unwrap(), "--files", "1", "--tau-db", "0", "--samples", "50000",
        "--seed", "2",
    ];
    let out = chn(&args);
    assert!(out.status.success(), "{}", stdout(&out));
    let report = stdout(&out);
    let delay = report.lines().find(|l| l.starts_with("delay,")).unwrap();
    assert!(delay.contains(",inf,"), "{delay}");
    assert!(delay.ends_with("PASS(divergence-consistent)"), "{delay}");
    assert!(report.contains("summary: 2/2 cells passed"));
    assert_eq!(report, stdout(&chn(&args)));
}

#[test]
fn compare_on_identical_placement_passes() {
    let out = chn(&[
        "compare", "--config", &config("is.json"), "--tau-db", "-10:4:2", "--metric", "coverage", "--samples",
        "20000",
    ]);
    assert!(out.status.success(), "{}", stdout(&out));
    let report = stdout(&out);
    assert_eq!(report.lines().filter(|l| l.starts_with("coverage,")).count(), 16);
}

#[test]
fn compare_failure_exits_5() {
    // Ignoring everything outside a tiny window biases coverage upward.
    let out = chn(&[
        "compare", "--config", &config("is.json"), "--files", "2", "--tau-db", "0:10:5", "--metric", "coverage",
        "--samples", "20000", "--window-radius", "1.5", "--no-far-field",
    ]);
    assert_eq!(out.status.code(), Some(5), "{}", stdout(&out));
}

#[test]
fn simulate_reports_metadata() {
    let out = chn(&[
        "simulate", "--config", &config("ds.json"), "--file", "1", "--tau-db", "0", "--samples", "2000",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    for needle in ["window_radius:", "seed: 0", "rng: ChaCha8", "coverage: mean", "heavy_tail"] {
        assert!(text.contains(needle), "{needle} missing in {text}");
    }
}

#[test]
fn reproduction_sweeps_finish_quickly() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let out_path = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let sweeps: [Vec<String>; 3] = [
        vec!["--config".into(), config("is.json"), "--tau-db".into(), "-10:10:1".into()],
        vec!["--config".into(), config("is_half_activity.json"), "--tau-db".into(), "-10:10:1".into()],
        vec![
            "--config".into(),
            config("is.json"),
            "--var".into(),
            "activity:1".into(),
            "--range".into(),
            "0:1:0.25".into(),
            "--tau-db".into(),
            "-5".into(),
        ],
    ];
    for (i, sweep) in sweeps.iter().enumerate() {
        let out = out_path(&format!("{i}.csv"));
        let mut args: Vec<&str> = vec!["sweep"];
        args.extend(sweep.iter().map(String::as_str));
        args.extend(["--engine", "both", "--samples", "10000", "--out", &out]);
        let o = chn(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        check_row_ranges(&rows(&std::fs::read_to_string(&out).unwrap()));
    }
    assert!(start.elapsed().as_secs() < 300, "took {:?}", start.elapsed());
}
