use std::path::Path;
use std::process::{Command, Output};

fn wrs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wrs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

/// File contents with the trailing `wall_ns` column removed.
fn without_wall(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0)
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        "run",
        "--p",
        "4",
        "--k",
        "100",
        "--b",
        "1000",
        "--batches",
        "10",
        "--mode",
        "weighted",
        "--select",
        "exact-1",
        "--seed",
        "7",
    ];
    let mut outputs = Vec::new();
    for (i, threads) in ["4", "4", "1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}.csv"));
        let mut args = base.to_vec();
        args.extend(["--threads", threads, "--out", out.to_str().unwrap()]);
        let result = wrs(&args);
        assert!(
            result.status.success(),
            "{}",
            String::from_utf8_lossy(&result.stderr)
        );
        let summary = String::from_utf8(result.stdout).unwrap();
        assert!(summary.starts_with("metric,value\n"));
        assert!(summary.contains("items_per_sec,"));
        outputs.push(out);
    }
    let reference = without_wall(&outputs[0]);
    assert_eq!(reference.lines().count(), 1 + 10 * 5);
    for out in &outputs[1..] {
        assert_eq!(without_wall(out), reference);
    }
}

#[test]
fn tiny_run_fills_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tiny.csv");
    let result = wrs(&[
        "run",
        "--p",
        "1",
        "--k",
        "5",
        "--b",
        "5",
        "--batches",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 2);
    let global = &rows[1];
    assert_eq!(global[2], "-1");
    assert_eq!(global[3], "5");
    assert_eq!(global[7], "5");
    assert!(global[6].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn csv_goes_to_stdout_without_out() {
    let result = wrs(&[
        "run",
        "--p",
        "2",
        "--k",
        "10",
        "--b",
        "50",
        "--batches",
        "2",
        "--select",
        "gather",
        "--run-id",
        "g",
    ]);
    assert!(result.status.success());
    let stdout = String::from_utf8(result.stdout).unwrap();
    let mut lines = stdout.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_id,batch,pe,insertions,scanned,sel_rounds,threshold,sample_size,bcasts,allreduces,gathers,words,wall_ns"
    );
    assert_eq!(lines.filter(|l| l.starts_with("g,")).count(), 6);
    assert!(String::from_utf8(result.stderr)
        .unwrap()
        .starts_with("metric,value"));
}

#[test]
fn range_and_multi_pivot_variants_run() {
    for args in [
        &[
            "run",
            "--p",
            "3",
            "--k-lo",
            "20",
            "--k-hi",
            "40",
            "--select",
            "range",
            "--pivots",
            "4",
            "--b",
            "200",
            "--batches",
            "3",
        ][..],
        &[
            "run",
            "--p",
            "3",
            "--k",
            "20",
            "--select",
            "exact-8",
            "--weights",
            "skewed",
            "--b",
            "200",
            "--batches",
            "3",
        ],
        &[
            "run",
            "--p",
            "3",
            "--k",
            "20",
            "--select",
            "exact-d",
            "--pivots",
            "3",
            "--mode",
            "uniform",
            "--b",
            "200",
            "--batches",
            "3",
        ],
    ] {
        let result = wrs(args);
        assert!(
            result.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&result.stderr)
        );
    }
}

#[test]
fn usage_errors_exit_with_one() {
    for args in [
        &["run", "--nonsense"][..],
        &["run", "--k", "0"],
        &["run", "--p", "0"],
        &["run", "--select", "median"],
        &["run", "--select", "range"],
        &["run", "--k-lo", "50", "--k-hi", "10", "--select", "range"],
        &["run", "--k-lo", "5", "--k-hi", "10", "--select", "gather"],
        &["validate", "--only", "12"],
        &[],
    ] {
        assert_eq!(wrs(args).status.code(), Some(1), "{args:?}");
    }
    assert_eq!(wrs(&["--help"]).status.code(), Some(0));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("missing").join("x.csv");
    let result = wrs(&[
        "run",
        "--p",
        "1",
        "--k",
        "2",
        "--b",
        "4",
        "--batches",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn validate_reports_each_check() {
    let result = wrs(&["validate", "--only", "4,5,11"]);
    assert_eq!(result.status.code(), Some(0));
    let stdout = String::from_utf8(result.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("PASS [ 4]"));
    assert!(lines[1].starts_with("PASS [ 5]"));
    assert!(lines[2].starts_with("PASS [11]"));
}

#[test]
fn corrupted_threshold_fails_validation() {
    let result = wrs(&["validate", "--only", "5", "--corrupt-threshold"]);
    assert_eq!(result.status.code(), Some(3));
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.starts_with("FAIL [ 5]"), "{stdout}");
}
