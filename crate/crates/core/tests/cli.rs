use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn amfh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amfh"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = amfh(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn centers_reports_exact_table() {
    let out = ok(&["centers", "--bits", "16", "--classes", "10", "--seed", "0"]);
    assert!(out.contains("r* = 16"));
    assert!(out.contains("average distance = 8.0000"));
    assert!(out.lines().any(|l| l == "PASS"));
}

#[test]
fn train_encode_eval_on_zero_spread_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model.amfh");
    let (q, db) = (dir.path().join("q.codes"), dir.path().join("db.codes"));
    ok(&["synth", "--spread", "0", "--seed", "2", "--out", p(&data)]);
    ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&model),
        "--bits",
        "16",
    ]);
    for (split, out) in [("query", &q), ("retrieval", &db)] {
        ok(&[
            "encode",
            "--model",
            p(&model),
            "--data",
            p(&data),
            "--split",
            split,
            "--mode",
            "fixed",
            "--out",
            p(out),
        ]);
    }
    let report = ok(&[
        "eval",
        "--data",
        p(&data),
        "--query-codes",
        p(&q),
        "--db-codes",
        p(&db),
    ]);
    assert!(report.lines().any(|l| l == "map = 1"), "{report}");

    let top = ok(&["query", "--db", p(&db), "--queries", p(&q), "--top-k", "3"]);
    assert_eq!(top.lines().count(), 80);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let root = dir.path().join(format!("run{run}"));
        let data = root.join("data");
        let model = root.join("model.amfh");
        let codes = root.join("codes");
        let trace = root.join("weights.txt");
        ok(&[
            "synth",
            "--preset",
            "noisy",
            "--seed",
            "4",
            "--out",
            p(&data),
        ]);
        ok(&["train", "--data", p(&data), "--out", p(&model)]);
        ok(&[
            "encode",
            "--model",
            p(&model),
            "--data",
            p(&data),
            "--split",
            "stream",
            "--weights-trace",
            p(&trace),
            "--out",
            p(&codes),
        ]);
        files.push(
            [
                data.join("modality_0.amfh"),
                data.join("stream.txt"),
                model,
                codes,
                trace,
            ]
            .map(|f| fs::read(f).unwrap()),
        );
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn train_flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let config = dir.path().join("train.cfg");
    fs::write(&config, "bits = 8\nmax_iters = 1\n").unwrap();
    ok(&["synth", "--out", p(&data)]);
    let out = ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&dir.path().join("m")),
        "--config",
        p(&config),
        "--max-iters",
        "3",
    ]);
    assert!(out.lines().any(|l| l == "iterations = 3"), "{out}");
    let encoded = dir.path().join("c");
    ok(&[
        "encode",
        "--model",
        p(&dir.path().join("m")),
        "--data",
        p(&data),
        "--split",
        "query",
        "--out",
        p(&encoded),
    ]);
    let codes = amfh::io::load_codes(&encoded).unwrap();
    assert_eq!(codes.bits(), 8);
}

#[test]
fn ablate_prefers_adaptive_encoding() {
    let out = ok(&["ablate", "--seed", "0"]);
    assert!(
        out.lines().any(|l| l == "adaptive_ge_fixed = true"),
        "{out}"
    );
}

#[test]
fn sweep_reports_every_delta() {
    let out = ok(&["sweep-delta", "--deltas", "0.001,0.1"]);
    assert_eq!(
        out.lines().filter(|l| l.starts_with("1e")).count(),
        2,
        "{out}"
    );
    assert!(out.lines().last().unwrap().starts_with("range "));
}

#[test]
fn encodes_csv_feature_files_with_missing_modality() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("m");
    ok(&["synth", "--out", p(&data)]);
    ok(&["train", "--data", p(&data), "--out", p(&model)]);
    let csv = |d: usize| {
        (0..5)
            .map(|i| vec![format!("{}", i as f64 * 0.1); d].join(","))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    fs::write(&a, csv(32)).unwrap();
    fs::write(&b, csv(16)).unwrap();
    let out_path = dir.path().join("codes");
    let features = format!("{},{}", p(&a), p(&b));
    ok(&[
        "encode",
        "--model",
        p(&model),
        "--features",
        &features,
        "--missing",
        "1",
        "--out",
        p(&out_path),
    ]);
    let codes = amfh::io::load_codes(&out_path).unwrap();
    assert_eq!((codes.bits(), codes.len()), (16, 5));
}

#[test]
fn errors_are_single_machine_readable_lines() {
    let usage = amfh(&["frobnicate"]);
    assert_eq!(usage.status.code(), Some(2));
    let err = String::from_utf8(usage.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: kind=usage message=\""));

    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.codes");
    fs::write(&bogus, b"AMFH\x02\x01").unwrap();
    let corrupt = amfh(&["query", "--db", p(&bogus), "--queries", p(&bogus)]);
    assert_eq!(corrupt.status.code(), Some(1));
    let err = String::from_utf8(corrupt.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: kind=corrupt-file "), "{err}");

    let failed = amfh(&["centers", "--bits", "8", "--classes", "1"]);
    assert_eq!(failed.status.code(), Some(1));
}

#[test]
fn bench_writes_report_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("bench.txt");
    let out = amfh(&["bench", "--report", p(&report)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 12);
    assert!(text.ends_with("12/12 criteria passed\n"));
}
