use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use churn_cli::checkpoint::{Checkpoint, WEIGHTS_FILE};
use churn_cli::formats::{read_dataset_file, read_labels, read_report, read_scores};
use churn_cli::graymap;

fn churn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_churn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = churn(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = churn(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

/// Labelled-active, churned and excluded customers for reference day 100.
const MICRO: &str = "customer_id,day,channel,value
active,60,voice_out_freq,1
active,85,voice_in_freq,2
churned,60,voice_in_dur,3.5
lapsed,50,voice_out_freq,1
";

#[test]
fn micro_log_labels_two_and_excludes_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ev.csv"), MICRO).unwrap();
    let out = ok(
        dir.path(),
        &[
            "prepare", "--events", "ev.csv", "--reference-day", "100", "--channels", "dl2", "--out-train", "tr.csv",
            "--out-test", "te.csv", "--exclusions-out", "ex.csv",
        ],
    );
    assert!(out.contains("labeled=2 excluded=1"), "{out}");
    assert!(out.contains("active=1 churned=1"), "{out}");
    assert_eq!(fs::read_to_string(dir.path().join("ex.csv")).unwrap(), "customer_id,reason\nlapsed,no_last_call\n");
    let train = read_dataset_file(&dir.path().join("tr.csv")).unwrap();
    let windows: Vec<_> = train.images.iter().map(|i| (i.customer_id.as_str(), i.predictor_window.start)).collect();
    assert_eq!(windows, vec![("active", 17), ("churned", 17)]);
}

#[test]
fn malformed_events_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ev.csv"), format!("{MICRO}x,7,voice_in_freq,-2\n")).unwrap();
    let err = fails(
        dir.path(),
        &["prepare", "--events", "ev.csv", "--channels", "dl2", "--out-train", "a", "--out-test", "b"],
    );
    assert!(err.contains("line 6"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn nothing_labelled_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ev.csv"), "customer_id,day,channel,value\nlapsed,50,voice_out_freq,1\n").unwrap();
    let err = fails(
        dir.path(),
        &["prepare", "--events", "ev.csv", "--reference-day", "100", "--channels", "dl1", "--out-train", "a", "--out-test", "b"],
    );
    assert!(err.contains("no labelled customers"), "{err}");
}

#[test]
fn dl1_ignores_topups_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("ev.csv"),
        format!("{MICRO}active,30,topup_amount,20\nchurned,30,topup_freq,1\n"),
    )
    .unwrap();
    let out = churn(
        dir.path(),
        &[
            "prepare", "--events", "ev.csv", "--reference-day", "100", "--channels", "dl1", "--out-train", "tr.csv",
            "--out-test", "te.csv",
        ],
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ignored_events=2"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ignored 2 events"));
}

#[test]
fn synth_is_deterministic_and_validates_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = |n: &str| {
        vec![
            "synth".to_string(),
            "--customers".into(),
            "300".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            format!("ev{n}.csv"),
            "--labels-out".into(),
            format!("lab{n}.csv"),
        ]
    };
    let a: Vec<String> = args("a");
    let b: Vec<String> = args("b");
    ok(d, &a.iter().map(String::as_str).collect::<Vec<_>>());
    ok(d, &b.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(read(d, "eva.csv"), read(d, "evb.csv"));
    assert_eq!(read(d, "laba.csv"), read(d, "labb.csv"));
    let labels = read_labels(fs::File::open(d.join("laba.csv")).unwrap()).unwrap();
    assert_eq!(labels.len(), 300);

    let err = fails(d, &["synth", "--churn-rate", "1.5", "--out", "x", "--labels-out", "y"]);
    assert!(err.contains("--churn-rate") && err.contains("Usage"), "{err}");
    let err = fails(d, &["synth", "--churn-rate", "0.9", "--excluded", "0.5", "--out", "x", "--labels-out", "y"]);
    assert!(err.starts_with("error:"), "{err}");
}

struct Fixture {
    _dir: tempfile::TempDir,
    path: PathBuf,
}

/// A small churn-heavy log, prepared for both channel sets.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_path_buf();
    ok(
        &d,
        &["synth", "--customers", "400", "--churn-rate", "0.25", "--seed", "11", "--out", "ev.csv", "--labels-out", "lab.csv"],
    );
    for set in ["dl1", "dl2"] {
        ok(
            &d,
            &[
                "prepare", "--events", "ev.csv", "--channels", set, "--out-train", &format!("{set}_train.csv"),
                "--out-test", &format!("{set}_test.csv"),
            ],
        );
    }
    Fixture { _dir: dir, path: d }
}

#[test]
fn classifier_round_trip_evaluate_and_predict() {
    let fx = fixture();
    let d = fx.path.as_path();
    let train = |out: &str| {
        ok(
            d,
            &["train", "--arch", "dl1", "--train", "dl1_train.csv", "--epochs", "4", "--batch", "64", "--out", out],
        )
    };
    let log = train("m1");
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch=")).count(), 4);
    train("m2");
    for f in [WEIGHTS_FILE, "manifest.json"] {
        assert_eq!(read(d, &format!("m1/{f}")), read(d, &format!("m2/{f}")), "{f}");
    }
    let ck = Checkpoint::load(&d.join("m1")).unwrap();
    assert_eq!(read(d, "m1/weights.bin").len(), 8 * 3572);
    assert_eq!(ck.manifest.param_count, 3572);

    for split in ["train", "test"] {
        let out = ok(
            d,
            &[
                "evaluate", "--model", "m1", "--data", &format!("dl1_{split}.csv"), "--out", &format!("{split}.auc"),
                "--scores-out", &format!("{split}.scores"),
            ],
        );
        let report = read_report(fs::File::open(d.join(format!("{split}.auc"))).unwrap()).unwrap();
        assert_eq!(out.trim(), format!("auc={}", report.auc));
        assert!((0.0..=1.0).contains(&report.auc));
        assert_eq!(report.dataset, format!("dl1_{split}"));
    }

    let out = ok(d, &["predict", "--model", "m1", "--events", "ev.csv", "--out", "pred.csv"]);
    assert!(out.starts_with("scored="), "{out}");
    let (predicted, excluded) = read_scores(fs::File::open(d.join("pred.csv")).unwrap()).unwrap();
    let labels = read_labels(fs::File::open(d.join("lab.csv")).unwrap()).unwrap();
    let intended_excluded: Vec<&str> = labels
        .iter()
        .filter(|(_, l)| l.code() == "excluded")
        .map(|(id, _)| id.as_str())
        .collect();
    assert_eq!(excluded.iter().map(|(id, _)| id.as_str()).collect::<Vec<_>>(), intended_excluded);
    assert!(predicted.iter().all(|(id, s)| !intended_excluded.contains(&id.as_str()) && *s > 0.0 && *s < 1.0));
    let predicted: std::collections::HashMap<_, _> = predicted.into_iter().collect();
    for split in ["train", "test"] {
        let (scores, _) = read_scores(fs::File::open(d.join(format!("{split}.scores"))).unwrap()).unwrap();
        for (id, s) in scores {
            assert_eq!(predicted[&id].to_bits(), s.to_bits(), "{id}");
        }
    }

    // Single-class data cannot be scored.
    let text = fs::read_to_string(d.join("dl1_test.csv")).unwrap();
    let only_active: String = text
        .lines()
        .filter(|l| l.starts_with('#') || l.starts_with("customer_id") || l.split(',').nth(1) == Some("0"))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(d.join("active_only.csv"), only_active).unwrap();
    let err = fails(d, &["evaluate", "--model", "m1", "--data", "active_only.csv", "--out", "x.auc"]);
    assert!(err.contains("positive and one negative"), "{err}");

    let err = fails(d, &["train", "--arch", "dl1", "--train", "dl2_train.csv", "--epochs", "1", "--out", "bad"]);
    assert!(err.contains("dl1 expects 10-channel"), "{err}");
    let err = fails(d, &["evaluate", "--model", "m1", "--data", "dl2_test.csv", "--out", "x.auc"]);
    assert!(err.contains("channel set"), "{err}");
}

#[test]
fn autoencoder_visualize() {
    let fx = fixture();
    let d = fx.path.as_path();
    ok(
        d,
        &["train", "--ae", "--hidden", "3", "--train", "dl2_train.csv", "--epochs", "3", "--batch", "64", "--out", "ae"],
    );
    let out = ok(d, &["visualize", "--model", "ae", "--out", "vis"]);
    assert_eq!(out.lines().count(), 3);
    ok(d, &["visualize", "--model", "ae", "--out", "vis2"]);
    for unit in 0..3 {
        let pgm = fs::read_to_string(d.join(format!("vis/unit_{unit}.pgm"))).unwrap();
        let (w, h, _) = graymap::parse(&pgm).unwrap();
        assert_eq!((w, h), (12, 30));
        let table = fs::read_to_string(d.join(format!("vis/unit_{unit}.csv"))).unwrap();
        assert!(table.starts_with("topup_freq,topup_amount,voice_in_freq"));
        let norm: f64 = table
            .lines()
            .skip(1)
            .flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-9, "{norm}");
        for ext in ["pgm", "csv"] {
            let name = format!("unit_{unit}.{ext}");
            assert_eq!(read(d, &format!("vis/{name}")), read(d, &format!("vis2/{name}")));
        }
    }
    let err = fails(d, &["evaluate", "--model", "ae", "--data", "dl2_test.csv", "--out", "x"]);
    assert!(err.contains("expected a classifier checkpoint"), "{err}");
    let err = fails(d, &["predict", "--model", "ae", "--events", "ev.csv", "--out", "x"]);
    assert!(err.contains("expected a classifier checkpoint"), "{err}");
}
