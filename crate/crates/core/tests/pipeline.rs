use std::path::Path;
use std::process::{Command, Output};

use metaseg::analysis::leave_one_out;
use metaseg::features::{build_metrics_dataset, sample_metrics, MetricRegistry};
use metaseg::metaclf::{remove_false_positives, train, ModelKind, TrainConfig};
use metaseg::raster::{Sample, SampleSet};
use metaseg::segments::ThresholdConfig;
use metaseg::synth::{generate, SceneSpec};

fn metaseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metaseg"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = metaseg(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_then_metrics_has_77_columns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    let mu = dir.path().join("mu.csv");
    ok(&["synth", "--count", "10", "--seed", "7", "--out", s(&d)]);
    assert_eq!(std::fs::read_dir(&d).unwrap().count(), 20);
    ok(&["metrics", "--in", s(&d), "--t", "0.7", "--out", s(&mu)]);
    let text = std::fs::read_to_string(&mu).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 77);
    assert_eq!(&header[75..], &["label", "group_id"]);
}

#[test]
fn train_meta_is_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    let mu = dir.path().join("mu.csv");
    ok(&["synth", "--count", "6", "--seed", "3", "--out", s(&d)]);
    ok(&["metrics", "--in", s(&d), "--out", s(&mu)]);
    let (a, b) = (dir.path().join("a.model"), dir.path().join("b.model"));
    for m in [&a, &b] {
        ok(&[
            "train-meta",
            "--kind",
            "mlp",
            "--mu",
            s(&mu),
            "--seed",
            "1",
            "--epochs",
            "3",
            "--out",
            s(m),
        ]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn eval_meta_on_separable_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mu = dir.path().join("mu.csv");
    let mut csv = String::from("a,b,label,group_id\n");
    for i in 0..40 {
        let fp = i % 2 == 0;
        let a = if fp { 2.0 } else { -2.0 } + (i % 7) as f64 * 0.1;
        csv.push_str(&format!("{a},{},{},g{}\n", (i % 5) as f64, fp as u8, i / 4));
    }
    std::fs::write(&mu, csv).unwrap();
    let model = dir.path().join("m.model");
    ok(&[
        "train-meta",
        "--kind",
        "logistic",
        "--mu",
        s(&mu),
        "--lr",
        "0.05",
        "--epochs",
        "100",
        "--batch-size",
        "8",
        "--out",
        s(&model),
    ]);
    let report = ok(&["eval-meta", "--model", s(&model), "--mu", s(&mu)]);
    assert!(report.lines().any(|l| l == "auroc\t1"), "{report}");
    assert!(report.lines().any(|l| l == "auprc\t1"), "{report}");
}

#[test]
fn exit_codes() {
    assert_eq!(metaseg(&["--bogus"]).status.code(), Some(1));
    let out = metaseg(&["synth", "--count", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(metaseg(&["lars", "--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,label,group_id\n1,7,g\n").unwrap();
    assert_eq!(
        metaseg(&[
            "lars",
            "--mu",
            s(&bad),
            "--out",
            s(&dir.path().join("o.csv"))
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        metaseg(&[
            "lars",
            "--mu",
            s(&dir.path().join("missing.csv")),
            "--out",
            "o.csv"
        ])
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn help_lists_flags() {
    let help = ok(&["train-meta", "--help"]);
    for flag in [
        "--kind",
        "--mu",
        "--lr",
        "--weight-decay",
        "--epochs",
        "--batch-size",
        "--seed",
        "--out",
        "--trace",
    ] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn thread_cap_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    ok(&["synth", "--count", "5", "--out", s(&d)]);
    let run = |threads: &str, out: &Path| {
        let o = Command::new(env!("CARGO_BIN_EXE_metaseg"))
            .env("METASEG_THREADS", threads)
            .args(["metrics", "--in", s(&d), "--out", s(out)])
            .output()
            .unwrap();
        assert!(o.status.success());
        std::fs::read(out).unwrap()
    };
    assert_eq!(
        run("1", &dir.path().join("a.csv")),
        run("3", &dir.path().join("b.csv"))
    );
    let o = Command::new(env!("CARGO_BIN_EXE_metaseg"))
        .env("METASEG_THREADS", "zero")
        .args(["metrics", "--in", s(&d), "--out", "x.csv"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn leave_one_out_on_two_identical_samples() {
    let reg = MetricRegistry::standard(19);
    let t = ThresholdConfig::default();
    // first scene holding both true and false positive components
    let one = (0..)
        .map(|seed| {
            let spec = SceneSpec {
                seed,
                ..Default::default()
            };
            generate(&spec, 1).unwrap().into_entries().remove(0)
        })
        .find(|s| {
            let d =
                build_metrics_dataset(&SampleSet::new(vec![s.clone()]).unwrap(), t, &reg).unwrap();
            d.positives() > 0 && d.positives() < d.len()
        })
        .unwrap();
    let twin = Sample {
        id: "twin".into(),
        ..one.clone()
    };
    let set = SampleSet::new(vec![one, twin]).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        ..Default::default()
    };
    let total = build_metrics_dataset(&set, t, &reg).unwrap().len();
    let r = leave_one_out(ModelKind::Logistic, &set, &cfg, t, &reg).unwrap();
    assert_eq!(r.scores.len(), total);
    assert_eq!(r.report.positives + r.report.negatives, total);
    // each twin is scored by a model trained on the other, identical, one
    let half = total / 2;
    assert_eq!(r.scores[..half], r.scores[half..]);
}

#[test]
fn removing_predicted_false_positives() {
    let spec = SceneSpec {
        seed: 40,
        ..Default::default()
    };
    let set = generate(&spec, 40).unwrap();
    let reg = MetricRegistry::standard(19);
    let t = ThresholdConfig::default();
    let dataset = build_metrics_dataset(&set, t, &reg).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 100,
        batch_size: 16,
        ..Default::default()
    };
    let (model, _) = train(ModelKind::Mlp, &dataset, &cfg).unwrap();
    let mut removed_fp = 0;
    let mut removed_tp = 0;
    for sample in set.iter() {
        let m = sample_metrics(sample, t, &reg, 1).unwrap();
        let (filtered, kept) =
            remove_false_positives(&m.score, &m.components, &model, &m.rows, 0.5).unwrap();
        for comp in &m.components {
            if kept.iter().any(|k| k.id == comp.id) {
                continue;
            }
            assert!(comp.pixels.iter().all(|&(r, c)| filtered.get(r, c) == 0.0));
            if comp.is_false_positive == Some(true) {
                removed_fp += 1;
            } else {
                removed_tp += 1;
            }
        }
    }
    assert!(
        removed_fp > 10 * removed_tp.max(1) || (removed_fp > 0 && removed_tp == 0),
        "{removed_fp} FP vs {removed_tp} TP removed"
    );
}
