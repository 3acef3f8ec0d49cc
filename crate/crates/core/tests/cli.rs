use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ltfeas::features::{feature_names, FeatureTable, FEATURE_COUNT};

fn ltfeas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltfeas")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(code(&ltfeas(&["--help"])), 0);
    assert_eq!(code(&ltfeas(&[])), 1);
    assert_eq!(code(&ltfeas(&["gen", "--n", "many", "--out", "x.jsonl"])), 1);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f.csv");
    let missing = ltfeas(&["features", "--dataset", "/nonexistent/gen.jsonl", "--out", s(&out)]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/gen.jsonl"));

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"split": {"train": 0.5, "val": 0.2, "test": 0.2}}"#).unwrap();
    assert_eq!(code(&ltfeas(&["--config", s(&cfg), "catalog", "synth", "--n", "5", "--out", s(&out)])), 1);
}

#[test]
fn generation_ignores_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cat = dir.path().join("cat.csv");
    assert_eq!(code(&ltfeas(&["--seed", "3", "catalog", "synth", "--n", "25", "--out", s(&cat)])), 0);
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for (w, p) in [("1", &a), ("3", &b)] {
        let o = ltfeas(&["--catalog", s(&cat), "--seed", "9", "--workers", w, "gen", "--n", "6", "--out", s(p)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(bytes.iter().filter(|&&c| c == b'\n').count(), 6);

    let f = dir.path().join("f.csv");
    assert_eq!(code(&ltfeas(&["--catalog", s(&cat), "features", "--dataset", s(&a), "--out", s(&f)])), 0);
    let t = FeatureTable::read_csv(&f).unwrap();
    assert_eq!((t.len(), t.width()), (6, FEATURE_COUNT));
}

fn random_features(path: &Path, n: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let row: Vec<f64> = (0..FEATURE_COUNT).map(|_| rng.random_range(-1.0..1.0)).collect();
        labels.push(usize::from(row[0] + row[7] > 0.0));
        rows.push(row);
    }
    FeatureTable::new(feature_names(), rows, labels).unwrap().write_csv(path).unwrap();
}

#[test]
fn train_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let feats = d.join("features.csv");
    random_features(&feats, 300);
    let cat = d.join("cat.csv");
    assert_eq!(code(&ltfeas(&["catalog", "synth", "--n", "10", "--out", s(&cat)])), 0);

    let model = d.join("model.json");
    let test = d.join("test.csv");
    let o = ltfeas(&[
        "train", "--features", s(&feats), "--model", "ensemble", "--top-k", "12", "--out", s(&model), "--test-out", s(&test),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("model.scaler.json").is_file());

    let report = d.join("report.json");
    let roc = d.join("roc.csv");
    let o = ltfeas(&["eval", "--model", s(&model), "--features", s(&test), "--out", s(&report), "--roc", s(&roc)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["counts", "accuracy", "precision", "recall", "f1", "f10", "auc"] {
        assert!(r.get(key).is_some(), "report lacks {key}");
    }
    assert!(r["accuracy"].as_f64().unwrap() > 0.7);
    assert!(std::fs::read_to_string(&roc).unwrap().starts_with("fpr,tpr,threshold"));

    let o = ltfeas(&[
        "--catalog", s(&cat), "predict", "--model", s(&model), "--body1", "2", "--body2", "7", "--epoch", "60000", "--m0", "1800",
        "--tof", "600",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let p: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((0.0..=1.0).contains(&p["p_feasible"].as_f64().unwrap()));

    let o = ltfeas(&[
        "--catalog", s(&cat), "predict", "--model", s(&model), "--body1", "2", "--body2", "99", "--epoch", "60000", "--m0", "1800",
        "--tof", "600",
    ]);
    assert_eq!(code(&o), 2);
}
