use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn blindtrain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blindtrain"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.json");
    let text = format!(
        r#"{{
            "layers": [
                {{"input": 2, "output": 8, "activation": "relu"}},
                {{"input": 8, "output": 6, "activation": "relu"}},
                {{"input": 6, "output": 2, "activation": "softmax"}}
            ],
            "learning_rate": 0.1, "batch_size": 16, "epochs": 8, "seed": 4,
            {extra}
            "dataset": {{"kind": "blobs", "n_per_class": 60, "n_classes": 2, "dim": 2, "separation": 6.0, "seed": 9}}
        }}"#
    );
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn without_timing(mut report: Value) -> Value {
    for e in report["epochs"].as_array_mut().unwrap() {
        e.as_object_mut().unwrap().remove("wall_clock_secs");
    }
    report
}

#[test]
fn min_k_for_inference() {
    let out = blindtrain(&["min-k", "--t", "0.01", "--N", "1", "--L", "10"]);
    assert_eq!(stdout(&out).trim(), "10");
    let out = blindtrain(&[
        "min-k", "--t", "0.01", "--N", "2", "--L", "3", "--epochs", "5", "--dataset-size", "100", "--batch-size", "10",
    ]);
    let k: u32 = stdout(&out).trim().parse().unwrap();
    assert!(k > 10);
}

#[test]
fn missing_config_names_the_path() {
    let out = blindtrain(&["train", "--config", "/no/such/cfg.json", "--local-workers", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/cfg.json"));
}

#[test]
fn invalid_config_fails_before_connecting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#""t": 2.0, "workers": ["127.0.0.1:1"],"#);
    let out = blindtrain(&["train", "--config", &cfg]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("t must lie"), "{err}");
}

#[test]
fn train_then_infer_matches_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#""local_workers": 2, "pipelined": true,"#);
    let model = dir.path().join("model.json");
    let report: Value = serde_json::from_str(&stdout(&blindtrain(&[
        "train",
        "--config",
        &cfg,
        "--model-out",
        model.to_str().unwrap(),
    ])))
    .unwrap();
    let baseline: Value = serde_json::from_str(&stdout(&blindtrain(&["baseline", "--config", &cfg]))).unwrap();
    let acc = report["accuracy"].as_f64().unwrap();
    assert_eq!(acc, baseline["accuracy"].as_f64().unwrap());
    assert!(acc >= 0.95, "{acc}");
    assert!((report["final_loss"].as_f64().unwrap() - baseline["final_loss"].as_f64().unwrap()).abs() < 1e-9);
    assert_eq!(report["stats"]["failures"], 0);
    assert!(report["rounds"].as_u64().unwrap() >= 1);

    // Write the same blobs as CSV and classify them through workers.
    let csv = dir.path().join("data.csv");
    let data = blindtrain::dataset::gen_blobs(60, 2, 2, 6.0, 9).unwrap();
    let mut f = std::fs::File::create(&csv).unwrap();
    writeln!(f, "label,x0,x1").unwrap();
    for s in 0..data.len() {
        let x = data.features();
        writeln!(f, "{},{:e},{:e}", data.labels()[s], x.get(0, s), x.get(1, s)).unwrap();
    }
    drop(f);
    let infer: Value = serde_json::from_str(&stdout(&blindtrain(&[
        "infer",
        "--model",
        model.to_str().unwrap(),
        "--input",
        csv.to_str().unwrap(),
        "--local-workers",
        "2",
    ])))
    .unwrap();
    assert_eq!(infer["accuracy"].as_f64().unwrap(), acc);
    assert_eq!(infer["predictions"].as_array().unwrap().len(), 120);
}

#[test]
fn runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#""local_workers": 2,"#);
    let a: Value = serde_json::from_str(&stdout(&blindtrain(&["train", "--config", &cfg]))).unwrap();
    let b: Value = serde_json::from_str(&stdout(&blindtrain(&["train", "--config", &cfg]))).unwrap();
    assert_eq!(without_timing(a), without_timing(b));
}

#[test]
fn csv_dataset_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut f = std::fs::File::create(dir.path().join("train.csv")).unwrap();
    for i in 0..40 {
        let label = i % 2;
        writeln!(f, "{label},{},{}", label as f64 * 10.0 + (i as f64 * 0.37).sin(), (i as f64).cos()).unwrap();
    }
    drop(f);
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"layers": [{"input": 2, "output": 2, "activation": "softmax", "policy": "data"}],
            "learning_rate": 0.5, "batch_size": 8, "epochs": 10, "seed": 1, "local_workers": 3,
            "dataset": {"kind": "csv", "path": "train.csv"}}"#,
    )
    .unwrap();
    let report: Value = serde_json::from_str(&stdout(&blindtrain(&["train", "--config", cfg.to_str().unwrap()]))).unwrap();
    assert_eq!(report["accuracy"].as_f64().unwrap(), 1.0);
    assert_eq!(report["n_workers"], 3);
}

#[test]
fn tampering_worker_aborts_training() {
    let child = Command::new(env!("CARGO_BIN_EXE_blindtrain"))
        .args(["worker", "--listen", "127.0.0.1:0", "--mode", "tamper", "--prob", "1", "--seed", "3"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut child = Guard(child);
    let mut line = String::new();
    BufReader::new(child.0.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_string();

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let report_path = dir.path().join("report.json");
    let out = blindtrain(&[
        "train",
        "--config",
        &cfg,
        "--workers",
        &addr,
        "--report-out",
        report_path.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report["aborted"].as_str().unwrap().contains("aborted"));
    assert_eq!(report["stats"]["failures"], 1);
    assert!(report["accuracy"].is_null());
}

struct Guard(std::process::Child);

impl Drop for Guard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn verify_experiment_table() {
    let out = stdout(&blindtrain(&[
        "verify-experiment",
        "--k",
        "1,10",
        "--trials",
        "400",
        "--mode",
        "tamper",
        "--seed",
        "2",
    ]));
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), "k,trials,detected,rate,bound");
    let k1: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rate: f64 = k1[3].parse().unwrap();
    assert!((rate - 0.5).abs() < 0.1, "{rate}");
    let k10: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(k10[3].parse::<f64>().unwrap() >= 0.99);

    let out = stdout(&blindtrain(&["verify-experiment", "--k", "1", "--trials", "50", "--mode", "lazy"]));
    let rate: f64 = out.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    assert!(rate >= 0.9, "{rate}");
}

#[test]
fn mi_eval_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mi.csv");
    stdout(&blindtrain(&["mi-eval", "--keyspace-sizes", "4,255", "--size", "40", "--out", path.to_str().unwrap()]));
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "scheme,key_space,privacy");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 10);
    for r in &rows {
        assert!(r[2].parse::<f64>().unwrap() <= 0.0);
    }
    let score = |scheme: &str, ks: &str| -> f64 {
        rows.iter().find(|r| r[0] == scheme && r[1] == ks).unwrap()[2].parse().unwrap()
    };
    assert!(score("enc_full", "255") > score("identity", "255"));
}
