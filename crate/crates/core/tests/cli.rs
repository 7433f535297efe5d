//! End-to-end checks of the `ideal` binary: schemas, exit codes, output
//! determinism, and the documented file formats.

use std::path::Path;
use std::process::Command;

fn ideal_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ideal"))
}

fn write(path: &Path, body: &str) {
    std::fs::write(path, body).unwrap();
}

fn tiny_run_config() -> String {
    r#"{
        "dataset": {
            "n_images": 50, "size": 16, "positive_fraction": 0.5,
            "contrast": 0.55, "noise_sigma": 0.04,
            "task": "effusion_like", "seed": 11
        },
        "strategies": [{"kind": "random"}, {"kind": "kurtosis"}],
        "batch_size": 8,
        "seeds": [0],
        "train": {
            "learning_rate": 4e-3, "max_epochs": 8, "patience": 0,
            "minibatch": 8, "augment": false, "seed": 0
        },
        "fine_tune_epochs": 4,
        "dropout_p": 0.0,
        "variance_head": false
    }"#
    .to_string()
}

#[test]
fn gen_writes_pgms_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write(
        &spec,
        r#"{"n_images": 6, "size": 16, "positive_fraction": 0.5,
            "contrast": 0.5, "noise_sigma": 0.05, "task": "effusion_like", "seed": 3}"#,
    );
    let out = dir.path().join("data");
    let status = ideal_bin()
        .args(["gen", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let pgms: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().map(|x| x == "pgm").unwrap_or(false))
        .collect();
    assert_eq!(pgms.len(), 6);
    assert!(out.join("manifest.json").exists());
    // Redacted export omits labels.
    let out2 = dir.path().join("data-redacted");
    let status = ideal_bin()
        .args(["gen", "--redact", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&out2)
        .status()
        .unwrap();
    assert!(status.success());
    let manifest = std::fs::read_to_string(out2.join("manifest.json")).unwrap();
    assert!(!manifest.contains("\"label\""));
}

#[test]
fn bad_config_exits_2_and_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    // Unknown key must be rejected.
    write(&cfg, &tiny_run_config().replace("\"batch_size\"", "\"batchsize_typo\""));
    let out = dir.path().join("out");
    let status = ideal_bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists(), "no partial outputs on config error");

    // Invalid parameter value also exits 2.
    write(&cfg, &tiny_run_config().replace("\"size\": 16", "\"size\": 4"));
    let status = ideal_bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn run_is_deterministic_and_replays_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    write(&cfg, &tiny_run_config());
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for out in [&out1, &out2] {
        let status = ideal_bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .env("IDEAL_THREADS", "2")
            .status()
            .unwrap();
        assert!(status.success());
    }
    let curve1 = std::fs::read(out1.join("curve.csv")).unwrap();
    let curve2 = std::fs::read(out2.join("curve.csv")).unwrap();
    assert_eq!(curve1, curve2, "same config, byte-identical curve.csv");

    // Replay from the emitted manifest.
    let out3 = dir.path().join("c");
    let status = ideal_bin()
        .args(["run", "--config"])
        .arg(out1.join("manifest.json"))
        .arg("--out")
        .arg(&out3)
        .status()
        .unwrap();
    assert!(status.success());
    let curve3 = std::fs::read(out3.join("curve.csv")).unwrap();
    assert_eq!(curve1, curve3, "manifest replay is byte-identical");

    // CSV references the manifest hash.
    let head = String::from_utf8(curve1.clone()).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out1.join("manifest.json")).unwrap())
            .unwrap();
    let hash = manifest["config_hash"].as_str().unwrap();
    assert!(head.starts_with(&format!("# manifest {hash}")));
    // Summary carries both strategies.
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out1.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["strategies"].as_array().unwrap().len(), 2);
}

#[test]
fn features_command_row_per_map() {
    let dir = tempfile::tempdir().unwrap();
    // Produce 5 PGMs via gen.
    let spec = dir.path().join("spec.json");
    write(
        &spec,
        r#"{"n_images": 5, "size": 16, "positive_fraction": 0.4,
            "contrast": 0.5, "noise_sigma": 0.05, "task": "effusion_like", "seed": 9}"#,
    );
    let data = dir.path().join("maps");
    assert!(ideal_bin()
        .args(["gen", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    // Remove the dataset manifest so only PGMs drive the row count.
    std::fs::remove_file(data.join("manifest.json")).unwrap();
    for family in ["first-order", "glcm", "shape"] {
        let out = dir.path().join(format!("{family}.csv"));
        let status = ideal_bin()
            .args(["features", "--maps"])
            .arg(&data)
            .args(["--family", family, "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        let body = std::fs::read_to_string(&out).unwrap();
        assert_eq!(body.lines().count(), 6, "{family}: header + 5 rows");
    }
}

#[test]
fn rank_command_reports_ndcg() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write(&a, "id,score,rank\ns0,0.9,1\ns1,0.8,2\ns2,0.7,3\n");
    write(&b, "id,score,rank\ns2,0.9,1\ns1,0.8,2\ns0,0.7,3\n");
    let report = dir.path().join("report.json");
    let status = ideal_bin()
        .args(["rank", "--ndcg-p", "3", "--out"])
        .arg(&report)
        .arg("--scores")
        .arg(&a)
        .arg(&b)
        .status()
        .unwrap();
    assert!(status.success());
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let ndcg = doc["ndcg"].as_f64().unwrap();
    assert!((ndcg - 0.8484).abs() < 1e-3, "{ndcg}");
    assert_eq!(doc["top_p_overlap"].as_f64().unwrap(), 1.0);
}

#[test]
fn seg_run_emits_dice_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("seg.json");
    write(
        &cfg,
        &tiny_run_config().replace("effusion_like", "gland_seg"),
    );
    let out = dir.path().join("seg-out");
    let status = ideal_bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let body = std::fs::read_to_string(out.join("dice_curve.csv")).unwrap();
    assert!(body.lines().nth(1).unwrap().starts_with("strategy,seed,fraction,dice_val,dice_test"));
}
