//! End-to-end checks of the command-line binary: exit codes, artifact
//! shapes, and byte-level determinism of reruns.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gtcausin"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn gtcausin")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["train", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_two() {
    // No subcommand at all.
    assert_eq!(run(&[]).status.code(), Some(2));
    // Missing required flag.
    let out = run(&[
        "prepare-data",
        "--speeds",
        "x.csv",
        "--distances",
        "y.csv",
        "--out",
        "z",
    ]);
    assert_eq!(out.status.code(), Some(2));
    // Unknown enum value.
    let out = run(&[
        "train",
        "--data",
        "d",
        "--out",
        "o",
        "--variant",
        "gt-wrong",
    ]);
    assert_eq!(out.status.code(), Some(2));
    // Unknown plot kind is rejected by the handler, same exit code.
    let out = run(&["emit-plot", "--kind", "sparkline", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "evaluate",
        "--checkpoint",
        "/nonexistent/checkpoint.json",
        "--data",
        "/nonexistent",
        "--out",
        path_str(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

/// Builds the raw fixture plus prepared directory shared by the positive
/// tests. Returns (raw, prepared) paths inside `root`.
fn prepare_fixture(
    root: &Path,
    nodes: u32,
    steps: u32,
    seed: u32,
) -> (std::path::PathBuf, std::path::PathBuf) {
    let raw = root.join("raw");
    let prep = root.join("prep");
    run_ok(&[
        "synth-data",
        "--kind",
        "smooth",
        "--nodes",
        &nodes.to_string(),
        "--steps",
        &steps.to_string(),
        "--chords",
        "3",
        "--seed",
        &seed.to_string(),
        "--out",
        path_str(&raw),
    ]);
    run_ok(&[
        "prepare-data",
        "--speeds",
        path_str(&raw.join("speeds.csv")),
        "--distances",
        path_str(&raw.join("distances.csv")),
        "--sigma",
        "5",
        "--kappa",
        "10",
        "--out",
        path_str(&prep),
    ]);
    (raw, prep)
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn prepare_data_records_split_boundaries() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, prep) = prepare_fixture(tmp.path(), 8, 500, 3);
    let manifest = read_json(&prep.join("manifest.json"));
    assert_eq!(manifest["command"], "prepare-data");
    assert_eq!(manifest["effective_config"]["rows"], 500);
    assert_eq!(manifest["effective_config"]["nodes"], 8);
    assert_eq!(manifest["effective_config"]["train_end"], 400);
    assert_eq!(manifest["effective_config"]["val_end"], 450);
    assert_eq!(manifest["input_digests"].as_object().unwrap().len(), 2);
    assert_eq!(manifest["tool_version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn train_evaluate_attention_plot_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, prep) = prepare_fixture(tmp.path(), 8, 500, 4);
    let run_dir = tmp.path().join("run");
    run_ok(&[
        "train",
        "--data",
        path_str(&prep),
        "--epochs",
        "2",
        "--blocks",
        "2",
        "--width",
        "4",
        "--seed",
        "9",
        "--out",
        path_str(&run_dir),
    ]);
    let curve = std::fs::read_to_string(run_dir.join("loss_curve.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "epoch,train_mae,val_mae,lr");
    assert_eq!(lines.len(), 3);

    let eval_dir = tmp.path().join("eval");
    run_ok(&[
        "evaluate",
        "--checkpoint",
        path_str(&run_dir.join("checkpoint.json")),
        "--data",
        path_str(&prep),
        "--split",
        "test",
        "--out",
        path_str(&eval_dir),
    ]);
    let metrics = read_json(&eval_dir.join("metrics.json"));
    let horizons = metrics["horizons"].as_array().unwrap();
    let minutes: Vec<i64> = horizons
        .iter()
        .map(|h| h["horizon_minutes"].as_i64().unwrap())
        .collect();
    assert_eq!(minutes, vec![15, 30, 60]);
    assert_eq!(metrics["variant"], "gt-causin");
    assert_eq!(metrics["split"], "test");

    let att_dir = tmp.path().join("att");
    run_ok(&[
        "inspect-attention",
        "--checkpoint",
        path_str(&run_dir.join("checkpoint.json")),
        "--data",
        path_str(&prep),
        "--station",
        "s002",
        "--t",
        "30",
        "--out",
        path_str(&att_dir),
    ]);
    let att = std::fs::read_to_string(att_dir.join("attention.csv")).unwrap();
    let mut sums: std::collections::BTreeMap<String, f64> = Default::default();
    for line in att.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 4);
        *sums.entry(cols[0].to_string()).or_default() += cols[3].parse::<f64>().unwrap();
    }
    // One station contributes three query tokens over 3N keys.
    assert_eq!(sums.len(), 3);
    for (query, total) in &sums {
        assert!(
            (total - 1.0).abs() < 1e-9,
            "weights of {query} sum to {total}"
        );
    }

    let plot_dir = tmp.path().join("plot");
    run_ok(&[
        "emit-plot",
        "--kind",
        "prediction-vs-truth",
        "--checkpoint",
        path_str(&run_dir.join("checkpoint.json")),
        "--data",
        path_str(&prep),
        "--station",
        "s002",
        "--horizon",
        "3",
        "--out",
        path_str(&plot_dir),
    ]);
    let plot = std::fs::read_to_string(plot_dir.join("plot.csv")).unwrap();
    let rows: Vec<&str> = plot.lines().collect();
    assert_eq!(rows[0], "time_index,timestamp,truth,prediction,observed");
    assert!(rows.len() > 10);
    // One point per window, shifting a single step each row.
    let first: usize = rows[1].split(',').next().unwrap().parse().unwrap();
    let second: usize = rows[2].split(',').next().unwrap().parse().unwrap();
    assert_eq!(second, first + 1);
    for row in &rows[1..] {
        let cols: Vec<&str> = row.split(',').collect();
        assert!(cols[2].parse::<f64>().unwrap().is_finite());
        assert!(cols[3].parse::<f64>().unwrap().is_finite());
    }

    let heat_dir = tmp.path().join("heat");
    run_ok(&[
        "emit-plot",
        "--kind",
        "attention-heatmap",
        "--attention",
        path_str(&att_dir.join("attention.csv")),
        "--out",
        path_str(&heat_dir),
    ]);
    let heat = std::fs::read_to_string(heat_dir.join("plot.csv")).unwrap();
    assert_eq!(heat.lines().next().unwrap(), "query_token,key_token,weight");
    assert_eq!(heat.lines().count(), att.lines().count());
}

#[test]
fn correlate_round_trip_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, prep) = prepare_fixture(tmp.path(), 8, 400, 5);
    let batch_dir = tmp.path().join("batches");
    run_ok(&[
        "causal-extract",
        "--data",
        path_str(&prep),
        "--batch",
        "200",
        "--repeats",
        "3",
        "--seed",
        "2",
        "--out",
        path_str(&batch_dir),
    ]);
    let files: Vec<_> = std::fs::read_dir(&batch_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("batch_"))
        .collect();
    assert_eq!(files.len(), 3);

    let corr_dir = tmp.path().join("corr");
    run_ok(&[
        "correlate",
        "--batches",
        path_str(&batch_dir),
        "--out",
        path_str(&corr_dir),
    ]);
    let rel = std::fs::read_to_string(corr_dir.join("relation.csv")).unwrap();
    let lines: Vec<&str> = rel.lines().collect();
    assert_eq!(lines.len(), 31);
    for line in &lines {
        assert_eq!(line.split(',').count(), 30);
    }
    let report = read_json(&corr_dir.join("link_report.json"));
    assert!(report["first_order_triangle"].as_f64().unwrap().is_finite());
    assert!(report["lag1_self"].as_f64().unwrap().is_finite());
    assert!(report["lag3_self"].as_f64().unwrap().is_finite());

    let circ_dir = tmp.path().join("circles");
    run_ok(&[
        "emit-plot",
        "--kind",
        "correlation-circles",
        "--relation",
        path_str(&corr_dir.join("relation.csv")),
        "--out",
        path_str(&circ_dir),
    ]);
    let circles = std::fs::read_to_string(circ_dir.join("plot.csv")).unwrap();
    assert_eq!(circles.lines().count(), 1 + 30 * 30);
}

#[test]
fn ablation_table_and_l_sweep_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, prep) = prepare_fixture(tmp.path(), 6, 400, 6);
    let abl_dir = tmp.path().join("abl");
    run_ok(&[
        "ablation",
        "--data",
        path_str(&prep),
        "--variants",
        "gt-causin,gt-badcausin",
        "--blocks",
        "2",
        "--seeds",
        "3",
        "--epochs",
        "1",
        "--width",
        "4",
        "--out",
        path_str(&abl_dir),
    ]);
    let table = read_json(&abl_dir.join("ablation.json"));
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["label"], "gt-causin-L2");
    assert_eq!(rows[1]["label"], "gt-badcausin-L2");
    // Baseline improvement over itself is exactly zero.
    for imp in rows[0]["improvement_vs_first"].as_array().unwrap() {
        assert_eq!(imp["mae"].as_f64().unwrap(), 0.0);
    }

    let sweep_dir = tmp.path().join("sweep");
    run_ok(&[
        "emit-plot",
        "--kind",
        "l-sweep",
        "--ablation",
        path_str(&abl_dir.join("ablation.json")),
        "--out",
        path_str(&sweep_dir),
    ]);
    let sweep = std::fs::read_to_string(sweep_dir.join("plot.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 2 * 3);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, prep) = prepare_fixture(tmp.path(), 6, 400, 8);
    let run_dir = tmp.path().join("run");
    let args = [
        "train",
        "--data",
        path_str(&prep),
        "--epochs",
        "2",
        "--blocks",
        "2",
        "--width",
        "4",
        "--seed",
        "11",
        "--out",
        path_str(&run_dir),
    ];
    run_ok(&args);
    let ckpt1 = std::fs::read(run_dir.join("checkpoint.json")).unwrap();
    let curve1 = std::fs::read(run_dir.join("loss_curve.csv")).unwrap();
    let mut manifest1 = read_json(&run_dir.join("manifest.json"));

    run_ok(&args);
    let ckpt2 = std::fs::read(run_dir.join("checkpoint.json")).unwrap();
    let curve2 = std::fs::read(run_dir.join("loss_curve.csv")).unwrap();
    let mut manifest2 = read_json(&run_dir.join("manifest.json"));

    assert_eq!(ckpt1, ckpt2);
    assert_eq!(curve1, curve2);
    // Wall clock is the one field allowed to differ.
    assert_ne!(manifest1["wall_clock_secs"], serde_json::Value::Null);
    manifest1["wall_clock_secs"] = 0.into();
    manifest2["wall_clock_secs"] = 0.into();
    assert_eq!(manifest1, manifest2);
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, prep) = prepare_fixture(tmp.path(), 6, 400, 12);
    let cfg_path = tmp.path().join("train.json");
    std::fs::write(
        &cfg_path,
        r#"{"epochs": 1, "batch_size": 8, "model": {"num_blocks": 2, "block_width": 4, "seed": 21}}"#,
    )
    .unwrap();
    let run_dir = tmp.path().join("run");
    run_ok(&[
        "train",
        "--data",
        path_str(&prep),
        "--config",
        path_str(&cfg_path),
        "--batch-size",
        "4",
        "--out",
        path_str(&run_dir),
    ]);
    let manifest = read_json(&run_dir.join("manifest.json"));
    let cfg = &manifest["effective_config"];
    // Flag wins over the file, file wins over the default.
    assert_eq!(cfg["batch_size"], 4);
    assert_eq!(cfg["epochs"], 1);
    assert_eq!(cfg["model"]["num_blocks"], 2);
    assert_eq!(cfg["model"]["seed"], 21);
    assert_eq!(manifest["seed"], 21);
    assert_eq!(
        manifest["config_path"].as_str().unwrap(),
        path_str(&cfg_path)
    );
    assert_eq!(manifest["input_digests"].as_object().unwrap().len(), 3);
}

#[test]
fn planted_fixture_prepares_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    run_ok(&[
        "synth-data",
        "--kind",
        "planted",
        "--nodes",
        "8",
        "--steps",
        "300",
        "--seed",
        "2",
        "--out",
        path_str(&raw),
    ]);
    let prep = tmp.path().join("prep");
    run_ok(&[
        "prepare-data",
        "--speeds",
        path_str(&raw.join("speeds.csv")),
        "--distances",
        path_str(&raw.join("distances.csv")),
        "--sigma",
        "5",
        "--kappa",
        "10",
        "--out",
        path_str(&prep),
    ]);
    let manifest = read_json(&prep.join("manifest.json"));
    assert_eq!(manifest["effective_config"]["rows"], 300);
    assert_eq!(manifest["effective_config"]["nodes"], 8);
}
