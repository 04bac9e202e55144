use std::path::Path;
use std::process::{Command, Output};

use bscan_core::detector::{ApResult, PrPoint};
use bscan_core::experiment::{CellResult, CellSpec, ExperimentConfig, RunReport, SeedRun, REPORT_FILE};
use bscan_core::seed::SeedLedger;

fn bscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bscan"))
        .args(args)
        .output()
        .expect("spawn bscan")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn phantom_set(dir: &Path, count: usize) -> String {
    let cfg = dir.join("phantom.toml");
    std::fs::write(&cfg, format!("count = {count}\ndefects_min = 0\ndefects_max = 3\n")).unwrap();
    let root = dir.join("ph");
    let out = bscan(&[
        "dataset",
        "phantom",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        root.to_str().unwrap(),
        "--seed",
        "4",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    root.to_str().unwrap().to_string()
}

#[test]
fn phantom_validate_split() {
    let dir = tempfile::tempdir().unwrap();
    let root = phantom_set(dir.path(), 40);
    let out = bscan(&["dataset", "validate", &root]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("40 images"));

    let out = bscan(&["dataset", "split", &root, "--fractions", "0.5,0.25,0.25", "--seed", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let lines = |name: &str| {
        std::fs::read_to_string(Path::new(&root).join(name))
            .unwrap()
            .lines()
            .count()
    };
    assert_eq!(lines("train.jsonl") + lines("val.jsonl") + lines("test.jsonl"), 40);
}

#[test]
fn copy_paste_and_masks() {
    let dir = tempfile::tempdir().unwrap();
    let root = phantom_set(dir.path(), 40);
    let cp = dir.path().join("cp");
    let out = bscan(&[
        "cpsynth",
        "generate",
        "--canvases",
        &root,
        "--patches",
        &root,
        "--count",
        "12",
        "--defects",
        "1:2",
        "--out",
        cp.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&bscan(&["dataset", "validate", cp.to_str().unwrap()])), 0);

    let masks = dir.path().join("masks");
    let out = bscan(&[
        "maskgen",
        "sample",
        "--pool",
        &root,
        "--count",
        "5",
        "--out",
        masks.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let listed = std::fs::read_to_string(masks.join("masks.jsonl")).unwrap();
    assert_eq!(listed.lines().count(), 5);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "count = 5\nno_such_field = 1\n").unwrap();
    let out = bscan(&[
        "dataset",
        "phantom",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);

    let out = bscan(&[
        "exp",
        "run",
        "--config",
        dir.path().join("missing.toml").to_str().unwrap(),
    ]);
    assert_ne!(code(&out), 0);
}

#[test]
fn out_of_bounds_box_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let root = phantom_set(dir.path(), 6);
    let manifest = Path::new(&root).join("manifest.jsonl");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    rows[0]["boxes"] = serde_json::json!([[60, 60, 10, 10, "x"]]);
    let body: Vec<String> = rows.iter().map(|r| r.to_string()).collect();
    std::fs::write(&manifest, body.join("\n") + "\n").unwrap();
    let out = bscan(&["dataset", "validate", &root]);
    assert_eq!(code(&out), 4);
}

fn cell(name: &str, ap: f64) -> CellResult {
    CellResult {
        name: name.into(),
        spec: CellSpec::new(name, true, 0, 0),
        train_size: 1,
        train_hash: String::new(),
        test_hash: "t".into(),
        ap: Some(ApResult {
            ap,
            num_ground_truth: 1,
            num_detections: 1,
            true_positives: 1,
            curve: vec![PrPoint {
                confidence: 0.9,
                recall: 1.0,
                precision: 1.0,
            }],
        }),
        history: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        detector_checksum: String::new(),
        error: None,
    }
}

fn write_report(dir: &Path, cells: Vec<CellResult>) {
    let config = ExperimentConfig {
        cells: vec![CellSpec::new("real", true, 0, 0), CellSpec::new("cp", false, 10, 0)],
        synthetic_count: 10,
        ..Default::default()
    };
    let report = RunReport {
        config,
        config_hash: "c".into(),
        dataset_hash: "d".into(),
        test_hash: "t".into(),
        split_sizes: [1, 1, 1],
        runs: vec![SeedRun {
            seed: 0,
            ledger: SeedLedger::default(),
            gans: Vec::new(),
            cells,
        }],
    };
    std::fs::write(dir.join(REPORT_FILE), serde_json::to_string(&report).unwrap()).unwrap();
}

#[test]
fn report_renders_complete_run() {
    let dir = tempfile::tempdir().unwrap();
    write_report(dir.path(), vec![cell("real", 0.7), cell("cp", 0.5)]);
    let out = bscan(&["exp", "report", "--run", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("results.csv").exists());
    assert!(dir.path().join("plots/pr_cp.svg").exists());
}

#[test]
fn report_with_missing_cell_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    write_report(dir.path(), vec![cell("real", 0.7)]);
    let out = bscan(&["exp", "report", "--run", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 4);
    let table = std::fs::read_to_string(dir.path().join("results.txt")).unwrap();
    assert!(table.contains("missing"));
}
