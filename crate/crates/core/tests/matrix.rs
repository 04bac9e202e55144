//! End-to-end run of a tiny training matrix and its report.

use bscan_core::dataset::PhantomConfig;
use bscan_core::detector::{DetectorTrainConfig, PretrainConfig};
use bscan_core::experiment::{
    render_report, run_matrix, Ablations, CellSpec, DatasetConfig, ExperimentConfig, RunReport, REPORT_FILE,
};
use bscan_core::gan::GanTrainConfig;

fn tiny(out: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetConfig {
            phantom: PhantomConfig::default(),
            train: 24,
            val: 8,
            test: 12,
            ..Default::default()
        },
        cells: vec![
            CellSpec::new("real", true, 0, 0),
            CellSpec::new("cp", false, 16, 0),
            CellSpec::new("real+gan", true, 0, 16),
        ],
        ablations: Ablations {
            no_detector: true,
            no_concat: false,
        },
        seeds: vec![3],
        output_dir: out.to_path_buf(),
        synthetic_count: 16,
        gan: GanTrainConfig {
            epochs: 1,
            decay_epochs: 0,
            checkpoint_every: 0,
            ..GanTrainConfig::desk()
        },
        detector: DetectorTrainConfig {
            max_epochs: 2,
            pretrain: PretrainConfig {
                epochs: 1,
                ..Default::default()
            },
            ..DetectorTrainConfig::desk()
        },
        ..Default::default()
    }
}

#[test]
fn tiny_matrix_runs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let report = run_matrix(&cfg).unwrap();

    assert_eq!(report.split_sizes, [24, 8, 12]);
    let names = report.cell_names();
    assert_eq!(names, ["real", "cp", "real+gan", "real+gan/no-detector"]);
    let run = &report.runs[0];
    for c in &run.cells {
        assert_eq!(c.test_hash, report.test_hash, "{}", c.name);
        let ap = c.ap.as_ref().unwrap().ap;
        assert!((0.0..=1.0).contains(&ap), "{}: {ap}", c.name);
    }
    let size = |n: &str| run.cells.iter().find(|c| c.name == n).unwrap().train_size;
    assert_eq!(size("real"), 24);
    assert_eq!(size("cp"), 16);
    assert_eq!(size("real+gan"), 40);
    assert!(run.ledger.contains("cpsynth/generate"));

    // The report on disk matches the returned one.
    let loaded = RunReport::load(&dir.path().join(REPORT_FILE)).unwrap();
    assert_eq!(loaded, report);

    let outcome = render_report(&report, dir.path()).unwrap();
    assert!(outcome.complete());
    assert_eq!(outcome.rows.len(), 4);
    assert!(dir.path().join("plots").read_dir().unwrap().count() == 4);
}

#[test]
fn same_seed_same_report() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ca = tiny(a.path());
    ca.cells.truncate(2);
    ca.ablations = Ablations::default();
    let mut cb = ca.clone();
    cb.output_dir = b.path().to_path_buf();
    let ra = run_matrix(&ca).unwrap();
    let rb = run_matrix(&cb).unwrap();
    assert_eq!(ra.runs[0].cells, rb.runs[0].cells);
}
