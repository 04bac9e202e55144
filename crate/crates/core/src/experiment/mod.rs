//! The training matrix: detectors trained on real, copy/paste, GAN and
//! mixed training sets, all scored on one shared test split.

mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cpsynth::{extract_defect_patches, generate_cp_batch, PasteAttemptPolicy};
use crate::dataset::phantom::generate_phantoms_with;
use crate::dataset::{extract_canvases, load_dataset, split_by_defect, AnnotatedSample, DatasetSplit, PhantomConfig};
use crate::detector::{
    evaluate_ap, fit_anchors, pretrain_backbone, train_detector, ApResult, DetEpoch, Detector, DetectorTrainConfig,
    EvalConfig,
};
use crate::error::{Error, Result};
use crate::gan::{generate_synthetic_set, pairs_from_samples, train_gan, GanEpoch, GanTrainConfig};
use crate::maskgen::{extract_aspect_ratios, sample_position_masks};
use crate::par::Parallelism;
use crate::patch::GrayscalePatch;
use crate::seed::{self, SeedLedger};

pub use report::{read_table_csv, render_report, table_rows, write_table_csv, RenderOutcome, TableRow};

/// Published AP (percent) for the cells that have one.
pub const PUBLISHED_AP: [(&str, f64); 4] = [("real", 71.0), ("gan", 72.1), ("real+gan", 75.7), ("cp", 47.42)];

pub fn published_ap(cell: &str) -> Option<f64> {
    PUBLISHED_AP.iter().find(|(n, _)| *n == cell).map(|(_, v)| *v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GanVariant {
    Full,
    NoDetector,
    NoConcat,
}

impl GanVariant {
    pub fn label(self) -> &'static str {
        match self {
            GanVariant::Full => "full",
            GanVariant::NoDetector => "no-detector",
            GanVariant::NoConcat => "no-concat",
        }
    }

    /// The training configuration with this variant's component removed.
    pub fn apply(self, base: &GanTrainConfig) -> GanTrainConfig {
        let mut cfg = base.clone();
        match self {
            GanVariant::Full => {}
            GanVariant::NoDetector => cfg.loss.lambda_det = 0.0,
            GanVariant::NoConcat => cfg.discriminator.concat_mask = false,
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Phantom,
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetKind,
    pub phantom: PhantomConfig,
    /// Phantom subset sizes; ignored for manifests.
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub root: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    /// Manifest split fractions.
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            source: DatasetKind::Phantom,
            phantom: PhantomConfig::default(),
            train: 600,
            val: 100,
            test: 300,
            root: None,
            manifest: None,
            fractions: [0.7, 0.1, 0.2],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub name: String,
    #[serde(default)]
    pub real: bool,
    #[serde(default)]
    pub cp: usize,
    #[serde(default)]
    pub gan: usize,
    #[serde(default = "default_variant")]
    pub gan_variant: GanVariant,
}

fn default_variant() -> GanVariant {
    GanVariant::Full
}

impl CellSpec {
    pub fn new(name: &str, real: bool, cp: usize, gan: usize) -> Self {
        CellSpec {
            name: name.into(),
            real,
            cp,
            gan,
            gan_variant: GanVariant::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Add a real+GAN cell whose generator trains without the detector term.
    pub no_detector: bool,
    /// Add a real+GAN cell whose discriminators do not see the mask.
    pub no_concat: bool,
}

/// Missing top-level keys take the desk-scale defaults below; a nested
/// table that is present but partial (say `[detector]`) fills its gaps from
/// that section's own full-scale defaults instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub cells: Vec<CellSpec>,
    pub ablations: Ablations,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Synthetic images per generator.
    pub synthetic_count: usize,
    pub defects_per_image: (usize, usize),
    pub copy_paste: PasteAttemptPolicy,
    pub gan: GanTrainConfig,
    pub detector: DetectorTrainConfig,
    pub eval: EvalConfig,
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let n = 2000;
        ExperimentConfig {
            dataset: DatasetConfig::default(),
            cells: vec![
                CellSpec::new("real", true, 0, 0),
                CellSpec::new("cp", false, n, 0),
                CellSpec::new("gan", false, 0, n),
                CellSpec::new("real+cp", true, n, 0),
                CellSpec::new("real+gan", true, 0, n),
            ],
            ablations: Ablations::default(),
            seeds: vec![0],
            output_dir: PathBuf::from("runs/experiment"),
            synthetic_count: n,
            defects_per_image: (1, 4),
            copy_paste: PasteAttemptPolicy::default(),
            gan: GanTrainConfig {
                epochs: 30,
                decay_epochs: 10,
                checkpoint_every: 0,
                ..GanTrainConfig::desk()
            },
            detector: DetectorTrainConfig {
                max_epochs: 40,
                freeze_backbone: false,
                ..DetectorTrainConfig::desk()
            },
            eval: EvalConfig::default(),
            parallel: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Configured cells followed by the ablation cells.
    pub fn all_cells(&self) -> Vec<CellSpec> {
        let mut cells = self.cells.clone();
        let n = self.synthetic_count;
        for (on, variant) in [
            (self.ablations.no_detector, GanVariant::NoDetector),
            (self.ablations.no_concat, GanVariant::NoConcat),
        ] {
            if on {
                cells.push(CellSpec {
                    name: format!("real+gan/{}", variant.label()),
                    real: true,
                    cp: 0,
                    gan: n,
                    gan_variant: variant,
                });
            }
        }
        cells
    }

    pub fn mode(&self) -> Parallelism {
        if self.parallel {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.all_cells();
        if cells.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("need at least one cell and one seed".into()));
        }
        let mut names: Vec<&str> = cells.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate cell name `{}`", w[0])));
        }
        for c in &cells {
            if !c.real && c.cp == 0 && c.gan == 0 {
                return Err(Error::Config(format!("cell `{}` has no training data", c.name)));
            }
            if c.cp > self.synthetic_count || c.gan > self.synthetic_count {
                return Err(Error::Config(format!(
                    "cell `{}` asks for more than synthetic_count = {} images",
                    c.name, self.synthetic_count
                )));
            }
        }
        let (lo, hi) = self.defects_per_image;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "invalid defects_per_image {:?}",
                self.defects_per_image
            )));
        }
        if self.dataset.source == DatasetKind::Phantom && (self.dataset.train == 0 || self.dataset.test == 0) {
            return Err(Error::Config("phantom train and test sets must be non-empty".into()));
        }
        if self.needs_gan() && self.gan.generator.image_size != self.detector.input_size {
            return Err(Error::Config(format!(
                "GAN image size {} must equal detector input size {}",
                self.gan.generator.image_size, self.detector.input_size
            )));
        }
        self.copy_paste.validate()?;
        self.gan.validate()?;
        self.detector.validate()?;
        self.eval.validate()
    }

    fn needs_gan(&self) -> bool {
        self.all_cells().iter().any(|c| c.gan > 0)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(self)?))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash over pixels, boxes and defect ids, in order.
pub fn dataset_hash(samples: &[AnnotatedSample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update((s.image.width() as u64).to_le_bytes());
        h.update((s.image.height() as u64).to_le_bytes());
        h.update(s.image.pixels());
        h.update((s.boxes.len() as u64).to_le_bytes());
        for (b, id) in s.boxes.iter().zip(&s.defect_ids) {
            for v in [b.x, b.y, b.w, b.h] {
                h.update(v.to_le_bytes());
            }
            h.update((id.len() as u64).to_le_bytes());
            h.update(id.as_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub name: String,
    pub spec: CellSpec,
    pub train_size: usize,
    pub train_hash: String,
    pub test_hash: String,
    /// `None` when the cell did not finish.
    pub ap: Option<ApResult>,
    pub history: Vec<DetEpoch>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub detector_checksum: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanResult {
    pub variant: GanVariant,
    pub history: Vec<GanEpoch>,
    pub best_epoch: Option<usize>,
    pub detector_calls: usize,
    pub detector_checksum_before: Option<String>,
    pub detector_checksum_after: Option<String>,
    pub discriminator_input_channels: usize,
    pub generator_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub ledger: SeedLedger,
    pub gans: Vec<GanResult>,
    pub cells: Vec<CellResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub dataset_hash: String,
    pub test_hash: String,
    pub split_sizes: [usize; 3],
    pub runs: Vec<SeedRun>,
}

impl RunReport {
    pub fn cell_names(&self) -> Vec<String> {
        self.config.all_cells().into_iter().map(|c| c.name).collect()
    }

    /// Per-seed AP of `cell`, in seed order; `None` where it is missing.
    pub fn cell_aps(&self, cell: &str) -> Vec<Option<f64>> {
        self.runs
            .iter()
            .map(|r| {
                r.cells
                    .iter()
                    .find(|c| c.name == cell)
                    .and_then(|c| c.ap.as_ref())
                    .map(|a| a.ap)
            })
            .collect()
    }

    /// Median AP over seeds, or `None` if any seed is missing the cell.
    pub fn median_ap(&self, cell: &str) -> Option<f64> {
        let aps: Option<Vec<f64>> = self.cell_aps(cell).into_iter().collect();
        median(&aps?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    })
}

pub const REPORT_FILE: &str = "report.json";

/// Load or generate the dataset and split it by defect id.
pub fn prepare_dataset(cfg: &DatasetConfig, mode: Parallelism) -> Result<DatasetSplit> {
    match cfg.source {
        DatasetKind::Phantom => {
            let total = cfg.train + cfg.val + cfg.test;
            let phantom = PhantomConfig {
                count: total,
                ..cfg.phantom.clone()
            };
            let samples = generate_phantoms_with(&phantom, seed::derive_named(cfg.seed, "phantom"), mode)?;
            let n = total as f64;
            let fractions = [cfg.train as f64 / n, cfg.val as f64 / n, cfg.test as f64 / n];
            split_by_defect(&samples, fractions, seed::derive_named(cfg.seed, "split"))
        }
        DatasetKind::Manifest => {
            let (Some(root), Some(manifest)) = (&cfg.root, &cfg.manifest) else {
                return Err(Error::Config("manifest datasets need `root` and `manifest`".into()));
            };
            let samples = load_dataset(root, manifest)?;
            split_by_defect(&samples, cfg.fractions, seed::derive_named(cfg.seed, "split"))
        }
    }
}

fn evaluate(det: &Detector, test: &[AnnotatedSample], eval: &EvalConfig) -> Result<ApResult> {
    let images: Vec<GrayscalePatch> = test.iter().map(|s| s.image.clone()).collect();
    let dets = det.detect_batch(&images, eval)?;
    let gts: Vec<_> = test.iter().map(|s| s.boxes.clone()).collect();
    evaluate_ap(&dets, &gts, eval.match_iou)
}

/// Everything one seed shares across its cells.
struct SeedContext<'a> {
    cfg: &'a ExperimentConfig,
    split: &'a DatasetSplit,
    test_hash: &'a str,
    seed: u64,
    ledger: SeedLedger,
    backbone: Option<Detector>,
    real_detector: Option<Detector>,
    cp: Option<Vec<AnnotatedSample>>,
    gan_sets: BTreeMap<GanVariant, Vec<AnnotatedSample>>,
    gans: Vec<GanResult>,
    out: PathBuf,
}

impl SeedContext<'_> {
    fn detector_cfg(&mut self, cell: &str) -> DetectorTrainConfig {
        DetectorTrainConfig {
            seed: self.ledger.take(self.seed, &format!("detector/{cell}")),
            ..self.cfg.detector.clone()
        }
    }

    fn backbone(&mut self) -> Result<Option<&Detector>> {
        if self.cfg.detector.pretrain.epochs == 0 {
            return Ok(None);
        }
        if self.backbone.is_none() {
            let s = self.ledger.take(self.seed, "backbone/pretrain");
            let d = &self.cfg.detector;
            let anchors = fit_anchors(&self.split.train, d, seed::derive_named(s, "anchors"))?;
            let det = Detector::new(
                d.arch.clone(),
                anchors,
                d.input_size,
                candle_core::DType::F32,
                seed::derive_named(s, "init"),
            )?;
            let images: Vec<GrayscalePatch> = self.split.train.iter().map(|s| s.image.clone()).collect();
            let losses = pretrain_backbone(&det, &images, &d.pretrain, seed::derive_named(s, "denoise"))?;
            log::info!(
                "seed {}: backbone pre-trained, final loss {:?}",
                self.seed,
                losses.last()
            );
            self.backbone = Some(det);
        }
        Ok(self.backbone.as_ref())
    }

    fn train_cell(&mut self, spec: &CellSpec, train: &[AnnotatedSample]) -> Result<CellResult> {
        let dcfg = self.detector_cfg(&spec.name);
        self.backbone()?;
        let run = train_detector(train, &self.split.val, &dcfg, self.backbone.as_ref())?;
        let test_hash = dataset_hash(&self.split.test);
        if test_hash != self.test_hash {
            return Err(Error::TestSetMismatch {
                cell: spec.name.clone(),
                expected: self.test_hash.to_string(),
                found: test_hash,
            });
        }
        let ap = evaluate(&run.detector, &self.split.test, &self.cfg.eval)?;
        log::info!(
            "seed {} cell {}: AP {:.4} after {} epochs",
            self.seed,
            spec.name,
            ap.ap,
            run.history.len()
        );
        let dir = self.out.join(cell_dir(&spec.name));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        run.detector.save(&dir.join("detector.safetensors"))?;
        ap.write_csv(&dir.join("pr_curve.csv"))?;
        crate::detector::train::write_history_csv(&dir.join("detector_losses.csv"), &run.history)?;
        let result = CellResult {
            name: spec.name.clone(),
            spec: spec.clone(),
            train_size: train.len(),
            train_hash: dataset_hash(train),
            test_hash,
            ap: Some(ap),
            history: run.history,
            best_epoch: run.best_epoch,
            stopped_early: run.stopped_early,
            detector_checksum: run.detector.checksum()?,
            error: None,
        };
        if spec.real && spec.cp == 0 && spec.gan == 0 && self.real_detector.is_none() {
            self.real_detector = Some(run.detector);
        }
        Ok(result)
    }

    /// The real-only detector, trained on demand when no real cell ran yet.
    fn real_detector(&mut self) -> Result<&Detector> {
        if self.real_detector.is_none() {
            let dcfg = self.detector_cfg("gan-discriminator");
            self.backbone()?;
            let run = train_detector(&self.split.train, &self.split.val, &dcfg, self.backbone.as_ref())?;
            self.real_detector = Some(run.detector);
        }
        Ok(self.real_detector.as_ref().expect("trained above"))
    }

    fn cp_set(&mut self) -> Result<&[AnnotatedSample]> {
        if self.cp.is_none() {
            let canvases = extract_canvases(&self.split.train);
            let patches = extract_defect_patches(&self.split.train, &self.cfg.copy_paste);
            let s = self.ledger.take(self.seed, "cpsynth/generate");
            let out = generate_cp_batch(
                &canvases,
                &patches,
                self.cfg.defects_per_image,
                &self.cfg.copy_paste,
                self.cfg.synthetic_count,
                s,
                self.cfg.mode(),
            )?;
            self.cp = Some(out.into_iter().map(|o| o.sample).collect());
        }
        Ok(self.cp.as_deref().expect("generated above"))
    }

    fn gan_set(&mut self, variant: GanVariant) -> Result<&[AnnotatedSample]> {
        if !self.gan_sets.contains_key(&variant) {
            let gcfg = GanTrainConfig {
                seed: self.ledger.take(self.seed, &format!("gan/{}", variant.label())),
                ..variant.apply(&self.cfg.gan)
            };
            let needs_detector = gcfg.loss.lambda_det > 0.0;
            if needs_detector {
                self.real_detector()?;
            }
            let detector = self.real_detector.as_ref().filter(|_| needs_detector);
            let pairs = pairs_from_samples(&self.split.train);
            let val = pairs_from_samples(&self.split.val);
            let dir = self.out.join(format!("gan-{}", variant.label()));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let run = train_gan(&pairs, &val, detector, &gcfg, Some(&dir))?;
            log::info!(
                "seed {} GAN {}: {} epochs, best {:?}",
                self.seed,
                variant.label(),
                run.history.len(),
                run.best_epoch
            );

            let pool = extract_aspect_ratios(&self.split.train)?;
            let size = gcfg.generator.image_size;
            let ms = self.ledger.take(self.seed, "maskgen/sample");
            let masks = sample_position_masks(
                &pool,
                size,
                size,
                self.cfg.defects_per_image,
                self.cfg.synthetic_count,
                ms,
                self.cfg.mode(),
            )?;
            let set = generate_synthetic_set(&run.generator, &masks, self.cfg.mode())?;
            self.gans.push(GanResult {
                variant,
                history: run.history,
                best_epoch: run.best_epoch,
                detector_calls: run.detector_calls,
                detector_checksum_before: run.detector_checksum_before,
                detector_checksum_after: run.detector_checksum_after,
                discriminator_input_channels: run.discriminator_input_channels,
                generator_checksum: run.generator.checksum()?,
            });
            self.gan_sets.insert(variant, set);
        }
        Ok(&self.gan_sets[&variant])
    }

    fn assemble(&mut self, spec: &CellSpec) -> Result<Vec<AnnotatedSample>> {
        let mut train = Vec::new();
        if spec.real {
            train.extend_from_slice(&self.split.train);
        }
        if spec.cp > 0 {
            train.extend_from_slice(&self.cp_set()?[..spec.cp]);
        }
        if spec.gan > 0 {
            train.extend_from_slice(&self.gan_set(spec.gan_variant)?[..spec.gan]);
        }
        Ok(train)
    }
}

fn cell_dir(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Run every cell for every seed, rewriting `report.json` under the output
/// directory after each cell. Training failures abort the run; a test-set hash mismatch
/// aborts with [`Error::TestSetMismatch`].
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let split = prepare_dataset(&cfg.dataset, cfg.mode())?;
    if split.test.iter().all(|s| s.boxes.is_empty()) {
        return Err(Error::UndefinedAp);
    }
    let test_hash = dataset_hash(&split.test);
    let all: Vec<AnnotatedSample> = split
        .train
        .iter()
        .chain(&split.val)
        .chain(&split.test)
        .cloned()
        .collect();
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    fs::write(out.join("config.toml"), cfg.to_toml()?).map_err(|e| Error::io(out, e))?;

    let mut report = RunReport {
        config: cfg.clone(),
        config_hash: cfg.hash()?,
        dataset_hash: dataset_hash(&all),
        test_hash: test_hash.clone(),
        split_sizes: [split.train.len(), split.val.len(), split.test.len()],
        runs: Vec::new(),
    };
    let path = out.join(REPORT_FILE);
    for &s in &cfg.seeds {
        let mut ctx = SeedContext {
            cfg,
            split: &split,
            test_hash: &test_hash,
            seed: s,
            ledger: SeedLedger::default(),
            backbone: None,
            real_detector: None,
            cp: None,
            gan_sets: BTreeMap::new(),
            gans: Vec::new(),
            out: out.join(format!("seed{s}")),
        };
        ctx.ledger
            .record("dataset/phantom", seed::derive_named(cfg.dataset.seed, "phantom"));
        ctx.ledger
            .record("dataset/split", seed::derive_named(cfg.dataset.seed, "split"));
        report.runs.push(SeedRun {
            seed: s,
            ledger: SeedLedger::default(),
            gans: Vec::new(),
            cells: Vec::new(),
        });
        for spec in cfg.all_cells() {
            let train = ctx.assemble(&spec)?;
            let cell = ctx.train_cell(&spec, &train)?;
            let run = report.runs.last_mut().expect("pushed above");
            run.cells.push(cell);
            run.ledger = ctx.ledger.clone();
            run.gans = ctx.gans.clone();
            // Partial reports render with the unfinished cells marked missing.
            report.save(&path)?;
        }
    }
    report.save(&path)?;
    Ok(report)
}
