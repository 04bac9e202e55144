use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use bscan_core::cpsynth::{extract_defect_patches, generate_cp_batch, PasteAttemptPolicy};
use bscan_core::dataset::manifest::{read_manifest, write_manifest, ManifestRow, DEFAULT_MANIFEST};
use bscan_core::dataset::{
    extract_canvases, generate_phantom_dataset, load_dataset, save_dataset, split_indices, validate_samples,
    AnnotatedSample, PhantomConfig,
};
use bscan_core::detector::{evaluate_ap, train_detector, DetectorTrainConfig, EvalConfig};
use bscan_core::experiment::{render_report, run_matrix, ExperimentConfig, RunReport, REPORT_FILE};
use bscan_core::gan::{generate_synthetic_set, pairs_from_samples, train_gan, GanTrainConfig, Generator};
use bscan_core::maskgen::{extract_aspect_ratios, load_masks, sample_position_masks, save_masks};
use bscan_core::{Error, GrayscalePatch, Parallelism};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TRAINING: u8 = 3;
const EXIT_VERIFY: u8 = 4;

/// Synthetic B-scan data generation and defect-detector experiments.
#[derive(Parser)]
#[command(name = "bscan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate, split or synthesize annotated datasets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Copy/paste synthesis.
    #[command(subcommand)]
    Cpsynth(CpCmd),
    /// Position-mask sampling.
    #[command(subcommand)]
    Maskgen(MaskCmd),
    /// Mask-conditioned GAN.
    #[command(subcommand)]
    Gan(GanCmd),
    /// Defect detector.
    #[command(subcommand)]
    Det(DetCmd),
    /// Training matrix.
    #[command(subcommand)]
    Exp(ExpCmd),
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Check every image and box listed in the manifest.
    Validate {
        root: PathBuf,
        #[arg(long, default_value = DEFAULT_MANIFEST)]
        manifest: String,
    },
    /// Write train.jsonl, val.jsonl and test.jsonl next to the manifest.
    Split {
        root: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = DEFAULT_MANIFEST)]
        manifest: String,
    },
    /// Render a phantom dataset.
    Phantom {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum CpCmd {
    Generate {
        /// Dataset whose defect-free images serve as canvases.
        #[arg(long)]
        canvases: PathBuf,
        /// Dataset whose annotated boxes are cut out as defect patches.
        #[arg(long)]
        patches: PathBuf,
        #[arg(long)]
        count: usize,
        /// Inclusive defect-count range, `lo:hi`.
        #[arg(long, default_value = "1:4", value_parser = parse_range)]
        defects: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Paste policy file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum MaskCmd {
    Sample {
        /// Dataset directory or manifest whose boxes form the shape pool.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Mask side length; defaults to the pool's image size.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value = "1:4", value_parser = parse_range)]
        defects: (usize, usize),
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum GanCmd {
    Train {
        /// Dataset directory; uses train.jsonl and val.jsonl when present.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        detector: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs/gan")]
        out: PathBuf,
    },
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DetCmd {
    Train {
        /// Dataset directory; uses train.jsonl and val.jsonl when present.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs/detector")]
        out: PathBuf,
    },
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory; uses test.jsonl when present.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    Detect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value_t = EvalConfig::default().objectness_threshold)]
    threshold: f64,
    #[arg(long, default_value_t = EvalConfig::default().nms_iou)]
    nms_iou: f64,
    #[arg(long, default_value_t = EvalConfig::default().match_iou)]
    match_iou: f64,
}

impl EvalArgs {
    fn config(&self) -> anyhow::Result<EvalConfig> {
        let c = EvalConfig {
            objectness_threshold: self.threshold,
            nms_iou: self.nms_iou,
            match_iou: self.match_iou,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum ExpCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render the table and plots of a finished (or partial) run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected lo:hi")?;
    let lo = a.trim().parse().map_err(|_| format!("bad lower bound `{a}`"))?;
    let hi = b.trim().parse().map_err(|_| format!("bad upper bound `{b}`"))?;
    Ok((lo, hi))
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())).into())
}

fn toml_or<T: DeserializeOwned>(path: Option<&PathBuf>, default: T) -> anyhow::Result<T> {
    path.map_or(Ok(default), |p| read_toml(p))
}

/// `name` under `root` if it exists, else the default manifest.
fn subset(root: &Path, name: &str) -> anyhow::Result<Vec<AnnotatedSample>> {
    let name = if root.join(name).exists() {
        name
    } else {
        DEFAULT_MANIFEST
    };
    Ok(load_dataset(root, Path::new(name))?)
}

fn optional_subset(root: &Path, name: &str) -> anyhow::Result<Vec<AnnotatedSample>> {
    if root.join(name).exists() {
        Ok(load_dataset(root, Path::new(name))?)
    } else {
        Ok(Vec::new())
    }
}

/// Verification failure that is not a library error.
#[derive(Debug)]
struct Verify(String);

impl std::fmt::Display for Verify {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Verify {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Verify>().is_some() {
        return EXIT_VERIFY;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Manifest { .. } | Error::Json(_) | Error::Checkpoint(_)) => EXIT_CONFIG,
        Some(
            Error::NonFiniteLoss { .. }
            | Error::CpExhausted { .. }
            | Error::MaskPlacement(_)
            | Error::Tensor(_)
            | Error::NotEnoughBoxes { .. }
            | Error::EmptyAnnotations,
        ) => EXIT_TRAINING,
        Some(Error::TestSetMismatch { .. } | Error::Validation { .. } | Error::SplitConflict { .. }) => EXIT_VERIFY,
        _ => EXIT_FAILURE,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Dataset(cmd) => dataset(cmd),
        Command::Cpsynth(CpCmd::Generate {
            canvases,
            patches,
            count,
            defects,
            seed,
            config,
            out,
        }) => {
            let policy: PasteAttemptPolicy = toml_or(config.as_ref(), PasteAttemptPolicy::default())?;
            let canvases = extract_canvases(&subset(&canvases, DEFAULT_MANIFEST)?);
            let patches = extract_defect_patches(&subset(&patches, DEFAULT_MANIFEST)?, &policy);
            log::info!("{} canvases, {} defect patches", canvases.len(), patches.len());
            let made = generate_cp_batch(
                &canvases,
                &patches,
                defects,
                &policy,
                count,
                seed,
                Parallelism::Parallel,
            )?;
            let samples: Vec<AnnotatedSample> = made.into_iter().map(|o| o.sample).collect();
            let path = save_dataset(&out, DEFAULT_MANIFEST, "cp", &samples)?;
            println!("wrote {} images to {}", samples.len(), path.display());
            Ok(())
        }
        Command::Maskgen(MaskCmd::Sample {
            pool,
            count,
            seed,
            size,
            defects,
            out,
        }) => {
            let samples = if pool.is_dir() {
                subset(&pool, DEFAULT_MANIFEST)?
            } else {
                let root = pool.parent().unwrap_or(Path::new("."));
                load_dataset(root, pool.file_name().map(Path::new).unwrap_or(&pool))?
            };
            let side = size.or_else(|| samples.first().map(|s| s.image.width())).unwrap_or(64);
            let shapes = extract_aspect_ratios(&samples)?;
            let masks = sample_position_masks(&shapes, side, side, defects, count, seed, Parallelism::Parallel)?;
            save_masks(&out, &masks)?;
            println!("wrote {count} masks to {}", out.display());
            Ok(())
        }
        Command::Gan(cmd) => gan(cmd),
        Command::Det(cmd) => det(cmd),
        Command::Exp(cmd) => exp(cmd),
    }
}

fn dataset(cmd: DatasetCmd) -> anyhow::Result<()> {
    match cmd {
        DatasetCmd::Validate { root, manifest } => {
            let samples = load_dataset(&root, Path::new(&manifest))?;
            validate_samples(&samples)?;
            let boxes: usize = samples.iter().map(|s| s.boxes.len()).sum();
            println!("{} images, {boxes} boxes: ok", samples.len());
            Ok(())
        }
        DatasetCmd::Split {
            root,
            fractions,
            seed,
            manifest,
        } => {
            let rows = read_manifest(&root.join(&manifest))?;
            let samples = load_dataset(&root, Path::new(&manifest))?;
            let f: [f64; 3] = fractions
                .try_into()
                .map_err(|_| Error::Config("--fractions needs three values".into()))?;
            let idx = split_indices(&samples, f, seed)?;
            for (name, ids) in [("train", &idx.train), ("val", &idx.val), ("test", &idx.test)] {
                let part: Vec<ManifestRow> = ids.iter().map(|&i| rows[i].clone()).collect();
                write_manifest(&root.join(format!("{name}.jsonl")), &part)?;
                println!("{name}: {} images", part.len());
            }
            Ok(())
        }
        DatasetCmd::Phantom { config, out, seed } => {
            let cfg: PhantomConfig = toml_or(config.as_ref(), PhantomConfig::default())?;
            let samples = generate_phantom_dataset(&cfg, seed)?;
            let path = save_dataset(&out, DEFAULT_MANIFEST, &cfg.id_prefix, &samples)?;
            println!("wrote {} images to {}", samples.len(), path.display());
            Ok(())
        }
    }
}

fn gan(cmd: GanCmd) -> anyhow::Result<()> {
    match cmd {
        GanCmd::Train {
            data,
            detector,
            config,
            out,
        } => {
            let cfg: GanTrainConfig = toml_or(config.as_ref(), GanTrainConfig::desk())?;
            let train = pairs_from_samples(&subset(&data, "train.jsonl")?);
            let val = pairs_from_samples(&optional_subset(&data, "val.jsonl")?);
            let det = detector
                .as_deref()
                .map(bscan_core::detector::Detector::load)
                .transpose()?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let run = train_gan(&train, &val, det.as_ref(), &cfg, Some(&out))?;
            bscan_core::gan::write_gan_history_csv(&out.join("gan_losses.csv"), &run.history)?;
            println!(
                "trained {} epochs on {} pairs; best epoch {:?}; checkpoints in {}",
                run.history.len(),
                train.len(),
                run.best_epoch,
                out.display()
            );
            Ok(())
        }
        GanCmd::Generate { ckpt, masks, out } => {
            let gen = Generator::load(&ckpt)?;
            let masks = load_masks(&masks)?;
            let samples = generate_synthetic_set(&gen, &masks, Parallelism::Parallel)?;
            let path = save_dataset(&out, DEFAULT_MANIFEST, "gan", &samples)?;
            println!("wrote {} images to {}", samples.len(), path.display());
            Ok(())
        }
    }
}

fn det(cmd: DetCmd) -> anyhow::Result<()> {
    use bscan_core::detector::Detector;
    match cmd {
        DetCmd::Train { data, config, out } => {
            let cfg: DetectorTrainConfig = toml_or(config.as_ref(), DetectorTrainConfig::desk())?;
            let train = subset(&data, "train.jsonl")?;
            let val = optional_subset(&data, "val.jsonl")?;
            let run = train_detector(&train, &val, &cfg, None)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            run.detector.save(&out.join("detector.safetensors"))?;
            bscan_core::detector::train::write_history_csv(&out.join("detector_losses.csv"), &run.history)?;
            println!(
                "trained {} epochs (best {}, early stop {}); saved {}",
                run.history.len(),
                run.best_epoch,
                run.stopped_early,
                out.join("detector.safetensors").display()
            );
            Ok(())
        }
        DetCmd::Eval {
            ckpt,
            data,
            report,
            eval,
        } => {
            let cfg = eval.config()?;
            let det = Detector::load(&ckpt)?;
            let test = subset(&data, "test.jsonl")?;
            let images: Vec<GrayscalePatch> = test.iter().map(|s| s.image.clone()).collect();
            let dets = det.detect_batch(&images, &cfg)?;
            let gts: Vec<_> = test.iter().map(|s| s.boxes.clone()).collect();
            let ap = evaluate_ap(&dets, &gts, cfg.match_iou)?;
            ap.write_json(&report)?;
            ap.write_csv(&report.with_extension("csv"))?;
            println!("AP@{} = {:.4} over {} images", cfg.match_iou, ap.ap, test.len());
            Ok(())
        }
        DetCmd::Detect { ckpt, image, eval } => {
            let cfg = eval.config()?;
            let det = Detector::load(&ckpt)?;
            let img = GrayscalePatch::load_png(&image)?;
            for d in det.detect(&img, &cfg)? {
                println!("{}", serde_json::to_string(&d)?);
            }
            Ok(())
        }
    }
}

fn exp(cmd: ExpCmd) -> anyhow::Result<()> {
    match cmd {
        ExpCmd::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_matrix(&cfg)?;
            render(&report, &cfg.output_dir)
        }
        ExpCmd::Report { run } => {
            let report = RunReport::load(&run.join(REPORT_FILE))?;
            render(&report, &run)
        }
    }
}

fn render(report: &RunReport, dir: &Path) -> anyhow::Result<()> {
    let out = render_report(report, dir)?;
    print!("{}", out.table);
    if out.complete() {
        Ok(())
    } else {
        Err(Verify(format!("missing results for: {}", out.missing.join(", "))).into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
