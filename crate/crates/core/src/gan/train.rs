//! Adversarial training loop with pair augmentation, a linearly decaying
//! learning rate, checkpoints and a loss history.

use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::loss::{discriminator_loss, generator_loss, GanLossWeights, LossBreakdown};
use super::nets::{image_tensor, mask_tensor, DiscriminatorArch, DiscriminatorPair, Generator, GeneratorArch};
use super::GanPair;
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::maskgen::PositionMask;
use crate::nn::loss::{l1, scalar};
use crate::patch::GrayscalePatch;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanAugment {
    pub flip: bool,
    pub brightness: bool,
    pub crop: bool,
    /// Largest multiplicative brightness change, e.g. 1.2 for ±20 %.
    pub brightness_gain: f64,
    /// Smallest crop side as a fraction of the image side.
    pub crop_min_scale: f64,
}

impl Default for GanAugment {
    fn default() -> Self {
        GanAugment {
            flip: true,
            brightness: true,
            crop: true,
            brightness_gain: 1.2,
            crop_min_scale: 0.875,
        }
    }
}

impl GanAugment {
    pub fn none() -> Self {
        GanAugment {
            flip: false,
            brightness: false,
            crop: false,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub decay_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub augment: GanAugment,
    pub loss: GanLossWeights,
    pub generator: GeneratorArch,
    pub discriminator: DiscriminatorArch,
    /// Write a generator checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            epochs: 800,
            decay_epochs: 100,
            batch_size: 8,
            learning_rate: 0.0002,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            augment: GanAugment::default(),
            loss: GanLossWeights::default(),
            generator: GeneratorArch::default(),
            discriminator: DiscriminatorArch::default(),
            checkpoint_every: 50,
            seed: 0,
        }
    }
}

impl GanTrainConfig {
    /// 64-pixel networks.
    pub fn desk() -> Self {
        GanTrainConfig {
            generator: GeneratorArch::desk(),
            discriminator: DiscriminatorArch::desk(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.loss.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.decay_epochs > self.epochs {
            return Err(Error::Config(format!(
                "decay_epochs {} exceeds epochs {}",
                self.decay_epochs, self.epochs
            )));
        }
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
        {
            return Err(Error::Config("invalid learning rate or Adam moments".into()));
        }
        let a = &self.augment;
        if !(a.brightness_gain >= 1.0) || !(a.crop_min_scale > 0.0 && a.crop_min_scale <= 1.0) {
            return Err(Error::Config(
                "brightness_gain must be ≥ 1 and crop_min_scale in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Constant rate, then a linear ramp over the last `decay_epochs` that
/// reaches zero at `epochs`.
pub fn lr_schedule(epoch: usize, cfg: &GanTrainConfig) -> f64 {
    let start = cfg.epochs - cfg.decay_epochs.min(cfg.epochs);
    if epoch < start {
        cfg.learning_rate
    } else if epoch >= cfg.epochs {
        0.0
    } else {
        cfg.learning_rate * (cfg.epochs - epoch) as f64 / cfg.decay_epochs as f64
    }
}

/// Crop the window `(x0, y0, side)` of a pair and scale it back to the
/// original size; boxes are mapped and clipped, the mask redrawn from them.
fn crop_pair(pair: &GanPair, x0: usize, y0: usize, cw: usize, ch: usize) -> GanPair {
    let (w, h) = (pair.image.width(), pair.image.height());
    let window = BoundingBox::new(x0 as u32, y0 as u32, cw as u32, ch as u32);
    let image = pair
        .image
        .crop(&window)
        .expect("crop window inside image")
        .resize_bilinear(w, h);
    let (sx, sy) = (w as f64 / cw as f64, h as f64 / ch as f64);
    let boxes = pair
        .mask
        .boxes
        .iter()
        .filter_map(|b| {
            let x1 = (b.x as f64 - x0 as f64).max(0.0) * sx;
            let y1 = (b.y as f64 - y0 as f64).max(0.0) * sy;
            let x2 = ((b.right() as f64 - x0 as f64).min(cw as f64)) * sx;
            let y2 = ((b.bottom() as f64 - y0 as f64).min(ch as f64)) * sy;
            let (x1, y1) = (x1.round().min(w as f64) as u32, y1.round().min(h as f64) as u32);
            let (x2, y2) = (
                x2.round().clamp(0.0, w as f64) as u32,
                y2.round().clamp(0.0, h as f64) as u32,
            );
            (x2 > x1 && y2 > y1).then(|| BoundingBox::new(x1, y1, x2 - x1, y2 - y1))
        })
        .collect();
    GanPair {
        mask: PositionMask::from_boxes(w, h, boxes),
        image,
    }
}

/// Random crop and horizontal flip applied identically to mask and image;
/// brightness on the image only.
pub fn augment_pair(pair: &GanPair, aug: &GanAugment, rng: &mut seed::Rng) -> GanPair {
    let mut p = pair.clone();
    if aug.crop && aug.crop_min_scale < 1.0 {
        let s = rng.random_range(aug.crop_min_scale..=1.0);
        let (w, h) = (p.image.width(), p.image.height());
        let cw = ((w as f64 * s).round() as usize).clamp(1, w);
        let ch = ((h as f64 * s).round() as usize).clamp(1, h);
        let x0 = rng.random_range(0..=w - cw);
        let y0 = rng.random_range(0..=h - ch);
        if cw < w || ch < h {
            p = crop_pair(&p, x0, y0, cw, ch);
        }
    }
    if aug.flip && rng.random::<bool>() {
        p = GanPair {
            mask: p.mask.flip_horizontal(),
            image: p.image.flip_horizontal(),
        };
    }
    if aug.brightness && aug.brightness_gain > 1.0 {
        let l = aug.brightness_gain.ln();
        let g = rng.random_range(-l..=l).exp();
        let src = &p.image;
        p.image = GrayscalePatch::from_fn(src.width(), src.height(), |x, y| {
            (src.get(x, y) as f64 * g).round().clamp(0.0, 255.0) as u8
        });
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanEpoch {
    pub epoch: usize,
    pub learning_rate: f64,
    pub g_total: f64,
    pub g_adv: f64,
    pub g_l1: f64,
    pub g_fm: f64,
    pub g_det: f64,
    pub d_loss: f64,
    pub val_l1: Option<f64>,
}

pub fn write_gan_history_csv(path: &Path, rows: &[GanEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug)]
pub struct GanRun {
    /// Weights after the final epoch.
    pub generator: Generator,
    pub history: Vec<GanEpoch>,
    /// Epoch with the lowest validation L1, when a validation set was given.
    pub best_epoch: Option<usize>,
    pub checkpoints: Vec<PathBuf>,
    /// Detector forward passes made during training.
    pub detector_calls: usize,
    pub detector_checksum_before: Option<String>,
    pub detector_checksum_after: Option<String>,
    /// Channels seen by the first discriminator layer.
    pub discriminator_input_channels: usize,
}

fn check_pairs(pairs: &[GanPair], size: usize, what: &str) -> Result<()> {
    for (i, p) in pairs.iter().enumerate() {
        let dims = [p.image.width(), p.image.height(), p.mask.width(), p.mask.height()];
        if dims.iter().any(|&d| d != size) {
            return Err(Error::ShapeMismatch(format!(
                "{what} pair {i} is {}x{} with a {}x{} mask, expected {size}x{size}",
                dims[0], dims[1], dims[2], dims[3]
            )));
        }
    }
    Ok(())
}

fn detector_maps(det: &Detector, img: &Tensor, calls: &mut usize) -> Result<Vec<Tensor>> {
    *calls += 1;
    let x01 = ((img + 1.0)? * 0.5)?.to_dtype(det.dtype())?;
    det.forward(&det.replicate_gray(&x01)?, false)
}

fn mean_val_l1(gen: &Generator, val: &[GanPair], batch: usize) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in val.chunks(batch) {
        let masks: Vec<PositionMask> = chunk.iter().map(|p| p.mask.clone()).collect();
        let images: Vec<GrayscalePatch> = chunk.iter().map(|p| p.image.clone()).collect();
        let (dt, dev) = (gen.store().dtype(), gen.store().device());
        let fake = gen.forward(&mask_tensor(&masks, dt, dev)?)?;
        sum += scalar(&l1(&fake, &image_tensor(&images, dt, dev)?)?)? * chunk.len() as f64;
    }
    Ok(sum / val.len().max(1) as f64)
}

/// Train generator and discriminators on paired data. The detector, when
/// given and `lambda_det > 0`, is frozen and used only in inference mode.
/// Checkpoints go to `out_dir` when given: every `checkpoint_every`
/// epochs, the best by validation L1, and the last.
pub fn train_gan(
    pairs: &[GanPair],
    val: &[GanPair],
    detector: Option<&Detector>,
    cfg: &GanTrainConfig,
    out_dir: Option<&Path>,
) -> Result<GanRun> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("no training pairs".into()));
    }
    let size = cfg.generator.image_size;
    check_pairs(pairs, size, "training")?;
    check_pairs(val, size, "validation")?;
    let det = detector.filter(|_| cfg.loss.lambda_det > 0.0);
    if let Some(d) = det {
        if d.input_size != size {
            return Err(Error::ShapeMismatch(format!(
                "detector input {} differs from GAN image size {size}",
                d.input_size
            )));
        }
    }
    if let Some(d) = detector {
        d.freeze_all();
    }
    let checksum_before = detector.map(Detector::checksum).transpose()?;

    let gen = Generator::new(
        cfg.generator.clone(),
        DType::F32,
        seed::derive_named(cfg.seed, "gan/gen-init"),
    )?;
    let disc = DiscriminatorPair::new(
        cfg.discriminator.clone(),
        DType::F32,
        seed::derive_named(cfg.seed, "gan/disc-init"),
    )?;
    let adam = |vars| {
        AdamW::new(
            vars,
            ParamsAdamW {
                lr: lr_schedule(0, cfg),
                beta1: cfg.adam_beta1,
                beta2: cfg.adam_beta2,
                eps: 1e-8,
                weight_decay: 0.0,
            },
        )
    };
    let mut opt_g = adam(gen.store().trainable_vars())?;
    let mut opt_d = adam(disc.store().trainable_vars())?;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let (dt, dev) = (DType::F32, gen.store().device().clone());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut shuffle_rng = seed::rng(seed::derive_named(cfg.seed, "gan/shuffle"));
    let aug_base = seed::derive_named(cfg.seed, "gan/augment");
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut detector_calls = 0;

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        opt_g.set_learning_rate(lr);
        opt_d.set_learning_rate(lr);
        order.shuffle(&mut shuffle_rng);
        let mut acc = LossBreakdown::default();
        let mut d_sum = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<GanPair> = idx
                .iter()
                .map(|&i| {
                    let s = seed::derive(aug_base, (epoch * pairs.len() + i) as u64);
                    augment_pair(&pairs[i], &cfg.augment, &mut seed::rng(s))
                })
                .collect();
            let masks: Vec<PositionMask> = batch.iter().map(|p| p.mask.clone()).collect();
            let images: Vec<GrayscalePatch> = batch.iter().map(|p| p.image.clone()).collect();
            let mask = mask_tensor(&masks, dt, &dev)?;
            let real = image_tensor(&images, dt, &dev)?;
            let context = || format!("epoch {epoch} batch {bi}");

            let fake = gen.forward(&mask)?;

            let d_real = disc.forward(&real, &mask)?;
            let d_fake = disc.forward(&fake.detach(), &mask)?;
            let d_loss = discriminator_loss(&d_real.scores, &d_fake.scores)?;
            let dv = scalar(&d_loss)?;
            if !dv.is_finite() {
                return Err(Error::NonFiniteLoss {
                    term: "discriminator".into(),
                    context: context(),
                });
            }
            opt_d.backward_step(&d_loss)?;

            let g_fake = disc.forward(&fake, &mask)?;
            let g_real = disc.forward(&real, &mask)?.detach();
            let (det_fake, det_real) = match det {
                Some(d) => (
                    Some(detector_maps(d, &fake, &mut detector_calls)?),
                    Some(detector_maps(d, &real, &mut detector_calls)?),
                ),
                None => (None, None),
            };
            let g = generator_loss(
                &g_fake,
                &g_real,
                &fake,
                &real,
                det_fake.as_deref(),
                det_real.as_deref(),
                &cfg.loss,
            )?;
            if let Some(term) = g.breakdown.non_finite() {
                return Err(Error::NonFiniteLoss {
                    term: format!("generator/{term}"),
                    context: context(),
                });
            }
            opt_g.backward_step(&g.total)?;

            let n = idx.len() as f64;
            acc.adv += g.breakdown.adv * n;
            acc.l1 += g.breakdown.l1 * n;
            acc.fm += g.breakdown.fm * n;
            acc.det += g.breakdown.det * n;
            d_sum += dv * n;
        }
        let n = pairs.len() as f64;
        let mean = LossBreakdown {
            adv: acc.adv / n,
            l1: acc.l1 / n,
            fm: acc.fm / n,
            det: acc.det / n,
        };
        let val_l1 = if val.is_empty() {
            None
        } else {
            Some(mean_val_l1(&gen, val, cfg.batch_size)?)
        };
        history.push(GanEpoch {
            epoch,
            learning_rate: lr,
            g_total: mean.total(),
            g_adv: mean.adv,
            g_l1: mean.l1,
            g_fm: mean.fm,
            g_det: mean.det,
            d_loss: d_sum / n,
            val_l1,
        });
        log::debug!(
            "gan epoch {epoch}: g {:.4} (l1 {:.4}) d {:.4}",
            mean.total(),
            mean.l1,
            d_sum / n
        );

        if let Some(v) = val_l1 {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((epoch, v));
                if let Some(dir) = out_dir {
                    gen.save(&dir.join("generator_best.safetensors"))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                let p = dir.join(format!("generator_epoch{:04}.safetensors", epoch + 1));
                gen.save(&p)?;
                checkpoints.push(p);
            }
        }
    }
    if let Some(dir) = out_dir {
        let p = dir.join("generator_last.safetensors");
        gen.save(&p)?;
        checkpoints.push(p);
        if best.is_some() {
            checkpoints.push(dir.join("generator_best.safetensors"));
        }
        write_gan_history_csv(&dir.join("gan_losses.csv"), &history)?;
    }
    let checksum_after = detector.map(Detector::checksum).transpose()?;
    Ok(GanRun {
        generator: gen,
        history,
        best_epoch: best.map(|b| b.0),
        checkpoints,
        detector_calls,
        detector_checksum_before: checksum_before,
        detector_checksum_after: checksum_after,
        discriminator_input_channels: disc.input_channels(),
    })
}
