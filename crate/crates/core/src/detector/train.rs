//! Detector training: augmentation, YOLO targets and loss, plateau-driven
//! learning-rate reduction with early stopping, and denoising pre-training
//! of the backbone.

use std::path::Path;

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::anchors::compute_anchors;
use super::model::{Detector, DetectorArch, Letterbox};
use super::plateau::PlateauTracker;
use crate::dataset::AnnotatedSample;
use crate::error::{Error, Result};
use crate::geometry::{rect_iou, shape_iou, BoundingBox, Rect};
use crate::nn::loss::{bce_with_logits, scalar};
use crate::nn::{leaky_relu, Conv2d, Init, ParamStore};
use crate::patch::GrayscalePatch;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetAugment {
    pub flip: bool,
    pub crop: bool,
    /// Value-channel gain; hue and saturation have no effect on gray input.
    pub hsv: bool,
    pub crop_min_scale: f64,
    pub value_gain: f64,
}

impl Default for DetAugment {
    fn default() -> Self {
        DetAugment {
            flip: true,
            crop: true,
            hsv: true,
            crop_min_scale: 0.8,
            value_gain: 1.5,
        }
    }
}

impl DetAugment {
    pub fn none() -> Self {
        DetAugment {
            flip: false,
            crop: false,
            hsv: false,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Gaussian noise std on `[0, 1]` intensities.
    pub noise_std: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 5,
            batch_size: 8,
            learning_rate: 1e-3,
            noise_std: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorTrainConfig {
    pub arch: DetectorArch,
    pub input_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ignore_threshold: f64,
    pub early_stop_patience: usize,
    pub lr_reduce_patience: usize,
    pub lr_reduce_factor: f64,
    pub max_epochs: usize,
    pub augment: DetAugment,
    pub freeze_backbone: bool,
    pub pretrain: PretrainConfig,
    pub seed: u64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        DetectorTrainConfig {
            arch: DetectorArch::reference(),
            input_size: 416,
            batch_size: 8,
            learning_rate: 0.003,
            ignore_threshold: 0.6,
            early_stop_patience: 8,
            lr_reduce_patience: 2,
            lr_reduce_factor: 0.1,
            max_epochs: 100,
            augment: DetAugment::default(),
            freeze_backbone: true,
            pretrain: PretrainConfig::default(),
            seed: 0,
        }
    }
}

impl DetectorTrainConfig {
    /// Small network on 64-pixel inputs.
    pub fn desk() -> Self {
        DetectorTrainConfig {
            arch: DetectorArch::desk(),
            input_size: 64,
            max_epochs: 60,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.early_stop_patience == 0 || self.lr_reduce_patience == 0 {
            return Err(Error::Config("patience values must be at least 1".into()));
        }
        if self.input_size == 0 || self.input_size % self.arch.max_stride() != 0 {
            return Err(Error::Config(format!(
                "input size {} is not a multiple of the stride {}",
                self.input_size,
                self.arch.max_stride()
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.ignore_threshold) {
            return Err(Error::Config("invalid learning rate or ignore threshold".into()));
        }
        Ok(())
    }
}

/// A letterboxed image with its boxes in input coordinates.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub image: GrayscalePatch,
    pub boxes: Vec<Rect>,
}

pub fn prepare(sample: &AnnotatedSample, input_size: usize) -> Prepared {
    let lb = Letterbox::new(&sample.image, input_size);
    Prepared {
        boxes: sample.boxes.iter().map(|b| lb.map(&b.to_rect())).collect(),
        image: lb.image,
    }
}

/// Random crop, horizontal flip and value gain, then letterbox.
pub fn augment(sample: &AnnotatedSample, aug: &DetAugment, input_size: usize, rng: &mut seed::Rng) -> Prepared {
    let mut image = sample.image.clone();
    let mut rects: Vec<Rect> = sample.boxes.iter().map(BoundingBox::to_rect).collect();
    if aug.crop && aug.crop_min_scale < 1.0 {
        let s = rng.random_range(aug.crop_min_scale..=1.0);
        let (w, h) = (image.width(), image.height());
        let cw = ((w as f64 * s).round() as usize).clamp(1, w);
        let ch = ((h as f64 * s).round() as usize).clamp(1, h);
        let x0 = rng.random_range(0..=w - cw);
        let y0 = rng.random_range(0..=h - ch);
        image = image
            .crop(&BoundingBox::new(x0 as u32, y0 as u32, cw as u32, ch as u32))
            .expect("crop window inside image");
        rects = rects
            .iter()
            .filter_map(|r| {
                let shifted = Rect {
                    x0: r.x0 - x0 as f64,
                    y0: r.y0 - y0 as f64,
                    x1: r.x1 - x0 as f64,
                    y1: r.y1 - y0 as f64,
                };
                let c = shifted.clip(cw as f64, ch as f64);
                (c.width() >= 1.0 && c.height() >= 1.0 && c.area() >= 0.5 * r.area()).then_some(c)
            })
            .collect();
    }
    if aug.flip && rng.random::<bool>() {
        let w = image.width() as f64;
        image = image.flip_horizontal();
        rects = rects
            .iter()
            .map(|r| Rect {
                x0: w - r.x1,
                y0: r.y0,
                x1: w - r.x0,
                y1: r.y1,
            })
            .collect();
    }
    if aug.hsv && aug.value_gain > 1.0 {
        let l = aug.value_gain.ln();
        let g = rng.random_range(-l..=l).exp();
        image = GrayscalePatch::from_fn(image.width(), image.height(), |x, y| {
            (image.get(x, y) as f64 * g).round().clamp(0.0, 255.0) as u8
        });
    }
    let lb = Letterbox::new(&image, input_size);
    Prepared {
        boxes: rects.iter().map(|r| lb.map(r)).collect(),
        image: lb.image,
    }
}

/// Loss terms summed over the batch and divided by its size.
#[derive(Debug, Clone)]
pub struct YoloLoss {
    pub total: Tensor,
    pub xy: f64,
    pub wh: f64,
    pub conf: f64,
    pub class: f64,
}

struct ScaleTargets {
    obj: Vec<f32>,
    scale: Vec<f32>,
    txy: Vec<f32>,
    twh: Vec<f32>,
    keep_noobj: Vec<f32>,
}

fn build_targets(
    det: &Detector,
    maps: &[Tensor],
    batch: &[Prepared],
    ignore_threshold: f64,
) -> Result<Vec<ScaleTargets>> {
    let arch = &det.arch;
    let a = arch.anchors_per_scale;
    let size = det.input_size as f64;
    let strides = arch.scale_strides();
    let b = batch.len();
    let mut out: Vec<ScaleTargets> = maps
        .iter()
        .map(|m| {
            let (_, _, h, w) = m.dims4().expect("4d map");
            let n = b * a * h * w;
            ScaleTargets {
                obj: vec![0.0; n],
                scale: vec![0.0; n],
                txy: vec![0.0; 2 * n],
                twh: vec![0.0; 2 * n],
                keep_noobj: vec![1.0; n],
            }
        })
        .collect();

    // Predictions overlapping any ground truth above the threshold are
    // left out of the no-object term.
    let preds = det.decode(maps)?;
    for (bi, p) in batch.iter().enumerate() {
        if p.boxes.is_empty() {
            continue;
        }
        let mut offset = 0;
        for (s, m) in maps.iter().enumerate() {
            let (_, _, h, w) = m.dims4()?;
            let per = a * h * w;
            for k in 0..per {
                let r = &preds[bi][offset + k].bbox;
                if p.boxes.iter().any(|g| rect_iou(r, g) > ignore_threshold) {
                    out[s].keep_noobj[bi * per + k] = 0.0;
                }
            }
            offset += per;
        }
    }

    for (bi, p) in batch.iter().enumerate() {
        for g in &p.boxes {
            let (gw, gh) = (g.width(), g.height());
            if gw <= 0.0 || gh <= 0.0 {
                continue;
            }
            let best = det
                .anchors
                .iter()
                .enumerate()
                .map(|(i, &an)| (i, shape_iou((gw, gh), an)))
                .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            let k = best.0 / a;
            let s = arch.num_scales - 1 - k;
            let ai = best.0 % a;
            let (aw, ah) = det.anchors[best.0];
            let (_, _, h, w) = maps[s].dims4()?;
            let stride = strides[s] as f64;
            let (cx, cy) = ((g.x0 + g.x1) / 2.0, (g.y0 + g.y1) / 2.0);
            let gx = ((cx / stride).floor() as usize).min(w - 1);
            let gy = ((cy / stride).floor() as usize).min(h - 1);
            let t = &mut out[s];
            let cell = ((bi * a + ai) * h + gy) * w + gx;
            t.obj[cell] = 1.0;
            t.keep_noobj[cell] = 0.0;
            t.scale[cell] = (2.0 - gw * gh / (size * size)) as f32;
            let two = |c: usize| (((bi * a + ai) * 2 + c) * h + gy) * w + gx;
            t.txy[two(0)] = (cx / stride - gx as f64).clamp(0.0, 1.0) as f32;
            t.txy[two(1)] = (cy / stride - gy as f64).clamp(0.0, 1.0) as f32;
            t.twh[two(0)] = (gw / aw).ln() as f32;
            t.twh[two(1)] = (gh / ah).ln() as f32;
        }
    }
    Ok(out)
}

/// YOLOv3 loss: BCE on center offsets and confidences, half squared error
/// on log sizes, both offset terms weighted by `2 - area/input²`.
pub fn yolo_loss(det: &Detector, maps: &[Tensor], batch: &[Prepared], ignore_threshold: f64) -> Result<YoloLoss> {
    let targets = build_targets(det, maps, batch, ignore_threshold)?;
    let a = det.arch.anchors_per_scale;
    let o = det.arch.outputs_per_anchor();
    let c = det.arch.num_classes;
    let b = batch.len();
    let dev = det.device();
    let dt = maps[0].dtype();
    let mut parts: [Option<Tensor>; 4] = [None, None, None, None];
    for (m, t) in maps.iter().zip(&targets) {
        let (_, _, h, w) = m.dims4()?;
        let r = m.reshape((b, a, o, h, w))?;
        let mk = |v: &[f32], ch: usize| -> Result<Tensor> {
            Ok(Tensor::from_slice(v, (b, a, ch, h, w), dev)?.to_dtype(dt)?)
        };
        let obj = mk(&t.obj, 1)?;
        let weight = (&obj * mk(&t.scale, 1)?)?;
        let xy = bce_with_logits(&r.narrow(2, 0, 2)?, &mk(&t.txy, 2)?)?
            .broadcast_mul(&weight)?
            .sum_all()?;
        let wh = ((r.narrow(2, 2, 2)? - mk(&t.twh, 2)?)?.sqr()? * 0.5)?
            .broadcast_mul(&weight)?
            .sum_all()?;
        let conf_w = (&obj + mk(&t.keep_noobj, 1)?)?;
        let conf = (bce_with_logits(&r.narrow(2, 4, 1)?, &obj)? * conf_w)?.sum_all()?;
        let ones = Tensor::ones((b, a, c, h, w), dt, dev)?;
        let class = bce_with_logits(&r.narrow(2, 5, c)?, &ones)?
            .broadcast_mul(&obj)?
            .sum_all()?;
        for (slot, v) in parts.iter_mut().zip([xy, wh, conf, class]) {
            *slot = Some(match slot.take() {
                None => v,
                Some(acc) => (acc + v)?,
            });
        }
    }
    let [xy, wh, conf, class] = parts.map(|p| p.expect("at least one scale"));
    let inv = 1.0 / b as f64;
    let total = ((((&xy + &wh)? + &conf)? + &class)? * inv)?;
    Ok(YoloLoss {
        xy: scalar(&xy)? * inv,
        wh: scalar(&wh)? * inv,
        conf: scalar(&conf)? * inv,
        class: scalar(&class)? * inv,
        total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetEpoch {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub improved: bool,
}

pub fn write_history_csv(path: &Path, rows: &[DetEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// A finished run. `detector` holds the best-validation weights.
#[derive(Debug)]
pub struct DetectorRun {
    pub detector: Detector,
    pub last_weights: Vec<Tensor>,
    pub history: Vec<DetEpoch>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub backbone_checksum_before: String,
    pub backbone_checksum_after: String,
}

fn mean_loss(det: &Detector, data: &[Prepared], cfg: &DetectorTrainConfig) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in data.chunks(cfg.batch_size) {
        let images: Vec<GrayscalePatch> = chunk.iter().map(|p| p.image.clone()).collect();
        let maps = det.forward(&det.input_tensor(&images)?, false)?;
        sum += scalar(&yolo_loss(det, &maps, chunk, cfg.ignore_threshold)?.total)? * chunk.len() as f64;
    }
    Ok(sum / data.len().max(1) as f64)
}

/// Anchors fitted to the training boxes in input coordinates.
pub fn fit_anchors(train: &[AnnotatedSample], cfg: &DetectorTrainConfig, seed_value: u64) -> Result<Vec<(f64, f64)>> {
    let boxes: Vec<BoundingBox> = train
        .iter()
        .flat_map(|s| prepare(s, cfg.input_size).boxes)
        .filter_map(|r| r.to_box())
        .collect();
    compute_anchors(&boxes, cfg.arch.num_anchors(), seed_value)
}

/// Train a detector. `backbone` supplies pre-trained backbone weights;
/// without it the backbone is pre-trained here on the training images
/// when `cfg.pretrain.epochs > 0`.
pub fn train_detector(
    train: &[AnnotatedSample],
    val: &[AnnotatedSample],
    cfg: &DetectorTrainConfig,
    backbone: Option<&Detector>,
) -> Result<DetectorRun> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let anchors = fit_anchors(train, cfg, seed::derive_named(cfg.seed, "anchors"))?;
    let det = Detector::new(
        cfg.arch.clone(),
        anchors,
        cfg.input_size,
        DType::F32,
        seed::derive_named(cfg.seed, "init"),
    )?;
    match backbone {
        Some(src) => det.copy_backbone_from(src)?,
        None if cfg.pretrain.epochs > 0 => {
            let images: Vec<GrayscalePatch> = train.iter().map(|s| s.image.clone()).collect();
            pretrain_backbone(&det, &images, &cfg.pretrain, seed::derive_named(cfg.seed, "pretrain"))?;
        }
        None => {}
    }
    if cfg.freeze_backbone {
        det.freeze_backbone();
    }
    let before = det.backbone_checksum()?;

    let val_set: Vec<Prepared> = val.iter().map(|s| prepare(s, cfg.input_size)).collect();
    let mut opt = AdamW::new(
        det.store().trainable_vars(),
        ParamsAdamW {
            lr: cfg.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            weight_decay: 0.0,
        },
    )?;
    let mut lr = cfg.learning_rate;
    let mut tracker = PlateauTracker::new(cfg.lr_reduce_patience, cfg.early_stop_patience);
    let mut history = Vec::new();
    let mut best = det.snapshot()?;
    let mut best_epoch = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = seed::rng(seed::derive_named(cfg.seed, "shuffle"));

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Prepared> = idx
                .iter()
                .map(|&i| {
                    let s = seed::derive(
                        seed::derive_named(cfg.seed, "augment"),
                        (epoch * train.len() + i) as u64,
                    );
                    augment(&train[i], &cfg.augment, cfg.input_size, &mut seed::rng(s))
                })
                .collect();
            let images: Vec<GrayscalePatch> = batch.iter().map(|p| p.image.clone()).collect();
            let maps = det.forward(&det.input_tensor(&images)?, true)?;
            let loss = yolo_loss(&det, &maps, &batch, cfg.ignore_threshold)?;
            let v = scalar(&loss.total)?;
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    term: "detector".into(),
                    context: format!("epoch {epoch} batch {bi}"),
                });
            }
            opt.backward_step(&loss.total)?;
            sum += v * idx.len() as f64;
        }
        let train_loss = sum / train.len() as f64;
        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            mean_loss(&det, &val_set, cfg)?
        };
        let act = tracker.observe(val_loss);
        history.push(DetEpoch {
            epoch,
            learning_rate: lr,
            train_loss,
            val_loss,
            improved: act.improved,
        });
        log::debug!("detector epoch {epoch}: train {train_loss:.4} val {val_loss:.4} lr {lr:.2e}");
        if act.improved {
            best = det.snapshot()?;
            best_epoch = epoch;
        }
        if act.stop {
            stopped_early = true;
            break;
        }
        if act.reduce_lr {
            lr *= cfg.lr_reduce_factor;
            opt.set_learning_rate(lr);
        }
    }
    let last_weights = det.snapshot()?;
    det.restore(&best)?;
    let after = det.backbone_checksum()?;
    Ok(DetectorRun {
        detector: det,
        last_weights,
        history,
        best_epoch,
        stopped_early,
        backbone_checksum_before: before,
        backbone_checksum_after: after,
    })
}

/// Denoising-autoencoder pre-training of the backbone on unlabeled
/// images: a throwaway decoder reconstructs clean inputs from noisy ones.
/// Returns the mean loss per epoch.
pub fn pretrain_backbone(
    det: &Detector,
    images: &[GrayscalePatch],
    cfg: &PretrainConfig,
    seed_value: u64,
) -> Result<Vec<f64>> {
    if cfg.epochs == 0 || images.is_empty() {
        return Ok(Vec::new());
    }
    let arch = &det.arch;
    let mut dec_store = ParamStore::new(det.dtype(), seed::derive(seed_value, 0));
    let mut widths: Vec<usize> = vec![arch.stem];
    widths.extend(arch.stages.iter().map(|s| s.0));
    let ups: Vec<Conv2d> = (1..widths.len())
        .rev()
        .map(|i| {
            Conv2d::new(
                &mut dec_store,
                &format!("up{i}"),
                (widths[i], widths[i - 1], 3),
                1,
                1,
                true,
                Init::He,
            )
        })
        .collect::<Result<_>>()?;
    let out = Conv2d::new(&mut dec_store, "out", (arch.stem, 1, 3), 1, 1, true, Init::Normal(0.01))?;
    let mut vars = det.backbone_vars();
    vars.extend(dec_store.trainable_vars());
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr: cfg.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let prepared: Vec<GrayscalePatch> = images
        .iter()
        .map(|im| Letterbox::new(im, det.input_size).image)
        .collect();
    let mut rng = seed::rng(seed_value);
    let noise = rand_distr::Normal::new(0.0, cfg.noise_std.max(1e-12)).expect("finite std");
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let s = det.input_size;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<GrayscalePatch> = idx.iter().map(|&i| prepared[i].clone()).collect();
            let clean = det.input_tensor(&batch)?.narrow(1, 0, 1)?;
            let n: Vec<f32> = (0..idx.len() * s * s)
                .map(|_| rand_distr::Distribution::sample(&noise, &mut rng) as f32)
                .collect();
            let noisy = (&clean + Tensor::from_vec(n, (idx.len(), 1, s, s), det.device())?.to_dtype(det.dtype())?)?;
            let feats = det.backbone_forward(&det.replicate_gray(&noisy)?, true)?;
            let mut h = feats.last().expect("stages").clone();
            for up in &ups {
                let (_, _, hh, ww) = h.dims4()?;
                h = leaky_relu(&up.forward(&h.upsample_nearest2d(2 * hh, 2 * ww)?)?, 0.1)?;
            }
            let recon = out.forward(&h)?;
            let loss = (recon - &clean)?.sqr()?.mean_all()?;
            let v = scalar(&loss)?;
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    term: "backbone pre-training".into(),
                    context: format!("epoch {epoch}"),
                });
            }
            opt.backward_step(&loss)?;
            sum += v * idx.len() as f64;
        }
        losses.push(sum / prepared.len() as f64);
    }
    Ok(losses)
}
