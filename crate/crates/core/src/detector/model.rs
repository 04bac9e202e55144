//! YOLOv3-style detector: a Darknet residual backbone and a multi-scale
//! head with upsampling routes, single class.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::anchors::Anchor;
use super::eval::{nms, Detection, EvalConfig};
use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::nn::{leaky_relu, BatchNorm2d, Conv2d, Init, Kind, ParamCount, ParamStore};
use crate::par::{self, Parallelism};
use crate::patch::GrayscalePatch;

const LEAK: f64 = 0.1;
const BACKBONE: &str = "backbone.";

/// Layer plan. Each stage halves the resolution and then applies residual
/// blocks; heads attach to the last `num_scales` stages, coarsest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorArch {
    pub input_channels: usize,
    pub stem: usize,
    /// `(channels, residual blocks)` per stage.
    pub stages: Vec<(usize, usize)>,
    pub num_scales: usize,
    pub anchors_per_scale: usize,
    pub num_classes: usize,
}

impl DetectorArch {
    /// Darknet-53 with the three-scale YOLOv3 head.
    pub fn reference() -> Self {
        DetectorArch {
            input_channels: 3,
            stem: 32,
            stages: vec![(64, 1), (128, 2), (256, 8), (512, 8), (1024, 4)],
            num_scales: 3,
            anchors_per_scale: 3,
            num_classes: 1,
        }
    }

    /// Small network for 64-pixel inputs: strides 16 and 8.
    pub fn desk() -> Self {
        DetectorArch {
            input_channels: 3,
            stem: 8,
            stages: vec![(16, 1), (32, 1), (64, 1), (128, 1)],
            num_scales: 2,
            anchors_per_scale: 3,
            num_classes: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.num_scales == 0 || self.num_scales > self.stages.len() {
            return Err(Error::Config(format!(
                "{} scales need at least as many stages (have {})",
                self.num_scales,
                self.stages.len()
            )));
        }
        if self.anchors_per_scale == 0 || self.num_classes == 0 {
            return Err(Error::Config(
                "anchors_per_scale and num_classes must be positive".into(),
            ));
        }
        if self.stages.iter().any(|&(c, _)| c < 4 || c % 4 != 0) {
            return Err(Error::Config("stage widths must be positive multiples of 4".into()));
        }
        Ok(())
    }

    /// Total downsampling; inputs must be a multiple of it.
    pub fn max_stride(&self) -> usize {
        1 << self.stages.len()
    }

    /// Stride of each head, coarsest first.
    pub fn scale_strides(&self) -> Vec<usize> {
        let l = self.stages.len();
        (0..self.num_scales).map(|s| 1 << (l - s)).collect()
    }

    pub fn outputs_per_anchor(&self) -> usize {
        5 + self.num_classes
    }

    pub fn num_anchors(&self) -> usize {
        self.num_scales * self.anchors_per_scale
    }

    /// Filters of head `s`.
    fn head_width(&self, s: usize) -> usize {
        self.stages[self.stages.len() - 1 - s].0 / 2
    }

    fn head_input(&self, s: usize) -> usize {
        let l = self.stages.len();
        if s == 0 {
            self.stages[l - 1].0
        } else {
            self.head_width(s - 1) / 2 + self.stages[l - 1 - s].0
        }
    }

    /// Parameter count without building the network. Batch-norm running
    /// statistics count toward the total but are never trainable; with a
    /// frozen backbone only its normalization scales and offsets train.
    pub fn param_count(&self, freeze_backbone: bool) -> ParamCount {
        let mut c = ParamCount { total: 0, trainable: 0 };
        let mut conv_bn = |cin: usize, cout: usize, k: usize, backbone: bool| {
            let kernel = cin * cout * k * k;
            c.total += kernel + 4 * cout;
            c.trainable += 2 * cout + if backbone && freeze_backbone { 0 } else { kernel };
        };
        conv_bn(self.input_channels, self.stem, 3, true);
        let mut prev = self.stem;
        for &(ch, blocks) in &self.stages {
            conv_bn(prev, ch, 3, true);
            for _ in 0..blocks {
                conv_bn(ch, ch / 2, 1, true);
                conv_bn(ch / 2, ch, 3, true);
            }
            prev = ch;
        }
        let out = self.anchors_per_scale * self.outputs_per_anchor();
        let mut extra = 0;
        for s in 0..self.num_scales {
            let (cin, nf) = (self.head_input(s), self.head_width(s));
            conv_bn(cin, nf, 1, false);
            conv_bn(nf, 2 * nf, 3, false);
            conv_bn(2 * nf, nf, 1, false);
            conv_bn(nf, 2 * nf, 3, false);
            conv_bn(2 * nf, nf, 1, false);
            conv_bn(nf, 2 * nf, 3, false);
            extra += 2 * nf * out + out;
            if s + 1 < self.num_scales {
                conv_bn(nf, nf / 2, 1, false);
            }
        }
        c.total += extra;
        c.trainable += extra;
        c
    }
}

#[derive(Debug, Clone)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBn {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        Ok(ConvBn {
            conv: Conv2d::new(
                store,
                &format!("{name}.conv"),
                (cin, cout, k),
                stride,
                k / 2,
                false,
                Init::He,
            )?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), cout)?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        leaky_relu(&self.bn.forward(&self.conv.forward(x)?, train)?, LEAK)
    }
}

#[derive(Debug, Clone)]
struct Stage {
    down: ConvBn,
    blocks: Vec<(ConvBn, ConvBn)>,
}

#[derive(Debug, Clone)]
struct Head {
    body: Vec<ConvBn>,
    pre: ConvBn,
    out: Conv2d,
}

/// Network weights plus the anchors and input size they were trained for.
#[derive(Debug)]
pub struct Detector {
    pub arch: DetectorArch,
    pub anchors: Vec<Anchor>,
    pub input_size: usize,
    store: ParamStore,
    stem: ConvBn,
    stages: Vec<Stage>,
    heads: Vec<Head>,
    routes: Vec<ConvBn>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    arch: DetectorArch,
    anchors: Vec<Anchor>,
    input_size: usize,
}

impl Detector {
    pub fn new(
        arch: DetectorArch,
        anchors: Vec<Anchor>,
        input_size: usize,
        dtype: DType,
        seed_value: u64,
    ) -> Result<Self> {
        arch.validate()?;
        if anchors.len() != arch.num_anchors() {
            return Err(Error::Config(format!(
                "{} anchors given, architecture needs {}",
                anchors.len(),
                arch.num_anchors()
            )));
        }
        if input_size == 0 || input_size % arch.max_stride() != 0 {
            return Err(Error::Config(format!(
                "input size {input_size} is not a multiple of the stride {}",
                arch.max_stride()
            )));
        }
        let mut store = ParamStore::new(dtype, seed_value);
        let s = &mut store;
        let stem = ConvBn::new(s, "backbone.stem", arch.input_channels, arch.stem, 3, 1)?;
        let mut prev = arch.stem;
        let mut stages = Vec::new();
        for (i, &(ch, nb)) in arch.stages.iter().enumerate() {
            let down = ConvBn::new(s, &format!("backbone.s{i}.down"), prev, ch, 3, 2)?;
            let blocks = (0..nb)
                .map(|j| {
                    Ok((
                        ConvBn::new(s, &format!("backbone.s{i}.b{j}.reduce"), ch, ch / 2, 1, 1)?,
                        ConvBn::new(s, &format!("backbone.s{i}.b{j}.expand"), ch / 2, ch, 3, 1)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage { down, blocks });
            prev = ch;
        }
        let out = arch.anchors_per_scale * arch.outputs_per_anchor();
        let mut heads = Vec::new();
        let mut routes = Vec::new();
        for h in 0..arch.num_scales {
            let (cin, nf) = (arch.head_input(h), arch.head_width(h));
            let p = format!("head{h}");
            let widths = [
                (cin, nf, 1),
                (nf, 2 * nf, 3),
                (2 * nf, nf, 1),
                (nf, 2 * nf, 3),
                (2 * nf, nf, 1),
            ];
            let body = widths
                .iter()
                .enumerate()
                .map(|(k, &(a, b, ks))| ConvBn::new(s, &format!("{p}.c{k}"), a, b, ks, 1))
                .collect::<Result<Vec<_>>>()?;
            let pre = ConvBn::new(s, &format!("{p}.pre"), nf, 2 * nf, 3, 1)?;
            let out = Conv2d::new(s, &format!("{p}.out"), (2 * nf, out, 1), 1, 0, true, Init::Normal(0.01))?;
            heads.push(Head { body, pre, out });
            if h + 1 < arch.num_scales {
                routes.push(ConvBn::new(s, &format!("route{h}"), nf, nf / 2, 1, 1)?);
            }
        }
        Ok(Detector {
            arch,
            anchors,
            input_size,
            store,
            stem,
            stages,
            heads,
            routes,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// Freeze backbone kernels and normalization statistics; backbone
    /// normalization scales and offsets stay trainable.
    pub fn freeze_backbone(&self) {
        self.store.set_frozen(true, |n, k| {
            n.starts_with(BACKBONE) && (k == Kind::Buffer || n.ends_with(".weight"))
        });
    }

    pub fn freeze_all(&self) {
        self.store.freeze_all();
    }

    pub fn checksum(&self) -> Result<String> {
        self.store.checksum()
    }

    /// Checksum of the frozen part of the backbone.
    pub fn backbone_checksum(&self) -> Result<String> {
        self.store
            .checksum_where(|n| n.starts_with(BACKBONE) && !n.ends_with(".gamma") && !n.ends_with(".beta"))
    }

    pub fn backbone_vars(&self) -> Vec<candle_core::Var> {
        self.store.vars_with_prefix(BACKBONE)
    }

    /// Feature map after each stage.
    pub fn backbone_forward(&self, x: &Tensor, train: bool) -> Result<Vec<Tensor>> {
        let mut h = self.stem.forward(x, train)?;
        let mut outs = Vec::with_capacity(self.stages.len());
        for st in &self.stages {
            h = st.down.forward(&h, train)?;
            for (a, b) in &st.blocks {
                h = (&h + b.forward(&a.forward(&h, train)?, train)?)?;
            }
            outs.push(h.clone());
        }
        Ok(outs)
    }

    /// Raw prediction maps `[B, A·(5+C), H, W]`, coarsest scale first.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Vec<Tensor>> {
        let feats = self.backbone_forward(x, train)?;
        let l = feats.len();
        let mut maps = Vec::with_capacity(self.heads.len());
        let mut carry: Option<Tensor> = None;
        for (s, head) in self.heads.iter().enumerate() {
            let input = match &carry {
                None => feats[l - 1].clone(),
                Some(c) => {
                    let r = self.routes[s - 1].forward(c, train)?;
                    let (_, _, h, w) = r.dims4()?;
                    Tensor::cat(&[&r.upsample_nearest2d(2 * h, 2 * w)?, &feats[l - 1 - s]], 1)?
                }
            };
            let mut h = input;
            for c in &head.body {
                h = c.forward(&h, train)?;
            }
            maps.push(head.out.forward(&head.pre.forward(&h, train)?)?);
            carry = Some(h);
        }
        Ok(maps)
    }

    /// Anchors used by scale `s` (largest anchors on the coarsest scale).
    pub fn scale_anchors(&self, s: usize) -> &[Anchor] {
        let a = self.arch.anchors_per_scale;
        let k = self.arch.num_scales - 1 - s;
        &self.anchors[k * a..(k + 1) * a]
    }

    /// Turn letterboxed images into the network input `[B, C, S, S]` in
    /// `[0, 1]`, replicating the gray channel.
    pub fn input_tensor(&self, images: &[GrayscalePatch]) -> Result<Tensor> {
        let s = self.input_size;
        let mut data = Vec::with_capacity(images.len() * s * s);
        for im in images {
            if im.width() != s || im.height() != s {
                return Err(Error::ShapeMismatch(format!(
                    "detector input {}x{}, expected {s}x{s}",
                    im.width(),
                    im.height()
                )));
            }
            data.extend(im.pixels().iter().map(|&p| p as f32 / 255.0));
        }
        let t = Tensor::from_vec(data, (images.len(), 1, s, s), self.device())?.to_dtype(self.dtype())?;
        self.replicate_gray(&t)
    }

    /// `[B, 1, S, S]` → `[B, C, S, S]`.
    pub fn replicate_gray(&self, t: &Tensor) -> Result<Tensor> {
        let parts = vec![t; self.arch.input_channels];
        Ok(Tensor::cat(&parts, 1)?)
    }

    /// Decode raw maps into boxes in input coordinates with confidence
    /// `sigmoid(objectness) · sigmoid(class)`.
    pub fn decode(&self, maps: &[Tensor]) -> Result<Vec<Vec<Detection>>> {
        let strides = self.arch.scale_strides();
        let a = self.arch.anchors_per_scale;
        let o = self.arch.outputs_per_anchor();
        let b = maps[0].dims4()?.0;
        let mut out = vec![Vec::new(); b];
        for (s, m) in maps.iter().enumerate() {
            let (_, _, h, w) = m.dims4()?;
            let v = m.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            let stride = strides[s] as f64;
            let anchors = self.scale_anchors(s);
            let at = |bi: usize, ai: usize, k: usize, y: usize, x: usize| {
                v[(((bi * a + ai) * o + k) * h + y) * w + x] as f64
            };
            for (bi, dets) in out.iter_mut().enumerate() {
                for (ai, &(aw, ah)) in anchors.iter().enumerate() {
                    for y in 0..h {
                        for x in 0..w {
                            let cx = (sigmoid(at(bi, ai, 0, y, x)) + x as f64) * stride;
                            let cy = (sigmoid(at(bi, ai, 1, y, x)) + y as f64) * stride;
                            let bw = aw * at(bi, ai, 2, y, x).min(20.0).exp();
                            let bh = ah * at(bi, ai, 3, y, x).min(20.0).exp();
                            let conf = sigmoid(at(bi, ai, 4, y, x)) * sigmoid(at(bi, ai, 5, y, x));
                            dets.push(Detection::new(Rect::from_center(cx, cy, bw, bh), conf));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Detections in original pixel coordinates, thresholded and
    /// suppressed. Inference only; deterministic.
    pub fn detect(&self, image: &GrayscalePatch, cfg: &EvalConfig) -> Result<Vec<Detection>> {
        Ok(self.detect_batch(std::slice::from_ref(image), cfg)?.remove(0))
    }

    pub fn detect_batch(&self, images: &[GrayscalePatch], cfg: &EvalConfig) -> Result<Vec<Vec<Detection>>> {
        const CHUNK: usize = 16;
        let mut all = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            let boxed: Vec<Letterbox> = chunk.iter().map(|im| Letterbox::new(im, self.input_size)).collect();
            let prepared: Vec<GrayscalePatch> = boxed.iter().map(|l| l.image.clone()).collect();
            let raw = self.decode(&self.forward(&self.input_tensor(&prepared)?, false)?)?;
            let post = par::map_indexed(chunk.len(), Parallelism::Parallel, |i| {
                let (w, h) = (chunk[i].width() as f64, chunk[i].height() as f64);
                let kept: Vec<Detection> = raw[i]
                    .iter()
                    .filter(|d| d.confidence > cfg.objectness_threshold)
                    .map(|d| Detection::new(boxed[i].unmap(&d.bbox).clip(w, h), d.confidence))
                    .filter(|d| d.bbox.area() > 0.0)
                    .collect();
                nms(&kept, cfg.nms_iou)
            });
            all.extend(post);
        }
        Ok(all)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            arch: self.arch.clone(),
            anchors: self.anchors.clone(),
            input_size: self.input_size,
        };
        let meta = HashMap::from([
            ("kind".to_string(), "detector".to_string()),
            ("config".to_string(), serde_json::to_string(&header)?),
        ]);
        self.store.save(path, meta)
    }

    pub fn load(path: &Path) -> Result<Detector> {
        let meta = crate::nn::read_checkpoint_metadata(path)?;
        if meta.get("kind").map(String::as_str) != Some("detector") {
            return Err(Error::Checkpoint(format!(
                "{} is not a detector checkpoint",
                path.display()
            )));
        }
        let header: CheckpointHeader = serde_json::from_str(
            meta.get("config")
                .ok_or_else(|| Error::Checkpoint(format!("{}: missing config", path.display())))?,
        )?;
        let det = Detector::new(header.arch, header.anchors, header.input_size, DType::F32, 0)?;
        det.store.load(path)?;
        Ok(det)
    }

    /// Copy backbone weights and statistics from a detector with the same
    /// backbone.
    pub fn copy_backbone_from(&self, other: &Detector) -> Result<()> {
        for name in self.store.names().into_iter().filter(|n| n.starts_with(BACKBONE)) {
            let src = other
                .store
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("source backbone lacks {name}")))?;
            self.store
                .get(name)
                .expect("listed")
                .set(&src.var().as_tensor().to_dtype(self.dtype())?)?;
        }
        Ok(())
    }

    /// Copy all weights from a detector with the same architecture.
    pub fn copy_weights_from(&self, other: &Detector) -> Result<()> {
        self.store.copy_from(&other.store)
    }

    pub fn snapshot(&self) -> Result<Vec<Tensor>> {
        self.store
            .names()
            .iter()
            .map(|n| Ok(self.store.get(n).expect("listed").var().as_tensor().copy()?))
            .collect()
    }

    pub fn restore(&self, snap: &[Tensor]) -> Result<()> {
        for (n, t) in self.store.names().iter().zip(snap) {
            self.store.get(n).expect("listed").set(t)?;
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Aspect-preserving resize onto a gray square canvas.
#[derive(Debug, Clone)]
pub struct Letterbox {
    pub image: GrayscalePatch,
    pub scale: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Letterbox {
    pub fn new(image: &GrayscalePatch, size: usize) -> Letterbox {
        let (w, h) = (image.width(), image.height());
        if w == size && h == size {
            return Letterbox {
                image: image.clone(),
                scale: 1.0,
                dx: 0.0,
                dy: 0.0,
            };
        }
        let scale = (size as f64 / w as f64).min(size as f64 / h as f64);
        let nw = ((w as f64 * scale).round() as usize).clamp(1, size);
        let nh = ((h as f64 * scale).round() as usize).clamp(1, size);
        let resized = image.resize_bilinear(nw, nh);
        let (ox, oy) = ((size - nw) / 2, (size - nh) / 2);
        let out = GrayscalePatch::from_fn(size, size, |x, y| {
            if x >= ox && x < ox + nw && y >= oy && y < oy + nh {
                resized.get(x - ox, y - oy)
            } else {
                128
            }
        });
        Letterbox {
            image: out,
            scale,
            dx: ox as f64,
            dy: oy as f64,
        }
    }

    pub fn map(&self, r: &Rect) -> Rect {
        Rect {
            x0: r.x0 * self.scale + self.dx,
            y0: r.y0 * self.scale + self.dy,
            x1: r.x1 * self.scale + self.dx,
            y1: r.y1 * self.scale + self.dy,
        }
    }

    pub fn unmap(&self, r: &Rect) -> Rect {
        Rect {
            x0: (r.x0 - self.dx) / self.scale,
            y0: (r.y0 - self.dy) / self.scale,
            x1: (r.x1 - self.dx) / self.scale,
            y1: (r.y1 - self.dy) / self.scale,
        }
    }
}
