//! U-Net generator and the two-scale patch discriminator.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskgen::PositionMask;
use crate::nn::{leaky_relu, Conv2d, Init, InstanceNorm2d, ParamCount, ParamStore};
use crate::patch::GrayscalePatch;

const INIT: Init = Init::Normal(0.02);
const LEAK: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorArch {
    pub image_size: usize,
    pub base_width: usize,
    /// Number of stride-2 encoder levels.
    pub depth: usize,
    pub max_width: usize,
}

impl Default for GeneratorArch {
    fn default() -> Self {
        GeneratorArch {
            image_size: 256,
            base_width: 64,
            depth: 8,
            max_width: 512,
        }
    }
}

impl GeneratorArch {
    pub fn desk() -> Self {
        GeneratorArch {
            image_size: 64,
            base_width: 8,
            depth: 4,
            max_width: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_width == 0 || self.max_width < self.base_width {
            return Err(Error::Config("generator depth and widths must be positive".into()));
        }
        if self.depth >= usize::BITS as usize || self.image_size == 0 || self.image_size % (1 << self.depth) != 0 {
            return Err(Error::Config(format!(
                "generator image size {} is not divisible by 2^{}",
                self.image_size, self.depth
            )));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        (self.base_width << level.min(30)).min(self.max_width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorArch {
    pub base_width: usize,
    /// Stride-2 layers before the two stride-1 layers.
    pub n_layers: usize,
    pub max_width: usize,
    /// Concatenate the position mask to the image along channels.
    pub concat_mask: bool,
}

impl Default for DiscriminatorArch {
    fn default() -> Self {
        DiscriminatorArch {
            base_width: 64,
            n_layers: 3,
            max_width: 512,
            concat_mask: true,
        }
    }
}

impl DiscriminatorArch {
    pub fn desk() -> Self {
        DiscriminatorArch {
            base_width: 8,
            n_layers: 3,
            max_width: 64,
            concat_mask: true,
        }
    }

    pub fn input_channels(&self) -> usize {
        if self.concat_mask {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.n_layers == 0 || self.max_width < self.base_width {
            return Err(Error::Config("discriminator widths and depth must be positive".into()));
        }
        Ok(())
    }
}

/// Masks as `[B, 1, H, W]` with boxes at 1 and background at −1.
pub fn mask_tensor(masks: &[PositionMask], dtype: DType, device: &Device) -> Result<Tensor> {
    let (w, h) = match masks.first() {
        Some(m) => (m.width(), m.height()),
        None => return Err(Error::ShapeMismatch("no masks".into())),
    };
    let mut data = Vec::with_capacity(masks.len() * w * h);
    for m in masks {
        if m.width() != w || m.height() != h {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} in a batch of {w}x{h}",
                m.width(),
                m.height()
            )));
        }
        data.extend(m.mask.bits().iter().map(|&b| if b != 0 { 1.0f32 } else { -1.0 }));
    }
    Ok(Tensor::from_vec(data, (masks.len(), 1, h, w), device)?.to_dtype(dtype)?)
}

/// Images as `[B, 1, H, W]` in `[−1, 1]`.
pub fn image_tensor(images: &[GrayscalePatch], dtype: DType, device: &Device) -> Result<Tensor> {
    let (w, h) = match images.first() {
        Some(m) => (m.width(), m.height()),
        None => return Err(Error::ShapeMismatch("no images".into())),
    };
    let mut data = Vec::with_capacity(images.len() * w * h);
    for im in images {
        if im.width() != w || im.height() != h {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{} in a batch of {w}x{h}",
                im.width(),
                im.height()
            )));
        }
        data.extend(im.pixels().iter().map(|&p| p as f32 / 127.5 - 1.0));
    }
    Ok(Tensor::from_vec(data, (images.len(), 1, h, w), device)?.to_dtype(dtype)?)
}

/// `[B, 1, H, W]` in `[−1, 1]` back to 8-bit images.
pub fn tensor_images(t: &Tensor) -> Result<Vec<GrayscalePatch>> {
    let (b, _, h, w) = t.dims4()?;
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    (0..b)
        .map(|i| {
            let px = v[i * h * w..(i + 1) * h * w]
                .iter()
                .map(|&x| ((x as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
                .collect();
            GrayscalePatch::new(w, h, px)
        })
        .collect()
}

#[derive(Debug)]
struct Down {
    conv: Conv2d,
    norm: Option<InstanceNorm2d>,
}

#[derive(Debug)]
struct Up {
    conv: Conv2d,
    norm: InstanceNorm2d,
}

/// Mask-to-image U-Net. Encoder levels halve the resolution with 4×4
/// stride-2 convolutions; decoder levels upsample, convolve and
/// concatenate the matching encoder output. Output passes through `tanh`.
#[derive(Debug)]
pub struct Generator {
    pub arch: GeneratorArch,
    store: ParamStore,
    down: Vec<Down>,
    up: Vec<Up>,
    out: Conv2d,
}

impl Generator {
    pub fn new(arch: GeneratorArch, dtype: DType, seed_value: u64) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new(dtype, seed_value);
        let s = &mut store;
        let d = arch.depth;
        let mut down = Vec::with_capacity(d);
        let mut cin = 1;
        for i in 0..d {
            let c = arch.width(i);
            let conv = Conv2d::new(s, &format!("gen.down{i}"), (cin, c, 4), 2, 1, true, INIT)?;
            // No normalization on the input level or the innermost one,
            // which may be a single pixel.
            let norm = if i == 0 || i + 1 == d {
                None
            } else {
                Some(InstanceNorm2d::new(s, &format!("gen.down{i}.norm"), c)?)
            };
            down.push(Down { conv, norm });
            cin = c;
        }
        let mut up = Vec::with_capacity(d.saturating_sub(1));
        for i in (0..d - 1).rev() {
            let c = arch.width(i);
            up.push(Up {
                conv: Conv2d::new(s, &format!("gen.up{i}"), (cin, c, 3), 1, 1, true, INIT)?,
                norm: InstanceNorm2d::new(s, &format!("gen.up{i}.norm"), c)?,
            });
            cin = 2 * c;
        }
        let out = Conv2d::new(s, "gen.out", (cin, 1, 3), 1, 1, true, INIT)?;
        Ok(Generator {
            arch,
            store,
            down,
            up,
            out,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn param_count(&self) -> ParamCount {
        self.store.count()
    }

    pub fn checksum(&self) -> Result<String> {
        self.store.checksum()
    }

    /// `[B, 1, S, S]` mask tensor → `[B, 1, S, S]` image in `(−1, 1)`.
    pub fn forward(&self, mask: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = mask.dims4()?;
        let s = self.arch.image_size;
        if c != 1 || h != s || w != s {
            return Err(Error::ShapeMismatch(format!(
                "generator input {c}x{h}x{w}, expected 1x{s}x{s}"
            )));
        }
        let mut skips = Vec::with_capacity(self.down.len());
        let mut x = mask.clone();
        for (i, d) in self.down.iter().enumerate() {
            let y = d.conv.forward(&x)?;
            let y = match &d.norm {
                Some(n) => n.forward(&y)?,
                None => y,
            };
            x = leaky_relu(&y, LEAK)?;
            if i + 1 < self.down.len() {
                skips.push(x.clone());
            }
        }
        for u in &self.up {
            let (_, _, h, w) = x.dims4()?;
            let y = u.conv.forward(&x.upsample_nearest2d(2 * h, 2 * w)?)?;
            let y = leaky_relu(&u.norm.forward(&y)?, 0.0)?;
            let skip = skips.pop().expect("one skip per decoder level");
            x = Tensor::cat(&[&y, &skip], 1)?;
        }
        let (_, _, h, w) = x.dims4()?;
        Ok(self.out.forward(&x.upsample_nearest2d(2 * h, 2 * w)?)?.tanh()?)
    }

    /// Render masks to 8-bit images, in batches.
    pub fn generate(&self, masks: &[PositionMask]) -> Result<Vec<GrayscalePatch>> {
        const CHUNK: usize = 16;
        let mut out = Vec::with_capacity(masks.len());
        for chunk in masks.chunks(CHUNK) {
            let t = mask_tensor(chunk, self.store.dtype(), self.store.device())?;
            out.extend(tensor_images(&self.forward(&t)?)?);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = HashMap::from([
            ("kind".to_string(), "generator".to_string()),
            ("config".to_string(), serde_json::to_string(&self.arch)?),
        ]);
        self.store.save(path, meta)
    }

    pub fn load(path: &Path) -> Result<Generator> {
        let meta = crate::nn::read_checkpoint_metadata(path)?;
        if meta.get("kind").map(String::as_str) != Some("generator") {
            return Err(Error::Checkpoint(format!(
                "{} is not a generator checkpoint",
                path.display()
            )));
        }
        let arch: GeneratorArch = serde_json::from_str(
            meta.get("config")
                .ok_or_else(|| Error::Checkpoint(format!("{}: missing config", path.display())))?,
        )?;
        let g = Generator::new(arch, DType::F32, 0)?;
        g.store.load(path)?;
        Ok(g)
    }
}

#[derive(Debug)]
struct PatchLayer {
    conv: Conv2d,
    norm: Option<InstanceNorm2d>,
}

/// One PatchGAN classifier: 4×4 convolutions, `n_layers` at stride 2 then
/// one at stride 1, and a 1-channel stride-1 score layer.
#[derive(Debug)]
struct PatchDiscriminator {
    layers: Vec<PatchLayer>,
    score: Conv2d,
}

impl PatchDiscriminator {
    fn new(store: &mut ParamStore, name: &str, arch: &DiscriminatorArch) -> Result<Self> {
        let mut layers = Vec::new();
        let mut cin = arch.input_channels();
        for i in 0..=arch.n_layers {
            let c = (arch.base_width << i.min(30)).min(arch.max_width);
            let stride = if i < arch.n_layers { 2 } else { 1 };
            let conv = Conv2d::new(store, &format!("{name}.l{i}"), (cin, c, 4), stride, 2, true, INIT)?;
            let norm = if i == 0 {
                None
            } else {
                Some(InstanceNorm2d::new(store, &format!("{name}.l{i}.norm"), c)?)
            };
            layers.push(PatchLayer { conv, norm });
            cin = c;
        }
        let score = Conv2d::new(store, &format!("{name}.score"), (cin, 1, 4), 1, 2, true, INIT)?;
        Ok(PatchDiscriminator { layers, score })
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut feats = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let y = l.conv.forward(&h)?;
            let y = match &l.norm {
                Some(n) => n.forward(&y)?,
                None => y,
            };
            h = leaky_relu(&y, LEAK)?;
            feats.push(h.clone());
        }
        Ok((self.score.forward(&h)?, feats))
    }
}

/// Score maps and intermediate features, one entry per scale
/// (full resolution first).
#[derive(Debug, Clone)]
pub struct DiscOutput {
    pub scores: Vec<Tensor>,
    pub features: Vec<Vec<Tensor>>,
}

impl DiscOutput {
    pub fn detach(&self) -> DiscOutput {
        DiscOutput {
            scores: self.scores.iter().map(Tensor::detach).collect(),
            features: self
                .features
                .iter()
                .map(|f| f.iter().map(Tensor::detach).collect())
                .collect(),
        }
    }
}

/// Two patch discriminators, the second seeing inputs average-pooled by 2.
#[derive(Debug)]
pub struct DiscriminatorPair {
    pub arch: DiscriminatorArch,
    store: ParamStore,
    nets: [PatchDiscriminator; 2],
}

impl DiscriminatorPair {
    pub fn new(arch: DiscriminatorArch, dtype: DType, seed_value: u64) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new(dtype, seed_value);
        let full = PatchDiscriminator::new(&mut store, "disc0", &arch)?;
        let half = PatchDiscriminator::new(&mut store, "disc1", &arch)?;
        Ok(DiscriminatorPair {
            arch,
            store,
            nets: [full, half],
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn param_count(&self) -> ParamCount {
        self.store.count()
    }

    pub fn input_channels(&self) -> usize {
        self.arch.input_channels()
    }

    /// Score `image` (`[B, 1, H, W]`, `[−1, 1]`) given its `mask`. The mask
    /// is ignored when concatenation is disabled.
    pub fn forward(&self, image: &Tensor, mask: &Tensor) -> Result<DiscOutput> {
        let (ib, _, ih, iw) = image.dims4()?;
        let (mb, _, mh, mw) = mask.dims4()?;
        if (ib, ih, iw) != (mb, mh, mw) {
            return Err(Error::ShapeMismatch(format!(
                "image {ib}x{ih}x{iw} and mask {mb}x{mh}x{mw} are not aligned"
            )));
        }
        if ih % 2 != 0 || iw % 2 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "discriminator input {ih}x{iw} must have even sides"
            )));
        }
        let x = if self.arch.concat_mask {
            Tensor::cat(&[image, mask], 1)?
        } else {
            image.clone()
        };
        let half = x.avg_pool2d(2)?;
        let (s0, f0) = self.nets[0].forward(&x)?;
        let (s1, f1) = self.nets[1].forward(&half)?;
        Ok(DiscOutput {
            scores: vec![s0, s1],
            features: vec![f0, f1],
        })
    }
}
