//! Mask-conditioned image synthesis: a U-Net generator trained against two
//! patch discriminators and, optionally, a frozen defect detector whose
//! raw outputs on real and generated images are pulled together.

mod loss;
mod nets;
mod train;

use crate::dataset::{AnnotatedSample, SourceTag};
use crate::error::{Error, Result};
use crate::maskgen::{mask_from_annotations, PositionMask};
use crate::par::{self, Parallelism};
use crate::patch::GrayscalePatch;

pub use loss::{discriminator_loss, generator_loss, GanLossWeights, GenLoss, LossBreakdown};
pub use nets::{
    image_tensor, mask_tensor, tensor_images, DiscOutput, DiscriminatorArch, DiscriminatorPair, Generator,
    GeneratorArch,
};
pub use train::{
    augment_pair, lr_schedule, train_gan, write_gan_history_csv, GanAugment, GanEpoch, GanRun, GanTrainConfig,
};

/// A position mask and the real image it was drawn from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GanPair {
    pub mask: PositionMask,
    pub image: GrayscalePatch,
}

impl GanPair {
    pub fn from_sample(sample: &AnnotatedSample) -> Self {
        GanPair {
            mask: mask_from_annotations(sample),
            image: sample.image.clone(),
        }
    }
}

/// Paired masks for every sample that has at least one box.
pub fn pairs_from_samples(samples: &[AnnotatedSample]) -> Vec<GanPair> {
    samples
        .iter()
        .filter(|s| !s.is_canvas())
        .map(GanPair::from_sample)
        .collect()
}

/// One generated sample per mask, annotated with the mask's boxes.
pub fn generate_synthetic_set(
    gen: &Generator,
    masks: &[PositionMask],
    mode: Parallelism,
) -> Result<Vec<AnnotatedSample>> {
    const CHUNK: usize = 16;
    let size = gen.arch.image_size;
    if let Some((i, m)) = masks
        .iter()
        .enumerate()
        .find(|(_, m)| m.width() != size || m.height() != size)
    {
        return Err(Error::ShapeMismatch(format!(
            "mask {i} is {}x{}, generator makes {size}x{size}",
            m.width(),
            m.height()
        )));
    }
    let chunks: Vec<&[PositionMask]> = masks.chunks(CHUNK).collect();
    let images = par::try_map_slice(&chunks, mode, |c| gen.generate(c))?;
    Ok(images
        .into_iter()
        .flatten()
        .zip(masks)
        .enumerate()
        .map(|(i, (image, m))| {
            let mut s = AnnotatedSample::new(image, SourceTag::Gan);
            for (k, b) in m.boxes.iter().enumerate() {
                s.push(*b, format!("gan{i:06}-{k}"));
            }
            s
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use candle_core::DType;

    #[test]
    fn one_sample_per_mask_with_copied_boxes() {
        let gen = Generator::new(GeneratorArch::desk(), DType::F32, 5).unwrap();
        let masks: Vec<PositionMask> = (0..10)
            .map(|i| {
                PositionMask::from_boxes(
                    64,
                    64,
                    vec![BoundingBox::new(i, 4, 6, 5), BoundingBox::new(30, 30 + i, 8, 3)],
                )
            })
            .collect();
        let a = generate_synthetic_set(&gen, &masks, Parallelism::Sequential).unwrap();
        assert_eq!(a.len(), 10);
        for (s, m) in a.iter().zip(&masks) {
            assert_eq!(s.boxes, m.boxes);
            assert_eq!(s.source, SourceTag::Gan);
            s.validate("gan").unwrap();
        }
        let b = generate_synthetic_set(&gen, &masks, Parallelism::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn canvases_have_no_pair() {
        let mut with = AnnotatedSample::new(GrayscalePatch::filled(8, 8, 9), SourceTag::Phantom);
        with.push(BoundingBox::new(1, 1, 2, 2), "d");
        let without = AnnotatedSample::new(GrayscalePatch::filled(8, 8, 9), SourceTag::Phantom);
        let p = pairs_from_samples(&[with, without]);
        assert_eq!(p.len(), 1);
        assert!(p[0].mask.mask.get(1, 1));
    }
}
