//! Annotated grayscale patch datasets.
//!
//! A dataset is a list of [`AnnotatedSample`]s stored on disk as 8-bit PNGs
//! plus a JSON-lines manifest (see [`manifest`]). Real scans and rendered
//! phantoms share the same representation; `source` records the origin.

pub mod manifest;
pub mod phantom;
pub mod split;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::patch::{BinaryMask, GrayscalePatch};

pub use manifest::{load_dataset, save_dataset, validate_samples};
pub use phantom::{generate_phantom_dataset, PhantomConfig, Polarity};
pub use split::{split_by_defect, split_indices, DatasetSplit, SplitIndices};

/// Patch side length of the real scan dataset.
pub const PATCH_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    #[default]
    Real,
    Phantom,
    Cp,
    Gan,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSample {
    pub image: GrayscalePatch,
    pub boxes: Vec<BoundingBox>,
    /// One opaque identifier per box; shared by every view of the same
    /// physical defect.
    pub defect_ids: Vec<String>,
    pub source: SourceTag,
}

impl AnnotatedSample {
    pub fn new(image: GrayscalePatch, source: SourceTag) -> Self {
        Self {
            image,
            boxes: Vec::new(),
            defect_ids: Vec::new(),
            source,
        }
    }

    pub fn push(&mut self, b: BoundingBox, id: impl Into<String>) {
        self.boxes.push(b);
        self.defect_ids.push(id.into());
    }

    pub fn is_canvas(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Check the box/id pairing and that every box lies inside the image.
    /// `name` labels the sample in the error.
    pub fn validate(&self, name: &str) -> Result<()> {
        if self.boxes.len() != self.defect_ids.len() {
            return Err(Error::Validation {
                sample: name.to_string(),
                message: format!("{} boxes but {} defect ids", self.boxes.len(), self.defect_ids.len()),
            });
        }
        for (b, id) in self.boxes.iter().zip(&self.defect_ids) {
            if !self.image.contains(b) {
                return Err(Error::Validation {
                    sample: name.to_string(),
                    message: format!(
                        "box [{}, {}, {}, {}] ({id}) outside {}x{} image",
                        b.x,
                        b.y,
                        b.w,
                        b.h,
                        self.image.width(),
                        self.image.height()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Mirror image and boxes.
    pub fn flip_horizontal(&self) -> AnnotatedSample {
        let w = self.image.width() as u32;
        AnnotatedSample {
            image: self.image.flip_horizontal(),
            boxes: self.boxes.iter().map(|b| b.flipped_horizontal(w)).collect(),
            defect_ids: self.defect_ids.clone(),
            source: self.source,
        }
    }
}

/// A defect rectangle cut from a training image together with its binary
/// foreground mask; the unit of copy/paste synthesis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefectPatch {
    pub crop: GrayscalePatch,
    pub pseudo_mask: BinaryMask,
    pub origin_id: String,
}

impl DefectPatch {
    pub fn new(crop: GrayscalePatch, pseudo_mask: BinaryMask, origin_id: impl Into<String>) -> Result<Self> {
        if crop.width() != pseudo_mask.width() || crop.height() != pseudo_mask.height() {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} vs crop {}x{}",
                pseudo_mask.width(),
                pseudo_mask.height(),
                crop.width(),
                crop.height()
            )));
        }
        if pseudo_mask.count_ones() == 0 {
            return Err(Error::EmptyDefectMask);
        }
        Ok(Self {
            crop,
            pseudo_mask,
            origin_id: origin_id.into(),
        })
    }
}

/// Images carrying no annotations: the backgrounds used as paste canvases.
pub fn extract_canvases(samples: &[AnnotatedSample]) -> Vec<GrayscalePatch> {
    samples
        .iter()
        .filter(|s| s.is_canvas())
        .map(|s| s.image.clone())
        .collect()
}

pub fn total_boxes(samples: &[AnnotatedSample]) -> usize {
    samples.iter().map(|s| s.boxes.len()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n_boxes: usize) -> AnnotatedSample {
        let mut s = AnnotatedSample::new(GrayscalePatch::filled(16, 16, 9), SourceTag::Real);
        for i in 0..n_boxes {
            s.push(BoundingBox::new(i as u32, 0, 2, 2), format!("d{i}"));
        }
        s
    }

    #[test]
    fn canvases_are_unannotated_images() {
        let v = vec![sample(1), sample(0), sample(2)];
        assert_eq!(extract_canvases(&v).len(), 1);
        assert!(extract_canvases(&[sample(1), sample(3)]).is_empty());
    }

    #[test]
    fn validate_rejects_out_of_bounds() {
        let mut s = sample(0);
        s.push(BoundingBox::new(10, 0, 7, 3), "x");
        let err = s.validate("s0").unwrap_err().to_string();
        assert!(err.contains("s0") && err.contains("[10, 0, 7, 3]"), "{err}");
        s.boxes[0].w = 6;
        s.validate("s0").unwrap();
    }

    #[test]
    fn defect_patch_requires_foreground() {
        let crop = GrayscalePatch::filled(3, 3, 1);
        assert!(matches!(
            DefectPatch::new(crop.clone(), BinaryMask::zeros(3, 3), "a"),
            Err(Error::EmptyDefectMask)
        ));
        assert!(DefectPatch::new(crop, BinaryMask::zeros(2, 3), "a").is_err());
    }
}
