//! Copy/paste synthesis of annotated defect images.
//!
//! Defects cut from training annotations are pasted onto empty canvases:
//! each proposal picks a defect and a location, accepts it when the canvas
//! region and the defect background agree in mean brightness, rescales the
//! defect to the canvas brightness and merges it under its pseudo-mask.

mod mask;
mod paste;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use mask::{dilate, make_pseudo_mask, otsu_threshold, threshold_mask};
pub use paste::{
    adapt_brightness, apply_gain, background_mean, brightness_gain, paste, paste_min, region_compatible,
    relative_difference, MergeMode,
};

use crate::dataset::{AnnotatedSample, DefectPatch, Polarity, SourceTag};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::par::{self, Parallelism};
use crate::patch::GrayscalePatch;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PasteAttemptPolicy {
    /// Proposals per image before giving up on its canvas.
    pub max_attempts: usize,
    pub compatibility_tolerance: f64,
    pub dilation_iterations: usize,
    /// Image restarts allowed before synthesis fails.
    pub max_restarts: usize,
    pub max_gain: f64,
    pub merge: MergeMode,
    /// Which side of the Otsu threshold is the defect.
    pub defect_polarity: Polarity,
}

impl Default for PasteAttemptPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 100,
            compatibility_tolerance: 0.05,
            dilation_iterations: 2,
            max_restarts: 10,
            max_gain: 4.0,
            merge: MergeMode::Min,
            defect_polarity: Polarity::Dark,
        }
    }
}

impl PasteAttemptPolicy {
    /// `tolerance == 0` is accepted; it only admits exact matches.
    pub fn validate(&self) -> Result<()> {
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.compatibility_tolerance) {
            return Err(Error::Config(format!(
                "compatibility_tolerance {} outside [0, 1)",
                self.compatibility_tolerance
            )));
        }
        if !(self.max_gain >= 1.0) {
            return Err(Error::Config("max_gain must be at least 1".into()));
        }
        Ok(())
    }
}

/// Cut every annotated box out of `samples` and build its pseudo-mask.
/// Crops whose threshold selects nothing are skipped.
pub fn extract_defect_patches(samples: &[AnnotatedSample], policy: &PasteAttemptPolicy) -> Vec<DefectPatch> {
    let per_sample = par::map_slice(samples, Parallelism::Parallel, |s| {
        s.boxes
            .iter()
            .zip(&s.defect_ids)
            .filter_map(|(b, id)| {
                let crop = s.image.crop(b).ok()?;
                let m = make_pseudo_mask(&crop, policy.dilation_iterations, policy.defect_polarity).ok()?;
                DefectPatch::new(crop, m, id.clone()).ok()
            })
            .collect::<Vec<_>>()
    });
    per_sample.into_iter().flatten().collect()
}

/// One accepted paste.
#[derive(Debug, Clone, PartialEq)]
pub struct PasteRecord {
    pub patch_index: usize,
    pub location: BoundingBox,
    pub gain: f64,
    /// Canvas region mean at `location` and defect background mean that
    /// passed the compatibility test.
    pub canvas_mean: f64,
    pub patch_background_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpOutcome {
    pub sample: AnnotatedSample,
    pub canvas_index: usize,
    pub pastes: Vec<PasteRecord>,
    pub restarts: usize,
}

/// Generate one copy/paste image with a defect count drawn uniformly from
/// `defects` (inclusive). Pasted boxes never overlap.
pub fn generate_cp_sample(
    canvases: &[GrayscalePatch],
    patches: &[DefectPatch],
    defects: (usize, usize),
    policy: &PasteAttemptPolicy,
    seed_value: u64,
) -> Result<CpOutcome> {
    policy.validate()?;
    if canvases.is_empty() || patches.is_empty() {
        return Err(Error::Config(
            "copy/paste needs at least one canvas and one defect patch".into(),
        ));
    }
    if defects.0 == 0 || defects.0 > defects.1 {
        return Err(Error::Config(format!("invalid defect count range {defects:?}")));
    }
    let bg_means: Vec<f64> = patches
        .iter()
        .map(|p| background_mean(&p.crop, &p.pseudo_mask))
        .collect();
    let mut rng = seed::rng(seed_value);

    for restart in 0..=policy.max_restarts {
        let canvas_index = rng.random_range(0..canvases.len());
        let canvas = &canvases[canvas_index];
        let target = rng.random_range(defects.0..=defects.1);
        let mut image = canvas.clone();
        let mut pastes: Vec<PasteRecord> = Vec::with_capacity(target);
        let mut attempts = 0;
        while pastes.len() < target && attempts < policy.max_attempts {
            attempts += 1;
            let patch_index = rng.random_range(0..patches.len());
            let p = &patches[patch_index];
            let (pw, ph) = (p.crop.width(), p.crop.height());
            if pw > canvas.width() || ph > canvas.height() {
                continue;
            }
            let x = rng.random_range(0..=(canvas.width() - pw)) as u32;
            let y = rng.random_range(0..=(canvas.height() - ph)) as u32;
            let location = BoundingBox::new(x, y, pw as u32, ph as u32);
            if pastes.iter().any(|r| r.location.overlaps(&location)) {
                continue;
            }
            // Pasted boxes are disjoint, so the region is still untouched canvas.
            let canvas_mean = canvas.region_mean(&location);
            if relative_difference(canvas_mean, bg_means[patch_index]) > policy.compatibility_tolerance {
                continue;
            }
            let gain = brightness_gain(&p.crop, &p.pseudo_mask, canvas_mean, policy.max_gain);
            let adapted = apply_gain(&p.crop, gain);
            paste::paste_into(&mut image, &adapted, &p.pseudo_mask, &location, policy.merge)?;
            pastes.push(PasteRecord {
                patch_index,
                location,
                gain,
                canvas_mean,
                patch_background_mean: bg_means[patch_index],
            });
        }
        if pastes.len() == target {
            let mut sample = AnnotatedSample::new(image, SourceTag::Cp);
            for (k, r) in pastes.iter().enumerate() {
                sample.push(r.location, format!("cp{k}:{}", patches[r.patch_index].origin_id));
            }
            return Ok(CpOutcome {
                sample,
                canvas_index,
                pastes,
                restarts: restart,
            });
        }
    }
    Err(Error::CpExhausted {
        restarts: policy.max_restarts,
    })
}

/// Generate `count` images; image `i` is seeded from `(seed, i)`.
pub fn generate_cp_batch(
    canvases: &[GrayscalePatch],
    patches: &[DefectPatch],
    defects: (usize, usize),
    policy: &PasteAttemptPolicy,
    count: usize,
    seed_value: u64,
    mode: Parallelism,
) -> Result<Vec<CpOutcome>> {
    par::try_map_indexed(count, mode, |i| {
        generate_cp_sample(canvases, patches, defects, policy, seed::derive(seed_value, i as u64))
    })
}
