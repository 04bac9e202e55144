//! Placement primitives: background compatibility, brightness adaptation,
//! and masked per-pixel merge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::patch::{BinaryMask, GrayscalePatch};

/// How a pasted pixel combines with the canvas under the mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    /// Keep the darker pixel.
    #[default]
    Min,
    /// Keep the brighter pixel.
    Max,
}

impl MergeMode {
    #[inline]
    pub fn merge(self, canvas: u8, crop: u8) -> u8 {
        match self {
            MergeMode::Min => canvas.min(crop),
            MergeMode::Max => canvas.max(crop),
        }
    }
}

/// Mean of the crop pixels outside the mask. If the mask covers the whole
/// crop, falls back to the crop border, which is the closest thing to a
/// background the crop has.
pub fn background_mean(crop: &GrayscalePatch, mask: &BinaryMask) -> f64 {
    let (mut sum, mut n) = (0u64, 0u64);
    for y in 0..crop.height() {
        for x in 0..crop.width() {
            if !mask.get(x, y) {
                sum += crop.get(x, y) as u64;
                n += 1;
            }
        }
    }
    if n > 0 {
        return sum as f64 / n as f64;
    }
    let (w, h) = (crop.width(), crop.height());
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                sum += crop.get(x, y) as u64;
                n += 1;
            }
        }
    }
    sum as f64 / n as f64
}

/// Relative difference of two means against the larger of the two
/// (floored at 1).
pub fn relative_difference(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.max(b).max(1.0)
}

/// Whether the canvas region under `location` matches a defect background
/// of mean `patch_background_mean` within `tol`.
pub fn region_compatible(
    canvas: &GrayscalePatch,
    location: &BoundingBox,
    patch_background_mean: f64,
    tol: f64,
) -> bool {
    relative_difference(canvas.region_mean(location), patch_background_mean) <= tol
}

/// Gain that maps the crop background onto `canvas_region_mean`, capped at
/// `max_gain` (and used as-is when the background is black).
pub fn brightness_gain(crop: &GrayscalePatch, mask: &BinaryMask, canvas_region_mean: f64, max_gain: f64) -> f64 {
    let bg = background_mean(crop, mask);
    if bg <= 0.0 {
        max_gain
    } else {
        (canvas_region_mean / bg).min(max_gain)
    }
}

pub fn apply_gain(crop: &GrayscalePatch, gain: f64) -> GrayscalePatch {
    if gain == 1.0 {
        return crop.clone();
    }
    GrayscalePatch::from_fn(crop.width(), crop.height(), |x, y| {
        (crop.get(x, y) as f64 * gain).round().clamp(0.0, 255.0) as u8
    })
}

/// Scale the whole crop by a uniform gain so its background matches the
/// canvas region; clamped to `[0, 255]`.
pub fn adapt_brightness(
    crop: &GrayscalePatch,
    mask: &BinaryMask,
    canvas_region_mean: f64,
    max_gain: f64,
) -> GrayscalePatch {
    apply_gain(crop, brightness_gain(crop, mask, canvas_region_mean, max_gain))
}

/// Merge `crop` into a copy of `canvas` at `location`, only where
/// `mask == 1`.
pub fn paste(
    canvas: &GrayscalePatch,
    crop: &GrayscalePatch,
    mask: &BinaryMask,
    location: &BoundingBox,
    mode: MergeMode,
) -> Result<GrayscalePatch> {
    let mut out = canvas.clone();
    paste_into(&mut out, crop, mask, location, mode)?;
    Ok(out)
}

pub fn paste_min(
    canvas: &GrayscalePatch,
    crop: &GrayscalePatch,
    mask: &BinaryMask,
    location: &BoundingBox,
) -> Result<GrayscalePatch> {
    paste(canvas, crop, mask, location, MergeMode::Min)
}

pub(crate) fn paste_into(
    canvas: &mut GrayscalePatch,
    crop: &GrayscalePatch,
    mask: &BinaryMask,
    location: &BoundingBox,
    mode: MergeMode,
) -> Result<()> {
    let (w, h) = (location.w as usize, location.h as usize);
    if crop.width() != w || crop.height() != h || mask.width() != w || mask.height() != h {
        return Err(Error::ShapeMismatch(format!(
            "crop {}x{} / mask {}x{} vs location {w}x{h}",
            crop.width(),
            crop.height(),
            mask.width(),
            mask.height()
        )));
    }
    if !canvas.contains(location) {
        return Err(Error::ShapeMismatch(format!("location {location:?} outside canvas")));
    }
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                let (cx, cy) = (location.x as usize + x, location.y as usize + y);
                canvas.set(cx, cy, mode.merge(canvas.get(cx, cy), crop.get(x, y)));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn compatibility_examples() {
        let canvas = GrayscalePatch::filled(20, 20, 100);
        let loc = BoundingBox::new(2, 2, 5, 5);
        assert!(region_compatible(&canvas, &loc, 100.0, 0.05));
        // 4/104 = 0.0385
        assert!(region_compatible(&canvas, &loc, 104.0, 0.05));
        // 10/110 = 0.0909
        assert!(!region_compatible(&canvas, &loc, 110.0, 0.05));
    }

    #[test]
    fn compatibility_is_symmetric() {
        for (a, b) in [(100.0, 104.0), (100.0, 110.0), (0.0, 0.5), (200.0, 190.5)] {
            assert_eq!(relative_difference(a, b), relative_difference(b, a));
        }
    }

    #[test]
    fn unit_gain_is_identity() {
        let crop = GrayscalePatch::from_fn(5, 4, |x, y| (x * 40 + y) as u8);
        let mask = BinaryMask::from_fn(5, 4, |x, _| x == 2);
        let bg = background_mean(&crop, &mask);
        assert_eq!(adapt_brightness(&crop, &mask, bg, 4.0), crop);
    }

    #[test]
    fn doubling_gain_clamps() {
        // background (mask == 0) is all 50, one foreground pixel at 200
        let crop = GrayscalePatch::from_fn(3, 3, |x, y| if (x, y) == (1, 1) { 200 } else { 50 });
        let mask = BinaryMask::from_fn(3, 3, |x, y| (x, y) == (1, 1));
        let out = adapt_brightness(&crop, &mask, 100.0, 4.0);
        for y in 0..3 {
            for x in 0..3 {
                let expect = ((crop.get(x, y) as f64) * 2.0).min(255.0) as u8;
                assert_eq!(out.get(x, y), expect);
            }
        }
        assert_eq!(out.get(1, 1), 255);
    }

    #[test]
    fn black_background_uses_cap() {
        let crop = GrayscalePatch::from_fn(3, 3, |x, y| if (x, y) == (1, 1) { 10 } else { 0 });
        let mask = BinaryMask::from_fn(3, 3, |x, y| (x, y) == (1, 1));
        assert_eq!(brightness_gain(&crop, &mask, 100.0, 4.0), 4.0);
        assert_eq!(adapt_brightness(&crop, &mask, 100.0, 4.0).get(1, 1), 40);
    }

    #[test]
    fn min_merge_examples() {
        let canvas = GrayscalePatch::filled(4, 4, 200);
        let crop = GrayscalePatch::filled(2, 2, 150);
        let on = BinaryMask::from_fn(2, 2, |_, _| true);
        let loc = BoundingBox::new(1, 1, 2, 2);
        assert_eq!(paste_min(&canvas, &crop, &on, &loc).unwrap().get(1, 1), 150);
        assert_eq!(
            paste_min(&canvas, &crop, &BinaryMask::zeros(2, 2), &loc).unwrap(),
            canvas
        );
        let dark = GrayscalePatch::filled(4, 4, 10);
        let bright = GrayscalePatch::filled(2, 2, 240);
        assert_eq!(paste_min(&dark, &bright, &on, &loc).unwrap().get(2, 2), 10);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let canvas = GrayscalePatch::filled(4, 4, 0);
        let crop = GrayscalePatch::filled(2, 3, 0);
        let mask = BinaryMask::zeros(2, 3);
        assert!(paste_min(&canvas, &crop, &mask, &BoundingBox::new(0, 0, 2, 2)).is_err());
        assert!(paste_min(&canvas, &crop, &mask, &BoundingBox::new(3, 0, 2, 3)).is_err());
    }

    proptest! {
        #[test]
        fn min_paste_bounded_by_canvas(
            canvas_px in proptest::collection::vec(any::<u8>(), 64),
            crop_px in proptest::collection::vec(any::<u8>(), 12),
            mask_bits in proptest::collection::vec(any::<bool>(), 12),
            x in 0u32..5, y in 0u32..6,
        ) {
            let canvas = GrayscalePatch::new(8, 8, canvas_px).unwrap();
            let crop = GrayscalePatch::new(4, 3, crop_px).unwrap();
            let mask = BinaryMask::from_fn(4, 3, |i, j| mask_bits[j * 4 + i]);
            let loc = BoundingBox::new(x, y, 4, 3);
            let out = paste_min(&canvas, &crop, &mask, &loc).unwrap();
            for yy in 0..8u32 {
                for xx in 0..8u32 {
                    let (o, c) = (out.get(xx as usize, yy as usize), canvas.get(xx as usize, yy as usize));
                    let inside = xx >= x && xx < x + 4 && yy >= y && yy < y + 3
                        && mask.get((xx - x) as usize, (yy - y) as usize);
                    if inside {
                        prop_assert_eq!(o, c.min(crop.get((xx - x) as usize, (yy - y) as usize)));
                    } else {
                        prop_assert_eq!(o, c);
                    }
                }
            }
        }
    }
}
