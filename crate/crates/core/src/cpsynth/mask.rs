//! Pseudo-mask construction: Otsu threshold followed by binary dilation.

use crate::dataset::Polarity;
use crate::error::{Error, Result};
use crate::patch::{BinaryMask, GrayscalePatch};

/// Otsu's threshold: the `t` maximising between-class variance when
/// splitting into `<= t` and `> t`. `None` when no split separates two
/// non-empty classes (constant image).
pub fn otsu_threshold(img: &GrayscalePatch) -> Option<u8> {
    let mut hist = [0u64; 256];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }
    let total = img.pixels().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best: Option<(u8, f64)> = None;
    for t in 0..255usize {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((t as u8, between));
        }
    }
    best.map(|(t, _)| t)
}

/// Grow the foreground by one 8-connected step per iteration (3×3 square
/// structuring element), clipped at the borders.
pub fn dilate(mask: &BinaryMask, iterations: usize) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut cur = mask.clone();
    for _ in 0..iterations {
        cur = BinaryMask::from_fn(w, h, |x, y| {
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
            (y0..=y1).any(|yy| (x0..=x1).any(|xx| cur.get(xx, yy)))
        });
    }
    cur
}

/// Foreground of a defect crop before dilation. With [`Polarity::Bright`]
/// the foreground is every pixel above the Otsu threshold.
pub fn threshold_mask(crop: &GrayscalePatch, polarity: Polarity) -> Result<BinaryMask> {
    let t = otsu_threshold(crop).ok_or(Error::EmptyDefectMask)?;
    let m = BinaryMask::from_fn(crop.width(), crop.height(), |x, y| match polarity {
        Polarity::Bright => crop.get(x, y) > t,
        Polarity::Dark => crop.get(x, y) <= t,
    });
    if m.count_ones() == 0 {
        return Err(Error::EmptyDefectMask);
    }
    Ok(m)
}

/// Binary pseudo-mask of a defect crop: thresholded, then dilated.
pub fn make_pseudo_mask(crop: &GrayscalePatch, dilation_iterations: usize, polarity: Polarity) -> Result<BinaryMask> {
    Ok(dilate(&threshold_mask(crop, polarity)?, dilation_iterations))
}
