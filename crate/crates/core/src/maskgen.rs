//! Position masks: binary images whose white rectangles mark where defects
//! are (paired masks, built from annotations) or should be generated
//! (sampled masks).

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::manifest::{read_manifest, write_manifest, ManifestRow};
use crate::dataset::AnnotatedSample;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::par::{self, Parallelism};
use crate::patch::BinaryMask;
use crate::seed;

/// Proposals per box before a sampled mask gives up on that box count.
const PROPOSALS_PER_BOX: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionMask {
    pub mask: BinaryMask,
    pub boxes: Vec<BoundingBox>,
}

impl PositionMask {
    pub fn from_boxes(width: usize, height: usize, boxes: Vec<BoundingBox>) -> Self {
        let mut mask = BinaryMask::zeros(width, height);
        for b in &boxes {
            mask.fill_box(b);
        }
        PositionMask { mask, boxes }
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn flip_horizontal(&self) -> PositionMask {
        let w = self.width() as u32;
        PositionMask {
            mask: self.mask.flip_horizontal(),
            boxes: self.boxes.iter().map(|b| b.flipped_horizontal(w)).collect(),
        }
    }
}

/// Paired mask: ones exactly inside the sample's boxes.
pub fn mask_from_annotations(sample: &AnnotatedSample) -> PositionMask {
    PositionMask::from_boxes(sample.image.width(), sample.image.height(), sample.boxes.clone())
}

/// Width/height ratio of one training annotation, with its width kept to
/// fix the absolute scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspectSample {
    pub ratio: f64,
    pub width: u32,
}

pub fn extract_aspect_ratios(samples: &[AnnotatedSample]) -> Result<Vec<AspectSample>> {
    let pool: Vec<AspectSample> = samples
        .iter()
        .flat_map(|s| s.boxes.iter())
        .map(|b| AspectSample {
            ratio: b.w as f64 / b.h as f64,
            width: b.w,
        })
        .collect();
    if pool.is_empty() {
        return Err(Error::EmptyAnnotations);
    }
    Ok(pool)
}

fn try_place(
    pool: &[AspectSample],
    width: usize,
    height: usize,
    n: usize,
    rng: &mut seed::Rng,
) -> Option<Vec<BoundingBox>> {
    let mut boxes: Vec<BoundingBox> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..PROPOSALS_PER_BOX {
            let a = pool[rng.random_range(0..pool.len())];
            let w = a.width;
            let h = ((w as f64 / a.ratio).round() as u32).max(1);
            if w as usize > width || h as usize > height || w == 0 {
                continue;
            }
            let x = rng.random_range(0..=(width as u32 - w));
            let y = rng.random_range(0..=(height as u32 - h));
            let b = BoundingBox::new(x, y, w, h);
            if boxes.iter().all(|o| !o.overlaps(&b)) {
                boxes.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(boxes)
}

/// Sample a mask with a box count uniform in `count_range` (inclusive).
/// Each box reuses a `(ratio, width)` pair from `pool` and lands uniformly
/// among in-bounds positions that do not overlap earlier boxes. If the
/// drawn count cannot be placed, fewer boxes are tried, down to one.
pub fn sample_position_mask(
    pool: &[AspectSample],
    width: usize,
    height: usize,
    count_range: (usize, usize),
    seed_value: u64,
) -> Result<PositionMask> {
    if pool.is_empty() {
        return Err(Error::EmptyAnnotations);
    }
    if count_range.0 == 0 || count_range.0 > count_range.1 {
        return Err(Error::Config(format!("invalid box count range {count_range:?}")));
    }
    let mut rng = seed::rng(seed_value);
    let n = rng.random_range(count_range.0..=count_range.1);
    for k in (1..=n).rev() {
        if let Some(boxes) = try_place(pool, width, height, k, &mut rng) {
            return Ok(PositionMask::from_boxes(width, height, boxes));
        }
    }
    Err(Error::MaskPlacement(format!(
        "no pool shape fits a {width}x{height} mask"
    )))
}

/// `count` masks; mask `i` is seeded from `(seed, i)`.
pub fn sample_position_masks(
    pool: &[AspectSample],
    width: usize,
    height: usize,
    count_range: (usize, usize),
    count: usize,
    seed_value: u64,
    mode: Parallelism,
) -> Result<Vec<PositionMask>> {
    par::try_map_indexed(count, mode, |i| {
        sample_position_mask(pool, width, height, count_range, seed::derive(seed_value, i as u64))
    })
}

/// Write masks as 1-bit PNGs under `dir/masks/` plus `dir/masks.jsonl`.
pub fn save_masks(dir: &Path, masks: &[PositionMask]) -> Result<()> {
    let sub = dir.join("masks");
    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    let rows = par::try_map_indexed(masks.len(), Parallelism::Parallel, |i| {
        let rel = format!("masks/{i:06}.png");
        masks[i].mask.save_png(&dir.join(&rel))?;
        Ok(ManifestRow {
            image: rel,
            boxes: masks[i]
                .boxes
                .iter()
                .enumerate()
                .map(|(k, b)| (b.x, b.y, b.w, b.h, format!("m{i}-{k}")))
                .collect(),
            source: None,
        })
    })?;
    write_manifest(&dir.join("masks.jsonl"), &rows)
}

/// Load masks written by [`save_masks`], checking pixels against boxes.
pub fn load_masks(dir: &Path) -> Result<Vec<PositionMask>> {
    let rows = read_manifest(&dir.join("masks.jsonl"))?;
    par::try_map_slice(&rows, Parallelism::Parallel, |row| {
        let px = BinaryMask::load_png(&dir.join(&row.image))?;
        let boxes = row
            .boxes
            .iter()
            .map(|(x, y, w, h, _)| BoundingBox::new(*x, *y, *w, *h))
            .collect();
        let m = PositionMask::from_boxes(px.width(), px.height(), boxes);
        if m.mask != px {
            return Err(Error::Validation {
                sample: row.image.clone(),
                message: "mask pixels disagree with listed boxes".into(),
            });
        }
        Ok(m)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SourceTag;
    use crate::patch::GrayscalePatch;
    use proptest::prelude::*;

    fn sample_with(boxes: &[BoundingBox]) -> AnnotatedSample {
        let mut s = AnnotatedSample::new(GrayscalePatch::filled(64, 48, 0), SourceTag::Real);
        for (i, b) in boxes.iter().enumerate() {
            s.push(*b, format!("{i}"));
        }
        s
    }

    /// Rasterize by testing every pixel against every box.
    fn rasterize(w: usize, h: usize, boxes: &[BoundingBox]) -> usize {
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x as u32, y as u32)))
            .filter(|&(x, y)| {
                boxes
                    .iter()
                    .any(|b| x >= b.x && x < b.right() && y >= b.y && y < b.bottom())
            })
            .count()
    }

    #[test]
    fn paired_masks() {
        assert_eq!(mask_from_annotations(&sample_with(&[])).mask.count_ones(), 0);
        let one = mask_from_annotations(&sample_with(&[BoundingBox::new(10, 10, 20, 5)]));
        assert_eq!(one.mask.count_ones(), 100);
        let pair = [BoundingBox::new(5, 5, 20, 10), BoundingBox::new(15, 8, 12, 12)];
        let m = mask_from_annotations(&sample_with(&pair));
        assert_eq!(m.mask.count_ones(), rasterize(64, 48, &pair));
        assert_eq!(m.boxes, pair);
    }

    #[test]
    fn aspect_ratios() {
        let r = extract_aspect_ratios(&[sample_with(&[BoundingBox::new(0, 0, 40, 20)])]).unwrap();
        assert_eq!(r, vec![AspectSample { ratio: 2.0, width: 40 }]);
        let r = extract_aspect_ratios(&[sample_with(&[
            BoundingBox::new(0, 0, 10, 10),
            BoundingBox::new(0, 0, 30, 10),
        ])])
        .unwrap();
        assert_eq!(r.iter().map(|a| a.ratio).collect::<Vec<_>>(), vec![1.0, 3.0]);
        assert!(matches!(
            extract_aspect_ratios(&[sample_with(&[])]),
            Err(Error::EmptyAnnotations)
        ));
    }

    #[test]
    fn forced_shape() {
        let pool = [AspectSample { ratio: 2.0, width: 40 }];
        let m = sample_position_mask(&pool, 256, 256, (1, 1), 5).unwrap();
        assert_eq!(m.boxes.len(), 1);
        let b = m.boxes[0];
        assert_eq!((b.w, b.h), (40, 20));
        assert!(b.fits(256, 256));
        assert_eq!(m, sample_position_mask(&pool, 256, 256, (1, 1), 5).unwrap());
    }

    #[test]
    fn count_frequencies_are_uniform() {
        let pool = [
            AspectSample { ratio: 2.0, width: 12 },
            AspectSample { ratio: 0.5, width: 6 },
        ];
        let masks = sample_position_masks(&pool, 64, 64, (1, 4), 1000, 42, Parallelism::Parallel).unwrap();
        let mut hist = [0usize; 5];
        for m in &masks {
            hist[m.boxes.len()] += 1;
        }
        assert_eq!(hist[0], 0);
        for &c in &hist[1..] {
            let f = c as f64 / 1000.0;
            assert!((f - 0.25).abs() <= 0.05, "{hist:?}");
        }
    }

    #[test]
    fn crowded_mask_falls_back_to_fewer_boxes() {
        let pool = [AspectSample { ratio: 1.0, width: 10 }];
        let m = sample_position_mask(&pool, 16, 16, (4, 4), 1).unwrap();
        assert_eq!(m.boxes.len(), 1);
        let too_big = [AspectSample { ratio: 1.0, width: 40 }];
        assert!(matches!(
            sample_position_mask(&too_big, 16, 16, (1, 2), 1),
            Err(Error::MaskPlacement(_))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pool = [AspectSample { ratio: 1.5, width: 9 }];
        let masks = sample_position_masks(&pool, 40, 30, (1, 3), 5, 0, Parallelism::Sequential).unwrap();
        save_masks(dir.path(), &masks).unwrap();
        assert_eq!(load_masks(dir.path()).unwrap(), masks);
    }

    #[test]
    fn flipped_mask_has_mirrored_boxes() {
        let m = PositionMask::from_boxes(20, 10, vec![BoundingBox::new(1, 2, 4, 3)]);
        let f = m.flip_horizontal();
        assert_eq!(f.boxes, vec![BoundingBox::new(15, 2, 4, 3)]);
        assert_eq!(f.mask, PositionMask::from_boxes(20, 10, f.boxes.clone()).mask);
    }

    proptest! {
        #[test]
        fn sampled_masks_valid(seed_value in any::<u64>()) {
            let pool = [
                AspectSample { ratio: 3.0, width: 15 },
                AspectSample { ratio: 1.0, width: 7 },
                AspectSample { ratio: 0.4, width: 4 },
            ];
            let m = sample_position_mask(&pool, 48, 40, (1, 4), seed_value).unwrap();
            prop_assert!((1..=4).contains(&m.boxes.len()));
            for (i, a) in m.boxes.iter().enumerate() {
                prop_assert!(a.fits(48, 40));
                for b in &m.boxes[i + 1..] {
                    prop_assert!(!a.overlaps(b));
                }
            }
            let area: u64 = m.boxes.iter().map(|b| b.area()).sum();
            prop_assert_eq!(m.mask.count_ones() as u64, area);
        }
    }
}
