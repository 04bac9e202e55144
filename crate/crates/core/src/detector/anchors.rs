//! Anchor shapes by k-means over box sizes with `1 - IoU` as distance.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::geometry::{shape_iou, BoundingBox};
use crate::seed;

const RESTARTS: u64 = 8;
const MAX_ITERS: usize = 300;

pub type Anchor = (f64, f64);

/// Mean `1 - IoU` from each shape to its nearest anchor.
pub fn mean_anchor_distance(shapes: &[Anchor], anchors: &[Anchor]) -> f64 {
    shapes
        .iter()
        .map(|&s| {
            anchors
                .iter()
                .map(|&a| 1.0 - shape_iou(s, a))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / shapes.len() as f64
}

fn nearest(s: Anchor, anchors: &[Anchor]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, &a) in anchors.iter().enumerate() {
        let d = 1.0 - shape_iou(s, a);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn lloyd(shapes: &[Anchor], mut centers: Vec<Anchor>) -> Vec<Anchor> {
    let mut assign = vec![usize::MAX; shapes.len()];
    for _ in 0..MAX_ITERS {
        let next: Vec<usize> = shapes.iter().map(|&s| nearest(s, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
        for (k, c) in centers.iter_mut().enumerate() {
            let members: Vec<&Anchor> = shapes
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == k)
                .map(|(s, _)| s)
                .collect();
            if !members.is_empty() {
                let n = members.len() as f64;
                *c = (
                    members.iter().map(|m| m.0).sum::<f64>() / n,
                    members.iter().map(|m| m.1).sum::<f64>() / n,
                );
            }
        }
    }
    centers
}

/// `k` anchor `(w, h)` pairs sorted by area. Several seeded restarts are
/// run and the one with the lowest mean distance is kept.
pub fn compute_anchors(boxes: &[BoundingBox], k: usize, seed_value: u64) -> Result<Vec<Anchor>> {
    if k == 0 || boxes.len() < k {
        return Err(Error::NotEnoughBoxes {
            have: boxes.len(),
            need: k.max(1),
        });
    }
    let shapes: Vec<Anchor> = boxes.iter().map(|b| (b.w as f64, b.h as f64)).collect();
    let mut best: Option<(f64, Vec<Anchor>)> = None;
    for r in 0..RESTARTS {
        let mut rng = seed::rng(seed::derive(seed_value, r));
        let init: Vec<Anchor> = sample(&mut rng, shapes.len(), k)
            .into_iter()
            .map(|i| shapes[i])
            .collect();
        let centers = lloyd(&shapes, init);
        let d = mean_anchor_distance(&shapes, &centers);
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, centers));
        }
    }
    let mut anchors = best.expect("at least one restart").1;
    anchors.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)).then(a.0.total_cmp(&b.0)));
    Ok(anchors)
}
