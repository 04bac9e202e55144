//! Post-processing and scoring: non-maximum suppression and average
//! precision with all-points interpolation.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rect_iou, BoundingBox, Rect};

/// One predicted box. Coordinates stay sub-pixel; see [`Rect`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: Rect,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: Rect, confidence: f64) -> Self {
        Detection { bbox, confidence }
    }

    pub fn from_box(b: &BoundingBox, confidence: f64) -> Self {
        Detection {
            bbox: b.to_rect(),
            confidence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub objectness_threshold: f64,
    pub nms_iou: f64,
    pub match_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            objectness_threshold: 0.001,
            nms_iou: 0.5,
            match_iou: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("objectness_threshold", self.objectness_threshold),
            ("nms_iou", self.nms_iou),
            ("match_iou", self.match_iou),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} = {v} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

fn by_confidence(a: &Detection, b: &Detection) -> Ordering {
    b.confidence.partial_cmp(&a.confidence).unwrap_or(Ordering::Equal)
}

/// Greedy suppression in descending confidence: a detection is dropped iff
/// its IoU with an already kept one exceeds `iou_thresh`. Ties keep input
/// order.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(by_confidence);
    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        if kept.iter().all(|k| rect_iou(&k.bbox, &d.bbox) <= iou_thresh) {
            kept.push(d);
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub confidence: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    pub num_ground_truth: usize,
    pub num_detections: usize,
    pub true_positives: usize,
    /// One point per detection, in ranking order.
    pub curve: Vec<PrPoint>,
}

impl ApResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["confidence", "recall", "precision"])?;
        for p in &self.curve {
            w.write_record([p.confidence.to_string(), p.recall.to_string(), p.precision.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))
    }
}

/// Rank all detections by confidence, breaking ties by image then by index
/// within the image.
fn ranking(detections: &[Vec<Detection>]) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = detections
        .iter()
        .enumerate()
        .flat_map(|(i, d)| (0..d.len()).map(move |j| (i, j)))
        .collect();
    order.sort_by(|&(ia, ja), &(ib, jb)| {
        by_confidence(&detections[ia][ja], &detections[ib][jb]).then((ia, ja).cmp(&(ib, jb)))
    });
    order
}

/// Average precision at `match_iou`. Detections are visited in confidence
/// order; each is matched to its highest-IoU ground truth in the same
/// image and counts as a true positive if that IoU reaches `match_iou` and
/// the ground truth is still unmatched.
pub fn evaluate_ap(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<BoundingBox>],
    match_iou: f64,
) -> Result<ApResult> {
    if detections.len() != ground_truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} detection lists for {} images",
            detections.len(),
            ground_truth.len()
        )));
    }
    let num_gt: usize = ground_truth.iter().map(Vec::len).sum();
    if num_gt == 0 {
        return Err(Error::UndefinedAp);
    }
    let gt_rects: Vec<Vec<Rect>> = ground_truth
        .iter()
        .map(|g| g.iter().map(BoundingBox::to_rect).collect())
        .collect();
    let mut matched: Vec<Vec<bool>> = ground_truth.iter().map(|g| vec![false; g.len()]).collect();
    let order = ranking(detections);
    let mut curve = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, &(i, j)) in order.iter().enumerate() {
        let d = &detections[i][j];
        let best = gt_rects[i]
            .iter()
            .enumerate()
            .map(|(g, r)| (g, rect_iou(&d.bbox, r)))
            .fold(None, |acc: Option<(usize, f64)>, (g, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((g, v)),
            });
        if let Some((g, v)) = best {
            if v >= match_iou && !matched[i][g] {
                matched[i][g] = true;
                tp += 1;
            }
        }
        curve.push(PrPoint {
            confidence: d.confidence,
            recall: tp as f64 / num_gt as f64,
            precision: tp as f64 / (rank + 1) as f64,
        });
    }
    Ok(ApResult {
        ap: all_points_ap(&curve),
        num_ground_truth: num_gt,
        num_detections: order.len(),
        true_positives: tp,
        curve,
    })
}

/// Area under the precision envelope (precision made non-increasing in
/// recall), summed over the recall steps.
fn all_points_ap(curve: &[PrPoint]) -> f64 {
    let mut rec = Vec::with_capacity(curve.len() + 2);
    let mut pre = Vec::with_capacity(curve.len() + 2);
    rec.push(0.0);
    pre.push(0.0);
    for p in curve {
        rec.push(p.recall);
        pre.push(p.precision);
    }
    rec.push(1.0);
    pre.push(0.0);
    for i in (0..pre.len() - 1).rev() {
        pre[i] = pre[i].max(pre[i + 1]);
    }
    (1..rec.len()).map(|i| (rec[i] - rec[i - 1]) * pre[i]).sum()
}
