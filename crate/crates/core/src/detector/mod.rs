//! Single-class YOLOv3-style detector: anchors, network, training with a
//! frozen pre-trained backbone, inference and AP evaluation.

pub mod anchors;
pub mod eval;
pub mod model;
pub mod plateau;
pub mod train;

pub use crate::geometry::iou;
pub use anchors::{compute_anchors, mean_anchor_distance, Anchor};
pub use eval::{evaluate_ap, nms, ApResult, Detection, EvalConfig, PrPoint};
pub use model::{Detector, DetectorArch, Letterbox};
pub use plateau::{PlateauAction, PlateauTracker};
pub use train::{
    augment, fit_anchors, pretrain_backbone, train_detector, yolo_loss, DetAugment, DetEpoch, DetectorRun,
    DetectorTrainConfig, PretrainConfig,
};
