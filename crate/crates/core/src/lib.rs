//! Defect detection on ultrasonic B-scan patches with synthetic training
//! data: copy/paste synthesis, position-mask sampling, a mask-conditioned
//! image-to-image GAN, and a YOLO-style detector.

pub mod cpsynth;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod gan;
pub mod geometry;
pub mod maskgen;
pub mod nn;
pub mod par;
pub mod patch;
pub mod seed;

pub use error::{Error, Result};
pub use geometry::{iou, BoundingBox};
pub use par::Parallelism;
pub use patch::{BinaryMask, GrayscalePatch};
