//! Generator and discriminator objectives.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::nets::DiscOutput;
use crate::error::{Error, Result};
use crate::nn::loss::{l1, mse_to, scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanLossWeights {
    pub lambda_adv: f64,
    pub lambda_l1: f64,
    pub lambda_fm: f64,
    pub lambda_det: f64,
}

impl Default for GanLossWeights {
    fn default() -> Self {
        GanLossWeights {
            lambda_adv: 1.0,
            lambda_l1: 100.0,
            lambda_fm: 10.0,
            lambda_det: 1.0,
        }
    }
}

impl GanLossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_adv, self.lambda_l1, self.lambda_fm, self.lambda_det];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative: {all:?}"
            )));
        }
        Ok(())
    }
}

/// Weighted generator terms; `total()` is their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv: f64,
    pub l1: f64,
    pub fm: f64,
    pub det: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        ((self.adv + self.l1) + self.fm) + self.det
    }

    /// First non-finite term, by name.
    pub fn non_finite(&self) -> Option<&'static str> {
        [("adv", self.adv), ("l1", self.l1), ("fm", self.fm), ("det", self.det)]
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

#[derive(Debug, Clone)]
pub struct GenLoss {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
    /// Whether the detector term is part of the graph.
    pub uses_detector: bool,
}

fn add(acc: Option<Tensor>, t: Tensor) -> Result<Option<Tensor>> {
    Ok(Some(match acc {
        None => t,
        Some(a) => (a + t)?,
    }))
}

fn sum(ts: impl IntoIterator<Item = Result<Tensor>>) -> Result<Option<Tensor>> {
    let mut acc = None;
    for t in ts {
        acc = add(acc, t?)?;
    }
    Ok(acc)
}

/// Weighted sum of the adversarial (least squares towards 1, summed over
/// scales), pixel L1, feature-matching L1 (summed over scales and layers,
/// real features detached) and detector-output L1 terms. Terms with zero
/// weight are left out of the graph; the detector term additionally needs
/// both detector outputs.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss(
    fake: &DiscOutput,
    real: &DiscOutput,
    fake_img: &Tensor,
    real_img: &Tensor,
    det_fake: Option<&[Tensor]>,
    det_real: Option<&[Tensor]>,
    w: &GanLossWeights,
) -> Result<GenLoss> {
    let mut total: Option<Tensor> = None;
    let mut parts = LossBreakdown::default();
    let mut term = |weight: f64, t: Option<Tensor>, slot: &mut f64| -> Result<()> {
        if let Some(t) = t {
            let t = (t * weight)?;
            *slot = scalar(&t)?;
            total = add(total.take(), t)?;
        }
        Ok(())
    };
    if w.lambda_adv > 0.0 {
        term(
            w.lambda_adv,
            sum(fake.scores.iter().map(|s| mse_to(s, 1.0)))?,
            &mut parts.adv,
        )?;
    }
    if w.lambda_l1 > 0.0 {
        term(w.lambda_l1, Some(l1(fake_img, real_img)?), &mut parts.l1)?;
    }
    if w.lambda_fm > 0.0 {
        if fake.features.len() != real.features.len() {
            return Err(Error::ShapeMismatch(
                "feature scales differ between real and fake".into(),
            ));
        }
        let pairs = fake
            .features
            .iter()
            .zip(&real.features)
            .flat_map(|(f, r)| f.iter().zip(r))
            .map(|(f, r)| l1(f, &r.detach()));
        term(w.lambda_fm, sum(pairs)?, &mut parts.fm)?;
    }
    let uses_detector = w.lambda_det > 0.0 && det_fake.is_some() && det_real.is_some();
    if uses_detector {
        let (f, r) = (det_fake.unwrap_or_default(), det_real.unwrap_or_default());
        if f.len() != r.len() {
            return Err(Error::ShapeMismatch("detector outputs differ in scale count".into()));
        }
        let pairs = f.iter().zip(r).map(|(a, b)| l1(a, &b.detach()));
        term(w.lambda_det, sum(pairs)?, &mut parts.det)?;
    }
    let total = match total {
        Some(t) => t,
        None => Tensor::zeros((), fake_img.dtype(), fake_img.device())?,
    };
    Ok(GenLoss {
        total,
        breakdown: parts,
        uses_detector,
    })
}

/// `0.5 · (MSE(real, 1) + MSE(fake, 0))`, summed over scales.
pub fn discriminator_loss(real_scores: &[Tensor], fake_scores: &[Tensor]) -> Result<Tensor> {
    if real_scores.len() != fake_scores.len() || real_scores.is_empty() {
        return Err(Error::ShapeMismatch("real and fake score lists differ".into()));
    }
    let per_scale = real_scores
        .iter()
        .zip(fake_scores)
        .map(|(r, f)| Ok(((mse_to(r, 1.0)? + mse_to(f, 0.0)?)? * 0.5)?));
    Ok(sum(per_scale)?.expect("non-empty"))
}
