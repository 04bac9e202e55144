//! Scalar losses, all reduced by the mean over elements.

use candle_core::Tensor;

use crate::error::Result;

/// `mean((x - target)^2)`.
pub fn mse_to(x: &Tensor, target: f64) -> Result<Tensor> {
    Ok(x.affine(1.0, -target)?.sqr()?.mean_all()?)
}

/// `mean(|a - b|)`.
pub fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.abs()?.mean_all()?)
}

/// Elementwise binary cross-entropy on logits, in the overflow-safe form
/// `max(x, 0) - x t + ln(1 + e^{-|x|})`.
pub fn bce_with_logits(x: &Tensor, t: &Tensor) -> Result<Tensor> {
    let soft = x.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    Ok(((x.relu()? - (x * t)?)? + soft)?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn values() {
        let d = Device::Cpu;
        let a = Tensor::new(&[0.0f64, 1.0, 2.0], &d).unwrap();
        let b = Tensor::new(&[1.0f64, 1.0, 0.0], &d).unwrap();
        assert!((scalar(&mse_to(&a, 1.0).unwrap()).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((scalar(&l1(&a, &b).unwrap()).unwrap() - 1.0).abs() < 1e-15);
        let x = Tensor::new(&[-30.0f64, 0.0, 2.5], &d).unwrap();
        let t = Tensor::new(&[1.0f64, 0.0, 1.0], &d).unwrap();
        let got = bce_with_logits(&x, &t).unwrap().to_vec1::<f64>().unwrap();
        for ((g, x), t) in got.iter().zip([-30.0f64, 0.0, 2.5]).zip([1.0, 0.0, 1.0]) {
            let p = 1.0 / (1.0 + (-x).exp());
            let expect = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
            assert!((g - expect).abs() < 1e-9, "{g} {expect}");
        }
    }
}
