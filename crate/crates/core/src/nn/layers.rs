use candle_core::Tensor;

use super::kernels::{self, NormStats};
use super::{Init, Param, ParamStore};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        (cin, cout, k): (usize, usize, usize),
        stride: usize,
        padding: usize,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let weight = store.weight(format!("{name}.weight"), &[cout, cin, k, k], init)?;
        let bias = if bias {
            Some(store.weight(format!("{name}.bias"), &[cout], Init::Const(0.0))?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.var().dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.var().dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = kernels::conv2d(x, &self.weight.t(), self.stride, self.padding)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.t().reshape((1, self.out_channels(), 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Per-sample, per-channel normalization with a learned affine map.
#[derive(Debug, Clone)]
pub struct InstanceNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

impl InstanceNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(InstanceNorm2d {
            gamma: store.weight(format!("{name}.gamma"), &[channels], Init::Const(1.0))?,
            beta: store.weight(format!("{name}.beta"), &[channels], Init::Const(0.0))?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        kernels::normalize(x, &self.gamma.t(), &self.beta.t(), NormStats::Instance, self.eps)
    }
}

/// Batch normalization. Running statistics are updated in training mode
/// unless the running-mean buffer is frozen, in which case the layer
/// always normalizes with its stored statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: store.weight(format!("{name}.gamma"), &[channels], Init::Const(1.0))?,
            beta: store.weight(format!("{name}.beta"), &[channels], Init::Const(0.0))?,
            running_mean: store.buffer(format!("{name}.running_mean"), &[channels], Init::Const(0.0))?,
            running_var: store.buffer(format!("{name}.running_var"), &[channels], Init::Const(1.0))?,
            momentum: 0.1,
            eps: 1e-3,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let stats = if train && !self.running_mean.is_frozen() {
            let (b, _, h, w) = x.dims4()?;
            let n = (b * h * w) as f64;
            let (mean, var) = kernels::channel_stats(x)?;
            let m = self.momentum;
            let dev = x.device();
            let mean_t = Tensor::new(mean.as_slice(), dev)?.to_dtype(x.dtype())?;
            let var_t = (Tensor::new(var.as_slice(), dev)? * (n / (n - 1.0).max(1.0)))?.to_dtype(x.dtype())?;
            self.running_mean
                .set(&((self.running_mean.t() * (1.0 - m))? + (mean_t * m)?)?)?;
            self.running_var
                .set(&((self.running_var.t() * (1.0 - m))? + (var_t * m)?)?)?;
            NormStats::Batch
        } else {
            let read = |p: &Param| -> Result<std::sync::Arc<[f64]>> {
                Ok(p.t().to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?.into())
            };
            NormStats::Fixed {
                mean: read(&self.running_mean)?,
                var: read(&self.running_var)?,
            }
        };
        kernels::normalize(x, &self.gamma.t(), &self.beta.t(), stats, self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn input() -> Tensor {
        let v: Vec<f64> = (0..2 * 3 * 4 * 5).map(|i| ((i * 37) % 23) as f64 / 7.0).collect();
        Tensor::from_vec(v, (2, 3, 4, 5), &Device::Cpu).unwrap()
    }

    #[test]
    fn conv_shapes() {
        let mut s = ParamStore::new(DType::F64, 0);
        let c = Conv2d::new(&mut s, "c", (3, 8, 4), 2, 1, true, Init::Normal(0.02)).unwrap();
        assert_eq!(c.forward(&input()).unwrap().dims(), &[2, 8, 2, 2]);
        assert_eq!(s.count().total, 8 * 3 * 16 + 8);
    }

    #[test]
    fn instance_norm_standardizes() {
        let mut s = ParamStore::new(DType::F64, 0);
        let n = InstanceNorm2d::new(&mut s, "n", 3).unwrap();
        let y = n.forward(&input()).unwrap();
        let v = y.reshape((6, 20)).unwrap().to_vec2::<f64>().unwrap();
        for row in v {
            let mean = row.iter().sum::<f64>() / 20.0;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 20.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn batch_norm_tracks_statistics() {
        let mut s = ParamStore::new(DType::F64, 0);
        let n = BatchNorm2d::new(&mut s, "bn", 3).unwrap();
        let x = input();
        n.forward(&x, true).unwrap();
        let rm = n.running_mean.t().to_vec1::<f64>().unwrap();
        let xt = x
            .transpose(0, 1)
            .unwrap()
            .reshape((3, 40))
            .unwrap()
            .to_vec2::<f64>()
            .unwrap();
        for (c, row) in xt.iter().enumerate() {
            let mean = row.iter().sum::<f64>() / 40.0;
            assert!((rm[c] - 0.1 * mean).abs() < 1e-12);
        }
        s.set_frozen(true, |name, _| name.ends_with("running_mean"));
        let before = s.checksum().unwrap();
        n.forward(&x, true).unwrap();
        assert_eq!(before, s.checksum().unwrap());
    }

    #[test]
    fn leaky_relu_values() {
        let x = Tensor::new(&[-2.0f64, 0.0, 3.0], &Device::Cpu).unwrap();
        assert_eq!(
            kernels::leaky_relu(&x, 0.1).unwrap().to_vec1::<f64>().unwrap(),
            vec![-0.2, 0.0, 3.0]
        );
    }
}
