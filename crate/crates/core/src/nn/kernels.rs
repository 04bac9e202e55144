//! Fused CPU kernels with hand-written gradients for the layers that
//! dominate training time: convolution, normalization and leaky ReLU.
//!
//! Each op works on contiguous `f32` or `f64` storage. Backward passes are
//! themselves custom ops; second derivatives are not supported.

use std::sync::Arc;

use candle_core::{CpuStorage, CustomOp1, CustomOp2, CustomOp3, Layout, Shape, Tensor};
use gemm::Parallelism;
use num_traits::Float;

use crate::error::Result;

trait Elem: Float + std::ops::AddAssign + 'static {}
impl Elem for f32 {}
impl Elem for f64 {}

type CResult<T> = candle_core::Result<T>;

fn data<'a, T>(v: &'a [T], layout: &Layout) -> CResult<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&v[a..b]),
        None => Err(candle_core::Error::Msg("fused kernel needs a contiguous input".into())),
    }
}

fn unsupported(op: &str) -> candle_core::Error {
    candle_core::Error::Msg(format!("{op} supports f32 and f64 only"))
}

/// Row-major `dst[m,n] (+)= lhs[m,k] · rhs[k,n]` with explicit element
/// strides `(row, col)` for each operand.
#[allow(clippy::too_many_arguments)]
fn matmul<T: Elem>(
    (m, n, k): (usize, usize, usize),
    dst: &mut [T],
    accumulate: bool,
    lhs: &[T],
    (lhs_rs, lhs_cs): (usize, usize),
    rhs: &[T],
    (rhs_rs, rhs_cs): (usize, usize),
) {
    debug_assert!(dst.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || lhs.len() > (m - 1) * lhs_rs + (k - 1) * lhs_cs);
    debug_assert!(k == 0 || n == 0 || rhs.len() > (k - 1) * rhs_rs + (n - 1) * rhs_cs);
    // SAFETY: the asserted extents keep every access inside the slices.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            1,
            n as isize,
            accumulate,
            lhs.as_ptr(),
            lhs_cs as isize,
            lhs_rs as isize,
            rhs.as_ptr(),
            rhs_cs as isize,
            rhs_rs as isize,
            T::one(),
            T::one(),
            false,
            false,
            false,
            Parallelism::None,
        )
    }
}

// ---------------------------------------------------------------- convolution

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(x: &Layout, w: &Layout, stride: usize, pad: usize) -> CResult<Self> {
        let (b, c, h, wd) = x.shape().dims4()?;
        let (o, ci, k, k2) = w.shape().dims4()?;
        if ci != c || k != k2 || h + 2 * pad < k || wd + 2 * pad < k || stride == 0 {
            return Err(candle_core::Error::Msg(format!(
                "conv2d: input {:?} incompatible with kernel {:?} (stride {stride}, pad {pad})",
                x.shape(),
                w.shape()
            )));
        }
        Ok(Geometry {
            b,
            c,
            h,
            w: wd,
            o,
            k,
            stride,
            pad,
        })
    }

    fn out(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn plane(&self) -> usize {
        let (ho, wo) = self.out();
        ho * wo
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn image(&self) -> usize {
        self.c * self.h * self.w
    }

    /// A 1×1 kernel at stride 1 without padding needs no patch matrix.
    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output positions `[lo, hi)` along one axis whose source for kernel
    /// offset `kk` lies inside an input of length `len`.
    fn span(&self, kk: usize, len: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if kk >= self.pad { 0 } else { (self.pad - kk).div_ceil(s) };
        let hi = if len + self.pad > kk {
            ((len + self.pad - kk - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Call `f(dst, src, n)` for each in-bounds run of one image's patch
    /// matrix. Runs are contiguous in the matrix and strided by `stride`
    /// in the image.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ho, wo) = self.out();
        let p = ho * wo;
        for ci in 0..self.c {
            for ky in 0..self.k {
                let (ylo, yhi) = self.span(ky, self.h, ho);
                for kx in 0..self.k {
                    let (xlo, xhi) = self.span(kx, self.w, wo);
                    if xhi == xlo {
                        continue;
                    }
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = ci * self.h * self.w;
                    for oy in ylo..yhi {
                        let iy = oy * self.stride + ky - self.pad;
                        let ix = xlo * self.stride + kx - self.pad;
                        f(row * p + oy * wo + xlo, src + iy * self.w + ix, xhi - xlo);
                    }
                }
            }
        }
    }

    fn im2col<T: Elem>(&self, x: &[T], cols: &mut [T]) {
        cols.fill(T::zero());
        let s = self.stride;
        self.for_each_run(|d, src, n| {
            let dst = &mut cols[d..d + n];
            if s == 1 {
                dst.copy_from_slice(&x[src..src + n]);
            } else {
                for (o, v) in dst.iter_mut().zip(x[src..].iter().step_by(s)) {
                    *o = *v;
                }
            }
        });
    }

    fn col2im_add<T: Elem>(&self, cols: &[T], x: &mut [T]) {
        let s = self.stride;
        self.for_each_run(|d, src, n| {
            let from = &cols[d..d + n];
            if s == 1 {
                for (o, v) in x[src..src + n].iter_mut().zip(from) {
                    *o += *v;
                }
            } else {
                for (o, v) in x[src..].iter_mut().step_by(s).zip(from) {
                    *o += *v;
                }
            }
        });
    }

    fn forward<T: Elem>(&self, x: &[T], w: &[T]) -> Vec<T> {
        let (r, p, o) = (self.rows(), self.plane(), self.o);
        let mut out = vec![T::zero(); self.b * o * p];
        let mut cols = if self.pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); r * p]
        };
        for (b, dst) in out.chunks_mut(o * p).enumerate() {
            let img = &x[b * self.image()..(b + 1) * self.image()];
            let rhs = if self.pointwise() {
                img
            } else {
                self.im2col(img, &mut cols);
                &cols
            };
            matmul((o, p, r), dst, false, w, (r, 1), rhs, (p, 1));
        }
        out
    }

    fn grad_input<T: Elem>(&self, grad: &[T], w: &[T]) -> Vec<T> {
        let (r, p, o) = (self.rows(), self.plane(), self.o);
        let mut dx = vec![T::zero(); self.b * self.image()];
        let mut cols = if self.pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); r * p]
        };
        for (b, dst) in dx.chunks_mut(self.image()).enumerate() {
            let g = &grad[b * o * p..(b + 1) * o * p];
            if self.pointwise() {
                matmul((r, p, o), dst, false, w, (1, r), g, (p, 1));
            } else {
                matmul((r, p, o), &mut cols, false, w, (1, r), g, (p, 1));
                self.col2im_add(&cols, dst);
            }
        }
        dx
    }

    fn grad_weight<T: Elem>(&self, x: &[T], grad: &[T]) -> Vec<T> {
        let (r, p, o) = (self.rows(), self.plane(), self.o);
        let mut dw = vec![T::zero(); o * r];
        let mut cols = if self.pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); r * p]
        };
        for b in 0..self.b {
            let img = &x[b * self.image()..(b + 1) * self.image()];
            let rhs = if self.pointwise() {
                img
            } else {
                self.im2col(img, &mut cols);
                &cols
            };
            let g = &grad[b * o * p..(b + 1) * o * p];
            matmul((o, r, p), &mut dw, b > 0, g, (p, 1), rhs, (1, p));
        }
        dw
    }
}

struct Conv {
    stride: usize,
    pad: usize,
}

struct ConvGradInput(Geometry);

struct ConvGradWeight(Geometry);

impl CustomOp2 for Conv {
    fn name(&self) -> &'static str {
        "fused-conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> CResult<(CpuStorage, Shape)> {
        let g = Geometry::new(l1, l2, self.stride, self.pad)?;
        let (ho, wo) = g.out();
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(w)) => CpuStorage::F32(g.forward(data(x, l1)?, data(w, l2)?)),
            (CpuStorage::F64(x), CpuStorage::F64(w)) => CpuStorage::F64(g.forward(data(x, l1)?, data(w, l2)?)),
            _ => return Err(unsupported("conv2d")),
        };
        Ok((out, Shape::from((g.b, g.o, ho, wo))))
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _res: &Tensor, grad: &Tensor) -> CResult<(Option<Tensor>, Option<Tensor>)> {
        let g = Geometry::new(x.layout(), w.layout(), self.stride, self.pad)?;
        let grad = grad.contiguous()?;
        let dx = grad.apply_op2_no_bwd(w, &ConvGradInput(g))?;
        let dw = x.apply_op2_no_bwd(&grad, &ConvGradWeight(g))?;
        Ok((Some(dx), Some(dw)))
    }
}

impl CustomOp2 for ConvGradInput {
    fn name(&self) -> &'static str {
        "fused-conv2d-grad-input"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> CResult<(CpuStorage, Shape)> {
        let g = &self.0;
        let out = match (s1, s2) {
            (CpuStorage::F32(d), CpuStorage::F32(w)) => CpuStorage::F32(g.grad_input(data(d, l1)?, data(w, l2)?)),
            (CpuStorage::F64(d), CpuStorage::F64(w)) => CpuStorage::F64(g.grad_input(data(d, l1)?, data(w, l2)?)),
            _ => return Err(unsupported("conv2d")),
        };
        Ok((out, Shape::from((g.b, g.c, g.h, g.w))))
    }
}

impl CustomOp2 for ConvGradWeight {
    fn name(&self) -> &'static str {
        "fused-conv2d-grad-weight"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> CResult<(CpuStorage, Shape)> {
        let g = &self.0;
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(d)) => CpuStorage::F32(g.grad_weight(data(x, l1)?, data(d, l2)?)),
            (CpuStorage::F64(x), CpuStorage::F64(d)) => CpuStorage::F64(g.grad_weight(data(x, l1)?, data(d, l2)?)),
            _ => return Err(unsupported("conv2d")),
        };
        Ok((out, Shape::from((g.o, g.c, g.k, g.k))))
    }
}

/// Cross-correlation of `x: [B, C, H, W]` with `weight: [O, C, k, k]`.
pub fn conv2d(x: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op2(&weight.contiguous()?, Conv { stride, pad })?)
}

// -------------------------------------------------------------- normalization

/// Where normalization statistics come from.
#[derive(Debug, Clone)]
pub enum NormStats {
    /// Per channel over batch and space.
    Batch,
    /// Per sample and channel over space.
    Instance,
    /// Given per-channel mean and variance.
    Fixed { mean: Arc<[f64]>, var: Arc<[f64]> },
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    b: usize,
    c: usize,
    hw: usize,
}

impl Dims {
    fn of(layout: &Layout) -> CResult<Dims> {
        let (b, c, h, w) = layout.shape().dims4()?;
        Ok(Dims { b, c, hw: h * w })
    }
}

impl NormStats {
    fn groups(&self, d: Dims) -> usize {
        match self {
            NormStats::Instance => d.b * d.c,
            _ => d.c,
        }
    }

    fn group(&self, d: Dims, b: usize, c: usize) -> usize {
        match self {
            NormStats::Instance => b * d.c + c,
            _ => c,
        }
    }

    fn uses_batch(&self) -> bool {
        !matches!(self, NormStats::Fixed { .. })
    }

    /// Per-group mean and biased variance.
    fn compute<T: Elem>(&self, x: &[T], d: Dims) -> (Vec<f64>, Vec<f64>) {
        if let NormStats::Fixed { mean, var } = self {
            return (mean.to_vec(), var.to_vec());
        }
        let n = self.groups(d);
        let (mut s1, mut s2, mut cnt) = (vec![0.0; n], vec![0.0; n], vec![0usize; n]);
        for (i, plane) in x.chunks(d.hw).enumerate() {
            let g = self.group(d, i / d.c, i % d.c);
            let mut a = 0.0;
            for v in plane {
                a += v.to_f64().unwrap_or(0.0);
            }
            s1[g] += a;
            cnt[g] += plane.len();
        }
        let mean: Vec<f64> = s1.iter().zip(&cnt).map(|(s, &c)| s / c.max(1) as f64).collect();
        for (i, plane) in x.chunks(d.hw).enumerate() {
            let g = self.group(d, i / d.c, i % d.c);
            let mut a = 0.0;
            for v in plane {
                let e = v.to_f64().unwrap_or(0.0) - mean[g];
                a += e * e;
            }
            s2[g] += a;
        }
        let var = s2.iter().zip(&cnt).map(|(s, &c)| s / c.max(1) as f64).collect();
        (mean, var)
    }
}

struct Norm {
    stats: NormStats,
    eps: f64,
}

struct NormGrad {
    stats: NormStats,
    eps: f64,
}

fn cast<T: Elem>(v: f64) -> T {
    T::from(v).unwrap_or_else(T::nan)
}

impl Norm {
    fn forward<T: Elem>(&self, x: &[T], gamma: &[T], beta: &[T], d: Dims) -> Vec<T> {
        let (mean, var) = self.stats.compute(x, d);
        let mut out = Vec::with_capacity(x.len());
        for (i, plane) in x.chunks(d.hw).enumerate() {
            let (b, c) = (i / d.c, i % d.c);
            let g = self.stats.group(d, b, c);
            let inv = 1.0 / (var[g] + self.eps).sqrt();
            let scale = gamma[c].to_f64().unwrap_or(0.0) * inv;
            let shift = beta[c].to_f64().unwrap_or(0.0) - mean[g] * scale;
            let (scale, shift) = (cast::<T>(scale), cast::<T>(shift));
            out.extend(plane.iter().map(|&v| v * scale + shift));
        }
        out
    }
}

impl NormGrad {
    /// Packed `[dx (all elements), dgamma (C), dbeta (C)]`.
    fn backward<T: Elem>(&self, x: &[T], gamma: &[T], grad: &[T], d: Dims) -> Vec<T> {
        let (mean, var) = self.stats.compute(x, d);
        let n = self.stats.groups(d);
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let (mut dgamma, mut dbeta) = (vec![0.0; d.c], vec![0.0; d.c]);
        // Per group: sum of dxhat and of dxhat * xhat.
        let (mut sd, mut sdx, mut cnt) = (vec![0.0; n], vec![0.0; n], vec![0usize; n]);
        for (i, (xp, gp)) in x.chunks(d.hw).zip(grad.chunks(d.hw)).enumerate() {
            let (b, c) = (i / d.c, i % d.c);
            let g = self.stats.group(d, b, c);
            let gm = gamma[c].to_f64().unwrap_or(0.0);
            let (mut a, mut bx) = (0.0, 0.0);
            for (&xv, &gv) in xp.iter().zip(gp) {
                let xhat = (xv.to_f64().unwrap_or(0.0) - mean[g]) * inv[g];
                let gv = gv.to_f64().unwrap_or(0.0);
                a += gv;
                bx += gv * xhat;
            }
            dbeta[c] += a;
            dgamma[c] += bx;
            sd[g] += a * gm;
            sdx[g] += bx * gm;
            cnt[g] += xp.len();
        }
        let mut out = Vec::with_capacity(x.len() + 2 * d.c);
        for (i, (xp, gp)) in x.chunks(d.hw).zip(grad.chunks(d.hw)).enumerate() {
            let (b, c) = (i / d.c, i % d.c);
            let g = self.stats.group(d, b, c);
            let gm = gamma[c].to_f64().unwrap_or(0.0);
            if self.stats.uses_batch() {
                let m = cnt[g] as f64;
                let (md, mdx) = (sd[g] / m, sdx[g] / m);
                out.extend(xp.iter().zip(gp).map(|(&xv, &gv)| {
                    let xhat = (xv.to_f64().unwrap_or(0.0) - mean[g]) * inv[g];
                    cast::<T>(inv[g] * (gv.to_f64().unwrap_or(0.0) * gm - md - xhat * mdx))
                }));
            } else {
                let s = cast::<T>(inv[g] * gm);
                out.extend(gp.iter().map(|&gv| gv * s));
            }
        }
        out.extend(dgamma.into_iter().map(cast::<T>));
        out.extend(dbeta.into_iter().map(cast::<T>));
        out
    }
}

impl CustomOp3 for Norm {
    fn name(&self) -> &'static str {
        "fused-norm"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> CResult<(CpuStorage, Shape)> {
        let d = Dims::of(l1)?;
        let out = match (s1, s2, s3) {
            (CpuStorage::F32(x), CpuStorage::F32(g), CpuStorage::F32(b)) => {
                CpuStorage::F32(self.forward(data(x, l1)?, data(g, l2)?, data(b, l3)?, d))
            }
            (CpuStorage::F64(x), CpuStorage::F64(g), CpuStorage::F64(b)) => {
                CpuStorage::F64(self.forward(data(x, l1)?, data(g, l2)?, data(b, l3)?, d))
            }
            _ => return Err(unsupported("norm")),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        _beta: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> CResult<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let op = NormGrad {
            stats: self.stats.clone(),
            eps: self.eps,
        };
        let packed = x.apply_op3_no_bwd(gamma, &grad.contiguous()?, &op)?;
        let (n, c) = (x.elem_count(), gamma.elem_count());
        Ok((
            Some(packed.narrow(0, 0, n)?.reshape(x.shape())?),
            Some(packed.narrow(0, n, c)?),
            Some(packed.narrow(0, n + c, c)?),
        ))
    }
}

impl CustomOp3 for NormGrad {
    fn name(&self) -> &'static str {
        "fused-norm-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> CResult<(CpuStorage, Shape)> {
        let d = Dims::of(l1)?;
        let out = match (s1, s2, s3) {
            (CpuStorage::F32(x), CpuStorage::F32(g), CpuStorage::F32(dy)) => {
                CpuStorage::F32(self.backward(data(x, l1)?, data(g, l2)?, data(dy, l3)?, d))
            }
            (CpuStorage::F64(x), CpuStorage::F64(g), CpuStorage::F64(dy)) => {
                CpuStorage::F64(self.backward(data(x, l1)?, data(g, l2)?, data(dy, l3)?, d))
            }
            _ => return Err(unsupported("norm")),
        };
        Ok((out, Shape::from(l1.shape().elem_count() + 2 * d.c)))
    }
}

/// `gamma · (x − mean) / sqrt(var + eps) + beta` per channel of `[B, C, H, W]`.
pub fn normalize(x: &Tensor, gamma: &Tensor, beta: &Tensor, stats: NormStats, eps: f64) -> Result<Tensor> {
    let c = x.dims4()?.1;
    if gamma.elem_count() != c || beta.elem_count() != c {
        return Err(crate::Error::Config(format!(
            "normalization over {c} channels got {} scales",
            gamma.elem_count()
        )));
    }
    if let NormStats::Fixed { mean, var } = &stats {
        if mean.len() != c || var.len() != c {
            return Err(crate::Error::Config(format!(
                "fixed statistics for {} channels, need {c}",
                mean.len()
            )));
        }
    }
    Ok(x.contiguous()?
        .apply_op3(&gamma.contiguous()?, &beta.contiguous()?, Norm { stats, eps })?)
}

/// Per-channel batch mean and biased variance of `[B, C, H, W]`, untracked.
pub fn channel_stats(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = x.detach().contiguous()?;
    let (storage, layout) = x.storage_and_layout();
    let d = Dims::of(layout).map_err(crate::Error::from)?;
    let stats = match &*storage {
        candle_core::Storage::Cpu(CpuStorage::F32(v)) => NormStats::Batch.compute(data(v, layout)?, d),
        candle_core::Storage::Cpu(CpuStorage::F64(v)) => NormStats::Batch.compute(data(v, layout)?, d),
        _ => return Err(unsupported("channel_stats").into()),
    };
    Ok(stats)
}

// ----------------------------------------------------------------- leaky relu

struct LeakyRelu(f64);

struct LeakyReluGrad(f64);

fn leaky<T: Elem>(x: &[T], slope: f64) -> Vec<T> {
    let s = cast::<T>(slope);
    x.iter().map(|&v| if v > T::zero() { v } else { v * s }).collect()
}

fn leaky_grad<T: Elem>(x: &[T], g: &[T], slope: f64) -> Vec<T> {
    let s = cast::<T>(slope);
    x.iter()
        .zip(g)
        .map(|(&v, &d)| if v > T::zero() { d } else { d * s })
        .collect()
}

impl CustomOp1 for LeakyRelu {
    fn name(&self) -> &'static str {
        "fused-leaky-relu"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> CResult<(CpuStorage, Shape)> {
        let out = match s {
            CpuStorage::F32(x) => CpuStorage::F32(leaky(data(x, l)?, self.0)),
            CpuStorage::F64(x) => CpuStorage::F64(leaky(data(x, l)?, self.0)),
            _ => return Err(unsupported("leaky_relu")),
        };
        Ok((out, l.shape().clone()))
    }

    fn bwd(&self, x: &Tensor, _res: &Tensor, grad: &Tensor) -> CResult<Option<Tensor>> {
        Ok(Some(x.apply_op2_no_bwd(&grad.contiguous()?, &LeakyReluGrad(self.0))?))
    }
}

impl CustomOp2 for LeakyReluGrad {
    fn name(&self) -> &'static str {
        "fused-leaky-relu-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> CResult<(CpuStorage, Shape)> {
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(g)) => CpuStorage::F32(leaky_grad(data(x, l1)?, data(g, l2)?, self.0)),
            (CpuStorage::F64(x), CpuStorage::F64(g)) => CpuStorage::F64(leaky_grad(data(x, l1)?, data(g, l2)?, self.0)),
            _ => return Err(unsupported("leaky_relu")),
        };
        Ok((out, l1.shape().clone()))
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(LeakyRelu(slope))?)
}
