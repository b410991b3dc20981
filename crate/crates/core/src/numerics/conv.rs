//! 2-D convolution over `[C, H, W]` tensors, full and depthwise, with analytic gradients.
//!
//! Kernels are square with `k` taps per axis (indices `0..k`). Every output position is
//! `bias + sum_{ci, i, j} in[ci, y*sh + i - ph, x*sw + j - pw] * kernel[co, ci, i, j]`,
//! reading zeros outside the input.

use rand::Rng;

use super::layer::{Layer, Params, SeedRng};
use super::gemm::gemm;
use super::{init, Real, Tensor};
use crate::error::{Error, Result};

/// Spatial geometry shared by all convolution variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub k: usize,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvGeometry {
    pub fn same(k: usize, stride: (usize, usize)) -> Self {
        ConvGeometry {
            k,
            stride,
            pad: (k / 2, k / 2),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::Invalid("convolution stride must be >= 1".into()));
        }
        if self.k == 0 || self.k % 2 == 0 {
            return Err(Error::Invalid(format!(
                "kernel size must be odd, got {}",
                self.k
            )));
        }
        let (ph, pw) = self.pad;
        if h + 2 * ph < self.k || w + 2 * pw < self.k {
            return Err(Error::shape(
                "conv2d",
                format!("input {h}x{w} with padding {ph},{pw} smaller than kernel {}", self.k),
            ));
        }
        Ok((
            (h + 2 * ph - self.k) / self.stride.0 + 1,
            (w + 2 * pw - self.k) / self.stride.1 + 1,
        ))
    }
}

#[derive(Clone, Copy)]
struct Plane {
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    g: ConvGeometry,
}

impl Plane {
    /// Output columns `lo..hi` whose input column for tap `kj` lies inside the image.
    #[inline]
    fn col_range(&self, kj: usize) -> (usize, usize) {
        let (sw, pw) = (self.g.stride.1, self.g.pad.1);
        let lo = if pw > kj { (pw - kj).div_ceil(sw) } else { 0 };
        if self.w + pw <= kj {
            return (0, 0);
        }
        let hi = ((self.w + pw - kj - 1) / sw + 1).min(self.wo);
        (lo.min(hi), hi)
    }

    #[inline]
    fn input_row(&self, oy: usize, ki: usize) -> Option<usize> {
        let iy = oy * self.g.stride.0 + ki;
        if iy < self.g.pad.0 || iy - self.g.pad.0 >= self.h {
            None
        } else {
            Some(iy - self.g.pad.0)
        }
    }

    fn forward<T: Real>(&self, inp: &[T], ker: &[T], out: &mut [T]) {
        let k = self.g.k;
        let (sw, pw) = (self.g.stride.1, self.g.pad.1);
        for ki in 0..k {
            for kj in 0..k {
                let wv = ker[ki * k + kj];
                let (lo, hi) = self.col_range(kj);
                if lo >= hi {
                    continue;
                }
                for oy in 0..self.ho {
                    let Some(iy) = self.input_row(oy, ki) else {
                        continue;
                    };
                    let irow = &inp[iy * self.w..(iy + 1) * self.w];
                    let orow = &mut out[oy * self.wo..(oy + 1) * self.wo];
                    if sw == 1 {
                        let src = &irow[lo + kj - pw..hi + kj - pw];
                        for (o, &i) in orow[lo..hi].iter_mut().zip(src) {
                            *o += wv * i;
                        }
                    } else {
                        for ox in lo..hi {
                            orow[ox] += wv * irow[ox * sw + kj - pw];
                        }
                    }
                }
            }
        }
    }

    fn backward_input<T: Real>(&self, dy: &[T], ker: &[T], dx: &mut [T]) {
        let k = self.g.k;
        let (sw, pw) = (self.g.stride.1, self.g.pad.1);
        for ki in 0..k {
            for kj in 0..k {
                let wv = ker[ki * k + kj];
                let (lo, hi) = self.col_range(kj);
                if lo >= hi {
                    continue;
                }
                for oy in 0..self.ho {
                    let Some(iy) = self.input_row(oy, ki) else {
                        continue;
                    };
                    let drow = &mut dx[iy * self.w..(iy + 1) * self.w];
                    let grow = &dy[oy * self.wo..(oy + 1) * self.wo];
                    if sw == 1 {
                        let dst = &mut drow[lo + kj - pw..hi + kj - pw];
                        for (d, &g) in dst.iter_mut().zip(&grow[lo..hi]) {
                            *d += wv * g;
                        }
                    } else {
                        for ox in lo..hi {
                            drow[ox * sw + kj - pw] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    }

    fn backward_kernel<T: Real>(&self, inp: &[T], dy: &[T], dker: &mut [T]) {
        let k = self.g.k;
        let (sw, pw) = (self.g.stride.1, self.g.pad.1);
        for ki in 0..k {
            for kj in 0..k {
                let (lo, hi) = self.col_range(kj);
                if lo >= hi {
                    continue;
                }
                let mut acc = T::zero();
                for oy in 0..self.ho {
                    let Some(iy) = self.input_row(oy, ki) else {
                        continue;
                    };
                    let irow = &inp[iy * self.w..(iy + 1) * self.w];
                    let grow = &dy[oy * self.wo..(oy + 1) * self.wo];
                    if sw == 1 {
                        let src = &irow[lo + kj - pw..hi + kj - pw];
                        acc += grow[lo..hi]
                            .iter()
                            .zip(src)
                            .map(|(&g, &i)| g * i)
                            .sum::<T>();
                    } else {
                        for ox in lo..hi {
                            acc += grow[ox] * irow[ox * sw + kj - pw];
                        }
                    }
                }
                dker[ki * k + kj] += acc;
            }
        }
    }
}

fn chw(op: &'static str, x: &Tensor<impl Real>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::shape(op, format!("expected [C,H,W], got {s:?}"))),
    }
}

fn check_kernel<T: Real>(
    op: &'static str,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    c_in_expected: usize,
) -> Result<(usize, usize, usize)> {
    let (c_out, c_in, k) = match *kernel.shape() {
        [co, ci, k1, k2] if k1 == k2 => (co, ci, k1),
        ref s => {
            return Err(Error::shape(
                op,
                format!("kernel must be [C_out,C_in,k,k], got {s:?}"),
            ))
        }
    };
    if c_in != c_in_expected {
        return Err(Error::shape(
            op,
            format!("kernel expects {c_in} input channels, input has {c_in_expected}"),
        ));
    }
    if let Some(b) = bias {
        b.expect_shape(op, &[c_out])?;
    }
    Ok((c_out, c_in, k))
}

impl Plane {
    /// Unfolds one input channel into `k*k` rows of `ho*wo` columns (zeros outside the image).
    fn im2col<T: Real>(&self, inp: &[T], cols: &mut [T]) {
        let k = self.g.k;
        let (sw, pw) = (self.g.stride.1, self.g.pad.1);
        let n = self.ho * self.wo;
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[(ki * k + kj) * n..(ki * k + kj + 1) * n];
                let (lo, hi) = self.col_range(kj);
                for oy in 0..self.ho {
                    let orow = &mut row[oy * self.wo..(oy + 1) * self.wo];
                    let Some(iy) = self.input_row(oy, ki).filter(|_| lo < hi) else {
                        orow.fill(T::zero());
                        continue;
                    };
                    let irow = &inp[iy * self.w..(iy + 1) * self.w];
                    orow[..lo].fill(T::zero());
                    orow[hi..].fill(T::zero());
                    if sw == 1 {
                        orow[lo..hi].copy_from_slice(&irow[lo + kj - pw..hi + kj - pw]);
                    } else {
                        for ox in lo..hi {
                            orow[ox] = irow[ox * sw + kj - pw];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Plane::im2col`]: scatters column gradients back onto the input channel.
    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let k = self.g.k;
        let (sw, pw) = (self.g.stride.1, self.g.pad.1);
        let n = self.ho * self.wo;
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[(ki * k + kj) * n..(ki * k + kj + 1) * n];
                let (lo, hi) = self.col_range(kj);
                if lo >= hi {
                    continue;
                }
                for oy in 0..self.ho {
                    let Some(iy) = self.input_row(oy, ki) else {
                        continue;
                    };
                    let grow = &row[oy * self.wo..(oy + 1) * self.wo];
                    let drow = &mut dx[iy * self.w..(iy + 1) * self.w];
                    if sw == 1 {
                        for (d, &g) in drow[lo + kj - pw..hi + kj - pw].iter_mut().zip(&grow[lo..hi]) {
                            *d += g;
                        }
                    } else {
                        for ox in lo..hi {
                            drow[ox * sw + kj - pw] += grow[ox];
                        }
                    }
                }
            }
        }
    }

    fn unfold<T: Real>(&self, input: &[T], c: usize) -> Vec<T> {
        let kk = self.g.k * self.g.k;
        let n = self.ho * self.wo;
        let mut cols = vec![T::zero(); c * kk * n];
        let hw = self.h * self.w;
        for ci in 0..c {
            self.im2col(&input[ci * hw..(ci + 1) * hw], &mut cols[ci * kk * n..(ci + 1) * kk * n]);
        }
        cols
    }
}

/// Full convolution. `kernel` is `[C_out, C_in, k, k]`, `bias` is `[C_out]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor<T>> {
    let (c, h, w) = chw("conv2d", input)?;
    let (c_out, _, k) = check_kernel("conv2d", kernel, bias, c)?;
    let g = ConvGeometry { k, stride, pad };
    let (ho, wo) = g.output_hw(h, w)?;
    let plane = Plane { h, w, ho, wo, g };
    let mut out = Tensor::zeros(&[c_out, ho, wo]);
    if let Some(b) = bias {
        for (oplane, &bv) in out.data_mut().chunks_mut(ho * wo).zip(b.data()) {
            oplane.fill(bv);
        }
    }
    let cols = plane.unfold(input.data(), c);
    gemm(c_out, c * k * k, ho * wo, kernel.data(), false, &cols, false, T::one(), out.data_mut());
    Ok(out)
}

/// Gradients of [`conv2d`]. Accumulates into `dkernel`/`dbias` and returns the input gradient.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    dy: &Tensor<T>,
    stride: (usize, usize),
    pad: (usize, usize),
    dkernel: &mut Tensor<T>,
    dbias: Option<&mut Tensor<T>>,
) -> Result<Tensor<T>> {
    let (c, h, w) = chw("conv2d_backward", input)?;
    let (c_out, _, k) = check_kernel("conv2d_backward", kernel, None, c)?;
    dkernel.expect_shape("conv2d_backward", kernel.shape())?;
    let g = ConvGeometry { k, stride, pad };
    let (ho, wo) = g.output_hw(h, w)?;
    dy.expect_shape("conv2d_backward", &[c_out, ho, wo])?;
    let plane = Plane { h, w, ho, wo, g };
    let (kk, n) = (k * k, ho * wo);
    let cols = plane.unfold(input.data(), c);
    gemm(c_out, n, c * kk, dy.data(), false, &cols, true, T::one(), dkernel.data_mut());
    let mut dcols = vec![T::zero(); c * kk * n];
    gemm(c * kk, c_out, n, kernel.data(), true, dy.data(), false, T::zero(), &mut dcols);
    let mut dx = Tensor::zeros(&[c, h, w]);
    for (ci, dplane) in dx.data_mut().chunks_mut(h * w).enumerate() {
        plane.col2im(&dcols[ci * kk * n..(ci + 1) * kk * n], dplane);
    }
    if let Some(db) = dbias {
        db.expect_shape("conv2d_backward", &[c_out])?;
        for (d, gplane) in db.data_mut().iter_mut().zip(dy.data().chunks(n)) {
            *d += gplane.iter().copied().sum();
        }
    }
    Ok(dx)
}

/// Per-channel convolution. `kernel` is `[C, 1, k, k]`, `bias` is `[C]`.
pub fn depthwise_conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor<T>> {
    let (c, h, w) = chw("depthwise_conv2d", input)?;
    let (kc, _, k) = check_kernel("depthwise_conv2d", kernel, bias, 1)?;
    if kc != c {
        return Err(Error::shape(
            "depthwise_conv2d",
            format!("{kc} depthwise kernels for {c} channels"),
        ));
    }
    let g = ConvGeometry { k, stride, pad };
    let (ho, wo) = g.output_hw(h, w)?;
    let plane = Plane { h, w, ho, wo, g };
    let mut out = Tensor::zeros(&[c, ho, wo]);
    for (ch, oplane) in out.data_mut().chunks_mut(ho * wo).enumerate() {
        if let Some(b) = bias {
            oplane.fill(b.data()[ch]);
        }
        plane.forward(
            &input.data()[ch * h * w..(ch + 1) * h * w],
            &kernel.data()[ch * k * k..(ch + 1) * k * k],
            oplane,
        );
    }
    Ok(out)
}

pub fn depthwise_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    dy: &Tensor<T>,
    stride: (usize, usize),
    pad: (usize, usize),
    dkernel: &mut Tensor<T>,
    dbias: Option<&mut Tensor<T>>,
) -> Result<Tensor<T>> {
    let (c, h, w) = chw("depthwise_conv2d_backward", input)?;
    let (_, _, k) = check_kernel("depthwise_conv2d_backward", kernel, None, 1)?;
    dkernel.expect_shape("depthwise_conv2d_backward", kernel.shape())?;
    let g = ConvGeometry { k, stride, pad };
    let (ho, wo) = g.output_hw(h, w)?;
    dy.expect_shape("depthwise_conv2d_backward", &[c, ho, wo])?;
    let plane = Plane { h, w, ho, wo, g };
    let mut dx = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        let gplane = &dy.data()[ch * ho * wo..(ch + 1) * ho * wo];
        let kr = ch * k * k..(ch + 1) * k * k;
        plane.backward_kernel(
            &input.data()[ch * h * w..(ch + 1) * h * w],
            gplane,
            &mut dkernel.data_mut()[kr.clone()],
        );
        plane.backward_input(
            gplane,
            &kernel.data()[kr],
            &mut dx.data_mut()[ch * h * w..(ch + 1) * h * w],
        );
    }
    if let Some(db) = dbias {
        for (ch, d) in db.data_mut().iter_mut().enumerate() {
            *d += dy.data()[ch * ho * wo..(ch + 1) * ho * wo]
                .iter()
                .copied()
                .sum();
        }
    }
    Ok(dx)
}

/// Convolution layer with bias.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl<T: Real> Conv2d<T> {
    /// Shape-preserving (for stride 1) `k x k` convolution with Glorot-uniform weights.
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: (usize, usize),
        rng: &mut R,
    ) -> Self {
        Conv2d {
            weight: init::glorot_uniform(&[c_out, c_in, k, k], c_in * k * k, c_out * k * k, rng),
            bias: Tensor::zeros(&[c_out]),
            stride,
            pad: (k / 2, k / 2),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.dim(2)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

impl<T: Real> Params<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

impl<T: Real> Layer<T> for Conv2d<T> {
    type Cache = Tensor<T>;

    fn forward(&self, x: &Tensor<T>, _rng: Option<&mut SeedRng>) -> Result<(Tensor<T>, Tensor<T>)> {
        let y = conv2d(x, &self.weight, Some(&self.bias), self.stride, self.pad)?;
        Ok((y, x.clone()))
    }

    fn backward(&self, input: &Tensor<T>, dy: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        conv2d_backward(
            input,
            &self.weight,
            dy,
            self.stride,
            self.pad,
            &mut grads.weight,
            Some(&mut grads.bias),
        )
    }
}
