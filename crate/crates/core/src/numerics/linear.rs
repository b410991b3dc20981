use rand::Rng;

use super::layer::{Layer, Params, SeedRng};
use super::{init, Real, Tensor};
use crate::error::{Error, Result};

/// `y += W x` for row-major `W` of shape `[rows, cols]`.
#[inline]
pub fn matvec_acc<T: Real>(w: &[T], cols: usize, x: &[T], y: &mut [T]) {
    debug_assert_eq!(w.len(), y.len() * cols);
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(cols)) {
        *yi += row.iter().zip(x).map(|(&a, &b)| a * b).sum::<T>();
    }
}

/// `dx += W^T dy`.
#[inline]
pub fn matvec_t_acc<T: Real>(w: &[T], cols: usize, dy: &[T], dx: &mut [T]) {
    for (&g, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if g == T::zero() {
            continue;
        }
        for (d, &a) in dx.iter_mut().zip(row) {
            *d += g * a;
        }
    }
}

/// `dW += dy x^T`.
#[inline]
pub fn outer_acc<T: Real>(dw: &mut [T], cols: usize, dy: &[T], x: &[T]) {
    for (&g, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if g == T::zero() {
            continue;
        }
        for (d, &a) in row.iter_mut().zip(x) {
            *d += g * a;
        }
    }
}

/// Affine map applied independently to every row of a `[rows, in]` tensor.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Linear {
            weight: init::glorot_uniform(&[d_out, d_in], d_in, d_out, rng),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn d_out(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn forward_rows(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (rows, d_in) = match *x.shape() {
            [r, d] => (r, d),
            ref s => return Err(Error::shape("linear", format!("expected [rows, in], got {s:?}"))),
        };
        if d_in != self.d_in() {
            return Err(Error::shape(
                "linear",
                format!("input width {d_in}, layer expects {}", self.d_in()),
            ));
        }
        let d_out = self.d_out();
        let mut out = Tensor::zeros(&[rows, d_out]);
        for (xr, yr) in x.data().chunks_exact(d_in).zip(out.data_mut().chunks_exact_mut(d_out)) {
            yr.copy_from_slice(self.bias.data());
            matvec_acc(self.weight.data(), d_in, xr, yr);
        }
        Ok(out)
    }

    pub fn backward_rows(&self, x: &Tensor<T>, dy: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        let rows = x.dim(0);
        let (d_in, d_out) = (self.d_in(), self.d_out());
        dy.expect_shape("linear_backward", &[rows, d_out])?;
        let mut dx = Tensor::zeros(&[rows, d_in]);
        for ((xr, gr), dxr) in x
            .data()
            .chunks_exact(d_in)
            .zip(dy.data().chunks_exact(d_out))
            .zip(dx.data_mut().chunks_exact_mut(d_in))
        {
            outer_acc(grads.weight.data_mut(), d_in, gr, xr);
            for (b, &g) in grads.bias.data_mut().iter_mut().zip(gr) {
                *b += g;
            }
            matvec_t_acc(self.weight.data(), d_in, gr, dxr);
        }
        Ok(dx)
    }
}

impl<T: Real> Params<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

impl<T: Real> Layer<T> for Linear<T> {
    type Cache = Tensor<T>;

    fn forward(&self, x: &Tensor<T>, _: Option<&mut SeedRng>) -> Result<(Tensor<T>, Tensor<T>)> {
        Ok((self.forward_rows(x)?, x.clone()))
    }

    fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        self.backward_rows(x, dy, grads)
    }
}

/// A bare tensor is a one-slot parameter set (used to finite-difference inputs).
impl<T: Real> Params<T> for Tensor<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(prefix, self);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(prefix, self);
    }
}
