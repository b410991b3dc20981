use super::layer::{Layer, Params, SeedRng};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Iterates the lanes along `axis`: yields `(base offset, stride, length)`.
fn lanes(shape: &[usize], axis: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    (0..outer).flat_map(move |o| (0..inner).map(move |i| (o * len * inner + i, inner, len)))
}

/// Numerically stable softmax on a slice, in place.
pub fn softmax_in_place<T: Real>(v: &mut [T]) {
    let m = v.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut z = T::zero();
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in v.iter_mut() {
        *x /= z;
    }
}

pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::Invalid(format!(
            "softmax axis {axis} out of range for rank {}",
            x.rank()
        )));
    }
    let mut out = x.clone();
    let mut buf = Vec::with_capacity(x.dim(axis));
    for (base, stride, len) in lanes(x.shape(), axis) {
        buf.clear();
        buf.extend((0..len).map(|j| x.data()[base + j * stride]));
        softmax_in_place(&mut buf);
        for (j, &v) in buf.iter().enumerate() {
            out.data_mut()[base + j * stride] = v;
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax: `dx = y * (dy - <dy, y>)` along `axis`.
pub fn softmax_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    dy.expect_shape("softmax_backward", y.shape())?;
    let mut dx = Tensor::zeros(y.shape());
    for (base, stride, len) in lanes(y.shape(), axis) {
        let dot: T = (0..len)
            .map(|j| y.data()[base + j * stride] * dy.data()[base + j * stride])
            .sum();
        for j in 0..len {
            let idx = base + j * stride;
            dx.data_mut()[idx] = y.data()[idx] * (dy.data()[idx] - dot);
        }
    }
    Ok(dx)
}

#[derive(Clone, Copy, Debug)]
pub struct Softmax {
    pub axis: usize,
}

impl<T: Real> Params<T> for Softmax {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor<T>)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor<T>)) {}
}

impl<T: Real> Layer<T> for Softmax {
    type Cache = Tensor<T>;

    fn forward(&self, x: &Tensor<T>, _: Option<&mut SeedRng>) -> Result<(Tensor<T>, Tensor<T>)> {
        let y = softmax(x, self.axis)?;
        Ok((y.clone(), y))
    }

    fn backward(&self, y: &Tensor<T>, dy: &Tensor<T>, _: &mut Self) -> Result<Tensor<T>> {
        softmax_backward(y, dy, self.axis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn uniform_input() {
        let x = Tensor::<f64>::zeros(&[3]);
        let y = softmax(&x, 0).unwrap();
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let x = Tensor::<f64>::from_f64(&[2], &[1000.0, 0.0]).unwrap();
        let y = softmax(&x, 0).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1] >= 0.0 && y.data()[1] < 1e-300);
    }

    #[test]
    fn matches_naive_exp_over_sum() {
        let mut rng = SeedRng::seed_from_u64(11);
        for _ in 0..100 {
            let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let z: f64 = v.iter().map(|x| x.exp()).sum();
            let y = softmax(&Tensor::<f64>::from_f64(&[5], &v).unwrap(), 0).unwrap();
            for (a, x) in y.data().iter().zip(&v) {
                assert!((a - x.exp() / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_sum_to_one_at_large_magnitude() {
        let mut rng = SeedRng::seed_from_u64(5);
        let x = Tensor::<f64>::uniform(&[20, 7], -1e4, 1e4, &mut rng);
        for axis in 0..2 {
            let y = softmax(&x, axis).unwrap();
            for (base, stride, len) in lanes(y.shape(), axis) {
                let s: f64 = (0..len).map(|j| y.data()[base + j * stride]).sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn jacobian_vector_product_matches_full_jacobian() {
        let mut rng = SeedRng::seed_from_u64(9);
        for _ in 0..20 {
            let x = Tensor::<f64>::uniform(&[6], -2.0, 2.0, &mut rng);
            let dy = Tensor::<f64>::uniform(&[6], -1.0, 1.0, &mut rng);
            let y = softmax(&x, 0).unwrap();
            let dx = softmax_backward(&y, &dy, 0).unwrap();
            let p = y.data();
            for i in 0..6 {
                // J[j][i] = p_j (delta_ij - p_i); dx_i = sum_j J[j][i] dy_j
                let naive: f64 = (0..6)
                    .map(|j| p[j] * (if i == j { 1.0 } else { 0.0 } - p[i]) * dy.data()[j])
                    .sum();
                assert!((dx.data()[i] - naive).abs() < 1e-9);
            }
        }
    }
}
