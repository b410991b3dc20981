use rand::Rng;

use crate::error::Result;
use crate::numerics::{
    conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward, init, Layer, Params,
    Real, SeedRng, Tensor,
};

/// Depthwise `k x k` convolution (one kernel per input channel) followed by a pointwise 1x1
/// convolution that mixes channels.
#[derive(Clone, Debug)]
pub struct DepthwiseSeparable<T> {
    pub depthwise: Tensor<T>,
    pub depthwise_bias: Tensor<T>,
    pub pointwise: Tensor<T>,
    pub pointwise_bias: Tensor<T>,
    pub stride: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct DscCache<T> {
    input: Tensor<T>,
    mid: Tensor<T>,
}

impl<T: Real> DepthwiseSeparable<T> {
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: (usize, usize),
        rng: &mut R,
    ) -> Self {
        DepthwiseSeparable {
            depthwise: init::glorot_uniform(&[c_in, 1, k, k], k * k, k * k, rng),
            depthwise_bias: Tensor::zeros(&[c_in]),
            pointwise: init::glorot_uniform(&[c_out, c_in, 1, 1], c_in, c_out, rng),
            pointwise_bias: Tensor::zeros(&[c_out]),
            stride,
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.depthwise.dim(2)
    }

    fn pad(&self) -> (usize, usize) {
        let k = self.kernel_size();
        (k / 2, k / 2)
    }

    /// `C_in*k^2 + C_in*C_out` weights, plus `C_in + C_out` biases when requested.
    pub fn weight_count(&self, with_bias: bool) -> usize {
        let w = self.depthwise.len() + self.pointwise.len();
        if with_bias {
            w + self.depthwise_bias.len() + self.pointwise_bias.len()
        } else {
            w
        }
    }
}

impl<T: Real> Params<T> for DepthwiseSeparable<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.depthwise"), &self.depthwise);
        f(&format!("{prefix}.depthwise_bias"), &self.depthwise_bias);
        f(&format!("{prefix}.pointwise"), &self.pointwise);
        f(&format!("{prefix}.pointwise_bias"), &self.pointwise_bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.depthwise"), &mut self.depthwise);
        f(&format!("{prefix}.depthwise_bias"), &mut self.depthwise_bias);
        f(&format!("{prefix}.pointwise"), &mut self.pointwise);
        f(&format!("{prefix}.pointwise_bias"), &mut self.pointwise_bias);
    }
}

impl<T: Real> Layer<T> for DepthwiseSeparable<T> {
    type Cache = DscCache<T>;

    fn forward(&self, x: &Tensor<T>, _: Option<&mut SeedRng>) -> Result<(Tensor<T>, Self::Cache)> {
        let mid = depthwise_conv2d(x, &self.depthwise, Some(&self.depthwise_bias), self.stride, self.pad())?;
        let y = conv2d(&mid, &self.pointwise, Some(&self.pointwise_bias), (1, 1), (0, 0))?;
        Ok((
            y,
            DscCache {
                input: x.clone(),
                mid,
            },
        ))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        let dmid = conv2d_backward(
            &cache.mid,
            &self.pointwise,
            dy,
            (1, 1),
            (0, 0),
            &mut grads.pointwise,
            Some(&mut grads.pointwise_bias),
        )?;
        depthwise_conv2d_backward(
            &cache.input,
            &self.depthwise,
            &dmid,
            self.stride,
            self.pad(),
            &mut grads.depthwise,
            Some(&mut grads.depthwise_bias),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_layer;
    use rand::SeedableRng;

    #[test]
    fn single_channel_equals_plain_conv() {
        let mut rng = SeedRng::seed_from_u64(0);
        let mut d = DepthwiseSeparable::<f64>::new(1, 1, 3, (1, 1), &mut rng);
        d.pointwise.fill(1.0);
        let x = Tensor::uniform(&[1, 5, 6], -1.0, 1.0, &mut rng);
        let (y, _) = d.forward(&x, None).unwrap();
        let k = d.depthwise.clone();
        let r = conv2d(&x, &k, None, (1, 1), (1, 1)).unwrap();
        for (a, b) in y.data().iter().zip(r.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_count() {
        let mut rng = SeedRng::seed_from_u64(0);
        let d = DepthwiseSeparable::<f64>::new(32, 32, 3, (1, 1), &mut rng);
        assert_eq!(d.weight_count(false), 288 + 1024);
        assert!(d.weight_count(false) < 32 * 32 * 9);
        assert_eq!(d.weight_count(true), 1312 + 64);
    }

    /// Expands the factorized kernel into the equivalent dense `[C_out, C_in, k, k]` kernel:
    /// `K[o, c, i, j] = P[o, c] * D[c, i, j]`, bias `b_o + sum_c P[o, c] * d_c`.
    #[test]
    fn matches_dense_expansion() {
        let mut rng = SeedRng::seed_from_u64(7);
        for stride in [(1, 1), (2, 2)] {
            let mut d = DepthwiseSeparable::<f64>::new(3, 4, 3, stride, &mut rng);
            d.depthwise_bias = Tensor::uniform(&[3], -0.5, 0.5, &mut rng);
            d.pointwise_bias = Tensor::uniform(&[4], -0.5, 0.5, &mut rng);
            let x = Tensor::uniform(&[3, 6, 7], -1.0, 1.0, &mut rng);
            let mut dense = vec![0.0; 4 * 3 * 9];
            let mut bias = d.pointwise_bias.data().to_vec();
            for o in 0..4 {
                for c in 0..3 {
                    let p = d.pointwise.data()[o * 3 + c];
                    bias[o] += p * d.depthwise_bias.data()[c];
                    for t in 0..9 {
                        dense[(o * 3 + c) * 9 + t] = p * d.depthwise.data()[c * 9 + t];
                    }
                }
            }
            let dense = Tensor::from_vec(&[4, 3, 3, 3], dense).unwrap();
            let bias = Tensor::from_vec(&[4], bias).unwrap();
            let want = conv2d(&x, &dense, Some(&bias), stride, (1, 1)).unwrap();
            let (got, _) = d.forward(&x, None).unwrap();
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients() {
        for seed in 0..5 {
            let mut rng = SeedRng::seed_from_u64(seed);
            let mut d = DepthwiseSeparable::<f64>::new(2, 3, 3, (2, 1), &mut rng);
            d.depthwise_bias = Tensor::uniform(&[2], -0.5, 0.5, &mut rng);
            let x = Tensor::uniform(&[2, 5, 4], -1.0, 1.0, &mut rng);
            for e in check_layer("dsc", &d, &x, seed, 1000).unwrap() {
                assert!(e.passed, "{e}");
            }
        }
    }
}
