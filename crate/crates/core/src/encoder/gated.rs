use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    conv2d, conv2d_backward, init, sigmoid, Layer, Params, Real, SeedRng, Tensor,
};

/// `tanh(W_f * x + b_f) ⊙ sigmoid(W_g * x + b_g)` with shape-preserving 3x3 kernels.
#[derive(Clone, Debug)]
pub struct GatedConv<T> {
    pub filter_weight: Tensor<T>,
    pub filter_bias: Tensor<T>,
    pub gate_weight: Tensor<T>,
    pub gate_bias: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct GatedConvCache<T> {
    input: Tensor<T>,
    filter: Tensor<T>,
    gate: Tensor<T>,
}

impl<T: Real> GatedConv<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let fan = channels * 9;
        GatedConv {
            filter_weight: init::glorot_uniform(&[channels, channels, 3, 3], fan, fan, rng),
            filter_bias: Tensor::zeros(&[channels]),
            gate_weight: init::glorot_uniform(&[channels, channels, 3, 3], fan, fan, rng),
            gate_bias: Tensor::zeros(&[channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.filter_weight.dim(0)
    }

    fn pad(&self) -> (usize, usize) {
        let k = self.filter_weight.dim(2);
        (k / 2, k / 2)
    }
}

impl<T: Real> Params<T> for GatedConv<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.filter_weight"), &self.filter_weight);
        f(&format!("{prefix}.filter_bias"), &self.filter_bias);
        f(&format!("{prefix}.gate_weight"), &self.gate_weight);
        f(&format!("{prefix}.gate_bias"), &self.gate_bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.filter_weight"), &mut self.filter_weight);
        f(&format!("{prefix}.filter_bias"), &mut self.filter_bias);
        f(&format!("{prefix}.gate_weight"), &mut self.gate_weight);
        f(&format!("{prefix}.gate_bias"), &mut self.gate_bias);
    }
}

impl<T: Real> Layer<T> for GatedConv<T> {
    type Cache = GatedConvCache<T>;

    fn forward(&self, x: &Tensor<T>, _: Option<&mut SeedRng>) -> Result<(Tensor<T>, Self::Cache)> {
        if self.filter_weight.shape() != self.gate_weight.shape() {
            return Err(Error::shape("gated_conv", "filter and gate kernels differ in shape"));
        }
        let pad = self.pad();
        let filter = conv2d(x, &self.filter_weight, Some(&self.filter_bias), (1, 1), pad)?
            .map(|v| v.tanh());
        let gate = conv2d(x, &self.gate_weight, Some(&self.gate_bias), (1, 1), pad)?.map(sigmoid);
        let mut y = filter.clone();
        for (o, &g) in y.data_mut().iter_mut().zip(gate.data()) {
            *o *= g;
        }
        Ok((
            y,
            GatedConvCache {
                input: x.clone(),
                filter,
                gate,
            },
        ))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        dy.expect_shape("gated_conv_backward", cache.filter.shape())?;
        let mut d_filter = dy.clone();
        let mut d_gate = dy.clone();
        for (((df, dg), &t), &s) in d_filter
            .data_mut()
            .iter_mut()
            .zip(d_gate.data_mut())
            .zip(cache.filter.data())
            .zip(cache.gate.data())
        {
            *df = *df * s * (T::one() - t * t);
            *dg = *dg * t * s * (T::one() - s);
        }
        let pad = self.pad();
        let mut dx = conv2d_backward(
            &cache.input,
            &self.filter_weight,
            &d_filter,
            (1, 1),
            pad,
            &mut grads.filter_weight,
            Some(&mut grads.filter_bias),
        )?;
        dx.add_assign(&conv2d_backward(
            &cache.input,
            &self.gate_weight,
            &d_gate,
            (1, 1),
            pad,
            &mut grads.gate_weight,
            Some(&mut grads.gate_bias),
        )?)?;
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_layer;
    use crate::numerics::{activation, ActivationKind};
    use rand::SeedableRng;

    #[test]
    fn zero_weights_zero_output() {
        let mut rng = SeedRng::seed_from_u64(0);
        let mut g = GatedConv::<f64>::new(2, &mut rng);
        g.zero();
        let x = Tensor::uniform(&[2, 4, 4], -1.0, 1.0, &mut rng);
        let (y, _) = g.forward(&x, None).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gate_passes_filter() {
        let mut rng = SeedRng::seed_from_u64(1);
        let mut g = GatedConv::<f64>::new(2, &mut rng);
        g.gate_weight.fill(0.0);
        g.gate_bias.fill(20.0);
        let x = Tensor::uniform(&[2, 4, 4], -1.0, 1.0, &mut rng);
        let (y, _) = g.forward(&x, None).unwrap();
        let f = conv2d(&x, &g.filter_weight, Some(&g.filter_bias), (1, 1), (1, 1)).unwrap();
        for (a, b) in y.data().iter().zip(f.data()) {
            assert!((a - b.tanh()).abs() < 1e-8);
        }
    }

    #[test]
    fn composes_from_primitives() {
        let mut rng = SeedRng::seed_from_u64(2);
        let mut g = GatedConv::<f64>::new(2, &mut rng);
        g.filter_bias = Tensor::uniform(&[2], -0.3, 0.3, &mut rng);
        g.gate_bias = Tensor::uniform(&[2], -0.3, 0.3, &mut rng);
        let x = Tensor::uniform(&[2, 4, 4], -1.0, 1.0, &mut rng);
        let (y, _) = g.forward(&x, None).unwrap();
        let f = activation(
            &conv2d(&x, &g.filter_weight, Some(&g.filter_bias), (1, 1), (1, 1)).unwrap(),
            ActivationKind::Tanh,
        );
        let s = activation(
            &conv2d(&x, &g.gate_weight, Some(&g.gate_bias), (1, 1), (1, 1)).unwrap(),
            ActivationKind::Sigmoid,
        );
        for ((a, b), c) in y.data().iter().zip(f.data()).zip(s.data()) {
            assert!((a - b * c).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch() {
        let mut rng = SeedRng::seed_from_u64(3);
        let g = GatedConv::<f64>::new(2, &mut rng);
        assert!(g.forward(&Tensor::zeros(&[3, 4, 4]), None).is_err());
    }

    #[test]
    fn gradients_reach_both_paths() {
        for seed in 0..5 {
            let mut rng = SeedRng::seed_from_u64(seed);
            let mut g = GatedConv::<f64>::new(2, &mut rng);
            g.filter_bias = Tensor::uniform(&[2], -0.3, 0.3, &mut rng);
            g.gate_bias = Tensor::uniform(&[2], -0.3, 0.3, &mut rng);
            let x = Tensor::uniform(&[2, 4, 5], -1.0, 1.0, &mut rng);
            for e in check_layer("gated", &g, &x, seed, 1000).unwrap() {
                assert!(e.passed, "{e}");
            }
            let (y, cache) = g.forward(&x, None).unwrap();
            let mut grads = g.zeros_like();
            g.backward(&cache, &Tensor::filled(y.shape(), 1.0), &mut grads).unwrap();
            assert!(grads.filter_weight.max_abs() > 0.0);
            assert!(grads.gate_weight.max_abs() > 0.0);
        }
    }
}
