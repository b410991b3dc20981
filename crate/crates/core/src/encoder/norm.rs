use crate::error::{Error, Result};
use crate::numerics::{Layer, Params, Real, SeedRng, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-channel normalization over spatial positions with a learned affine.
#[derive(Clone, Debug)]
pub struct InstanceNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct InstanceNormCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Real> InstanceNorm<T> {
    pub fn new(channels: usize) -> Self {
        InstanceNorm {
            gamma: Tensor::filled(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            eps: DEFAULT_EPS,
        }
    }

    /// Normalized activations before the affine, plus the per-channel `1/sqrt(var + eps)`.
    pub fn normalize(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
        let [c, h, w] = *x.shape() else {
            return Err(Error::shape("instance_norm", format!("expected [C,H,W], got {:?}", x.shape())));
        };
        if c != self.gamma.len() {
            return Err(Error::shape(
                "instance_norm",
                format!("{c} channels, parameters for {}", self.gamma.len()),
            ));
        }
        if h * w == 0 {
            return Err(Error::Invalid("instance_norm needs H*W >= 1".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Invalid("instance_norm eps must be > 0".into()));
        }
        let n = T::lit((h * w) as f64);
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(c);
        for plane in out.data_mut().chunks_exact_mut(h * w) {
            let mean = plane.iter().copied().sum::<T>() / n;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let s = T::one() / (var + T::lit(self.eps)).sqrt();
            plane.iter_mut().for_each(|v| *v = (*v - mean) * s);
            inv_std.push(s);
        }
        Ok((out, inv_std))
    }
}

impl<T: Real> Params<T> for InstanceNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.gamma"), &self.gamma);
        f(&format!("{prefix}.beta"), &self.beta);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}

impl<T: Real> Layer<T> for InstanceNorm<T> {
    type Cache = InstanceNormCache<T>;

    fn forward(&self, x: &Tensor<T>, _: Option<&mut SeedRng>) -> Result<(Tensor<T>, Self::Cache)> {
        let (normalized, inv_std) = self.normalize(x)?;
        let hw = x.dim(1) * x.dim(2);
        let mut y = normalized.clone();
        for (ch, plane) in y.data_mut().chunks_exact_mut(hw).enumerate() {
            let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
            plane.iter_mut().for_each(|v| *v = *v * g + b);
        }
        Ok((y, InstanceNormCache { normalized, inv_std }))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        dy.expect_shape("instance_norm_backward", cache.normalized.shape())?;
        let hw = dy.dim(1) * dy.dim(2);
        let n = T::lit(hw as f64);
        let mut dx = Tensor::zeros(dy.shape());
        for (ch, ((g, xhat), d)) in dy
            .data()
            .chunks_exact(hw)
            .zip(cache.normalized.data().chunks_exact(hw))
            .zip(dx.data_mut().chunks_exact_mut(hw))
            .enumerate()
        {
            let gamma = self.gamma.data()[ch];
            let sum_g: T = g.iter().copied().sum();
            let sum_gx: T = g.iter().zip(xhat).map(|(&a, &b)| a * b).sum();
            grads.gamma.data_mut()[ch] += sum_gx;
            grads.beta.data_mut()[ch] += sum_g;
            let k = gamma * cache.inv_std[ch] / n;
            for ((di, &gi), &xi) in d.iter_mut().zip(g).zip(xhat) {
                *di = k * (n * gi - sum_g - xi * sum_gx);
            }
        }
        Ok(dx)
    }
}
