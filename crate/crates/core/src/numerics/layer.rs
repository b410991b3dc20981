use rand_chacha::ChaCha8Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// RNG used for every stochastic operation (init, dropout, augmentation, synthesis).
pub type SeedRng = ChaCha8Rng;

/// A named collection of parameter tensors.
///
/// Gradients are stored in a value of the same type (see [`Params::zeros_like`]), so a
/// layer and its gradient buffer always have identical structure and shapes.
pub trait Params<T: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.zero();
        z
    }

    fn zero(&mut self) {
        self.visit_mut("", &mut |_, t| t.fill(T::zero()));
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    fn named_shapes(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |name, t| out.push((name.to_string(), t.shape().to_vec())));
        out
    }

    fn all_finite(&self) -> Option<String> {
        let mut bad = None;
        self.visit("", &mut |name, t| {
            if bad.is_none() && !t.is_finite() {
                bad = Some(name.trim_start_matches('.').to_string());
            }
        });
        bad
    }
}

/// A differentiable map from one tensor to another with cached activations.
pub trait Layer<T: Real>: Params<T> + Clone {
    type Cache;

    /// `rng` is `Some` in training mode (enables dropout), `None` in eval mode.
    fn forward(&self, x: &Tensor<T>, rng: Option<&mut SeedRng>) -> Result<(Tensor<T>, Self::Cache)>;

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>>;
}

/// One application of a layer: remembers its forward activations so that backward can run.
pub struct Op<'a, T: Real, L: Layer<T>> {
    layer: &'a L,
    name: &'static str,
    cache: Option<L::Cache>,
    _t: std::marker::PhantomData<T>,
}

impl<'a, T: Real, L: Layer<T>> Op<'a, T, L> {
    pub fn new(name: &'static str, layer: &'a L) -> Self {
        Op {
            layer,
            name,
            cache: None,
            _t: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, rng: Option<&mut SeedRng>) -> Result<Tensor<T>> {
        let (y, cache) = self.layer.forward(x, rng)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&self, dy: &Tensor<T>, grads: &mut L) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(Error::BackwardBeforeForward(self.name))?;
        self.layer.backward(cache, dy, grads)
    }
}
