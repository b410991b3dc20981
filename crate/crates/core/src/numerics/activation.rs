use super::layer::{Layer, Params, SeedRng};
use super::{Real, Tensor};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    Tanh,
    Sigmoid,
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
/// NaN passes through so that non-finite activations stay detectable downstream.
pub fn relu<T: Real>(x: T) -> T {
    if x < T::zero() {
        T::zero()
    } else {
        x
    }
}

impl ActivationKind {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            ActivationKind::Relu => relu(x),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the forward output `y` (and input `x` for ReLU).
    #[inline]
    pub fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            ActivationKind::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            ActivationKind::Tanh => T::one() - y * y,
            ActivationKind::Sigmoid => y * (T::one() - y),
        }
    }
}

pub fn activation<T: Real>(x: &Tensor<T>, kind: ActivationKind) -> Tensor<T> {
    x.map(|v| kind.apply(v))
}

/// Input gradient of [`activation`] given the cached input and output.
pub fn activation_backward<T: Real>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    dy: &Tensor<T>,
    kind: ActivationKind,
) -> Result<Tensor<T>> {
    dy.expect_shape("activation_backward", x.shape())?;
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .zip(dy.data())
        .map(|((&xi, &yi), &g)| g * kind.derivative(xi, yi))
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Parameter-free activation layer.
#[derive(Clone, Copy, Debug)]
pub struct Activation(pub ActivationKind);

impl<T: Real> Params<T> for Activation {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor<T>)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor<T>)) {}
}

impl<T: Real> Layer<T> for Activation {
    type Cache = (Tensor<T>, Tensor<T>);

    fn forward(&self, x: &Tensor<T>, _: Option<&mut SeedRng>) -> Result<(Tensor<T>, Self::Cache)> {
        let y = activation(x, self.0);
        Ok((y.clone(), (x.clone(), y)))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, _: &mut Self) -> Result<Tensor<T>> {
        activation_backward(&cache.0, &cache.1, dy, self.0)
    }
}
