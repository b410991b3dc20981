use rand::Rng;

use crate::error::Result;
use crate::numerics::{Layer, Params, Real, SeedRng, Tensor};

/// Diffused mix dropout: at each application, either elementwise dropout or whole-channel
/// dropout fires (chosen with probability `mix` for elementwise). Identity in eval mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixDropout {
    pub p_elementwise: f64,
    pub p_channel: f64,
    pub mix: f64,
}

impl Default for MixDropout {
    fn default() -> Self {
        MixDropout {
            p_elementwise: 0.25,
            p_channel: 0.25,
            mix: 0.5,
        }
    }
}

impl MixDropout {
    pub fn disabled() -> Self {
        MixDropout {
            p_elementwise: 0.0,
            p_channel: 0.0,
            mix: 0.5,
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.p_elementwise == 0.0 && self.p_channel == 0.0
    }
}

impl<T: Real> Params<T> for MixDropout {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor<T>)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor<T>)) {}
}

impl<T: Real> Layer<T> for MixDropout {
    /// Scaled keep-mask, `None` when nothing was dropped.
    type Cache = Option<Tensor<T>>;

    fn forward(&self, x: &Tensor<T>, rng: Option<&mut SeedRng>) -> Result<(Tensor<T>, Self::Cache)> {
        let Some(rng) = rng else {
            return Ok((x.clone(), None));
        };
        if self.is_disabled() {
            return Ok((x.clone(), None));
        }
        let elementwise = rng.gen_bool(self.mix);
        let p = if elementwise { self.p_elementwise } else { self.p_channel };
        if p <= 0.0 {
            return Ok((x.clone(), None));
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mut mask = Tensor::zeros(x.shape());
        if elementwise {
            for m in mask.data_mut() {
                if !rng.gen_bool(p) {
                    *m = keep;
                }
            }
        } else {
            let plane = x.len() / x.dim(0).max(1);
            for chunk in mask.data_mut().chunks_mut(plane.max(1)) {
                if !rng.gen_bool(p) {
                    chunk.fill(keep);
                }
            }
        }
        let mut y = x.clone();
        for (v, &m) in y.data_mut().iter_mut().zip(mask.data()) {
            *v *= m;
        }
        Ok((y, Some(mask)))
    }

    fn backward(&self, mask: &Self::Cache, dy: &Tensor<T>, _: &mut Self) -> Result<Tensor<T>> {
        let mut dx = dy.clone();
        if let Some(mask) = mask {
            for (v, &m) in dx.data_mut().iter_mut().zip(mask.data()) {
                *v *= m;
            }
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn eval_mode_is_identity() {
        let mut rng = SeedRng::seed_from_u64(0);
        let x = Tensor::<f64>::uniform(&[3, 4, 4], -1.0, 1.0, &mut rng);
        let (y, mask) = MixDropout::default().forward(&x, None).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
    }

    #[test]
    fn channel_mode_drops_whole_maps() {
        let mut rng = SeedRng::seed_from_u64(1);
        let d = MixDropout {
            p_elementwise: 0.5,
            p_channel: 0.5,
            mix: 0.0,
        };
        let x = Tensor::<f64>::filled(&[16, 3, 3], 1.0);
        let (y, _) = d.forward(&x, Some(&mut rng)).unwrap();
        for plane in y.data().chunks(9) {
            assert!(plane.iter().all(|&v| v == plane[0]));
            assert!(plane[0] == 0.0 || plane[0] == 2.0);
        }
    }

    #[test]
    fn backward_applies_same_mask() {
        let mut rng = SeedRng::seed_from_u64(2);
        let d = MixDropout::default();
        let x = Tensor::<f64>::filled(&[2, 5, 5], 1.0);
        let (y, mask) = d.forward(&x, Some(&mut rng)).unwrap();
        let dx = d.backward(&mask, &x, &mut d.clone()).unwrap();
        assert_eq!(dx, y);
    }
}
