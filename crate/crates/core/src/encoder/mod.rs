//! Convolutional feature extractor: convolution blocks with a gated layer, followed by
//! depthwise-separable blocks, with residual sums between equally shaped consecutive blocks.

mod block;
mod dropout;
mod dsc;
mod gated;
mod norm;

use rand::Rng;

pub use block::{Block, BlockCache, BlockKind, GatedPlacement, SpatialConv, Stage};
pub use dropout::MixDropout;
pub use dsc::DepthwiseSeparable;
pub use gated::GatedConv;
pub use norm::{InstanceNorm, DEFAULT_EPS};

use crate::error::{Error, Result};
use crate::numerics::{ConvGeometry, Layer, Params, Real, SeedRng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub cb_channels: Vec<usize>,
    pub cb_strides: Vec<(usize, usize)>,
    pub dscb_channels: Vec<usize>,
    pub gated_placement: GatedPlacement,
    /// Insert an instance norm directly after each gated layer.
    pub norm_after_gated: bool,
    pub dropout: MixDropout,
}

impl EncoderConfig {
    /// Small network for desk-scale experiments: height /8, width /4.
    pub fn toy() -> Self {
        EncoderConfig {
            cb_channels: vec![8, 16, 32, 64],
            cb_strides: vec![(2, 2), (2, 2), (2, 1), (1, 1)],
            dscb_channels: vec![64, 64],
            gated_placement: GatedPlacement::Early,
            norm_after_gated: false,
            dropout: MixDropout::default(),
        }
    }

    /// Paragraph-scale network: height /32, width /8.
    pub fn full() -> Self {
        EncoderConfig {
            cb_channels: vec![16, 32, 64, 128, 128, 128],
            cb_strides: vec![(2, 2), (2, 2), (2, 2), (2, 1), (2, 1), (1, 1)],
            dscb_channels: vec![128, 128, 128, 128],
            gated_placement: GatedPlacement::Early,
            norm_after_gated: false,
            dropout: MixDropout::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cb_channels.is_empty() {
            return Err(Error::Invalid("encoder needs at least one convolution block".into()));
        }
        if self.cb_channels.len() != self.cb_strides.len() {
            return Err(Error::Invalid(format!(
                "{} convolution blocks but {} strides",
                self.cb_channels.len(),
                self.cb_strides.len()
            )));
        }
        if self.cb_channels.iter().chain(&self.dscb_channels).any(|&c| c == 0) {
            return Err(Error::Invalid("channel counts must be positive".into()));
        }
        if self.cb_strides.iter().any(|&(a, b)| a == 0 || b == 0) {
            return Err(Error::Invalid("strides must be >= 1".into()));
        }
        Ok(())
    }

    pub fn downsampling(&self) -> (usize, usize) {
        self.cb_strides
            .iter()
            .fold((1, 1), |(h, w), &(sh, sw)| (h * sh, w * sw))
    }

    pub fn feature_channels(&self) -> usize {
        *self
            .dscb_channels
            .last()
            .or(self.cb_channels.last())
            .expect("validated")
    }

    /// `(C_f, H_f, W_f)` for an input of `h x w`.
    pub fn output_shape(&self, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        let (mut h, mut w) = (h, w);
        for &stride in &self.cb_strides {
            let g = ConvGeometry::same(3, (1, 1));
            g.output_hw(h, w)?;
            (h, w) = ConvGeometry::same(3, stride).output_hw(h, w)?;
        }
        Ok((self.feature_channels(), h, w))
    }
}

#[derive(Clone, Debug)]
pub struct Encoder<T> {
    pub config: EncoderConfig,
    pub blocks: Vec<Block<T>>,
}

#[derive(Clone, Debug)]
pub struct EncoderCache<T> {
    blocks: Vec<BlockCache<T>>,
    residual: Vec<bool>,
}

impl<T: Real> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::new();
        let mut c_in = 1;
        for (&c, &s) in config.cb_channels.iter().zip(&config.cb_strides) {
            blocks.push(Block::new(
                BlockKind::Conv,
                c_in,
                c,
                s,
                config.gated_placement,
                config.norm_after_gated,
                config.dropout,
                rng,
            ));
            c_in = c;
        }
        for &c in &config.dscb_channels {
            blocks.push(Block::new(
                BlockKind::Separable,
                c_in,
                c,
                (1, 1),
                GatedPlacement::None,
                false,
                config.dropout,
                rng,
            ));
            c_in = c;
        }
        Ok(Encoder { config, blocks })
    }

    /// Weight counts of the separable blocks against their standard-convolution equivalents.
    pub fn separable_block_counts(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .filter(|b| b.kind == BlockKind::Separable)
            .map(|b| b.conv_weight_counts())
            .collect()
    }
}

impl<T: Real> Params<T> for Encoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("{prefix}.block{i}"), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}.block{i}"), f);
        }
    }
}

impl<T: Real> Layer<T> for Encoder<T> {
    type Cache = EncoderCache<T>;

    /// Runs every block; a non-finite activation aborts with the block index.
    fn forward(&self, x: &Tensor<T>, mut rng: Option<&mut SeedRng>) -> Result<(Tensor<T>, Self::Cache)> {
        if x.rank() != 3 || x.dim(0) != 1 {
            return Err(Error::shape("encode", format!("expected [1,H,W] image, got {:?}", x.shape())));
        }
        let mut cache = EncoderCache {
            blocks: Vec::with_capacity(self.blocks.len()),
            residual: Vec::with_capacity(self.blocks.len()),
        };
        let mut h = x.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            let (mut y, bc) = block.forward(&h, rng.as_deref_mut())?;
            let residual = y.shape() == h.shape();
            if residual {
                y.add_assign(&h)?;
            }
            y.ensure_finite(|| format!("encoder block {i} ({:?})", block.kind))?;
            cache.blocks.push(bc);
            cache.residual.push(residual);
            h = y;
        }
        Ok((h, cache))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        let mut d = dy.clone();
        for i in (0..self.blocks.len()).rev() {
            let mut dx = self.blocks[i].backward(&cache.blocks[i], &d, &mut grads.blocks[i])?;
            if cache.residual[i] {
                dx.add_assign(&d)?;
            }
            d = dx;
        }
        Ok(d)
    }
}
