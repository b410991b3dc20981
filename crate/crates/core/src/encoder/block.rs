use rand::Rng;

use super::dropout::MixDropout;
use super::dsc::{DepthwiseSeparable, DscCache};
use super::gated::{GatedConv, GatedConvCache};
use super::norm::{InstanceNorm, InstanceNormCache};
use crate::error::Result;
use crate::numerics::{
    activation, activation_backward, ActivationKind, Conv2d, Layer, Params, Real, SeedRng, Tensor,
};

/// Where the gated layer sits inside a convolution block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GatedPlacement {
    /// After the second convolution stage.
    Early,
    /// After the third (strided) convolution stage.
    Late,
    None,
}

impl GatedPlacement {
    pub fn name(self) -> &'static str {
        match self {
            GatedPlacement::Early => "early",
            GatedPlacement::Late => "late",
            GatedPlacement::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "early" => Some(GatedPlacement::Early),
            "late" => Some(GatedPlacement::Late),
            "none" => Some(GatedPlacement::None),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Standard convolutions with a gated layer.
    Conv,
    /// Depthwise separable convolutions, stride 1, no gated layer.
    Separable,
}

#[derive(Clone, Debug)]
pub enum SpatialConv<T> {
    Standard(Conv2d<T>),
    Separable(DepthwiseSeparable<T>),
}

#[derive(Clone, Debug)]
pub enum SpatialConvCache<T> {
    Standard(Tensor<T>),
    Separable(DscCache<T>),
}

impl<T: Real> SpatialConv<T> {
    /// Weight count of this layer and of a standard convolution with the same shape.
    pub fn weight_counts(&self) -> (usize, usize) {
        match self {
            SpatialConv::Standard(c) => (c.weight.len(), c.weight.len()),
            SpatialConv::Separable(d) => {
                let (c_in, c_out, k) = (d.depthwise.dim(0), d.pointwise.dim(0), d.kernel_size());
                (d.weight_count(false), c_in * c_out * k * k)
            }
        }
    }
}

impl<T: Real> Params<T> for SpatialConv<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        match self {
            SpatialConv::Standard(c) => c.visit(prefix, f),
            SpatialConv::Separable(d) => d.visit(prefix, f),
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        match self {
            SpatialConv::Standard(c) => c.visit_mut(prefix, f),
            SpatialConv::Separable(d) => d.visit_mut(prefix, f),
        }
    }
}

impl<T: Real> Layer<T> for SpatialConv<T> {
    type Cache = SpatialConvCache<T>;

    fn forward(&self, x: &Tensor<T>, rng: Option<&mut SeedRng>) -> Result<(Tensor<T>, Self::Cache)> {
        Ok(match self {
            SpatialConv::Standard(c) => {
                let (y, cache) = c.forward(x, rng)?;
                (y, SpatialConvCache::Standard(cache))
            }
            SpatialConv::Separable(d) => {
                let (y, cache) = d.forward(x, rng)?;
                (y, SpatialConvCache::Separable(cache))
            }
        })
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        match (self, cache, grads) {
            (SpatialConv::Standard(c), SpatialConvCache::Standard(k), SpatialConv::Standard(g)) => {
                c.backward(k, dy, g)
            }
            (SpatialConv::Separable(d), SpatialConvCache::Separable(k), SpatialConv::Separable(g)) => {
                d.backward(k, dy, g)
            }
            _ => Err(crate::Error::shape("spatial_conv_backward", "cache/layer kind mismatch")),
        }
    }
}

/// conv -> ReLU -> instance norm -> dropout.
#[derive(Clone, Debug)]
pub struct Stage<T> {
    pub conv: SpatialConv<T>,
    pub norm: InstanceNorm<T>,
}

#[derive(Clone, Debug)]
pub struct StageCache<T> {
    conv: SpatialConvCache<T>,
    pre: Tensor<T>,
    post: Tensor<T>,
    norm: InstanceNormCache<T>,
    drop: Option<Tensor<T>>,
}

impl<T: Real> Stage<T> {
    fn forward(
        &self,
        x: &Tensor<T>,
        dropout: &MixDropout,
        mut rng: Option<&mut SeedRng>,
    ) -> Result<(Tensor<T>, StageCache<T>)> {
        let (pre, conv) = self.conv.forward(x, rng.as_deref_mut())?;
        let post = activation(&pre, ActivationKind::Relu);
        let (normed, norm) = self.norm.forward(&post, None)?;
        let (y, drop) = dropout.forward(&normed, rng)?;
        Ok((y, StageCache { conv, pre, post, norm, drop }))
    }

    fn backward(
        &self,
        c: &StageCache<T>,
        dy: &Tensor<T>,
        dropout: &MixDropout,
        grads: &mut Self,
    ) -> Result<Tensor<T>> {
        let d = dropout.backward(&c.drop, dy, &mut dropout.clone())?;
        let d = self.norm.backward(&c.norm, &d, &mut grads.norm)?;
        let d = activation_backward(&c.pre, &c.post, &d, ActivationKind::Relu)?;
        self.conv.backward(&c.conv, &d, &mut grads.conv)
    }
}

impl<T: Real> Params<T> for Stage<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv.visit(&format!("{prefix}.conv"), f);
        self.norm.visit(&format!("{prefix}.norm"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv.visit_mut(&format!("{prefix}.conv"), f);
        self.norm.visit_mut(&format!("{prefix}.norm"), f);
    }
}

/// Three convolution stages with an optional gated layer (and optional norm after it).
#[derive(Clone, Debug)]
pub struct Block<T> {
    pub kind: BlockKind,
    pub stages: [Stage<T>; 3],
    pub gate: Option<GatedConv<T>>,
    pub gate_norm: Option<InstanceNorm<T>>,
    pub placement: GatedPlacement,
    pub dropout: MixDropout,
}

#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    stages: Vec<StageCache<T>>,
    gate: Option<GatedConvCache<T>>,
    gate_norm: Option<InstanceNormCache<T>>,
}

impl<T: Real> Block<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        kind: BlockKind,
        c_in: usize,
        c_out: usize,
        stride: (usize, usize),
        placement: GatedPlacement,
        norm_after_gated: bool,
        dropout: MixDropout,
        rng: &mut R,
    ) -> Self {
        let make = |ci: usize, s: (usize, usize), rng: &mut R| match kind {
            BlockKind::Conv => SpatialConv::Standard(Conv2d::new(ci, c_out, 3, s, rng)),
            BlockKind::Separable => SpatialConv::Separable(DepthwiseSeparable::new(ci, c_out, 3, s, rng)),
        };
        let last_stride = match kind {
            BlockKind::Conv => stride,
            BlockKind::Separable => (1, 1),
        };
        let stages = [
            Stage { conv: make(c_in, (1, 1), rng), norm: InstanceNorm::new(c_out) },
            Stage { conv: make(c_out, (1, 1), rng), norm: InstanceNorm::new(c_out) },
            Stage { conv: make(c_out, last_stride, rng), norm: InstanceNorm::new(c_out) },
        ];
        let placement = if kind == BlockKind::Separable { GatedPlacement::None } else { placement };
        let gate = (placement != GatedPlacement::None).then(|| GatedConv::new(c_out, rng));
        let gate_norm = (gate.is_some() && norm_after_gated).then(|| InstanceNorm::new(c_out));
        Block {
            kind,
            stages,
            gate,
            gate_norm,
            placement,
            dropout,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.stages[2].norm.gamma.len()
    }

    /// (actual weights, weights of the same topology with standard convolutions). Biases and
    /// norm parameters excluded.
    pub fn conv_weight_counts(&self) -> (usize, usize) {
        self.stages.iter().fold((0, 0), |(a, b), s| {
            let (x, y) = s.conv.weight_counts();
            (a + x, b + y)
        })
    }

    fn apply_gate(
        &self,
        x: Tensor<T>,
        cache: &mut BlockCache<T>,
    ) -> Result<Tensor<T>> {
        let Some(gate) = &self.gate else { return Ok(x) };
        let (y, gc) = gate.forward(&x, None)?;
        cache.gate = Some(gc);
        match &self.gate_norm {
            Some(norm) => {
                let (y, nc) = norm.forward(&y, None)?;
                cache.gate_norm = Some(nc);
                Ok(y)
            }
            None => Ok(y),
        }
    }

    fn gate_backward(&self, cache: &BlockCache<T>, dy: Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        let (Some(gate), Some(gc)) = (&self.gate, &cache.gate) else {
            return Ok(dy);
        };
        let dy = match (&self.gate_norm, &cache.gate_norm, grads.gate_norm.as_mut()) {
            (Some(n), Some(nc), Some(gn)) => n.backward(nc, &dy, gn)?,
            _ => dy,
        };
        let g = grads.gate.as_mut().expect("gradient buffer mirrors layer");
        gate.backward(gc, &dy, g)
    }
}

impl<T: Real> Params<T> for Block<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, s) in self.stages.iter().enumerate() {
            s.visit(&format!("{prefix}.stage{}", i + 1), f);
        }
        if let Some(g) = &self.gate {
            g.visit(&format!("{prefix}.gate"), f);
        }
        if let Some(n) = &self.gate_norm {
            n.visit(&format!("{prefix}.gate_norm"), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_mut(&format!("{prefix}.stage{}", i + 1), f);
        }
        if let Some(g) = &mut self.gate {
            g.visit_mut(&format!("{prefix}.gate"), f);
        }
        if let Some(n) = &mut self.gate_norm {
            n.visit_mut(&format!("{prefix}.gate_norm"), f);
        }
    }
}

impl<T: Real> Layer<T> for Block<T> {
    type Cache = BlockCache<T>;

    fn forward(&self, x: &Tensor<T>, mut rng: Option<&mut SeedRng>) -> Result<(Tensor<T>, Self::Cache)> {
        let mut cache = BlockCache {
            stages: Vec::with_capacity(3),
            gate: None,
            gate_norm: None,
        };
        let (mut h, c) = self.stages[0].forward(x, &self.dropout, rng.as_deref_mut())?;
        cache.stages.push(c);
        let (h2, c) = self.stages[1].forward(&h, &self.dropout, rng.as_deref_mut())?;
        cache.stages.push(c);
        h = h2;
        if self.placement == GatedPlacement::Early {
            h = self.apply_gate(h, &mut cache)?;
        }
        let (h3, c) = self.stages[2].forward(&h, &self.dropout, rng)?;
        cache.stages.push(c);
        h = h3;
        if self.placement == GatedPlacement::Late {
            h = self.apply_gate(h, &mut cache)?;
        }
        Ok((h, cache))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        let mut d = dy.clone();
        if self.placement == GatedPlacement::Late {
            d = self.gate_backward(cache, d, grads)?;
        }
        d = self.stages[2].backward(&cache.stages[2], &d, &self.dropout, &mut grads.stages[2])?;
        if self.placement == GatedPlacement::Early {
            d = self.gate_backward(cache, d, grads)?;
        }
        d = self.stages[1].backward(&cache.stages[1], &d, &self.dropout, &mut grads.stages[1])?;
        self.stages[0].backward(&cache.stages[0], &d, &self.dropout, &mut grads.stages[0])
    }
}
