//! Finite-difference checks for every parameterized layer and for the joint loss, in `f64`.

use rand::SeedableRng;

use crate::attention::AttentionConfig;
use crate::decoder::Decoder;
use crate::encoder::{DepthwiseSeparable, EncoderConfig, GatedConv, GatedPlacement, InstanceNorm, MixDropout};
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::numerics::gradcheck::{check_layer, check_params, GradCheckEntry};
use crate::numerics::{Conv2d, Params, SeedRng, Tensor};

/// Small enough that every path through the recognizer is checked in milliseconds.
pub fn tiny_model_config(placement: GatedPlacement) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            cb_channels: vec![2, 3, 3],
            cb_strides: vec![(2, 2), (1, 1), (1, 1)],
            dscb_channels: vec![3],
            gated_placement: placement,
            norm_after_gated: false,
            dropout: MixDropout::disabled(),
        },
        attention: AttentionConfig {
            dim: 4,
            coverage_channels: 2,
            coverage_kernel: 7,
        },
        hidden: 3,
        labels: 3,
    }
}

fn decoder_entries(rng: &mut SeedRng, max_per_tensor: usize) -> Result<Vec<GradCheckEntry>> {
    let mut dec = Decoder::<f64>::new(3, 4, 5, rng);
    dec.lstm.bias = Tensor::uniform(dec.lstm.bias.shape(), -0.5, 0.5, rng);
    dec.projection.bias = Tensor::uniform(&[5], -0.5, 0.5, rng);
    let x = Tensor::uniform(&[5, 3], -1.0, 1.0, rng);
    let h0: Vec<f64> = Tensor::<f64>::uniform(&[4], -0.5, 0.5, rng).into_data();
    let c0: Vec<f64> = Tensor::<f64>::uniform(&[4], -0.5, 0.5, rng).into_data();
    let u = Tensor::uniform(&[5, 5], -1.0, 1.0, rng);
    let a = Tensor::uniform(&[4], -1.0, 1.0, rng);
    let b = Tensor::uniform(&[4], -1.0, 1.0, rng);
    let loss = |d: &Decoder<f64>, x: &Tensor<f64>| -> Result<f64> {
        let (o, _) = d.forward(x, &h0, &c0)?;
        let tail: f64 = o.h_last.iter().zip(a.data()).chain(o.c_last.iter().zip(b.data())).map(|(p, q)| p * q).sum();
        Ok(o.logits.dot(&u)? + tail)
    };
    let (_, cache) = dec.forward(&x, &h0, &c0)?;
    let mut g = dec.zeros_like();
    let (dx, _, _) = dec.backward(&cache, &u, a.data(), b.data(), &mut g)?;
    let mut entries = check_params("decoder", &dec, &g, max_per_tensor, |d| loss(d, &x))?;
    entries.extend(check_params("decoder.input", &x, &dx, max_per_tensor, |x| loss(&dec, x))?);
    Ok(entries)
}

fn joint_entries(seed: u64, placement: GatedPlacement, max_per_tensor: usize) -> Result<Vec<GradCheckEntry>> {
    let mut rng = SeedRng::seed_from_u64(seed);
    let model = Model::<f64>::new(tiny_model_config(placement), &mut rng)?;
    let image = Tensor::uniform(&[1, 8, 16], 0.0, 1.0, &mut rng);
    let targets = vec![vec![0, 1], vec![2, 2, 0]];
    let lambda = 1.0;
    let mut g = model.zeros_like();
    model.loss_and_grad(&image, &targets, lambda, None, &mut g)?;
    check_params("joint", &model, &g, max_per_tensor, |m| Ok(m.loss(&image, &targets, lambda)?.total))
}

/// One entry per parameter tensor (and per checked input) for a single seed. `placement` sets
/// where the joint-loss model puts its gated layers.
pub fn run(seed: u64, max_per_tensor: usize, placement: GatedPlacement) -> Result<Vec<GradCheckEntry>> {
    let mut rng = SeedRng::seed_from_u64(seed);
    let mut entries = Vec::new();

    let mut conv = Conv2d::<f64>::new(2, 3, 3, (2, 1), &mut rng);
    conv.bias = Tensor::uniform(&[3], -0.3, 0.3, &mut rng);
    let x = Tensor::uniform(&[2, 5, 6], -1.0, 1.0, &mut rng);
    entries.extend(check_layer("conv", &conv, &x, seed, max_per_tensor)?);

    let mut gated = GatedConv::<f64>::new(2, &mut rng);
    gated.filter_bias = Tensor::uniform(&[2], -0.3, 0.3, &mut rng);
    gated.gate_bias = Tensor::uniform(&[2], -0.3, 0.3, &mut rng);
    let x = Tensor::uniform(&[2, 4, 5], -1.0, 1.0, &mut rng);
    entries.extend(check_layer("gated", &gated, &x, seed, max_per_tensor)?);

    let mut norm = InstanceNorm::<f64>::new(3);
    norm.gamma = Tensor::uniform(&[3], 0.5, 1.5, &mut rng);
    norm.beta = Tensor::uniform(&[3], -0.5, 0.5, &mut rng);
    let x = Tensor::uniform(&[3, 4, 4], -2.0, 2.0, &mut rng);
    entries.extend(check_layer("instance_norm", &norm, &x, seed, max_per_tensor)?);

    let dsc = DepthwiseSeparable::<f64>::new(3, 4, 3, (1, 1), &mut rng);
    let x = Tensor::uniform(&[3, 4, 5], -1.0, 1.0, &mut rng);
    entries.extend(check_layer("dsc", &dsc, &x, seed, max_per_tensor)?);

    entries.extend(decoder_entries(&mut rng, max_per_tensor)?);
    entries.extend(joint_entries(seed, placement, max_per_tensor)?);
    Ok(entries)
}

/// `run` over several seeds, entries prefixed with the seed.
pub fn run_seeds(seeds: &[u64], max_per_tensor: usize, placement: GatedPlacement) -> Result<Vec<GradCheckEntry>> {
    let mut all = Vec::new();
    for &seed in seeds {
        all.extend(run(seed, max_per_tensor, placement)?.into_iter().map(|mut e| {
            e.name = format!("seed{seed}/{}", e.name);
            e
        }));
    }
    Ok(all)
}
