//! Optimizers and the paragraph training loop.

use std::io::Write;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::ctc::LabelSeq;
use crate::data::augment::{augment, AugmentConfig};
use crate::data::{synth::SynthConfig, Alphabet, ParagraphSample};
use crate::error::{Error, Result};
use crate::model::{LossParts, Model};
use crate::numerics::{Params, Real, SeedRng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd or adam)")),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

/// Fixed-rate SGD, or Adam with the usual moment decay constants.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn update<P: Params<T>>(&mut self, params: &mut P, grads: &P) {
        let mut flat: Vec<Vec<T>> = Vec::new();
        grads.visit("", &mut |_, g| flat.push(g.data().to_vec()));
        self.step += 1;
        if self.kind == OptimizerKind::Adam && self.m.is_empty() {
            self.m = flat.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        let lr = T::lit(self.lr);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.step as i32));
        let eps = T::lit(self.eps);
        let mut idx = 0;
        params.visit_mut("", &mut |_, p| {
            let g = &flat[idx];
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &d) in p.data_mut().iter_mut().zip(g) {
                        *w -= lr * d;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
                    for (((w, &d), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (T::one() - b1) * d;
                        *v = b2 * *v + (T::one() - b2) * d * d;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
            idx += 1;
        });
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm<T: Real, P: Params<T>>(grads: &mut P, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    grads.visit("", &mut |_, g| sq += g.data().iter().map(|&x| x.as_f64() * x.as_f64()).sum::<f64>());
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::lit(max_norm / norm);
        grads.visit_mut("", &mut |_, g| g.data_mut().iter_mut().for_each(|x| *x *= s));
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub lambda: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    pub augment: Option<AugmentConfig>,
    pub dropout: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e-3,
            lambda: 1.0,
            clip_norm: 0.0,
            seed: 0,
            augment: None,
            dropout: false,
        }
    }
}

/// A paragraph image with one label sequence per line.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub id: String,
    pub image: Tensor<f32>,
    pub targets: Vec<LabelSeq>,
}

impl TrainSample {
    pub fn from_paragraph(sample: &ParagraphSample, alphabet: &Alphabet) -> Result<Self> {
        Ok(TrainSample {
            id: sample.id.clone(),
            image: sample.image.clone(),
            targets: sample.lines.iter().map(|l| alphabet.encode(l)).collect::<Result<_>>()?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub ctc_loss: f64,
    pub ce_loss: f64,
}

/// Writes the loss log as CSV.
pub struct LossLog<W: Write> {
    out: W,
}

impl<W: Write> LossLog<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "iteration,ctc_loss,ce_loss")?;
        Ok(LossLog { out })
    }

    pub fn record(&mut self, r: &IterationRecord) -> Result<()> {
        writeln!(self.out, "{},{},{}", r.iteration, r.ctc_loss, r.ce_loss)?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

fn numeric_failure(iteration: usize, err: Error) -> Error {
    match err {
        Error::NonFinite(provenance) => Error::NumericFailure { iteration, provenance },
        other => other,
    }
}

/// Epoch-shuffled sample order, deterministic in the seed.
struct Schedule {
    order: Vec<usize>,
    pos: usize,
    rng: SeedRng,
}

impl Schedule {
    fn new(n: usize, rng: SeedRng) -> Self {
        Schedule {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn prepare_image<T: Real>(image: &Tensor<f32>, augment_cfg: Option<&AugmentConfig>, rng: &mut SeedRng) -> Result<Tensor<T>> {
    match augment_cfg {
        Some(cfg) => Ok(augment(image, rng, cfg).cast()),
        None => Ok(image.cast()),
    }
}

/// Runs `cfg.iterations` single-sample updates of the joint objective. `on_iteration` sees every
/// record as it is produced. Iterations are numbered from 1.
///
/// Samples whose line count or label lengths cannot be aligned are skipped with a warning.
pub fn train<T: Real>(
    model: &mut Model<T>,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    mut on_iteration: impl FnMut(&IterationRecord) -> Result<()>,
) -> Result<Vec<IterationRecord>> {
    if samples.is_empty() && cfg.iterations > 0 {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut grads = model.zeros_like();
    let mut schedule = Schedule::new(samples.len(), SeedRng::seed_from_u64(cfg.seed));
    let mut rng = SeedRng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut records = Vec::with_capacity(cfg.iterations);
    for iteration in 1..=cfg.iterations {
        let sample = &samples[schedule.next()];
        let image = prepare_image::<T>(&sample.image, cfg.augment.as_ref(), &mut rng)?;
        grads.zero();
        let dropout_rng = if cfg.dropout { Some(&mut rng) } else { None };
        let parts = match model.loss_and_grad(&image, &sample.targets, cfg.lambda, dropout_rng, &mut grads) {
            Ok(p) => p,
            Err(Error::InfeasibleAlignment { required, available }) => {
                warn!("iteration {iteration}: skipping {} ({required} frames needed, {available} available)", sample.id);
                continue;
            }
            Err(e) => return Err(numeric_failure(iteration, e)),
        };
        step(model, &mut grads, &mut optimizer, cfg.clip_norm, iteration)?;
        let record = IterationRecord {
            iteration,
            ctc_loss: parts.ctc,
            ce_loss: parts.ce,
        };
        debug!("iteration {iteration}: ctc {:.4} ce {:.4}", parts.ctc, parts.ce);
        on_iteration(&record)?;
        records.push(record);
    }
    Ok(records)
}

fn step<T: Real>(
    model: &mut Model<T>,
    grads: &mut Model<T>,
    optimizer: &mut Optimizer<T>,
    clip_norm: f64,
    iteration: usize,
) -> Result<()> {
    if let Some(name) = grads.all_finite() {
        return Err(Error::NumericFailure {
            iteration,
            provenance: format!("gradient of {name}"),
        });
    }
    clip_global_norm(grads, clip_norm);
    optimizer.update(model, grads);
    if let Some(name) = model.all_finite() {
        return Err(Error::NumericFailure {
            iteration,
            provenance: format!("parameter {name} after update"),
        });
    }
    Ok(())
}

/// Synthetic single-line pages at the geometry of `synth`, for line-level pretraining.
pub fn line_samples(synth: &SynthConfig, alphabet: &Alphabet, seed: u64, count: usize) -> Result<Vec<(Tensor<f32>, LabelSeq)>> {
    let single = SynthConfig {
        min_lines: 1,
        max_lines: 1,
        ..synth.clone()
    };
    single
        .generate(seed, LINE_STREAM, count)?
        .into_iter()
        .map(|s| Ok((s.image, alphabet.encode(&s.lines[0])?)))
        .collect()
}

const LINE_STREAM: u64 = 0xffff;

/// Line-level pretraining: pure CTC on single-line samples, encoder and decoder only.
pub fn pretrain_lines<T: Real>(
    model: &mut Model<T>,
    lines: &[(Tensor<f32>, LabelSeq)],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if lines.is_empty() && cfg.iterations > 0 {
        return Err(Error::Data("no line samples for pretraining".into()));
    }
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut grads = model.zeros_like();
    let mut schedule = Schedule::new(lines.len(), SeedRng::seed_from_u64(cfg.seed));
    let mut rng = SeedRng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for iteration in 1..=cfg.iterations {
        let (image, target) = &lines[schedule.next()];
        let image = prepare_image::<T>(image, cfg.augment.as_ref(), &mut rng)?;
        grads.zero();
        let dropout_rng = if cfg.dropout { Some(&mut rng) } else { None };
        let loss = match model.line_loss_and_grad(&image, target, dropout_rng, &mut grads) {
            Ok(l) => l,
            Err(Error::InfeasibleAlignment { .. }) => continue,
            Err(e) => return Err(numeric_failure(iteration, e)),
        };
        step(model, &mut grads, &mut optimizer, cfg.clip_norm, iteration)?;
        losses.push(loss);
    }
    Ok(losses)
}

/// Mean joint loss over a set, without updates.
pub fn evaluate_loss<T: Real>(model: &Model<T>, samples: &[TrainSample], lambda: f64) -> Result<LossParts> {
    let mut total = LossParts::default();
    for s in samples {
        let p = model.loss(&s.image.cast(), &s.targets, lambda)?;
        total.ctc += p.ctc;
        total.ce += p.ce;
        total.total += p.total;
    }
    let n = samples.len().max(1) as f64;
    Ok(LossParts {
        ctc: total.ctc / n,
        ce: total.ce / n,
        total: total.total / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_moves_against_the_gradient() {
        let mut p = Tensor::<f64>::from_f64(&[2], &[1.0, -1.0]).unwrap();
        let g = Tensor::<f64>::from_f64(&[2], &[0.5, -2.0]).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1);
        opt.update(&mut p, &g);
        assert_eq!(p.data(), &[0.95, -0.8]);
    }

    #[test]
    fn adam_first_step_has_learning_rate_magnitude() {
        let mut p = Tensor::<f64>::from_f64(&[3], &[0.0, 0.0, 0.0]).unwrap();
        let g = Tensor::<f64>::from_f64(&[3], &[1e-3, -5.0, 200.0]).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01);
        opt.update(&mut p, &g);
        for (&w, &d) in p.data().iter().zip(g.data()) {
            assert!((w + 0.01 * d.signum()).abs() < 1e-6, "{w}");
        }
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = Tensor::<f64>::from_f64(&[2], &[3.0, 4.0]).unwrap();
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g.data()[0] - 0.6).abs() < 1e-12 && (g.data()[1] - 0.8).abs() < 1e-12);
        assert_eq!(clip_global_norm(&mut g, 0.0), 1.0);
    }

    #[test]
    fn loss_log_is_csv() {
        let mut log = LossLog::new(Vec::new()).unwrap();
        log.record(&IterationRecord {
            iteration: 1,
            ctc_loss: 2.5,
            ce_loss: 0.25,
        })
        .unwrap();
        let text = String::from_utf8(log.into_inner()).unwrap();
        assert_eq!(text, "iteration,ctc_loss,ce_loss\n1,2.5,0.25\n");
    }

    #[test]
    fn pretraining_lowers_line_loss() {
        use crate::gradsuite::tiny_model_config;
        use crate::encoder::GatedPlacement;
        let synth = SynthConfig {
            height: 16,
            width: 64,
            max_chars: 8,
            line_pitch: 8,
            vocabulary: vec!["ab".into(), "ba".into(), "abba".into()],
            punctuation: 0.0,
            ..SynthConfig::toy()
        };
        let alphabet = Alphabet::new(synth.charset()).unwrap();
        let lines = line_samples(&synth, &alphabet, 1, 4).unwrap();
        assert!(lines.iter().all(|(img, t)| img.shape() == [1, 16, 64] && !t.is_empty()));
        let mut config = tiny_model_config(GatedPlacement::Early);
        config.labels = alphabet.len();
        let mut model = Model::<f64>::new(config, &mut SeedRng::seed_from_u64(0)).unwrap();
        let cfg = TrainConfig {
            iterations: 60,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let losses = pretrain_lines(&mut model, &lines, &cfg).unwrap();
        let head: f64 = losses[..8].iter().sum();
        let tail: f64 = losses[losses.len() - 8..].iter().sum();
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn schedule_visits_every_sample_each_epoch() {
        let mut s = Schedule::new(7, SeedRng::seed_from_u64(1));
        for _ in 0..3 {
            let mut seen: Vec<usize> = (0..7).map(|_| s.next()).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..7).collect::<Vec<_>>());
        }
    }
}
