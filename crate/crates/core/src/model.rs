//! The full recognizer: encoder, vertical attention and line decoder, with the joint
//! training objective and its gradient.

use rand::Rng;

use crate::attention::{
    backward_paragraph, decision_ce_logits, pool_rows, run_paragraph, Attention, AttentionConfig, ParagraphTrace,
    RunMode, CONTINUE, STOP,
};
use crate::ctc::{ctc_loss_log, LabelSeq};
use crate::decoder::{Decoder, ProbMatrix};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::numerics::{Layer, Params, Real, SeedRng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub attention: AttentionConfig,
    pub hidden: usize,
    /// Character classes excluding the blank.
    pub labels: usize,
}

impl ModelConfig {
    pub fn toy(labels: usize) -> Self {
        ModelConfig {
            encoder: EncoderConfig::toy(),
            attention: AttentionConfig::toy(),
            hidden: 64,
            labels,
        }
    }

    pub fn full(labels: usize) -> Self {
        ModelConfig {
            encoder: EncoderConfig::full(),
            attention: AttentionConfig::full(),
            hidden: 256,
            labels,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub encoder: Encoder<T>,
    pub attention: Attention<T>,
    pub decoder: Decoder<T>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub ctc: f64,
    pub ce: f64,
    pub total: f64,
}

/// Log-softmax of each row, in `f64`.
fn log_softmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<f64> {
    let k = logits.dim(1);
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b.as_f64()));
        let lse = m + row.iter().map(|&x| (x.as_f64() - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|&x| x.as_f64() - lse));
    }
    out
}

impl<T: Real> Model<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        if config.labels == 0 || config.hidden == 0 {
            return Err(Error::Invalid("model needs at least one label and a non-empty hidden state".into()));
        }
        let encoder = Encoder::new(config.encoder.clone(), rng)?;
        let channels = config.encoder.feature_channels();
        let attention = Attention::new(channels, config.hidden, config.attention, rng)?;
        let decoder = Decoder::new(channels, config.hidden, config.labels + 1, rng);
        Ok(Model {
            config,
            encoder,
            attention,
            decoder,
        })
    }

    pub fn blank(&self) -> usize {
        self.config.labels
    }

    /// Objective value and gradients for one paragraph. `rng` enables dropout.
    pub fn loss_and_grad(
        &self,
        image: &Tensor<T>,
        targets: &[LabelSeq],
        lambda: f64,
        rng: Option<&mut SeedRng>,
        grads: &mut Self,
    ) -> Result<LossParts> {
        let (features, enc_cache) = self.encoder.forward(image, rng)?;
        let ctx = self.attention.prepare(&features)?;
        let trace = run_paragraph(&self.attention, &self.decoder, &ctx, RunMode::Train { lines: targets.len() })?;
        let (parts, d_lines, d_decisions) = self.objective(&trace, targets, lambda)?;
        let d_features = backward_paragraph(
            &self.attention,
            &self.decoder,
            &ctx,
            &trace,
            &d_lines,
            &d_decisions,
            &mut grads.attention,
            &mut grads.decoder,
        )?;
        self.encoder.backward(&enc_cache, &d_features, &mut grads.encoder)?;
        Ok(parts)
    }

    /// Objective value only (no backward), same arithmetic as [`Model::loss_and_grad`].
    pub fn loss(&self, image: &Tensor<T>, targets: &[LabelSeq], lambda: f64) -> Result<LossParts> {
        let (features, _) = self.encoder.forward(image, None)?;
        let ctx = self.attention.prepare(&features)?;
        let trace = run_paragraph(&self.attention, &self.decoder, &ctx, RunMode::Train { lines: targets.len() })?;
        Ok(self.objective(&trace, targets, lambda)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn objective(
        &self,
        trace: &ParagraphTrace<T>,
        targets: &[LabelSeq],
        lambda: f64,
    ) -> Result<(LossParts, Vec<Tensor<T>>, Vec<[T; 2]>)> {
        let mut parts = LossParts::default();
        let mut d_lines = Vec::with_capacity(targets.len());
        for (k, (line, target)) in trace.lines.iter().zip(targets).enumerate() {
            let (loss, grad) = self.line_ctc(&line.logits, target)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("ctc loss of line {}", k + 1)));
            }
            parts.ctc += loss;
            d_lines.push(grad);
        }
        let mut d_decisions = Vec::with_capacity(trace.steps.len());
        for (k, step) in trace.steps.iter().enumerate() {
            let target = if k < targets.len() { CONTINUE } else { STOP };
            let ce = decision_ce_logits(&step.decision_logits, target);
            if !ce.is_finite() {
                return Err(Error::NonFinite(format!("paragraph-end decision at step {}", k + 1)));
            }
            parts.ce += ce;
            let mut g = step.decision;
            g[target] -= T::one();
            d_decisions.push([g[0] * T::lit(lambda), g[1] * T::lit(lambda)]);
        }
        parts.total = parts.ctc + lambda * parts.ce;
        if !parts.total.is_finite() {
            return Err(Error::NonFinite("joint loss".into()));
        }
        Ok((parts, d_lines, d_decisions))
    }

    fn line_ctc(&self, logits: &Tensor<T>, target: &LabelSeq) -> Result<(f64, Tensor<T>)> {
        let (frames, classes) = (logits.dim(0), logits.dim(1));
        let out = ctc_loss_log(&log_softmax_rows(logits), frames, classes, self.blank(), target)?;
        let grad = Tensor::from_vec(&[frames, classes], out.grad_logits.into_iter().map(T::lit).collect())?;
        Ok((out.loss, grad))
    }

    /// Pure CTC on a single-line image: rows are pooled uniformly instead of attended.
    /// Trains the encoder and decoder only.
    pub fn line_loss_and_grad(
        &self,
        image: &Tensor<T>,
        target: &LabelSeq,
        rng: Option<&mut SeedRng>,
        grads: &mut Self,
    ) -> Result<f64> {
        let (features, enc_cache) = self.encoder.forward(image, rng)?;
        let (c, h, w) = (features.dim(0), features.dim(1), features.dim(2));
        let beta = vec![T::lit(1.0 / h as f64); h];
        let line = pool_rows(&features, &beta)?;
        let zeros = vec![T::zero(); self.decoder.hidden_size()];
        let (out, cache) = self.decoder.forward(&line, &zeros, &zeros)?;
        let (loss, d_logits) = self.line_ctc(&out.logits, target)?;
        let (d_line, _, _) = self.decoder.backward(&cache, &d_logits, &zeros, &zeros, &mut grads.decoder)?;
        let mut d_features = Tensor::zeros(&[c, h, w]);
        let dl = d_line.data();
        for (ch, plane) in d_features.data_mut().chunks_exact_mut(h * w).enumerate() {
            for (i, row) in plane.chunks_exact_mut(w).enumerate() {
                for (x, v) in row.iter_mut().enumerate() {
                    *v = beta[i] * dl[x * c + ch];
                }
            }
        }
        self.encoder.backward(&enc_cache, &d_features, &mut grads.encoder)?;
        Ok(loss)
    }

    /// Inference: line posteriors in attention order plus the per-step decisions.
    pub fn recognize(&self, image: &Tensor<T>, max_lines: usize) -> Result<Recognition<T>> {
        let (features, _) = self.encoder.forward(image, None)?;
        let ctx = self.attention.prepare(&features)?;
        let trace = run_paragraph(&self.attention, &self.decoder, &ctx, RunMode::Infer { max_lines })?;
        Ok(Recognition {
            lines: trace.probs(),
            decisions: trace.decisions(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Recognition<T> {
    pub lines: Vec<ProbMatrix<T>>,
    pub decisions: Vec<[T; 2]>,
}

impl<T: Real> Params<T> for Model<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.encoder.visit(&format!("{prefix}.encoder"), f);
        self.attention.visit(&format!("{prefix}.attention"), f);
        self.decoder.visit(&format!("{prefix}.decoder"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.encoder.visit_mut(&format!("{prefix}.encoder"), f);
        self.attention.visit_mut(&format!("{prefix}.attention"), f);
        self.decoder.visit_mut(&format!("{prefix}.decoder"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::joint_loss;
    use crate::encoder::{GatedPlacement, MixDropout};
    use crate::numerics::gradcheck::check_params;
    use rand::SeedableRng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                cb_channels: vec![2, 3],
                cb_strides: vec![(2, 2), (1, 1)],
                dscb_channels: vec![3],
                gated_placement: GatedPlacement::Early,
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

    #[test]
    fn objective_matches_joint_loss_definition() {
        let mut rng = SeedRng::seed_from_u64(0);
        let model = Model::<f64>::new(tiny_config(), &mut rng).unwrap();
        let image = Tensor::uniform(&[1, 8, 16], 0.0, 1.0, &mut rng);
        let targets = vec![vec![0, 1], vec![2]];
        let parts = model.loss(&image, &targets, 1.0).unwrap();
        let (features, _) = model.encoder.forward(&image, None).unwrap();
        let ctx = model.attention.prepare(&features).unwrap();
        let trace = run_paragraph(&model.attention, &model.decoder, &ctx, RunMode::Train { lines: 2 }).unwrap();
        let reference = joint_loss(&trace.probs(), &targets, &trace.decisions(), 1.0).unwrap();
        assert!((parts.total - reference.total).abs() < 1e-9);
        assert!((parts.ctc - reference.ctc).abs() < 1e-9);
    }

    #[test]
    fn paragraph_gradients_match_finite_differences() {
        for seed in 0..2 {
            let mut rng = SeedRng::seed_from_u64(seed);
            let model = Model::<f64>::new(tiny_config(), &mut rng).unwrap();
            let image = Tensor::uniform(&[1, 8, 16], 0.0, 1.0, &mut rng);
            let targets = vec![vec![0, 1], vec![2, 2]];
            let mut g = model.zeros_like();
            model.loss_and_grad(&image, &targets, 1.0, None, &mut g).unwrap();
            let entries = check_params("", &model, &g, 6, |m| Ok(m.loss(&image, &targets, 1.0)?.total)).unwrap();
            for e in entries {
                assert!(e.passed, "{e}");
            }
        }
    }

    #[test]
    fn line_pretraining_gradients_match_finite_differences() {
        let mut rng = SeedRng::seed_from_u64(3);
        let model = Model::<f64>::new(tiny_config(), &mut rng).unwrap();
        let image = Tensor::uniform(&[1, 8, 16], 0.0, 1.0, &mut rng);
        let target = vec![1, 0, 2];
        let mut g = model.zeros_like();
        model.line_loss_and_grad(&image, &target, None, &mut g).unwrap();
        let entries = check_params("", &model, &g, 4, |m| {
            let mut scratch = m.zeros_like();
            m.line_loss_and_grad(&image, &target, None, &mut scratch)
        })
        .unwrap();
        for e in entries.iter().filter(|e| !e.name.starts_with("attention")) {
            assert!(e.passed, "{e}");
        }
    }
}
