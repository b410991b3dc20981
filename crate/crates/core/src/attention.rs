//! Vertical attention over feature rows: one line representation per step, a coverage-aware
//! hybrid score, and a learned paragraph-end decision.

use rand::Rng;

use crate::ctc::{ctc_loss, LabelSeq};
use crate::decoder::{Decoder, DecoderCache, LineOutput, ProbMatrix};
use crate::error::{Error, Result};
use crate::numerics::{
    init, matvec_acc, matvec_t_acc, outer_acc, softmax_in_place, Linear, Params, Real, Tensor,
};

/// Index of the "stop" class in a decision distribution (`[1, 0]` means stop).
pub const STOP: usize = 0;
/// Index of the "another line follows" class (`[0, 1]`).
pub const CONTINUE: usize = 1;
pub const DEFAULT_MAX_LINES: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub dim: usize,
    pub coverage_channels: usize,
    pub coverage_kernel: usize,
}

impl AttentionConfig {
    pub fn toy() -> Self {
        AttentionConfig {
            dim: 32,
            coverage_channels: 16,
            coverage_kernel: 7,
        }
    }

    pub fn full() -> Self {
        AttentionConfig {
            dim: 256,
            coverage_channels: 32,
            coverage_kernel: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Attention<T> {
    /// Projection of the width-averaged feature rows.
    pub w_f: Linear<T>,
    /// 1-D kernel over `[previous weights, cumulative weights]`: `[J, 2, k]`.
    pub coverage: Tensor<T>,
    pub coverage_bias: Tensor<T>,
    /// `[D, J]`
    pub w_j: Tensor<T>,
    /// `[D, hidden]`
    pub w_h: Tensor<T>,
    /// Row score vector `[D]`.
    pub v: Tensor<T>,
    /// `[max-pooled scores; decoder hidden] -> 2` logits.
    pub end: Linear<T>,
}

/// Per-paragraph quantities that do not depend on the step.
#[derive(Clone, Debug)]
pub struct FeatureContext<T> {
    pub features: Tensor<T>,
    rows_mean: Tensor<T>,
    proj: Tensor<T>,
}

impl<T: Real> FeatureContext<T> {
    pub fn rows(&self) -> usize {
        self.features.dim(1)
    }

    pub fn width(&self) -> usize {
        self.features.dim(2)
    }

    pub fn channels(&self) -> usize {
        self.features.dim(0)
    }
}

/// Recurrent state threaded through the steps of one paragraph.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionState<T> {
    pub beta_prev: Vec<T>,
    /// Sum of all attention weights emitted so far.
    pub coverage: Vec<T>,
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    pub t: usize,
}

impl<T: Real> AttentionState<T> {
    pub fn initial(rows: usize, hidden: usize) -> Self {
        AttentionState {
            beta_prev: vec![T::zero(); rows],
            coverage: vec![T::zero(); rows],
            h_prev: vec![T::zero(); hidden],
            c_prev: vec![T::zero(); hidden],
            t: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput<T> {
    /// `[W, C]`
    pub line: Tensor<T>,
    pub beta: Vec<T>,
    pub decision_logits: [T; 2],
    pub decision: [T; 2],
}

impl<T: Real> StepOutput<T> {
    pub fn stops(&self) -> bool {
        self.decision[STOP] > self.decision[CONTINUE]
    }
}

#[derive(Clone, Debug)]
pub struct StepCache<T> {
    beta_prev: Vec<T>,
    coverage: Vec<T>,
    h_prev: Vec<T>,
    jconv: Vec<T>,
    s: Vec<T>,
    beta: Vec<T>,
    argmax: Vec<usize>,
    z: Vec<T>,
}

/// Gradients leaving a step towards earlier steps.
#[derive(Clone, Debug)]
pub struct StepGrads<T> {
    pub d_beta_prev: Vec<T>,
    pub d_coverage: Vec<T>,
    pub d_h_prev: Vec<T>,
}

/// Weighted sum of feature rows, column by column: `l[w, c] = sum_i beta_i f[c, i, w]`.
pub fn pool_rows<T: Real>(features: &Tensor<T>, beta: &[T]) -> Result<Tensor<T>> {
    let [c, h, w] = *features.shape() else {
        return Err(Error::shape("pool_rows", format!("expected [C,H,W], got {:?}", features.shape())));
    };
    if beta.len() != h {
        return Err(Error::shape("pool_rows", format!("{} weights for {h} rows", beta.len())));
    }
    let mut line = Tensor::zeros(&[w, c]);
    let f = features.data();
    let out = line.data_mut();
    for ch in 0..c {
        for (i, &b) in beta.iter().enumerate() {
            if b == T::zero() {
                continue;
            }
            let row = &f[(ch * h + i) * w..(ch * h + i + 1) * w];
            for (x, &v) in row.iter().enumerate() {
                out[x * c + ch] += b * v;
            }
        }
    }
    Ok(line)
}

impl<T: Real> Attention<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, hidden: usize, cfg: AttentionConfig, rng: &mut R) -> Result<Self> {
        if cfg.coverage_kernel % 2 == 0 || cfg.dim == 0 || cfg.coverage_channels == 0 {
            return Err(Error::Invalid(format!("invalid attention configuration {cfg:?}")));
        }
        let (d, j, k) = (cfg.dim, cfg.coverage_channels, cfg.coverage_kernel);
        Ok(Attention {
            w_f: Linear::new(channels, d, rng),
            coverage: init::glorot_uniform(&[j, 2, k], 2 * k, j * k, rng),
            coverage_bias: Tensor::zeros(&[j]),
            w_j: init::glorot_uniform(&[d, j], j, d, rng),
            w_h: init::glorot_uniform(&[d, hidden], hidden, d, rng),
            v: init::glorot_uniform(&[d], d, 1, rng),
            end: Linear::new(d + hidden, 2, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_h.dim(1)
    }

    fn kernel(&self) -> (usize, usize) {
        (self.coverage.dim(0), self.coverage.dim(2))
    }

    pub fn prepare(&self, features: &Tensor<T>) -> Result<FeatureContext<T>> {
        let [c, h, w] = *features.shape() else {
            return Err(Error::shape("attention", format!("expected [C,H,W] features, got {:?}", features.shape())));
        };
        if c != self.w_f.d_in() {
            return Err(Error::shape("attention", format!("{c} feature channels, attention expects {}", self.w_f.d_in())));
        }
        let inv = T::one() / T::lit(w as f64);
        let mut rows_mean = Tensor::zeros(&[h, c]);
        for ch in 0..c {
            for i in 0..h {
                let row = &features.data()[(ch * h + i) * w..(ch * h + i + 1) * w];
                rows_mean.data_mut()[i * c + ch] = row.iter().copied().sum::<T>() * inv;
            }
        }
        let proj = self.w_f.forward_rows(&rows_mean)?;
        Ok(FeatureContext {
            features: features.clone(),
            rows_mean,
            proj,
        })
    }

    /// Backward of [`Attention::prepare`]: consumes the gradient on the projected rows.
    pub fn prepare_backward(
        &self,
        ctx: &FeatureContext<T>,
        d_proj: &Tensor<T>,
        d_features: &mut Tensor<T>,
        grads: &mut Self,
    ) -> Result<()> {
        let (c, h, w) = (ctx.channels(), ctx.rows(), ctx.width());
        let d_rows = self.w_f.backward_rows(&ctx.rows_mean, d_proj, &mut grads.w_f)?;
        let inv = T::one() / T::lit(w as f64);
        for ch in 0..c {
            for i in 0..h {
                let g = d_rows.data()[i * c + ch] * inv;
                d_features.data_mut()[(ch * h + i) * w..(ch * h + i + 1) * w]
                    .iter_mut()
                    .for_each(|x| *x += g);
            }
        }
        Ok(())
    }

    fn coverage_conv(&self, beta_prev: &[T], coverage: &[T]) -> Vec<T> {
        let (j, k) = self.kernel();
        let h = beta_prev.len();
        let half = k / 2;
        let ker = self.coverage.data();
        let mut out = vec![T::zero(); h * j];
        for i in 0..h {
            for q in 0..j {
                let mut acc = self.coverage_bias.data()[q];
                for tap in 0..k {
                    let Some(r) = (i + tap).checked_sub(half).filter(|&r| r < h) else {
                        continue;
                    };
                    acc += ker[(q * 2) * k + tap] * beta_prev[r] + ker[(q * 2 + 1) * k + tap] * coverage[r];
                }
                out[i * j + q] = acc;
            }
        }
        out
    }

    pub fn step(&self, ctx: &FeatureContext<T>, state: &AttentionState<T>) -> Result<(StepOutput<T>, StepCache<T>)> {
        let h = ctx.rows();
        let d = self.dim();
        let (j, _) = self.kernel();
        if state.beta_prev.len() != h || state.coverage.len() != h || state.h_prev.len() != self.hidden_size() {
            return Err(Error::shape("attention_step", "state does not match the feature map".to_string()));
        }
        let jconv = self.coverage_conv(&state.beta_prev, &state.coverage);
        let mut hproj = vec![T::zero(); d];
        matvec_acc(self.w_h.data(), self.hidden_size(), &state.h_prev, &mut hproj);
        let mut s = vec![T::zero(); h * d];
        let mut e = vec![T::zero(); h];
        for i in 0..h {
            let si = &mut s[i * d..(i + 1) * d];
            si.copy_from_slice(&ctx.proj.data()[i * d..(i + 1) * d]);
            matvec_acc(self.w_j.data(), j, &jconv[i * j..(i + 1) * j], si);
            for (x, &hp) in si.iter_mut().zip(&hproj) {
                *x = (*x + hp).tanh();
            }
            e[i] = si.iter().zip(self.v.data()).map(|(&a, &b)| a * b).sum();
        }
        if e.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("attention score at step {}", state.t + 1)));
        }
        let mut beta = e;
        softmax_in_place(&mut beta);
        let line = pool_rows(&ctx.features, &beta)?;

        let mut argmax = vec![0; d];
        let mut z = vec![T::zero(); d + self.hidden_size()];
        for q in 0..d {
            for i in 1..h {
                if s[i * d + q] > s[argmax[q] * d + q] {
                    argmax[q] = i;
                }
            }
            z[q] = s[argmax[q] * d + q];
        }
        z[d..].copy_from_slice(&state.h_prev);
        let mut logits = [self.end.bias.data()[0], self.end.bias.data()[1]];
        matvec_acc(self.end.weight.data(), z.len(), &z, &mut logits);
        let mut decision = logits;
        softmax_in_place(&mut decision);
        Ok((
            StepOutput {
                line,
                beta: beta.clone(),
                decision_logits: logits,
                decision,
            },
            StepCache {
                beta_prev: state.beta_prev.clone(),
                coverage: state.coverage.clone(),
                h_prev: state.h_prev.clone(),
                jconv,
                s,
                beta,
                argmax,
                z,
            },
        ))
    }

    /// Backward of one step. `d_line` may be `None` when the step's line was not decoded;
    /// `d_beta_out` is the gradient reaching this step's weights from later steps.
    #[allow(clippy::too_many_arguments)]
    pub fn step_backward(
        &self,
        ctx: &FeatureContext<T>,
        cache: &StepCache<T>,
        d_line: Option<&Tensor<T>>,
        d_beta_out: &[T],
        d_logits: [T; 2],
        grads: &mut Self,
        d_proj: &mut Tensor<T>,
        d_features: &mut Tensor<T>,
    ) -> Result<StepGrads<T>> {
        let (c, h, w) = (ctx.channels(), ctx.rows(), ctx.width());
        let d = self.dim();
        let hs = self.hidden_size();
        let (j, k) = self.kernel();

        let mut dz = vec![T::zero(); d + hs];
        outer_acc(grads.end.weight.data_mut(), d + hs, &d_logits, &cache.z);
        grads.end.bias.data_mut()[0] += d_logits[0];
        grads.end.bias.data_mut()[1] += d_logits[1];
        matvec_t_acc(self.end.weight.data(), d + hs, &d_logits, &mut dz);
        let mut ds = vec![T::zero(); h * d];
        for q in 0..d {
            ds[cache.argmax[q] * d + q] += dz[q];
        }
        let mut d_h_prev = dz[d..].to_vec();

        let mut dbeta = d_beta_out.to_vec();
        if let Some(dl) = d_line {
            dl.expect_shape("attention_step_backward", &[w, c])?;
            let f = ctx.features.data();
            let dfeat = d_features.data_mut();
            for ch in 0..c {
                for i in 0..h {
                    let base = (ch * h + i) * w;
                    let mut acc = T::zero();
                    for x in 0..w {
                        let g = dl.data()[x * c + ch];
                        acc += g * f[base + x];
                        dfeat[base + x] += cache.beta[i] * g;
                    }
                    dbeta[i] += acc;
                }
            }
        }
        let dot: T = cache.beta.iter().zip(&dbeta).map(|(&b, &g)| b * g).sum();
        let de: Vec<T> = cache.beta.iter().zip(&dbeta).map(|(&b, &g)| b * (g - dot)).collect();

        let mut dhproj = vec![T::zero(); d];
        let mut djconv = vec![T::zero(); h * j];
        for i in 0..h {
            let si = &cache.s[i * d..(i + 1) * d];
            let mut du = vec![T::zero(); d];
            for q in 0..d {
                let g = ds[i * d + q] + de[i] * self.v.data()[q];
                grads.v.data_mut()[q] += de[i] * si[q];
                du[q] = g * (T::one() - si[q] * si[q]);
                d_proj.data_mut()[i * d + q] += du[q];
                dhproj[q] += du[q];
            }
            matvec_t_acc(self.w_j.data(), j, &du, &mut djconv[i * j..(i + 1) * j]);
            outer_acc(grads.w_j.data_mut(), j, &du, &cache.jconv[i * j..(i + 1) * j]);
        }
        outer_acc(grads.w_h.data_mut(), hs, &dhproj, &cache.h_prev);
        matvec_t_acc(self.w_h.data(), hs, &dhproj, &mut d_h_prev);

        let half = k / 2;
        let ker = self.coverage.data();
        let mut d_beta_prev = vec![T::zero(); h];
        let mut d_coverage = vec![T::zero(); h];
        for i in 0..h {
            for q in 0..j {
                let g = djconv[i * j + q];
                grads.coverage_bias.data_mut()[q] += g;
                for tap in 0..k {
                    let Some(r) = (i + tap).checked_sub(half).filter(|&r| r < h) else {
                        continue;
                    };
                    let (a, b) = ((q * 2) * k + tap, (q * 2 + 1) * k + tap);
                    grads.coverage.data_mut()[a] += g * cache.beta_prev[r];
                    grads.coverage.data_mut()[b] += g * cache.coverage[r];
                    d_beta_prev[r] += g * ker[a];
                    d_coverage[r] += g * ker[b];
                }
            }
        }
        Ok(StepGrads {
            d_beta_prev,
            d_coverage,
            d_h_prev,
        })
    }
}

impl<T: Real> Params<T> for Attention<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.w_f.visit(&format!("{prefix}.w_f"), f);
        f(&format!("{prefix}.coverage"), &self.coverage);
        f(&format!("{prefix}.coverage_bias"), &self.coverage_bias);
        f(&format!("{prefix}.w_j"), &self.w_j);
        f(&format!("{prefix}.w_h"), &self.w_h);
        f(&format!("{prefix}.v"), &self.v);
        self.end.visit(&format!("{prefix}.end"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.w_f.visit_mut(&format!("{prefix}.w_f"), f);
        f(&format!("{prefix}.coverage"), &mut self.coverage);
        f(&format!("{prefix}.coverage_bias"), &mut self.coverage_bias);
        f(&format!("{prefix}.w_j"), &mut self.w_j);
        f(&format!("{prefix}.w_h"), &mut self.w_h);
        f(&format!("{prefix}.v"), &mut self.v);
        self.end.visit_mut(&format!("{prefix}.end"), f);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    /// Exactly `lines + 1` steps; the last one only supervises the stop decision.
    Train { lines: usize },
    /// Stop at the first step whose decision is "stop", or after `max_lines` lines.
    Infer { max_lines: usize },
}

/// Everything one paragraph pass produced, with the caches needed for backward.
#[derive(Clone, Debug)]
pub struct ParagraphTrace<T> {
    pub steps: Vec<StepOutput<T>>,
    /// Decoder output for every step that produced a line.
    pub lines: Vec<LineOutput<T>>,
    step_caches: Vec<StepCache<T>>,
    line_caches: Vec<DecoderCache<T>>,
}

impl<T: Real> ParagraphTrace<T> {
    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn decisions(&self) -> Vec<[T; 2]> {
        self.steps.iter().map(|s| s.decision).collect()
    }

    pub fn probs(&self) -> Vec<ProbMatrix<T>> {
        self.lines.iter().map(|l| l.probs.clone()).collect()
    }
}

/// Alternates attention steps and line decoding over one feature map.
pub fn run_paragraph<T: Real>(
    attention: &Attention<T>,
    decoder: &Decoder<T>,
    ctx: &FeatureContext<T>,
    mode: RunMode,
) -> Result<ParagraphTrace<T>> {
    let max_steps = match mode {
        RunMode::Train { lines } => {
            if lines == 0 {
                return Err(Error::Invalid("a training paragraph needs at least one line".into()));
            }
            lines + 1
        }
        RunMode::Infer { max_lines } => {
            if max_lines == 0 {
                return Err(Error::Invalid("max line count must be >= 1".into()));
            }
            max_lines
        }
    };
    let mut state = AttentionState::initial(ctx.rows(), decoder.hidden_size());
    let mut trace = ParagraphTrace {
        steps: Vec::new(),
        lines: Vec::new(),
        step_caches: Vec::new(),
        line_caches: Vec::new(),
    };
    for t in 0..max_steps {
        let (out, cache) = attention.step(ctx, &state)?;
        if !(out.beta.iter().all(|b| b.is_finite()) && out.decision_logits.iter().all(|d| d.is_finite())) {
            return Err(Error::NonFinite(format!("attention step {}", t + 1)));
        }
        let decode = match mode {
            RunMode::Train { lines } => t < lines,
            RunMode::Infer { .. } => !out.stops(),
        };
        if decode {
            let (line, lcache) = decoder.forward(&out.line, &state.h_prev, &state.c_prev)?;
            line.logits.ensure_finite(|| format!("decoder line {}", t + 1))?;
            state.h_prev.clone_from(&line.h_last);
            state.c_prev.clone_from(&line.c_last);
            trace.lines.push(line);
            trace.line_caches.push(lcache);
        }
        for (c, &b) in state.coverage.iter_mut().zip(&out.beta) {
            *c += b;
        }
        state.beta_prev.clone_from(&out.beta);
        state.t = t + 1;
        trace.steps.push(out);
        trace.step_caches.push(cache);
        if !decode {
            break;
        }
    }
    Ok(trace)
}

/// Backward of [`run_paragraph`] given per-line logit gradients and per-step decision-logit
/// gradients. Returns the gradient on the feature map.
pub fn backward_paragraph<T: Real>(
    attention: &Attention<T>,
    decoder: &Decoder<T>,
    ctx: &FeatureContext<T>,
    trace: &ParagraphTrace<T>,
    d_line_logits: &[Tensor<T>],
    d_decisions: &[[T; 2]],
    grads_attention: &mut Attention<T>,
    grads_decoder: &mut Decoder<T>,
) -> Result<Tensor<T>> {
    if d_line_logits.len() != trace.lines.len() || d_decisions.len() != trace.steps.len() {
        return Err(Error::shape(
            "paragraph_backward",
            format!(
                "{} line / {} decision gradients for {} lines / {} steps",
                d_line_logits.len(),
                d_decisions.len(),
                trace.lines.len(),
                trace.steps.len()
            ),
        ));
    }
    let (h, hs) = (ctx.rows(), decoder.hidden_size());
    let mut d_features = Tensor::zeros(ctx.features.shape());
    let mut d_proj = Tensor::zeros(&[h, attention.dim()]);
    let mut dh = vec![T::zero(); hs];
    let mut dc = vec![T::zero(); hs];
    let mut d_beta_next = vec![T::zero(); h];
    let mut d_cov_later = vec![T::zero(); h];
    for t in (0..trace.steps.len()).rev() {
        let d_beta_out: Vec<T> = d_beta_next.iter().zip(&d_cov_later).map(|(&a, &b)| a + b).collect();
        let mut d_line = None;
        if t < trace.lines.len() {
            let (dl, dh0, dc0) =
                decoder.backward(&trace.line_caches[t], &d_line_logits[t], &dh, &dc, grads_decoder)?;
            d_line = Some(dl);
            dh = dh0;
            dc = dc0;
        }
        let g = attention.step_backward(
            ctx,
            &trace.step_caches[t],
            d_line.as_ref(),
            &d_beta_out,
            d_decisions[t],
            grads_attention,
            &mut d_proj,
            &mut d_features,
        )?;
        for (a, b) in dh.iter_mut().zip(&g.d_h_prev) {
            *a += *b;
        }
        d_beta_next = g.d_beta_prev;
        for (a, b) in d_cov_later.iter_mut().zip(&g.d_coverage) {
            *a += *b;
        }
    }
    attention.prepare_backward(ctx, &d_proj, &mut d_features, grads_attention)?;
    Ok(d_features)
}

/// Cross-entropy of a decision distribution against the one-hot target class.
pub fn decision_ce<T: Real>(decision: &[T; 2], target: usize) -> f64 {
    -decision[target].as_f64().ln()
}

/// Same quantity from the decision logits, through an `f64` log-softmax.
pub fn decision_ce_logits<T: Real>(logits: &[T; 2], target: usize) -> f64 {
    let (a, b) = (logits[0].as_f64(), logits[1].as_f64());
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln() - logits[target].as_f64()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointLoss {
    pub ctc: f64,
    pub ce: f64,
    pub total: f64,
}

/// `sum_k CTC(p_k, y_k) + lambda * sum_k CE(d_k, delta_k)` with `delta_k` = continue for the
/// `L` real lines and stop for step `L + 1`.
pub fn joint_loss<T: Real>(
    lines: &[ProbMatrix<T>],
    targets: &[LabelSeq],
    decisions: &[[T; 2]],
    lambda: f64,
) -> Result<JointLoss> {
    if targets.is_empty() {
        return Err(Error::Invalid("joint loss needs at least one target line".into()));
    }
    if lines.len() != targets.len() || decisions.len() != targets.len() + 1 {
        return Err(Error::shape(
            "joint_loss",
            format!(
                "{} predictions, {} targets, {} decisions (need L, L, L+1)",
                lines.len(),
                targets.len(),
                decisions.len()
            ),
        ));
    }
    let mut ctc = 0.0;
    for (p, y) in lines.iter().zip(targets) {
        ctc += ctc_loss(p, y)?.loss;
    }
    let l = targets.len();
    let ce: f64 = decisions
        .iter()
        .enumerate()
        .map(|(k, d)| decision_ce(d, if k < l { CONTINUE } else { STOP }))
        .sum();
    Ok(JointLoss {
        ctc,
        ce,
        total: ctc + lambda * ce,
    })
}
