//! Line decoder: one LSTM layer over the line features, then a per-frame projection onto the
//! character classes plus the CTC blank.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    gemm, init, matvec_acc, matvec_t_acc, outer_acc, sigmoid, softmax_in_place, Linear, Params,
    Real, Tensor,
};

/// Per-frame class posteriors `[T, N+1]`; the last class is the blank.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMatrix<T> {
    values: Tensor<T>,
}

impl<T: Real> ProbMatrix<T> {
    /// Wraps a matrix whose rows are already probability distributions.
    pub fn new(values: Tensor<T>) -> Result<Self> {
        let [frames, classes] = *values.shape() else {
            return Err(Error::shape("prob_matrix", format!("expected [T, classes], got {:?}", values.shape())));
        };
        if classes < 2 {
            return Err(Error::Invalid("a probability matrix needs at least one label plus the blank".into()));
        }
        let tol = if T::PRECISION.bytes() == 4 { 1e-4 } else { 1e-9 };
        for (t, row) in values.data().chunks_exact(classes).enumerate() {
            let sum: f64 = row.iter().map(|p| p.as_f64()).sum();
            if row.iter().any(|&p| !(p >= T::zero())) || (sum - 1.0).abs() > tol {
                return Err(Error::Invalid(format!("row {t} of {frames} is not a distribution (sum {sum})")));
            }
        }
        Ok(ProbMatrix { values })
    }

    /// Row-wise softmax of `[T, N+1]` logits.
    pub fn from_logits(mut logits: Tensor<T>) -> Result<Self> {
        let [_, classes] = *logits.shape() else {
            return Err(Error::shape("prob_matrix", format!("expected [T, classes], got {:?}", logits.shape())));
        };
        logits.ensure_finite(|| "class logits".into())?;
        logits.data_mut().chunks_exact_mut(classes).for_each(softmax_in_place);
        Self::new(logits)
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.dim(0)
    }

    pub fn classes(&self) -> usize {
        self.values.dim(1)
    }

    pub fn blank(&self) -> usize {
        self.classes() - 1
    }

    pub fn row(&self, t: usize) -> &[T] {
        let k = self.classes();
        &self.values.data()[t * k..(t + 1) * k]
    }

    /// Natural-log probabilities as `f64`, row-major.
    pub fn log_values(&self) -> Vec<f64> {
        self.values.data().iter().map(|p| p.as_f64().ln()).collect()
    }
}

/// Single-layer LSTM; gate rows are stacked as input, forget, output, candidate.
#[derive(Clone, Debug)]
pub struct Lstm<T> {
    pub w_x: Tensor<T>,
    pub w_h: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    x: Tensor<T>,
    h0: Vec<T>,
    c0: Vec<T>,
    /// Activated gates `[T, 4H]`.
    gates: Vec<T>,
    cells: Vec<T>,
    hidden: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct LstmOutput<T> {
    /// `[T, H]`
    pub hidden: Tensor<T>,
    pub h_last: Vec<T>,
    pub c_last: Vec<T>,
}

impl<T: Real> Lstm<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Lstm {
            w_x: init::glorot_uniform(&[4 * hidden, input], input, hidden, rng),
            w_h: init::glorot_uniform(&[4 * hidden, hidden], hidden, hidden, rng),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_x.dim(1)
    }

    pub fn hidden_size(&self) -> usize {
        self.w_h.dim(1)
    }

    /// Runs left to right over the rows of `x` (`[T, input]`) from the state `(h0, c0)`.
    pub fn forward(&self, x: &Tensor<T>, h0: &[T], c0: &[T]) -> Result<(LstmOutput<T>, LstmCache<T>)> {
        let (n_in, hs) = (self.input_size(), self.hidden_size());
        let [frames, d] = *x.shape() else {
            return Err(Error::shape("lstm", format!("expected [T, input], got {:?}", x.shape())));
        };
        if d != n_in || h0.len() != hs || c0.len() != hs {
            return Err(Error::shape(
                "lstm",
                format!("input width {d} / state {}+{} for an LSTM of {n_in} -> {hs}", h0.len(), c0.len()),
            ));
        }
        let g4 = 4 * hs;
        let mut gates = vec![T::zero(); frames * g4];
        for row in gates.chunks_exact_mut(g4) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(frames, n_in, g4, x.data(), false, self.w_x.data(), true, T::one(), &mut gates);
        let mut cells = vec![T::zero(); frames * hs];
        let mut hidden = vec![T::zero(); frames * hs];
        let mut h_prev = h0.to_vec();
        let mut c_prev = c0.to_vec();
        for t in 0..frames {
            let g = &mut gates[t * g4..(t + 1) * g4];
            matvec_acc(self.w_h.data(), hs, &h_prev, g);
            for j in 0..hs {
                g[j] = sigmoid(g[j]);
                g[hs + j] = sigmoid(g[hs + j]);
                g[2 * hs + j] = sigmoid(g[2 * hs + j]);
                g[3 * hs + j] = g[3 * hs + j].tanh();
                let c = g[hs + j] * c_prev[j] + g[j] * g[3 * hs + j];
                cells[t * hs + j] = c;
                hidden[t * hs + j] = g[2 * hs + j] * c.tanh();
            }
            h_prev.copy_from_slice(&hidden[t * hs..(t + 1) * hs]);
            c_prev.copy_from_slice(&cells[t * hs..(t + 1) * hs]);
        }
        let out = LstmOutput {
            hidden: Tensor::from_vec(&[frames, hs], hidden.clone())?,
            h_last: h_prev,
            c_last: c_prev,
        };
        let cache = LstmCache {
            x: x.clone(),
            h0: h0.to_vec(),
            c0: c0.to_vec(),
            gates,
            cells,
            hidden,
        };
        Ok((out, cache))
    }

    /// Backpropagation through time. `dh_last`/`dc_last` are gradients arriving at the final
    /// state from later consumers. Returns `(dx, dh0, dc0)`.
    pub fn backward(
        &self,
        cache: &LstmCache<T>,
        d_hidden: &Tensor<T>,
        dh_last: &[T],
        dc_last: &[T],
        grads: &mut Self,
    ) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
        let (n_in, hs) = (self.input_size(), self.hidden_size());
        let frames = cache.x.dim(0);
        d_hidden.expect_shape("lstm_backward", &[frames, hs])?;
        let g4 = 4 * hs;
        let mut dpre = vec![T::zero(); frames * g4];
        let mut dh = dh_last.to_vec();
        let mut dc = dc_last.to_vec();
        let mut dh_prev = vec![T::zero(); hs];
        for t in (0..frames).rev() {
            let g = &cache.gates[t * g4..(t + 1) * g4];
            let c_prev = if t == 0 { &cache.c0[..] } else { &cache.cells[(t - 1) * hs..t * hs] };
            let h_prev = if t == 0 { &cache.h0[..] } else { &cache.hidden[(t - 1) * hs..t * hs] };
            let dp = &mut dpre[t * g4..(t + 1) * g4];
            for j in 0..hs {
                let dhj = dh[j] + d_hidden.data()[t * hs + j];
                let (i, f, o, cand) = (g[j], g[hs + j], g[2 * hs + j], g[3 * hs + j]);
                let tc = cache.cells[t * hs + j].tanh();
                let dcj = dc[j] + dhj * o * (T::one() - tc * tc);
                dp[j] = dcj * cand * i * (T::one() - i);
                dp[hs + j] = dcj * c_prev[j] * f * (T::one() - f);
                dp[2 * hs + j] = dhj * tc * o * (T::one() - o);
                dp[3 * hs + j] = dcj * i * (T::one() - cand * cand);
                dc[j] = dcj * f;
            }
            outer_acc(grads.w_h.data_mut(), hs, dp, h_prev);
            dh_prev.fill(T::zero());
            matvec_t_acc(self.w_h.data(), hs, dp, &mut dh_prev);
            dh.copy_from_slice(&dh_prev);
        }
        for row in dpre.chunks_exact(g4) {
            for (b, &d) in grads.bias.data_mut().iter_mut().zip(row) {
                *b += d;
            }
        }
        gemm(g4, frames, n_in, &dpre, true, cache.x.data(), false, T::one(), grads.w_x.data_mut());
        let mut dx = Tensor::zeros(&[frames, n_in]);
        gemm(frames, g4, n_in, &dpre, false, self.w_x.data(), false, T::zero(), dx.data_mut());
        Ok((dx, dh, dc))
    }
}

impl<T: Real> Params<T> for Lstm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.w_x"), &self.w_x);
        f(&format!("{prefix}.w_h"), &self.w_h);
        f(&format!("{prefix}.bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.w_x"), &mut self.w_x);
        f(&format!("{prefix}.w_h"), &mut self.w_h);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

/// LSTM followed by the 1x1 class projection.
#[derive(Clone, Debug)]
pub struct Decoder<T> {
    pub lstm: Lstm<T>,
    pub projection: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct DecoderCache<T> {
    lstm: LstmCache<T>,
    hidden: Tensor<T>,
}

/// Decoder output for one line.
#[derive(Clone, Debug)]
pub struct LineOutput<T> {
    pub logits: Tensor<T>,
    pub probs: ProbMatrix<T>,
    pub h_last: Vec<T>,
    pub c_last: Vec<T>,
}

impl<T: Real> Decoder<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        Decoder {
            lstm: Lstm::new(input, hidden, rng),
            projection: Linear::new(hidden, classes, rng),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.lstm.hidden_size()
    }

    pub fn classes(&self) -> usize {
        self.projection.d_out()
    }

    pub fn forward(&self, line: &Tensor<T>, h0: &[T], c0: &[T]) -> Result<(LineOutput<T>, DecoderCache<T>)> {
        let (out, lstm) = self.lstm.forward(line, h0, c0)?;
        let logits = self.projection.forward_rows(&out.hidden)?;
        let probs = ProbMatrix::from_logits(logits.clone())?;
        Ok((
            LineOutput {
                logits,
                probs,
                h_last: out.h_last,
                c_last: out.c_last,
            },
            DecoderCache {
                lstm,
                hidden: out.hidden,
            },
        ))
    }

    /// Returns `(d_line, dh0, dc0)` given the logit gradient and the gradients on the final state.
    pub fn backward(
        &self,
        cache: &DecoderCache<T>,
        d_logits: &Tensor<T>,
        dh_last: &[T],
        dc_last: &[T],
        grads: &mut Self,
    ) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
        let d_hidden = self.projection.backward_rows(&cache.hidden, d_logits, &mut grads.projection)?;
        self.lstm.backward(&cache.lstm, &d_hidden, dh_last, dc_last, &mut grads.lstm)
    }
}

impl<T: Real> Params<T> for Decoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.lstm.visit(&format!("{prefix}.lstm"), f);
        self.projection.visit(&format!("{prefix}.projection"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.lstm.visit_mut(&format!("{prefix}.lstm"), f);
        self.projection.visit_mut(&format!("{prefix}.projection"), f);
    }
}
