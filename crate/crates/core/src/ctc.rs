//! Connectionist temporal classification: loss with logit gradients, and best-path decoding.

use crate::decoder::ProbMatrix;
use crate::error::{Error, Result};
use crate::numerics::Real;

/// Class indices of a transcription, blank excluded.
pub type LabelSeq = Vec<usize>;

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Minimum number of frames that can emit `target`: one per label plus a blank between repeats.
pub fn required_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

#[derive(Clone, Debug)]
pub struct CtcOutput {
    /// `-ln P(target | input)`.
    pub loss: f64,
    /// Gradient of `loss` w.r.t. the pre-softmax logits, row-major `[T, classes]`.
    pub grad_logits: Vec<f64>,
}

/// CTC loss over a row-major `[frames, classes]` matrix of log-probabilities.
///
/// The returned gradient is taken w.r.t. the logits the rows were log-softmaxed from.
pub fn ctc_loss_log(
    log_probs: &[f64],
    frames: usize,
    classes: usize,
    blank: usize,
    target: &[usize],
) -> Result<CtcOutput> {
    if log_probs.len() != frames * classes {
        return Err(Error::shape(
            "ctc_loss",
            format!("{} values for {frames}x{classes}", log_probs.len()),
        ));
    }
    if blank >= classes {
        return Err(Error::Invalid(format!("blank {blank} outside {classes} classes")));
    }
    if let Some(&bad) = target.iter().find(|&&l| l >= classes || l == blank) {
        return Err(Error::Invalid(format!(
            "target label {bad} is the blank or out of range (classes {classes})"
        )));
    }
    let required = required_frames(target);
    if required > frames {
        return Err(Error::InfeasibleAlignment {
            required,
            available: frames,
        });
    }

    // extended sequence: blank, y1, blank, y2, ..., blank
    let s_len = 2 * target.len() + 1;
    let ext: Vec<usize> = (0..s_len)
        .map(|s| if s % 2 == 0 { blank } else { target[s / 2] })
        .collect();
    let lp = |t: usize, k: usize| log_probs[t * classes + k];
    let skip_ok = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; frames * s_len];
    alpha[0] = lp(0, blank);
    if s_len > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if skip_ok(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            alpha[t * s_len + s] = acc + lp(t, ext[s]);
        }
    }
    let last = &alpha[(frames - 1) * s_len..];
    let log_p = if s_len > 1 {
        log_add(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    };
    if log_p == ninf {
        return Err(Error::InfeasibleAlignment {
            required,
            available: frames,
        });
    }

    let mut beta = vec![ninf; frames * s_len];
    let base = (frames - 1) * s_len;
    beta[base + s_len - 1] = lp(frames - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[base + s_len - 2] = lp(frames - 1, ext[s_len - 2]);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1]);
            }
            if s + 2 < s_len && ext[s + 2] != blank && ext[s + 2] != ext[s] {
                acc = log_add(acc, next[s + 2]);
            }
            beta[t * s_len + s] = acc + lp(t, ext[s]);
        }
    }

    // alpha and beta both include frame t's emission, so the occupancy subtracts it once
    let mut grad = vec![0.0; frames * classes];
    let mut occupancy = vec![ninf; classes];
    for t in 0..frames {
        occupancy.fill(ninf);
        for s in 0..s_len {
            let v = alpha[t * s_len + s] + beta[t * s_len + s] - lp(t, ext[s]);
            occupancy[ext[s]] = log_add(occupancy[ext[s]], v);
        }
        for k in 0..classes {
            grad[t * classes + k] = lp(t, k).exp() - (occupancy[k] - log_p).exp();
        }
    }
    Ok(CtcOutput {
        loss: -log_p,
        grad_logits: grad,
    })
}

/// CTC loss of a probability matrix; the gradient is w.r.t. the logits behind it.
pub fn ctc_loss<T: Real>(probs: &ProbMatrix<T>, target: &[usize]) -> Result<CtcOutput> {
    let logs: Vec<f64> = probs.values().data().iter().map(|p| p.as_f64().ln()).collect();
    ctc_loss_log(&logs, probs.frames(), probs.classes(), probs.blank(), target)
}

/// Collapses a frame-wise label path: merge repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> LabelSeq {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Per-frame argmax path (first maximum on ties).
pub fn best_path<T: Real>(probs: &ProbMatrix<T>) -> Vec<usize> {
    probs
        .values()
        .data()
        .chunks_exact(probs.classes())
        .map(|row| {
            let mut best = 0;
            for (k, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Best-path decoding: argmax per frame, collapse repeats, drop blanks.
pub fn greedy_decode<T: Real>(probs: &ProbMatrix<T>) -> LabelSeq {
    collapse(&best_path(probs), probs.blank())
}
