//! Edit distance and pooled character/word error rates.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Minimum number of insertions, deletions and substitutions turning `a` into `b`.
pub fn levenshtein<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn chars(s: &str) -> Vec<char> {
    s.chars().collect()
}

/// Whitespace tokens; newlines count as whitespace.
pub fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn check_lengths(refs: usize, hyps: usize) -> Result<()> {
    if refs != hyps {
        return Err(Error::Invalid(format!("{refs} references but {hyps} hypotheses")));
    }
    Ok(())
}

/// Σ edits / Σ reference characters.
pub fn corpus_cer<R: AsRef<str>, H: AsRef<str>>(refs: &[R], hyps: &[H]) -> Result<f64> {
    check_lengths(refs.len(), hyps.len())?;
    let (mut edits, mut total) = (0, 0);
    for (r, h) in refs.iter().zip(hyps) {
        let r = chars(r.as_ref());
        edits += levenshtein(&r, &chars(h.as_ref()));
        total += r.len();
    }
    if total == 0 {
        return Err(Error::Invalid("reference corpus has no characters".into()));
    }
    Ok(edits as f64 / total as f64)
}

/// Σ word edits / Σ reference words.
pub fn corpus_wer<R: AsRef<str>, H: AsRef<str>>(refs: &[R], hyps: &[H]) -> Result<f64> {
    check_lengths(refs.len(), hyps.len())?;
    let (mut edits, mut total) = (0, 0);
    for (r, h) in refs.iter().zip(hyps) {
        let r = words(r.as_ref());
        edits += levenshtein(&r, &words(h.as_ref()));
        total += r.len();
    }
    if total == 0 {
        return Err(Error::Invalid("reference corpus has no words".into()));
    }
    Ok(edits as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleScore {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub char_edits: usize,
    pub chars: usize,
    pub word_edits: usize,
    pub words: usize,
}

impl SampleScore {
    pub fn new(id: impl Into<String>, reference: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        let (reference, hypothesis) = (reference.into(), hypothesis.into());
        let (rc, rw) = (chars(&reference), words(&reference));
        SampleScore {
            id: id.into(),
            char_edits: levenshtein(&rc, &chars(&hypothesis)),
            chars: rc.len(),
            word_edits: levenshtein(&rw, &words(&hypothesis)),
            words: rw.len(),
            reference,
            hypothesis,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub cer: f64,
    pub wer: f64,
    pub char_edits: usize,
    pub chars: usize,
    pub word_edits: usize,
    pub words: usize,
    pub samples: Vec<SampleScore>,
}

impl EvalReport {
    pub fn new(samples: Vec<SampleScore>) -> Result<Self> {
        let char_edits = samples.iter().map(|s| s.char_edits).sum();
        let chars = samples.iter().map(|s| s.chars).sum::<usize>();
        let word_edits = samples.iter().map(|s| s.word_edits).sum();
        let words = samples.iter().map(|s| s.words).sum::<usize>();
        if chars == 0 || words == 0 {
            return Err(Error::Invalid("reference corpus is empty".into()));
        }
        Ok(EvalReport {
            cer: char_edits as f64 / chars as f64,
            wer: word_edits as f64 / words as f64,
            char_edits,
            chars,
            word_edits,
            words,
            samples,
        })
    }

    /// Machine-readable block; every key carries `prefix`.
    pub fn to_kv(&self, prefix: &str) -> String {
        format!(
            "{prefix}cer={:.6}\n{prefix}wer={:.6}\n{prefix}char_edits={}\n{prefix}chars={}\n{prefix}word_edits={}\n{prefix}words={}\n{prefix}samples={}\n",
            self.cer,
            self.wer,
            self.char_edits,
            self.chars,
            self.word_edits,
            self.words,
            self.samples.len()
        )
    }
}

/// Plain-text table comparing several reports on the same samples.
pub fn render_table(reports: &[(&str, &EvalReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8} {:>9} {:>9} {:>12} {:>12}", "decoder", "CER", "WER", "char edits", "word edits");
    for (name, r) in reports {
        let _ = writeln!(
            out,
            "{:<8} {:>8.4}% {:>8.4}% {:>5}/{:<6} {:>5}/{:<6}",
            name,
            100.0 * r.cer,
            100.0 * r.wer,
            r.char_edits,
            r.chars,
            r.word_edits,
            r.words
        );
    }
    out
}
