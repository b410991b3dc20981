use std::collections::HashMap;

/// Add-one smoothed word bigrams. The history of a line's first word is the start marker `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NgramModel {
    vocab: usize,
    unigrams: Vec<u32>,
    bigrams: HashMap<(Option<usize>, usize), u32>,
    histories: HashMap<Option<usize>, u32>,
    smoothing: f64,
}

impl NgramModel {
    pub(crate) fn new(smoothing: f64) -> Self {
        NgramModel {
            smoothing,
            ..Default::default()
        }
    }

    pub(crate) fn observe_line(&mut self, words: &[usize]) {
        let mut prev = None;
        for &w in words {
            if w >= self.unigrams.len() {
                self.unigrams.resize(w + 1, 0);
            }
            self.unigrams[w] += 1;
            *self.bigrams.entry((prev, w)).or_default() += 1;
            *self.histories.entry(prev).or_default() += 1;
            prev = Some(w);
        }
    }

    pub(crate) fn set_vocab(&mut self, vocab: usize) {
        self.vocab = vocab;
        self.unigrams.resize(vocab, 0);
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn unigram_count(&self, word: usize) -> u32 {
        self.unigrams.get(word).copied().unwrap_or(0)
    }

    pub fn bigram_count(&self, prev: Option<usize>, word: usize) -> u32 {
        self.bigrams.get(&(prev, word)).copied().unwrap_or(0)
    }

    /// ln P(word | prev).
    pub fn log_prob(&self, prev: Option<usize>, word: usize) -> f64 {
        let num = self.bigram_count(prev, word) as f64 + self.smoothing;
        let den = self.histories.get(&prev).copied().unwrap_or(0) as f64 + self.smoothing * self.vocab as f64;
        (num / den).ln()
    }
}
