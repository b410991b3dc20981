use std::cmp::Ordering;
use std::collections::HashMap;

use log::warn;
use rayon::prelude::*;

use super::{Lexicon, PrefixTree, WbsConfig, WbsMode};
use crate::decoder::ProbMatrix;
use crate::error::{Error, Result};
use crate::numerics::Real;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// A labelling hypothesis with its CTC prefix mass split by the last frame's class.
#[derive(Clone, Debug, PartialEq)]
pub struct Beam {
    pub labels: Vec<usize>,
    pub log_blank: f64,
    pub log_non_blank: f64,
    /// Accumulated ln P of completed words.
    pub log_lm: f64,
    /// Tree node of the word being spelled; `None` when the last character is not a word character.
    node: Option<usize>,
    last_word: Option<usize>,
}

impl Beam {
    pub fn log_ctc(&self) -> f64 {
        log_add(self.log_blank, self.log_non_blank)
    }

    pub fn score(&self) -> f64 {
        self.log_ctc() + self.log_lm
    }

    /// True while spelling a word (the trailing run consists of word characters).
    pub fn in_word(&self) -> bool {
        self.node.is_some()
    }
}

fn rank(lex: &Lexicon, a: &Beam, b: &Beam) -> Ordering {
    b.score()
        .total_cmp(&a.score())
        .then_with(|| a.labels.iter().map(|&l| lex.chars[l]).cmp(b.labels.iter().map(|&l| lex.chars[l])))
}

impl Lexicon {
    fn word_score(&self, mode: WbsMode, prev: Option<usize>, word: usize) -> f64 {
        match mode {
            WbsMode::Words => 0.0,
            WbsMode::NGrams => self.lm.log_prob(prev, word),
        }
    }

    /// The beam state after appending `label`, or `None` if the lexicon forbids it.
    fn extend(&self, beam: &Beam, label: usize, mode: WbsMode) -> Option<(Option<usize>, Option<usize>, f64)> {
        if self.is_word_label[label] {
            let node = beam.node.unwrap_or(PrefixTree::ROOT);
            let (_, child) = self.children[node].iter().find(|&&(l, _)| l == label)?;
            Some((Some(*child), beam.last_word, beam.log_lm))
        } else {
            match beam.node {
                None => Some((None, beam.last_word, beam.log_lm)),
                Some(n) => {
                    let w = self.tree.nodes[n].word?;
                    Some((None, Some(w), beam.log_lm + self.word_score(mode, beam.last_word, w)))
                }
            }
        }
    }

    fn allowed(&self, beam: &Beam) -> impl Iterator<Item = usize> + '_ {
        let node = beam.node.unwrap_or(PrefixTree::ROOT);
        let non_word = match beam.node {
            Some(n) if self.tree.nodes[n].word.is_none() => &[][..],
            _ => &self.non_word_labels[..],
        };
        self.children[node].iter().map(|&(l, _)| l).chain(non_word.iter().copied())
    }
}

/// Search over log posteriors `[frames, classes]`. `observe` sees the retained beams after each frame.
pub(crate) fn search(
    log_probs: &[f64],
    classes: usize,
    blank: usize,
    lex: &Lexicon,
    cfg: &WbsConfig,
    observe: &mut dyn FnMut(usize, &[Beam]),
) -> Result<String> {
    if cfg.beam_width == 0 {
        return Err(Error::Invalid("beam width must be at least 1".into()));
    }
    if classes != lex.chars.len() + 1 || blank != lex.chars.len() {
        return Err(Error::shape(
            "word_beam_search",
            format!("{classes} classes for an alphabet of {} characters", lex.chars.len()),
        ));
    }
    let mut beams = vec![Beam {
        labels: Vec::new(),
        log_blank: 0.0,
        log_non_blank: f64::NEG_INFINITY,
        log_lm: 0.0,
        node: None,
        last_word: None,
    }];
    for (t, row) in log_probs.chunks_exact(classes).enumerate() {
        let mut next: HashMap<Vec<usize>, Beam> = HashMap::new();
        for beam in &beams {
            let total = beam.log_ctc();
            let mut copy_nb = f64::NEG_INFINITY;
            if let Some(&last) = beam.labels.last() {
                copy_nb = beam.log_non_blank + row[last];
            }
            let copy_b = total + row[blank];
            let entry = next.entry(beam.labels.clone()).or_insert_with(|| Beam {
                log_blank: f64::NEG_INFINITY,
                log_non_blank: f64::NEG_INFINITY,
                ..beam.clone()
            });
            entry.log_blank = log_add(entry.log_blank, copy_b);
            entry.log_non_blank = log_add(entry.log_non_blank, copy_nb);
            for label in lex.allowed(beam) {
                let Some((node, last_word, log_lm)) = lex.extend(beam, label, cfg.mode) else {
                    continue;
                };
                let from = if beam.labels.last() == Some(&label) { beam.log_blank } else { total };
                let mass = from + row[label];
                let mut labels = beam.labels.clone();
                labels.push(label);
                let entry = next.entry(labels).or_insert_with_key(|labels| Beam {
                    labels: labels.clone(),
                    log_blank: f64::NEG_INFINITY,
                    log_non_blank: f64::NEG_INFINITY,
                    log_lm,
                    node,
                    last_word,
                });
                entry.log_non_blank = log_add(entry.log_non_blank, mass);
            }
        }
        let mut candidates: Vec<Beam> = next.into_values().filter(|b| b.log_ctc() > f64::NEG_INFINITY).collect();
        candidates.sort_by(|a, b| rank(lex, a, b));
        candidates.truncate(cfg.beam_width);
        beams = candidates;
        observe(t, &beams);
    }
    let fallback = beams.first().cloned();
    let mut finals: Vec<Beam> = beams
        .into_iter()
        .filter_map(|mut b| match b.node {
            None => Some(b),
            Some(n) => {
                let w = lex.tree.nodes[n].word?;
                b.log_lm += lex.word_score(cfg.mode, b.last_word, w);
                Some(b)
            }
        })
        .collect();
    finals.sort_by(|a, b| rank(lex, a, b));
    match (finals.first(), fallback) {
        (Some(best), _) => Ok(lex.text(&best.labels)),
        (None, Some(best)) => Ok(lex.complete(&best)),
        (None, None) => {
            warn!("word beam search exhausted all beams; returning empty text");
            Ok(String::new())
        }
    }
}

impl Lexicon {
    /// Text of a beam that stopped inside a word, finished with the most frequent lexicon word
    /// sharing that prefix (ties to the alphabetically first).
    fn complete(&self, beam: &Beam) -> String {
        let mut text = self.text(&beam.labels);
        let Some(node) = beam.node else { return text };
        let mut best: Option<(u32, &str)> = None;
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            if let Some(w) = self.tree.nodes[n].word {
                let cand = (self.lm.unigram_count(w), self.tree.words()[w].as_str());
                if best.is_none_or(|(c, s)| cand.0 > c || (cand.0 == c && cand.1 < s)) {
                    best = Some(cand);
                }
            }
            stack.extend(self.tree.nodes[n].children.values());
        }
        if let Some((_, word)) = best {
            let done = text.chars().rev().take_while(|&c| self.tree_char(c)).count();
            text.extend(word.chars().skip(done));
        }
        text
    }

    fn tree_char(&self, c: char) -> bool {
        self.chars.iter().position(|&x| x == c).is_some_and(|l| self.is_word_label[l])
    }
}

/// Most probable lexicon-consistent text for one line.
pub fn word_beam_search<T: Real>(probs: &ProbMatrix<T>, lex: &Lexicon, cfg: &WbsConfig) -> Result<String> {
    search(&probs.log_values(), probs.classes(), probs.blank(), lex, cfg, &mut |_, _| {})
}

/// Per-line results joined by newlines, in the given order.
pub fn decode_paragraph<T: Real>(lines: &[ProbMatrix<T>], lex: &Lexicon, cfg: &WbsConfig) -> Result<String> {
    if lines.is_empty() {
        return Err(Error::Invalid("paragraph has no lines to decode".into()));
    }
    let texts = lines
        .par_iter()
        .map(|p| word_beam_search(p, lex, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(texts.join("\n"))
}
