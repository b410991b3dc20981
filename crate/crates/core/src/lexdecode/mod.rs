//! Lexicon-constrained word beam search over CTC posteriors.

mod ngram;
mod search;
mod tree;

pub use ngram::NgramModel;
pub use search::{decode_paragraph, word_beam_search, Beam};
pub use tree::{CharClassing, PrefixTree};

use std::collections::HashMap;

use log::warn;

use crate::error::{Error, Result};

pub const DEFAULT_BEAM_WIDTH: usize = 50;
pub const ADD_ONE: f64 = 1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WbsMode {
    Words,
    #[default]
    NGrams,
}

impl std::str::FromStr for WbsMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "words" => Ok(WbsMode::Words),
            "ngrams" => Ok(WbsMode::NGrams),
            other => Err(format!("unknown word beam search mode `{other}` (expected words or ngrams)")),
        }
    }
}

impl std::fmt::Display for WbsMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WbsMode::Words => "words",
            WbsMode::NGrams => "ngrams",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WbsConfig {
    pub mode: WbsMode,
    pub beam_width: usize,
}

impl Default for WbsConfig {
    fn default() -> Self {
        WbsConfig {
            mode: WbsMode::NGrams,
            beam_width: DEFAULT_BEAM_WIDTH,
        }
    }
}

/// Builds the trie of distinct corpus words and the bigram model over consecutive words of each line.
pub fn build_prefix_tree<S: AsRef<str>>(corpus: &[S], classing: &CharClassing) -> Result<(PrefixTree, NgramModel)> {
    if corpus.is_empty() {
        return Err(Error::Invalid("text corpus is empty".into()));
    }
    let mut tree = PrefixTree::default();
    let mut lm = NgramModel::new(ADD_ONE);
    for line in corpus {
        let ids: Vec<usize> = classing.words(line.as_ref()).map(|w| tree.insert(w)).collect();
        lm.observe_line(&ids);
    }
    lm.set_vocab(tree.words().len());
    Ok((tree, lm))
}

/// Tree and language model bound to an alphabet's label indices.
#[derive(Clone, Debug)]
pub struct Lexicon {
    chars: Vec<char>,
    tree: PrefixTree,
    lm: NgramModel,
    /// Per tree node: (label, child node) for each child whose character is in the alphabet.
    children: Vec<Vec<(usize, usize)>>,
    is_word_label: Vec<bool>,
    non_word_labels: Vec<usize>,
}

impl Lexicon {
    pub fn new(alphabet: &[char], classing: &CharClassing, tree: PrefixTree, lm: NgramModel) -> Result<Self> {
        let index: HashMap<char, usize> = alphabet.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        for &c in alphabet {
            if !classing.is_word(c) && !classing.is_non_word(c) {
                return Err(Error::Invalid(format!("alphabet character {c:?} has no word/non-word class")));
            }
        }
        for c in classing.word_chars().chain(classing.non_word_chars()) {
            if !index.contains_key(&c) {
                return Err(Error::Invalid(format!("classed character {c:?} is not in the alphabet")));
            }
        }
        let children = tree
            .nodes
            .iter()
            .map(|n| n.children.iter().filter_map(|(c, &child)| index.get(c).map(|&l| (l, child))).collect())
            .collect();
        let unreachable = tree.words().iter().filter(|w| w.chars().any(|c| !index.contains_key(&c))).count();
        if unreachable > 0 {
            warn!("{unreachable} lexicon words use characters outside the alphabet and can never be decoded");
        }
        Ok(Lexicon {
            is_word_label: alphabet.iter().map(|&c| classing.is_word(c)).collect(),
            non_word_labels: (0..alphabet.len()).filter(|&l| classing.is_non_word(alphabet[l])).collect(),
            chars: alphabet.to_vec(),
            tree,
            lm,
            children,
        })
    }

    /// Convenience: alphabetic classing, tree and bigrams from `corpus`.
    pub fn from_corpus<S: AsRef<str>>(alphabet: &[char], corpus: &[S]) -> Result<Self> {
        let classing = CharClassing::alphabetic(alphabet);
        let (tree, lm) = build_prefix_tree(corpus, &classing)?;
        Lexicon::new(alphabet, &classing, tree, lm)
    }

    pub fn tree(&self) -> &PrefixTree {
        &self.tree
    }

    pub fn lm(&self) -> &NgramModel {
        &self.lm
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn text(&self, labels: &[usize]) -> String {
        labels.iter().map(|&l| self.chars[l]).collect()
    }
}
