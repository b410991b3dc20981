use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Split of the alphabet into characters that form words and characters that separate them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharClassing {
    word: BTreeSet<char>,
    non_word: BTreeSet<char>,
}

impl CharClassing {
    pub fn new(word: impl IntoIterator<Item = char>, non_word: impl IntoIterator<Item = char>) -> Result<Self> {
        let word: BTreeSet<char> = word.into_iter().collect();
        let non_word: BTreeSet<char> = non_word.into_iter().collect();
        if let Some(c) = word.intersection(&non_word).next() {
            return Err(Error::Invalid(format!("character {c:?} is both a word and a non-word character")));
        }
        Ok(CharClassing { word, non_word })
    }

    /// Alphabetic characters are word characters, everything else separates words.
    pub fn alphabetic(alphabet: &[char]) -> Self {
        let (word, non_word): (Vec<char>, Vec<char>) = alphabet.iter().partition(|c| c.is_alphabetic());
        CharClassing {
            word: word.into_iter().collect(),
            non_word: non_word.into_iter().collect(),
        }
    }

    pub fn is_word(&self, c: char) -> bool {
        self.word.contains(&c)
    }

    pub fn is_non_word(&self, c: char) -> bool {
        self.non_word.contains(&c)
    }

    pub fn word_chars(&self) -> impl Iterator<Item = char> + '_ {
        self.word.iter().copied()
    }

    pub fn non_word_chars(&self) -> impl Iterator<Item = char> + '_ {
        self.non_word.iter().copied()
    }

    /// Maximal runs of word characters in `text`.
    pub fn words<'a>(&'a self, text: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        text.split(move |c: char| !self.is_word(c)).filter(|w| !w.is_empty())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub(crate) struct Node {
    pub(crate) children: BTreeMap<char, usize>,
    pub(crate) word: Option<usize>,
}

/// Character trie over the lexicon. Word ids are assigned in first-seen order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrefixTree {
    pub(crate) nodes: Vec<Node>,
    words: Vec<String>,
}

impl Default for PrefixTree {
    fn default() -> Self {
        PrefixTree {
            nodes: vec![Node::default()],
            words: Vec::new(),
        }
    }
}

impl PrefixTree {
    pub const ROOT: usize = 0;

    /// Adds `word` if new; returns its id.
    pub fn insert(&mut self, word: &str) -> usize {
        let mut node = Self::ROOT;
        for c in word.chars() {
            node = match self.nodes[node].children.get(&c) {
                Some(&n) => n,
                None => {
                    self.nodes.push(Node::default());
                    let n = self.nodes.len() - 1;
                    self.nodes[node].children.insert(c, n);
                    n
                }
            };
        }
        *self.nodes[node].word.get_or_insert_with(|| {
            self.words.push(word.to_string());
            self.words.len() - 1
        })
    }

    pub fn node(&self, prefix: &str) -> Option<usize> {
        prefix
            .chars()
            .try_fold(Self::ROOT, |n, c| self.nodes[n].children.get(&c).copied())
    }

    pub fn is_prefix(&self, prefix: &str) -> bool {
        self.node(prefix).is_some()
    }

    pub fn word_id(&self, word: &str) -> Option<usize> {
        self.node(word).and_then(|n| self.nodes[n].word)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_id(word).is_some()
    }

    /// Characters that may follow `prefix`, in sorted order.
    pub fn next_chars(&self, prefix: &str) -> Vec<char> {
        self.node(prefix)
            .map(|n| self.nodes[n].children.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}
