//! Independent reference implementations shared by the integration tests and the acceptance run.
#![allow(dead_code)]

pub mod criteria;

use std::collections::{HashMap, HashSet};

use rand::Rng;

/// Collapse repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Calls `f` with every frame path of length `frames` over `classes` symbols.
pub fn for_each_path(frames: usize, classes: usize, mut f: impl FnMut(&[usize])) {
    let mut path = vec![0; frames];
    loop {
        f(&path);
        let mut i = frames;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            path[i] += 1;
            if path[i] < classes {
                break;
            }
            path[i] = 0;
        }
    }
}

/// Probability of every labelling with non-zero mass, by summing over all frame paths.
pub fn labelling_probabilities(probs: &[f64], frames: usize, classes: usize, blank: usize) -> HashMap<Vec<usize>, f64> {
    let mut out: HashMap<Vec<usize>, f64> = HashMap::new();
    for_each_path(frames, classes, |path| {
        let p: f64 = path.iter().enumerate().map(|(t, &c)| probs[t * classes + c]).product();
        *out.entry(collapse(path, blank)).or_default() += p;
    });
    out
}

/// -ln P(target) by path enumeration.
pub fn brute_ctc_loss(probs: &[f64], frames: usize, classes: usize, blank: usize, target: &[usize]) -> f64 {
    let mut total = 0.0;
    for_each_path(frames, classes, |path| {
        if collapse(path, blank) == target {
            total += path.iter().enumerate().map(|(t, &c)| probs[t * classes + c]).product::<f64>();
        }
    });
    -total.ln()
}

/// Random row-stochastic matrix, rows drawn uniformly then normalized.
pub fn random_probs<R: Rng>(rng: &mut R, frames: usize, classes: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(frames * classes);
    for _ in 0..frames {
        let row: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.01..1.0f64).powi(2)).collect();
        let s: f64 = row.iter().sum();
        v.extend(row.iter().map(|x| x / s));
    }
    v
}

/// Every sequence over `0..n` with length at most `max_len`.
pub fn all_sequences(n: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in 0..n {
                let mut t: Vec<usize> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Full dynamic-programming table edit distance.
pub fn edit_distance_table<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// A small lexicon-decoding problem.
pub struct WbsInstance {
    pub alphabet: Vec<char>,
    pub corpus: Vec<String>,
    pub probs: Vec<f64>,
    pub frames: usize,
}

/// Up to four characters (always a space as separator), up to five words, up to eight frames.
pub fn random_wbs_instance<R: Rng>(rng: &mut R) -> WbsInstance {
    let letters = ['a', 'b', 'c'];
    let n_letters = rng.gen_range(1..=3);
    let mut alphabet: Vec<char> = letters[..n_letters].to_vec();
    alphabet.push(' ');
    let n_words = rng.gen_range(1..=5);
    let mut words: Vec<String> = Vec::new();
    while words.len() < n_words {
        let len = rng.gen_range(1..=3);
        let w: String = (0..len).map(|_| alphabet[rng.gen_range(0..n_letters)]).collect();
        if !words.contains(&w) {
            words.push(w);
        }
        if words.len() == n_letters.pow(3) {
            break;
        }
    }
    let corpus: Vec<String> = (0..rng.gen_range(1..=4))
        .map(|_| {
            let n = rng.gen_range(1..=3);
            (0..n).map(|_| words[rng.gen_range(0..words.len())].clone()).collect::<Vec<_>>().join(" ")
        })
        .collect();
    // every word must occur in the corpus
    let mut corpus = corpus;
    corpus.push(words.join(" "));
    let frames = rng.gen_range(1..=8);
    let probs = random_probs(rng, frames, alphabet.len() + 1);
    WbsInstance {
        alphabet,
        corpus,
        probs,
        frames,
    }
}

/// Add-one bigram log-probability of the words of `text`, counted independently from `corpus`.
pub fn bigram_log_score(corpus: &[String], text: &str) -> f64 {
    let words_of = |s: &str| -> Vec<String> { s.split(|c: char| !c.is_alphabetic()).filter(|w| !w.is_empty()).map(str::to_string).collect() };
    let mut vocab: HashSet<String> = HashSet::new();
    let mut pair: HashMap<(String, String), f64> = HashMap::new();
    let mut hist: HashMap<String, f64> = HashMap::new();
    for line in corpus {
        let mut prev = "<s>".to_string();
        for w in words_of(line) {
            vocab.insert(w.clone());
            *pair.entry((prev.clone(), w.clone())).or_default() += 1.0;
            *hist.entry(prev.clone()).or_default() += 1.0;
            prev = w;
        }
    }
    let v = vocab.len() as f64;
    let mut prev = "<s>".to_string();
    let mut score = 0.0;
    for w in words_of(text) {
        let num = pair.get(&(prev.clone(), w.clone())).copied().unwrap_or(0.0) + 1.0;
        let den = hist.get(&prev).copied().unwrap_or(0.0) + v;
        score += (num / den).ln();
        prev = w;
    }
    score
}

/// Exhaustive lexicon-constrained argmax: all labellings whose alphabetic runs are corpus words,
/// scored by exact CTC probability (times the bigram model when `ngrams`), ties broken by text.
pub fn exhaustive_wbs(inst: &WbsInstance, ngrams: bool) -> Option<String> {
    let classes = inst.alphabet.len() + 1;
    let blank = inst.alphabet.len();
    let lexicon: HashSet<&str> = inst
        .corpus
        .iter()
        .flat_map(|l| l.split(|c: char| !c.is_alphabetic()))
        .filter(|w| !w.is_empty())
        .collect();
    let mut best: Option<(f64, String)> = None;
    for (labels, p) in labelling_probabilities(&inst.probs, inst.frames, classes, blank) {
        let text: String = labels.iter().map(|&l| inst.alphabet[l]).collect();
        if !text.split(|c: char| !c.is_alphabetic()).filter(|w| !w.is_empty()).all(|w| lexicon.contains(w)) {
            continue;
        }
        let mut score = p.ln();
        if ngrams {
            score += bigram_log_score(&inst.corpus, &text);
        }
        let better = match &best {
            None => true,
            Some((s, t)) => score > *s || (score == *s && text < *t),
        };
        if better {
            best = Some((score, text));
        }
    }
    best.map(|(_, t)| t)
}

/// -ln P(target) from log-probabilities by the alpha recursion over the blank-extended target.
pub fn ctc_forward_log(log_probs: &[f64], frames: usize, classes: usize, blank: usize, target: &[usize]) -> f64 {
    let mut ext = vec![blank];
    for &l in target {
        ext.push(l);
        ext.push(blank);
    }
    let lse = |a: f64, b: f64| {
        let m = a.max(b);
        if m == f64::NEG_INFINITY {
            m
        } else {
            m + ((a - m).exp() + (b - m).exp()).ln()
        }
    };
    let mut alpha = vec![f64::NEG_INFINITY; ext.len()];
    alpha[0] = log_probs[ext[0]];
    if ext.len() > 1 {
        alpha[1] = log_probs[ext[1]];
    }
    for t in 1..frames {
        let mut next = vec![f64::NEG_INFINITY; ext.len()];
        for s in 0..ext.len() {
            let mut a = alpha[s];
            if s >= 1 {
                a = lse(a, alpha[s - 1]);
            }
            if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] {
                a = lse(a, alpha[s - 2]);
            }
            next[s] = a + log_probs[t * classes + ext[s]];
        }
        alpha = next;
    }
    let n = ext.len();
    let end = if n > 1 { lse(alpha[n - 1], alpha[n - 2]) } else { alpha[0] };
    -end
}
