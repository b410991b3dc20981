//! Paragraph recognition over a split, decoded greedily and with word beam search.

use rayon::prelude::*;

use crate::ctc::greedy_decode;
use crate::data::{Alphabet, ParagraphSample};
use crate::decoder::ProbMatrix;
use crate::error::Result;
use crate::lexdecode::{decode_paragraph, Lexicon, WbsConfig};
use crate::metrics::{render_table, EvalReport, SampleScore};
use crate::model::Model;
use crate::numerics::Real;

/// Best-path text of each line, joined by newlines. No lines gives the empty string.
pub fn greedy_paragraph<T: Real>(lines: &[ProbMatrix<T>], alphabet: &Alphabet) -> String {
    lines
        .iter()
        .map(|p| alphabet.decode(&greedy_decode(p)))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn wbs_paragraph<T: Real>(lines: &[ProbMatrix<T>], lexicon: &Lexicon, cfg: &WbsConfig) -> Result<String> {
    if lines.is_empty() {
        return Ok(String::new());
    }
    decode_paragraph(lines, lexicon, cfg)
}

/// One transcript line per corpus entry, taken from the samples themselves.
pub fn split_corpus(samples: &[ParagraphSample]) -> Vec<String> {
    samples.iter().flat_map(|s| s.lines.iter().cloned()).collect()
}

/// Line posteriors for every sample, in sample order.
pub fn transcribe<T: Real>(model: &Model<T>, samples: &[ParagraphSample], max_lines: usize) -> Result<Vec<Vec<ProbMatrix<T>>>> {
    samples
        .par_iter()
        .map(|s| Ok(model.recognize(&s.image.cast(), max_lines)?.lines))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub greedy: EvalReport,
    pub wbs: Option<EvalReport>,
    /// Samples whose predicted line count equals the true one.
    pub line_count_matches: usize,
}

impl Evaluation {
    pub fn render(&self) -> String {
        let mut reports = vec![("greedy", &self.greedy)];
        if let Some(w) = &self.wbs {
            reports.push(("wbs", w));
        }
        let mut out = render_table(&reports);
        out.push('\n');
        out.push_str(&self.greedy.to_kv("greedy."));
        if let Some(w) = &self.wbs {
            out.push_str(&w.to_kv("wbs."));
        }
        out.push_str(&format!(
            "line_count_matches={}\nsamples={}\n",
            self.line_count_matches,
            self.greedy.samples.len()
        ));
        out
    }
}

/// Scores precomputed posteriors against the samples' transcripts.
pub fn score<T: Real>(
    samples: &[ParagraphSample],
    posteriors: &[Vec<ProbMatrix<T>>],
    alphabet: &Alphabet,
    lexicon: Option<(&Lexicon, &WbsConfig)>,
) -> Result<Evaluation> {
    let greedy = samples
        .iter()
        .zip(posteriors)
        .map(|(s, p)| SampleScore::new(&s.id, s.text(), greedy_paragraph(p, alphabet)))
        .collect();
    let wbs = match lexicon {
        None => None,
        Some((lex, cfg)) => {
            let scores = samples
                .par_iter()
                .zip(posteriors)
                .map(|(s, p)| Ok(SampleScore::new(&s.id, s.text(), wbs_paragraph(p, lex, cfg)?)))
                .collect::<Result<Vec<_>>>()?;
            Some(EvalReport::new(scores)?)
        }
    };
    Ok(Evaluation {
        greedy: EvalReport::new(greedy)?,
        wbs,
        line_count_matches: samples.iter().zip(posteriors).filter(|(s, p)| s.lines.len() == p.len()).count(),
    })
}

pub fn evaluate<T: Real>(
    model: &Model<T>,
    samples: &[ParagraphSample],
    alphabet: &Alphabet,
    lexicon: Option<(&Lexicon, &WbsConfig)>,
    max_lines: usize,
) -> Result<Evaluation> {
    let posteriors = transcribe(model, samples, max_lines)?;
    score(samples, &posteriors, alphabet, lexicon)
}
