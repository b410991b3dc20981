//! Deterministic synthetic paragraphs rendered with the built-in bitmap font.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::font::{glyph, renderable, GLYPH_HEIGHT, GLYPH_WIDTH};
use super::ParagraphSample;
use crate::error::{Error, Result};
use crate::numerics::{SeedRng, Tensor};
use rand::SeedableRng;

/// Horizontal advance per character.
pub const ADVANCE: usize = GLYPH_WIDTH + 1;

pub const DEFAULT_VOCABULARY: &[&str] = &[
    "the", "of", "and", "to", "in", "is", "it", "was", "for", "on", "are", "as", "with", "his",
    "they", "at", "be", "this", "from", "have", "or", "by", "one", "had", "not", "but", "what",
    "all", "were", "when", "we", "there", "can", "an", "your", "which", "their", "said", "if",
    "do", "will", "each", "about", "how", "up", "out", "them", "then", "she", "many", "some",
    "so", "these", "would", "other", "into", "has", "more", "her", "two", "like", "him", "see",
    "time", "could", "no", "make", "than", "first", "been", "its", "who", "now", "people", "my",
    "made", "over", "did", "down", "only", "way", "find", "use", "may", "water", "long",
    "little", "very", "after", "words", "called", "just", "where", "most", "know", "quick",
    "jump", "zone", "box", "gave",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub min_lines: usize,
    pub max_lines: usize,
    /// Vertical distance between consecutive baselines.
    pub line_pitch: usize,
    pub max_chars: usize,
    pub vocabulary: Vec<String>,
    /// Probability that a word is followed by `,` or `.`.
    pub punctuation: f64,
}

impl SynthConfig {
    /// 48x128 pages of 1 to 3 short lines.
    pub fn toy() -> Self {
        SynthConfig {
            height: 48,
            width: 128,
            min_lines: 1,
            max_lines: 3,
            line_pitch: 14,
            max_chars: 16,
            vocabulary: DEFAULT_VOCABULARY.iter().map(|s| s.to_string()).collect(),
            punctuation: 0.1,
        }
    }

    /// Every character a generated transcript can contain.
    pub fn charset(&self) -> Vec<char> {
        let mut chars: Vec<char> = self.vocabulary.iter().flat_map(|w| w.chars()).collect();
        chars.push(' ');
        if self.punctuation > 0.0 {
            chars.extend([',', '.']);
        }
        chars.sort_unstable();
        chars.dedup();
        chars
    }

    pub fn validate(&self) -> Result<()> {
        let bad: Vec<char> = self.charset().into_iter().filter(|&c| !renderable(c)).collect();
        if !bad.is_empty() {
            return Err(Error::Data(format!("characters without a glyph: {bad:?}")));
        }
        if self.min_lines == 0 || self.min_lines > self.max_lines {
            return Err(Error::Data(format!("bad line range {}..={}", self.min_lines, self.max_lines)));
        }
        if self.vocabulary.is_empty() || self.vocabulary.iter().any(|w| w.is_empty()) {
            return Err(Error::Data("vocabulary must hold non-empty words".into()));
        }
        let longest = self.vocabulary.iter().map(|w| w.chars().count()).max().unwrap_or(0) + 1;
        if longest > self.max_chars {
            return Err(Error::Data(format!("max_chars {} shorter than the longest word", self.max_chars)));
        }
        if 4 + self.max_chars * ADVANCE > self.width {
            return Err(Error::Data(format!("{} chars do not fit in width {}", self.max_chars, self.width)));
        }
        if self.line_pitch < GLYPH_HEIGHT + 1 || 4 + self.max_lines * self.line_pitch > self.height {
            return Err(Error::Data(format!(
                "{} lines at pitch {} do not fit in height {}",
                self.max_lines, self.line_pitch, self.height
            )));
        }
        Ok(())
    }

    fn line_text<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let mut text = String::new();
        loop {
            let mut word = self.vocabulary.choose(rng).expect("non-empty").clone();
            if rng.gen_bool(self.punctuation) {
                word.push(if rng.gen_bool(0.5) { ',' } else { '.' });
            }
            let len = text.chars().count() + usize::from(!text.is_empty()) + word.chars().count();
            if len > self.max_chars {
                if text.is_empty() {
                    word.pop();
                    text = word;
                }
                return text;
            }
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(&word);
            if rng.gen_bool(0.25) {
                return text;
            }
        }
    }

    /// Renders one paragraph; bright ink on a zero background.
    pub fn sample<R: Rng + ?Sized>(&self, id: String, rng: &mut R) -> ParagraphSample {
        let n = rng.gen_range(self.min_lines..=self.max_lines);
        let lines: Vec<String> = (0..n).map(|_| self.line_text(rng)).collect();
        let ink = rng.gen_range(180u8..=255) as f32 / 255.0;
        let mut image = Tensor::zeros(&[1, self.height, self.width]);
        let top = rng.gen_range(1..=3);
        for (k, line) in lines.iter().enumerate() {
            let y0 = top + k * self.line_pitch + rng.gen_range(0..=1);
            let x0 = rng.gen_range(1..=4);
            for (i, c) in line.chars().enumerate() {
                let rows = glyph(c).expect("validated charset");
                for (dy, row) in rows.iter().enumerate() {
                    for (dx, px) in row.bytes().enumerate() {
                        if px == b'#' {
                            image.data_mut()[(y0 + dy) * self.width + x0 + i * ADVANCE + dx] = ink;
                        }
                    }
                }
            }
        }
        ParagraphSample { id, image, lines }
    }

    /// `count` samples; sample `i` draws from its own stream of `seed`, so the output does not
    /// depend on thread scheduling.
    pub fn generate(&self, seed: u64, stream: u64, count: usize) -> Result<Vec<ParagraphSample>> {
        self.validate()?;
        Ok((0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = SeedRng::seed_from_u64(seed);
                rng.set_stream((stream << 32) | i as u64);
                self.sample(format!("{i:04}"), &mut rng)
            })
            .collect())
    }
}
