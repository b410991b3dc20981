//! Samples, alphabets, dataset files, synthesis, preprocessing and augmentation.

pub mod augment;
pub mod font;
pub mod pgm;
pub mod preprocess;
pub mod synth;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::ctc::LabelSeq;
use crate::error::{Error, Result};
use crate::kv;
use crate::numerics::Tensor;

pub use augment::{augment, AugmentConfig};
pub use preprocess::preprocess;
pub use synth::SynthConfig;

/// A page image with its ordered line transcriptions.
#[derive(Clone, Debug, PartialEq)]
pub struct ParagraphSample {
    pub id: String,
    /// `[1, H, W]` in `[0, 1]`.
    pub image: Tensor<f32>,
    pub lines: Vec<String>,
}

impl ParagraphSample {
    /// Lines joined with `\n`, the form paragraph-level metrics compare.
    pub fn text(&self) -> String {
        self.lines.join("\n")
    }
}

/// Ordered character set; class `i` is `chars[i]` and the blank is `len()`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    chars: Vec<char>,
}

impl Alphabet {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let chars: Vec<char> = chars.into_iter().collect();
        if chars.is_empty() {
            return Err(Error::Data("empty alphabet".into()));
        }
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(Error::Data(format!("duplicate alphabet character {c:?}")));
            }
            if *c == '\n' {
                return Err(Error::Data("newline cannot be an alphabet character".into()));
            }
        }
        Ok(Alphabet { chars })
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn blank(&self) -> usize {
        self.chars.len()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn as_string(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn index(&self, c: char) -> Option<usize> {
        self.chars.iter().position(|&a| a == c)
    }

    pub fn encode(&self, text: &str) -> Result<LabelSeq> {
        text.chars()
            .map(|c| self.index(c).ok_or_else(|| Error::Data(format!("character {c:?} not in alphabet"))))
            .collect()
    }

    /// Indices outside the alphabet (including the blank) are skipped.
    pub fn decode(&self, labels: &[usize]) -> String {
        labels.iter().filter_map(|&l| self.chars.get(l)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub alphabet: Alphabet,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// `(name, sample count)` in generation order.
    pub splits: Vec<(String, usize)>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "alphabet={}", kv::quote(&self.alphabet.as_string())).unwrap();
        writeln!(s, "height={}", self.height).unwrap();
        writeln!(s, "width={}", self.width).unwrap();
        writeln!(s, "seed={}", self.seed).unwrap();
        let splits: Vec<String> = self.splits.iter().map(|(n, c)| format!("{n}:{c}")).collect();
        writeln!(s, "splits={}", splits.join(",")).unwrap();
        s
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut r = kv::Reader::new(text, source_name)?;
        let alphabet_text: String = r.require("alphabet")?;
        let alphabet = Alphabet::new(alphabet_text.chars()).map_err(|e| r.error("alphabet", e.to_string()))?;
        let height = r.require("height")?;
        let width = r.require("width")?;
        let seed = r.get("seed", 0)?;
        let entries: Vec<String> = r.list("splits", Vec::new())?;
        let mut splits = Vec::new();
        for entry in entries {
            let parsed = entry
                .split_once(':')
                .and_then(|(n, c)| Some((n.to_string(), c.parse::<usize>().ok()?)))
                .filter(|(n, _)| !n.is_empty() && !n.contains(['/', '\\']));
            match parsed {
                Some(p) => splits.push(p),
                None => return Err(r.error("splits", format!("bad split {entry:?} (want name:count)"))),
            }
        }
        r.finish()?;
        Ok(DatasetManifest {
            alphabet,
            height,
            width,
            seed,
            splits,
        })
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Writes samples as `NNNN.pgm` + `NNNN.txt` into `root/<split>/`.
pub fn write_split(root: &Path, split: &str, samples: &[ParagraphSample]) -> Result<()> {
    let dir = root.join(split);
    std::fs::create_dir_all(&dir)?;
    for s in samples {
        pgm::write(&dir.join(format!("{}.pgm", s.id)), &s.image)?;
        let mut text = s.lines.join("\n");
        text.push('\n');
        std::fs::write(dir.join(format!("{}.txt", s.id)), text)?;
    }
    Ok(())
}

/// Reads every `*.pgm`/`*.txt` pair of a split, ordered by id.
pub fn read_split(root: &Path, split: &str) -> Result<Vec<ParagraphSample>> {
    let dir = root.join(split);
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "pgm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    ids.par_iter()
        .map(|id| {
            let image = pgm::read(&dir.join(format!("{id}.pgm")))?;
            let txt = dir.join(format!("{id}.txt"));
            let text = std::fs::read_to_string(&txt).map_err(|e| Error::Data(format!("{}: {e}", txt.display())))?;
            let lines: Vec<String> = text.lines().map(str::to_string).collect();
            if lines.is_empty() || lines.iter().any(|l| l.is_empty()) {
                return Err(Error::Data(format!("{}: empty transcript line", txt.display())));
            }
            Ok(ParagraphSample {
                id: id.clone(),
                image,
                lines,
            })
        })
        .collect()
}

/// Checks that every transcript character is in `alphabet`.
pub fn check_alphabet(samples: &[ParagraphSample], alphabet: &Alphabet) -> Result<()> {
    for s in samples {
        for line in &s.lines {
            if let Some(c) = line.chars().find(|&c| alphabet.index(c).is_none()) {
                return Err(Error::Data(format!("sample {}: character {c:?} not in alphabet", s.id)));
            }
        }
    }
    Ok(())
}

/// Generates all splits of a synthetic dataset and writes them with their manifest.
pub fn synthesize(root: &Path, cfg: &SynthConfig, seed: u64, splits: &[(String, usize)]) -> Result<DatasetManifest> {
    cfg.validate()?;
    let manifest = DatasetManifest {
        alphabet: Alphabet::new(cfg.charset())?,
        height: cfg.height,
        width: cfg.width,
        seed,
        splits: splits.to_vec(),
    };
    std::fs::create_dir_all(root)?;
    for (k, (name, count)) in splits.iter().enumerate() {
        let samples = cfg.generate(seed, k as u64, *count)?;
        write_split(root, name, &samples)?;
    }
    std::fs::write(root.join(MANIFEST_FILE), manifest.to_text())?;
    Ok(manifest)
}
