use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;

use gatedlex::checkpoint::{AnyModel, Checkpoint};
use gatedlex::config::RunConfig;
use gatedlex::data::{check_alphabet, pgm, preprocess, read_split, synthesize, Alphabet, DatasetManifest, ParagraphSample};
use gatedlex::eval::{evaluate, greedy_paragraph, split_corpus, wbs_paragraph, Evaluation};
use gatedlex::gradsuite;
use gatedlex::lexdecode::{Lexicon, WbsConfig};
use gatedlex::metrics::render_table;
use gatedlex::model::Model;
use gatedlex::numerics::{Real, Tensor};
use gatedlex::train::{line_samples, pretrain_lines, train as train_model, LossLog, TrainSample};
use gatedlex::{Error, Result};

use crate::{ConfigArgs, Decode, DecodeArgs, EvalArgs, GradcheckArgs, InferArgs, SynthArgs, TrainArgs};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_NUMERIC: u8 = 2;
pub const EXIT_DATA: u8 = 3;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericFailure { .. } | Error::NonFinite(_) => EXIT_NUMERIC,
        Error::Config { .. } | Error::Invalid(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn usage(message: impl Into<String>) -> Error {
    Error::Invalid(message.into())
}

/// Config file text with `overrides` applied: overridden lines are commented out in place (so
/// line numbers stay valid) and the new values appended.
fn load_config(args: &ConfigArgs, extra: &[(&str, String)]) -> Result<RunConfig> {
    let (text, source) = match &args.config {
        Some(p) => (
            std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
            p.display().to_string(),
        ),
        None => (String::new(), "<defaults>".to_string()),
    };
    let mut overrides: Vec<(String, String)> = Vec::new();
    for s in &args.set {
        let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    overrides.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    let keys: BTreeSet<&str> = overrides.iter().map(|(k, _)| k.as_str()).collect();
    let mut merged = String::new();
    for line in text.lines() {
        let key = line.split_once('=').map(|(k, _)| k.trim());
        if !line.trim_start().starts_with('#') && key.is_some_and(|k| keys.contains(k)) {
            merged.push('#');
        }
        merged.push_str(line);
        merged.push('\n');
    }
    let mut last: Vec<(String, String)> = Vec::new();
    for (k, v) in overrides {
        last.retain(|(x, _)| *x != k);
        last.push((k, v));
    }
    for (k, v) in last {
        merged.push_str(&format!("{k}={v}\n"));
    }
    RunConfig::parse(&merged, &source)
}

pub fn synth(a: SynthArgs) -> Result<u8> {
    let cfg = load_config(&a.config, &[])?;
    let mut splits = Vec::new();
    for s in &a.splits {
        let parsed = s
            .split_once(':')
            .and_then(|(n, c)| Some((n.to_string(), c.parse::<usize>().ok()?)))
            .filter(|(n, _)| !n.is_empty() && !n.contains(['/', '\\']));
        splits.push(parsed.ok_or_else(|| usage(format!("bad split {s:?} (want NAME:COUNT)")))?);
    }
    let manifest = synthesize(&a.out, &cfg.synth, cfg.seed, &splits)?;
    for (name, count) in &manifest.splits {
        println!("{name}: {count} samples");
    }
    println!("wrote {} ({}x{}, {} characters)", a.out.display(), manifest.height, manifest.width, manifest.alphabet.len());
    Ok(0)
}

fn load_split(root: &Path, split: &str) -> Result<(DatasetManifest, Vec<ParagraphSample>)> {
    let manifest = DatasetManifest::read(root)?;
    let samples = read_split(root, split)?;
    if samples.is_empty() {
        return Err(Error::Data(format!("split {split} in {} has no samples", root.display())));
    }
    check_alphabet(&samples, &manifest.alphabet)?;
    Ok((manifest, samples))
}

fn loss_log_path(a: &TrainArgs) -> PathBuf {
    a.loss_log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".loss.csv");
        PathBuf::from(p)
    })
}

fn run_training<T: Real, W: Write>(
    model: &mut Model<T>,
    cfg: &RunConfig,
    alphabet: &Alphabet,
    samples: &[ParagraphSample],
    log: &mut LossLog<W>,
) -> Result<()> {
    let train_cfg = cfg.train_config();
    if cfg.train.pretrain_lines > 0 {
        let mut synth = cfg.synth.clone();
        let words: BTreeSet<&str> = samples.iter().flat_map(|s| s.lines.iter().flat_map(|l| l.split_whitespace())).collect();
        synth.vocabulary = words.into_iter().map(str::to_string).collect();
        synth.punctuation = 0.0;
        let lines = line_samples(&synth, alphabet, cfg.seed, cfg.train.pretrain_lines.min(1000))?;
        let pre_cfg = gatedlex::train::TrainConfig {
            iterations: cfg.train.pretrain_lines,
            ..train_cfg.clone()
        };
        let losses = pretrain_lines(model, &lines, &pre_cfg)?;
        if let Some(last) = losses.last() {
            info!("line pretraining: {} iterations, final ctc {last:.4}", losses.len());
        }
    }
    let mut window = 0.0;
    train_model(model, &to_train_samples(samples, alphabet)?, &train_cfg, |r| {
        log.record(r)?;
        window += r.ctc_loss + cfg.lambda * r.ce_loss;
        if r.iteration % 100 == 0 {
            info!("iteration {}: mean joint loss {:.4}", r.iteration, window / 100.0);
            window = 0.0;
        }
        Ok(())
    })?;
    Ok(())
}

fn to_train_samples(samples: &[ParagraphSample], alphabet: &Alphabet) -> Result<Vec<TrainSample>> {
    samples.iter().map(|s| TrainSample::from_paragraph(s, alphabet)).collect()
}

pub fn train(a: TrainArgs) -> Result<u8> {
    let mut extra: Vec<(&str, String)> = Vec::new();
    if let Some(n) = a.iterations {
        extra.push(("train.iterations", n.to_string()));
    }
    if let Some(lr) = a.learning_rate {
        extra.push(("train.learning_rate", lr.to_string()));
    }
    if let Some(o) = &a.optimizer {
        extra.push(("train.optimizer", o.clone()));
    }
    if a.adam {
        extra.push(("train.optimizer", "adam".into()));
    }
    if let Some(p) = &a.precision {
        extra.push(("precision", p.clone()));
    }
    if let Some(n) = a.pretrain_lines {
        extra.push(("train.pretrain_lines", n.to_string()));
    }
    let mut cfg = load_config(&a.config, &extra)?;
    let (manifest, samples) = load_split(&a.data, &a.split)?;
    cfg.synth.height = manifest.height;
    cfg.synth.width = manifest.width;
    let alphabet = manifest.alphabet;
    let mut model = AnyModel::new(&cfg, alphabet.len(), cfg.seed)?;
    info!("{} parameters, {} training samples", model.param_count(), samples.len());

    let log_path = loss_log_path(&a);
    let mut log = LossLog::new(BufWriter::new(File::create(&log_path)?))?;
    let outcome = match &mut model {
        AnyModel::F32(m) => run_training(m, &cfg, &alphabet, &samples, &mut log),
        AnyModel::F64(m) => run_training(m, &cfg, &alphabet, &samples, &mut log),
    };
    log.into_inner().flush()?;
    outcome?;
    let checkpoint = Checkpoint {
        iteration: cfg.train.iterations,
        config: cfg,
        alphabet,
        model,
    };
    checkpoint.save(&a.out)?;
    println!("wrote {} after {} iterations; loss log {}", a.out.display(), checkpoint.iteration, log_path.display());
    Ok(0)
}

fn wbs_config(base: &RunConfig, d: &DecodeArgs) -> Result<WbsConfig> {
    let mut cfg = base.wbs;
    if let Some(m) = &d.wbs_mode {
        cfg.mode = m.parse().map_err(usage)?;
    }
    if let Some(b) = d.beam_width {
        if b == 0 {
            return Err(usage("--beam-width must be at least 1"));
        }
        cfg.beam_width = b;
    }
    Ok(cfg)
}

fn read_corpus(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn eval(a: EvalArgs) -> Result<u8> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (manifest, samples) = load_split(&a.data, &a.split)?;
    if manifest.alphabet != ck.alphabet {
        return Err(Error::Data(format!(
            "alphabet mismatch: checkpoint has {:?}, dataset has {:?}",
            ck.alphabet.as_string(),
            manifest.alphabet.as_string()
        )));
    }
    let wbs = wbs_config(&ck.config, &a.decoding)?;
    let max_lines = a.decoding.max_lines.unwrap_or(ck.config.max_line_length);
    let lexicon = match a.decode {
        Decode::Greedy => None,
        _ => {
            let corpus = match &a.decoding.corpus {
                Some(p) => read_corpus(p)?,
                None => split_corpus(&samples),
            };
            Some(Lexicon::from_corpus(ck.alphabet.chars(), &corpus)?)
        }
    };
    let lex = lexicon.as_ref().map(|l| (l, &wbs));
    let evaluation = match &ck.model {
        AnyModel::F32(m) => evaluate(m, &samples, &ck.alphabet, lex, max_lines)?,
        AnyModel::F64(m) => evaluate(m, &samples, &ck.alphabet, lex, max_lines)?,
    };
    println!("checkpoint={} split={} samples={}", a.checkpoint.display(), a.split, samples.len());
    print!("{}", render(&evaluation, a.decode));
    Ok(0)
}

fn render(e: &Evaluation, decode: Decode) -> String {
    match (decode, &e.wbs) {
        (Decode::Wbs, Some(w)) => format!(
            "{}\n{}line_count_matches={}\n",
            render_table(&[("wbs", w)]),
            w.to_kv("wbs."),
            e.line_count_matches
        ),
        _ => e.render(),
    }
}

fn transcribe_one<T: Real>(
    model: &Model<T>,
    image: &Tensor<f32>,
    alphabet: &Alphabet,
    decode: Decode,
    lexicon: Option<&Lexicon>,
    wbs: &WbsConfig,
    max_lines: usize,
) -> Result<Vec<(&'static str, String)>> {
    let rec = model.recognize(&image.cast(), max_lines)?;
    info!("{} lines, {} attention steps", rec.lines.len(), rec.decisions.len());
    let mut out = Vec::new();
    if decode != Decode::Wbs {
        out.push(("greedy", greedy_paragraph(&rec.lines, alphabet)));
    }
    if let Some(lex) = lexicon {
        out.push(("wbs", wbs_paragraph(&rec.lines, lex, wbs)?));
    }
    Ok(out)
}

pub fn infer(a: InferArgs) -> Result<u8> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut image = pgm::read(&a.image)?;
    let (h, w) = (ck.config.synth.height, ck.config.synth.width);
    if image.shape() != [1, h, w] {
        info!("resizing {:?} to {h}x{w}", image.shape());
        image = preprocess(&image, h, w)?;
    }
    let wbs = wbs_config(&ck.config, &a.decoding)?;
    let lexicon = match a.decode {
        Decode::Greedy => None,
        _ => {
            let path = a.decoding.corpus.as_ref().ok_or_else(|| usage("word beam search needs --corpus"))?;
            Some(Lexicon::from_corpus(ck.alphabet.chars(), &read_corpus(path)?)?)
        }
    };
    let max_lines = a.decoding.max_lines.unwrap_or(ck.config.max_line_length);
    let texts = match &ck.model {
        AnyModel::F32(m) => transcribe_one(m, &image, &ck.alphabet, a.decode, lexicon.as_ref(), &wbs, max_lines)?,
        AnyModel::F64(m) => transcribe_one(m, &image, &ck.alphabet, a.decode, lexicon.as_ref(), &wbs, max_lines)?,
    };
    let labelled = texts.len() > 1;
    for (name, text) in texts {
        if labelled {
            println!("[{name}]");
        }
        println!("{text}");
    }
    Ok(0)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<u8> {
    let cfg = load_config(&a.config, &[])?;
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let entries = gradsuite::run_seeds(&seeds, a.max_per_tensor, cfg.encoder.gated_placement)?;
    let failed = entries.iter().filter(|e| !e.passed).count();
    for e in &entries {
        println!("{e}");
    }
    println!("{} of {} checks passed (f64, {} seeds)", entries.len() - failed, entries.len(), seeds.len());
    Ok(if failed == 0 { 0 } else { EXIT_NUMERIC })
}
