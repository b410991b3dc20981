//! The acceptance criteria as reusable checks. Each returns a one-line detail on success and a
//! description of the first violation otherwise.

use std::time::Instant;

use gatedlex::attention::{Attention, AttentionConfig, AttentionState};
use gatedlex::checkpoint::{same_parameters, AnyModel, Checkpoint};
use gatedlex::config::RunConfig;
use gatedlex::ctc::ctc_loss_log;
use gatedlex::data::synth::SynthConfig;
use gatedlex::data::{Alphabet, ParagraphSample};
use gatedlex::decoder::ProbMatrix;
use gatedlex::encoder::{BlockKind, Encoder, EncoderConfig, GatedPlacement};
use gatedlex::eval::{evaluate, split_corpus, Evaluation};
use gatedlex::gradsuite;
use gatedlex::lexdecode::{word_beam_search, Lexicon, WbsConfig, WbsMode};
use gatedlex::metrics::{corpus_cer, corpus_wer, levenshtein};
use gatedlex::model::{Model, ModelConfig};
use gatedlex::numerics::{Layer, Params, SeedRng, Tensor};
use gatedlex::train::{line_samples, pretrain_lines, train, OptimizerKind, TrainConfig, TrainSample};
use gatedlex::Error;
use rand::{Rng, SeedableRng};

use super::*;

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Criterion 1: every parameterized layer passes central differences in f64 over five seeds.
pub fn gradient_suite() -> Check {
    let start = Instant::now();
    let entries = gradsuite::run_seeds(&[0, 1, 2, 3, 4], 20, GatedPlacement::Early).map_err(|e| e.to_string())?;
    for layer in ["conv", "gated", "instance_norm", "dsc", "lstm", "projection", "attention", "joint"] {
        ensure(entries.iter().any(|e| e.name.contains(layer)), || format!("no entry covers {layer}"))?;
    }
    if let Some(bad) = entries.iter().find(|e| !e.passed) {
        return Err(bad.to_string());
    }
    let worst = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{} tensors, worst rel err {worst:.2e}, {secs:.1}s", entries.len()))
}

/// Criterion 2: CTC loss against path enumeration for every T <= 6, N <= 3, |target| <= 3.
pub fn ctc_oracle() -> Check {
    let start = Instant::now();
    let mut rng = SeedRng::seed_from_u64(2);
    let mut compared = 0;
    let mut worst = 0.0f64;
    for frames in 1..=6 {
        for n in 1..=3 {
            let classes = n + 1;
            let blank = n;
            let probs = random_probs(&mut rng, frames, classes);
            let logs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
            let mass = labelling_probabilities(&probs, frames, classes, blank);
            for target in all_sequences(n, 3) {
                let got = ctc_loss_log(&logs, frames, classes, blank, &target);
                match (mass.get(&target), got) {
                    (Some(&p), Ok(out)) => {
                        let err = (out.loss + p.ln()).abs();
                        worst = worst.max(err);
                        ensure(err <= 1e-9, || format!("T={frames} N={n} {target:?}: {} vs {}", out.loss, -p.ln()))?;
                    }
                    (None, Err(Error::InfeasibleAlignment { .. })) => {}
                    (p, got) => return Err(format!("T={frames} N={n} {target:?}: oracle {p:?}, got {got:?}")),
                }
                compared += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{compared} cases, worst abs err {worst:.1e}, {secs:.1}s"))
}

/// Criterion 3: unpruned word beam search equals the exhaustive lexicon-constrained argmax.
pub fn wbs_oracle(instances: usize, seed: u64) -> Check {
    let start = Instant::now();
    let mut rng = SeedRng::seed_from_u64(seed);
    for i in 0..instances {
        let inst = random_wbs_instance(&mut rng);
        let lex = Lexicon::from_corpus(&inst.alphabet, &inst.corpus).map_err(|e| e.to_string())?;
        let probs = ProbMatrix::<f64>::new(
            Tensor::from_f64(&[inst.frames, inst.alphabet.len() + 1], &inst.probs).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        for (mode, ngrams) in [(WbsMode::Words, false), (WbsMode::NGrams, true)] {
            let cfg = WbsConfig { mode, beam_width: 1_000_000 };
            let got = word_beam_search(&probs, &lex, &cfg).map_err(|e| e.to_string())?;
            let want = exhaustive_wbs(&inst, ngrams).unwrap_or_default();
            ensure(got == want, || format!("instance {i} ({mode}): got {got:?}, want {want:?}; corpus {:?}", inst.corpus))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{instances} instances x 2 modes, {secs:.1}s"))
}

/// Criterion 4: attention weights form a distribution and pooled lines stay in the row envelope.
pub fn attention_invariants(steps: usize, seed: u64) -> Check {
    let mut rng = SeedRng::seed_from_u64(seed);
    for step in 0..steps {
        let (c, h, w, hidden) = (rng.gen_range(1..=4), rng.gen_range(1..=12), rng.gen_range(1..=5), rng.gen_range(1..=4));
        let cfg = AttentionConfig {
            dim: rng.gen_range(1..=6),
            coverage_channels: rng.gen_range(1..=3),
            coverage_kernel: 2 * rng.gen_range(0..=3) + 1,
        };
        let attn = Attention::<f64>::new(c, hidden, cfg, &mut rng).map_err(|e| e.to_string())?;
        let scale = rng.gen_range(0.1..20.0);
        let features = Tensor::uniform(&[c, h, w], -scale, scale, &mut rng);
        let ctx = attn.prepare(&features).map_err(|e| e.to_string())?;
        let mut state = AttentionState::initial(h, hidden);
        let prev: Vec<f64> = (0..h).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = prev.iter().sum::<f64>().max(1e-12);
        state.beta_prev = prev.iter().map(|p| p / total).collect();
        state.coverage = (0..h).map(|_| rng.gen_range(0.0..3.0)).collect();
        state.h_prev = (0..hidden).map(|_| rng.gen_range(-1.0..1.0)).collect();
        state.t = rng.gen_range(0..5);
        let (out, _) = attn.step(&ctx, &state).map_err(|e| e.to_string())?;
        let sum: f64 = out.beta.iter().sum();
        ensure((sum - 1.0).abs() <= 1e-6, || format!("step {step}: sum of weights {sum}"))?;
        ensure(out.beta.iter().all(|&b| b >= 0.0), || format!("step {step}: negative weight"))?;
        for x in 0..w {
            for ch in 0..c {
                let col = (0..h).map(|i| features.data()[(ch * h + i) * w + x]);
                let lo = col.clone().fold(f64::INFINITY, f64::min);
                let hi = col.fold(f64::NEG_INFINITY, f64::max);
                let v = out.line.data()[x * c + ch];
                let tol = 1e-12 * scale;
                ensure(v >= lo - tol && v <= hi + tol, || format!("step {step}: {v} outside [{lo}, {hi}]"))?;
            }
        }
    }
    Ok(format!("{steps} steps"))
}

/// Criterion 5: the full encoder maps 480x800 to a 15x100 feature map.
pub fn geometry() -> Check {
    let cfg = EncoderConfig::full();
    let shape = cfg.output_shape(480, 800).map_err(|e| e.to_string())?;
    ensure(shape == (128, 15, 100), || format!("output_shape gave {shape:?}"))?;
    // a real forward pass with the same strides and thin channels
    let thin = EncoderConfig {
        cb_channels: vec![2; cfg.cb_channels.len()],
        dscb_channels: vec![2; cfg.dscb_channels.len()],
        ..cfg
    };
    let mut rng = SeedRng::seed_from_u64(5);
    let enc = Encoder::<f32>::new(thin, &mut rng).map_err(|e| e.to_string())?;
    let image = Tensor::uniform(&[1, 480, 800], 0.0, 1.0, &mut rng);
    let (features, _) = enc.forward(&image, None).map_err(|e| e.to_string())?;
    ensure(features.shape() == [2, 15, 100], || format!("forward gave {:?}", features.shape()))?;
    Ok("480x800 -> 15x100 (128 channels)".into())
}

/// Criterion 6: separable blocks against closed-form weight counts.
pub fn dsc_efficiency() -> Check {
    let mut lines = Vec::new();
    for (name, cfg) in [("toy", EncoderConfig::toy()), ("full", EncoderConfig::full())] {
        let mut rng = SeedRng::seed_from_u64(6);
        let enc = Encoder::<f32>::new(cfg.clone(), &mut rng).map_err(|e| e.to_string())?;
        let mut c_in = *cfg.cb_channels.last().unwrap();
        let mut k = 0;
        for (i, block) in enc.blocks.iter().enumerate().filter(|(_, b)| b.kind == BlockKind::Separable) {
            let c = cfg.dscb_channels[k];
            k += 1;
            let ins = [c_in, c, c];
            let separable: usize = ins.iter().map(|ci| ci * 9 + ci * c).sum();
            let standard: usize = ins.iter().map(|ci| ci * c * 9).sum();
            let mut actual = 0;
            block.visit("", &mut |n, t| {
                if n.ends_with("depthwise") || n.ends_with("pointwise") {
                    actual += t.len();
                }
            });
            ensure(actual == separable, || format!("{name} block {i}: {actual} weights, closed form {separable}"))?;
            ensure(separable < standard, || format!("{name} block {i}: {separable} >= {standard}"))?;
            lines.push(format!("{name}/{i}: {separable}<{standard}"));
            c_in = c;
        }
    }
    ensure(!lines.is_empty(), || "no separable blocks".into())?;
    Ok(lines.join(", "))
}

/// Criterion 10: edit distance against the table oracle, and the pooled examples.
pub fn metrics_oracle(pairs: usize, seed: u64) -> Check {
    let mut rng = SeedRng::seed_from_u64(seed);
    let letters: Vec<char> = "abcd".chars().collect();
    for i in 0..pairs {
        let mut draw = || -> Vec<char> { (0..rng.gen_range(0..=12)).map(|_| letters[rng.gen_range(0..4)]).collect() };
        let (a, b) = (draw(), draw());
        let (got, want) = (levenshtein(&a, &b), edit_distance_table(&a, &b));
        ensure(got == want, || format!("pair {i} {a:?} {b:?}: {got} vs {want}"))?;
    }
    let examples: [(f64, f64); 5] = [
        (corpus_cer(&["ab", "cd"], &["ab", "cd"]).unwrap(), 0.0),
        (corpus_cer(&["ab", "cd"], &["ab", "ce"]).unwrap(), 0.25),
        (corpus_cer(&["a", "bbb"], &["b", "bbb"]).unwrap(), 0.25),
        (corpus_wer(&["to be or"], &["to bee or"]).unwrap(), 1.0 / 3.0),
        (corpus_wer(&["a"], &["a b c"]).unwrap(), 2.0),
    ];
    for (i, (got, want)) in examples.iter().enumerate() {
        ensure(got == want, || format!("example {i}: {got} vs {want}"))?;
    }
    ensure(levenshtein(&['k', 'i', 't', 't', 'e', 'n'], &['s', 'i', 't', 't', 'i', 'n', 'g']) == 3, || "kitten".into())?;
    Ok(format!("{pairs} pairs, {} pooled examples", examples.len()))
}

pub fn toy_alphabet() -> Alphabet {
    Alphabet::new(SynthConfig::toy().charset()).expect("toy charset")
}

pub fn train_samples(data: &[ParagraphSample], alphabet: &Alphabet) -> Vec<TrainSample> {
    data.iter().map(|s| TrainSample::from_paragraph(s, alphabet).expect("encodable")).collect()
}

pub struct Overfit {
    pub model: Model<f32>,
    pub iterations: usize,
    pub eval: Evaluation,
    pub seconds: f64,
}

/// Trains the toy model on `data` with Adam in chunks of `chunk` iterations until greedy CER
/// drops below `target_cer` with at least `min_lines` correct line counts, or `max_iterations`.
pub fn overfit(
    data: &[ParagraphSample],
    placement: GatedPlacement,
    max_iterations: usize,
    chunk: usize,
    target_cer: f64,
    min_lines: usize,
) -> Result<Overfit, String> {
    let start = Instant::now();
    let alphabet = toy_alphabet();
    let samples = train_samples(data, &alphabet);
    let mut cfg = ModelConfig::toy(alphabet.len());
    cfg.encoder.gated_placement = placement;
    let mut rng = SeedRng::seed_from_u64(0);
    let mut model = Model::<f32>::new(cfg, &mut rng).map_err(|e| e.to_string())?;
    let mut done = 0;
    loop {
        let tc = TrainConfig {
            iterations: chunk.min(max_iterations - done),
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            seed: done as u64,
            ..TrainConfig::default()
        };
        train(&mut model, &samples, &tc, |_| Ok(())).map_err(|e| e.to_string())?;
        done += tc.iterations;
        let eval = evaluate(&model, data, &alphabet, None, 30).map_err(|e| e.to_string())?;
        if (eval.greedy.cer < target_cer && eval.line_count_matches >= min_lines) || done >= max_iterations {
            return Ok(Overfit { model, iterations: done, eval, seconds: start.elapsed().as_secs_f64() });
        }
    }
}

/// Criterion 7: the toy model memorizes ten paragraphs, including their line counts.
pub fn end_to_end_overfit(placement: GatedPlacement) -> Check {
    let data = SynthConfig::toy().generate(0, 0, 10).map_err(|e| e.to_string())?;
    let run = overfit(&data, placement, 5000, 250, 0.05, 9)?;
    let detail = format!(
        "{} iterations, {:.0}s, greedy CER {:.2}%, line counts {}/10",
        run.iterations,
        run.seconds,
        100.0 * run.eval.greedy.cer,
        run.eval.line_count_matches
    );
    ensure(run.eval.greedy.cer < 0.05 && run.eval.line_count_matches >= 9, || detail.clone())?;
    ensure(run.seconds < 600.0, || detail.clone())?;
    Ok(detail)
}

/// Criterion 9: the late-placement model trains, and a huge learning rate aborts with the
/// iteration and a location.
pub fn late_placement_diagnostics() -> Check {
    let alphabet = toy_alphabet();
    let data = SynthConfig::toy().generate(9, 0, 4).map_err(|e| e.to_string())?;
    let samples = train_samples(&data, &alphabet);
    let mut cfg = ModelConfig::toy(alphabet.len());
    cfg.encoder.gated_placement = GatedPlacement::Late;
    let mut rng = SeedRng::seed_from_u64(9);
    let init = Model::<f32>::new(cfg, &mut rng).map_err(|e| e.to_string())?;

    let mut stable = init.clone();
    let tc = TrainConfig { iterations: 10, ..TrainConfig::default() };
    let records = train(&mut stable, &samples, &tc, |_| Ok(())).map_err(|e| format!("stable run: {e}"))?;
    ensure(records.iter().all(|r| r.ctc_loss.is_finite() && r.ce_loss.is_finite()), || "non-finite loss".into())?;

    let mut unstable = init;
    let tc = TrainConfig { iterations: 50, learning_rate: 1e20, ..TrainConfig::default() };
    match train(&mut unstable, &samples, &tc, |_| Ok(())) {
        Err(Error::NumericFailure { iteration, provenance }) if iteration >= 1 && !provenance.is_empty() => {
            Ok(format!("late run finite over 10 iterations; lr=1e20 aborted at iteration {iteration} in {provenance}"))
        }
        other => Err(format!("expected a numeric failure, got {:?}", other.map(|r| r.len()))),
    }
}

/// Criterion 11: equal seeds give equal models and reports; a checkpoint reproduces them.
pub fn determinism_and_round_trip() -> Check {
    let alphabet = toy_alphabet();
    let data = SynthConfig::toy().generate(11, 0, 4).map_err(|e| e.to_string())?;
    let samples = train_samples(&data, &alphabet);
    let corpus = split_corpus(&data);
    let lex = Lexicon::from_corpus(alphabet.chars(), &corpus).map_err(|e| e.to_string())?;
    let wbs = WbsConfig::default();
    let mut config = RunConfig::default();
    config.seed = 11;
    let run = || -> Result<(Model<f32>, String), String> {
        let AnyModel::F32(mut model) = AnyModel::new(&config, alphabet.len(), 11).map_err(|e| e.to_string())? else {
            return Err("default precision is not f32".into());
        };
        let tc = TrainConfig { iterations: 12, optimizer: OptimizerKind::Adam, seed: 11, dropout: true, ..TrainConfig::default() };
        train(&mut model, &samples, &tc, |_| Ok(())).map_err(|e| e.to_string())?;
        let report = evaluate(&model, &data, &alphabet, Some((&lex, &wbs)), 30).map_err(|e| e.to_string())?;
        Ok((model, report.render()))
    };
    let (a, report_a) = run()?;
    let (b, report_b) = run()?;
    ensure(same_parameters(&a, &b), || "equal seeds gave different parameters".into())?;
    ensure(report_a == report_b, || "equal seeds gave different reports".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.ckpt");
    let ck = Checkpoint { config: config.clone(), alphabet: alphabet.clone(), iteration: 12, model: AnyModel::F32(a.clone()) };
    ck.save(&path).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let AnyModel::F32(restored) = loaded.model else { return Err("precision changed".into()) };
    ensure(same_parameters(&a, &restored), || "restored parameters differ".into())?;
    let report_c = evaluate(&restored, &data, &alphabet, Some((&lex, &wbs)), 30).map_err(|e| e.to_string())?.render();
    ensure(report_a == report_c, || "restored model reports differently".into())?;
    Ok("two seeded runs and a checkpoint round trip agree bit for bit".into())
}

/// Criterion 8 on an already trained model: word beam search against greedy decoding on
/// `held_out`, with the held-out transcripts as the corpus.
/// Line pretraining then paragraph training on a 20-word synthetic vocabulary, scored on a
/// held-out split whose transcripts form the whole corpus.
pub fn lexicon_gain_run() -> Check {
    let mut synth = SynthConfig::toy();
    synth.vocabulary.truncate(20);
    synth.punctuation = 0.0;
    let alphabet = Alphabet::new(synth.charset()).map_err(|e| e.to_string())?;
    let data = synth.generate(0, 0, 300).map_err(|e| e.to_string())?;
    let held_out = synth.generate(0, 1, 30).map_err(|e| e.to_string())?;
    let samples = train_samples(&data, &alphabet);
    let mut rng = SeedRng::seed_from_u64(0);
    let mut model = Model::<f32>::new(ModelConfig::toy(alphabet.len()), &mut rng).map_err(|e| e.to_string())?;
    let lines = line_samples(&synth, &alphabet, 0, 2000).map_err(|e| e.to_string())?;
    let pre = TrainConfig { iterations: 4000, optimizer: OptimizerKind::Adam, learning_rate: 1e-3, ..TrainConfig::default() };
    pretrain_lines(&mut model, &lines, &pre).map_err(|e| e.to_string())?;
    for done in (0..3000).step_by(500) {
        let tc = TrainConfig { iterations: 500, seed: done as u64, ..pre.clone() };
        train(&mut model, &samples, &tc, |_| Ok(())).map_err(|e| e.to_string())?;
    }
    lexicon_gain(&model, &held_out, &alphabet)
}

pub fn lexicon_gain(model: &Model<f32>, held_out: &[ParagraphSample], alphabet: &Alphabet) -> Check {
    let corpus = split_corpus(held_out);
    let lex = Lexicon::from_corpus(alphabet.chars(), &corpus).map_err(|e| e.to_string())?;
    let eval = evaluate(model, held_out, alphabet, Some((&lex, &WbsConfig::default())), 30).map_err(|e| e.to_string())?;
    let wbs = eval.wbs.as_ref().expect("lexicon given");
    let detail = format!(
        "greedy CER {:.2}% WER {:.2}%, wbs CER {:.2}% WER {:.2}%",
        100.0 * eval.greedy.cer,
        100.0 * eval.greedy.wer,
        100.0 * wbs.cer,
        100.0 * wbs.wer
    );
    ensure(wbs.cer <= eval.greedy.cer && wbs.wer <= eval.greedy.wer, || detail.clone())?;
    Ok(detail)
}
