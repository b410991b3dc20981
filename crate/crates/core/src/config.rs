//! Run configuration as a `key=value` file. Every key has a default; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use crate::attention::{AttentionConfig, DEFAULT_MAX_LINES};
use crate::data::augment::AugmentConfig;
use crate::data::synth::SynthConfig;
use crate::encoder::{EncoderConfig, GatedPlacement, MixDropout};
use crate::error::{Error, Result};
use crate::kv::Reader;
use crate::lexdecode::{WbsConfig, WbsMode};
use crate::model::ModelConfig;
use crate::numerics::Precision;
use crate::train::{OptimizerKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Toy,
    Full,
}

impl Preset {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "toy" => Some(Preset::Toy),
            "full" => Some(Preset::Full),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Preset::Toy => "toy",
            Preset::Full => "full",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub iterations: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub dropout: bool,
    /// Probability of each augmentation; 0 disables augmentation.
    pub augment: f64,
    /// Iterations of single-line CTC pretraining before paragraph training; 0 skips it.
    pub pretrain_lines: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            iterations: 1000,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e-3,
            clip_norm: 0.0,
            dropout: false,
            augment: 0.0,
            pretrain_lines: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub precision: Precision,
    pub lambda: f64,
    pub max_line_length: usize,
    pub encoder: EncoderConfig,
    pub attention: AttentionConfig,
    pub hidden: usize,
    pub train: TrainSettings,
    pub wbs: WbsConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::Toy)
    }
}

fn strides_text(strides: &[(usize, usize)]) -> String {
    strides.iter().map(|(v, h)| format!("{v}x{h}")).collect::<Vec<_>>().join(",")
}

fn list_text(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let model = match preset {
            Preset::Toy => ModelConfig::toy(0),
            Preset::Full => ModelConfig::full(0),
        };
        RunConfig {
            preset,
            seed: 0,
            precision: Precision::F32,
            lambda: 1.0,
            max_line_length: DEFAULT_MAX_LINES,
            encoder: model.encoder,
            attention: model.attention,
            hidden: model.hidden,
            train: TrainSettings::default(),
            wbs: WbsConfig::default(),
            synth: SynthConfig::toy(),
        }
    }

    pub fn model_config(&self, labels: usize) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            attention: self.attention,
            hidden: self.hidden,
            labels,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.train.iterations,
            optimizer: self.train.optimizer,
            learning_rate: self.train.learning_rate,
            lambda: self.lambda,
            clip_norm: self.train.clip_norm,
            seed: self.seed,
            augment: (self.train.augment > 0.0).then(|| AugmentConfig::uniform(self.train.augment)),
            dropout: self.train.dropout,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut r = Reader::new(text, source_name)?;
        let preset_name: String = r.get("model.preset", "toy".to_string())?;
        let preset = Preset::parse(&preset_name).ok_or_else(|| r.error("model.preset", "expected toy or full"))?;
        let d = RunConfig::preset(preset);

        let precision_name: String = r.get("precision", d.precision.name().to_string())?;
        let precision = Precision::parse(&precision_name).ok_or_else(|| r.error("precision", "expected f32 or f64"))?;
        let placement_name: String = r.get("encoder.gated_placement", d.encoder.gated_placement.name().to_string())?;
        let gated_placement = GatedPlacement::parse(&placement_name)
            .ok_or_else(|| r.error("encoder.gated_placement", "expected early, late or none"))?;
        let stride_specs: Vec<String> = r.list("encoder.conv_strides", Vec::new())?;
        let cb_strides = if stride_specs.is_empty() {
            d.encoder.cb_strides.clone()
        } else {
            stride_specs
                .iter()
                .map(|s| {
                    s.split_once('x')
                        .and_then(|(v, h)| Some((v.parse().ok()?, h.parse().ok()?)))
                        .ok_or_else(|| r.error("encoder.conv_strides", format!("bad stride {s:?} (want VxH)")))
                })
                .collect::<Result<_>>()?
        };
        let encoder = EncoderConfig {
            cb_channels: r.list("encoder.conv_channels", d.encoder.cb_channels.clone())?,
            cb_strides,
            dscb_channels: r.list("encoder.dsc_channels", d.encoder.dscb_channels.clone())?,
            gated_placement,
            norm_after_gated: r.get("encoder.norm_after_gated", d.encoder.norm_after_gated)?,
            dropout: MixDropout {
                p_elementwise: r.get("encoder.dropout_elementwise", d.encoder.dropout.p_elementwise)?,
                p_channel: r.get("encoder.dropout_channel", d.encoder.dropout.p_channel)?,
                mix: r.get("encoder.dropout_mix", d.encoder.dropout.mix)?,
            },
        };
        encoder.validate().map_err(|e| r.error("encoder.conv_channels", e.to_string()))?;
        let attention = AttentionConfig {
            dim: r.get("attention.dim", d.attention.dim)?,
            coverage_channels: r.get("attention.coverage_channels", d.attention.coverage_channels)?,
            coverage_kernel: r.get("attention.coverage_kernel", d.attention.coverage_kernel)?,
        };
        let optimizer_name: String = r.get("train.optimizer", d.train.optimizer.to_string())?;
        let optimizer = optimizer_name.parse().map_err(|e: String| r.error("train.optimizer", e))?;
        let train = TrainSettings {
            iterations: r.get("train.iterations", d.train.iterations)?,
            optimizer,
            learning_rate: r.get("train.learning_rate", d.train.learning_rate)?,
            clip_norm: r.get("train.clip_norm", d.train.clip_norm)?,
            dropout: r.get("train.dropout", d.train.dropout)?,
            augment: r.get("train.augment", d.train.augment)?,
            pretrain_lines: r.get("train.pretrain_lines", d.train.pretrain_lines)?,
        };
        let mode_name: String = r.get("wbs.mode", d.wbs.mode.to_string())?;
        let mode: WbsMode = mode_name.parse().map_err(|e: String| r.error("wbs.mode", e))?;
        let wbs = WbsConfig {
            mode,
            beam_width: r.get("wbs.beam_width", d.wbs.beam_width)?,
        };
        let synth = SynthConfig {
            height: r.get("synth.height", d.synth.height)?,
            width: r.get("synth.width", d.synth.width)?,
            min_lines: r.get("synth.min_lines", d.synth.min_lines)?,
            max_lines: r.get("synth.max_lines", d.synth.max_lines)?,
            line_pitch: r.get("synth.line_pitch", d.synth.line_pitch)?,
            max_chars: r.get("synth.max_chars", d.synth.max_chars)?,
            punctuation: r.get("synth.punctuation", d.synth.punctuation)?,
            vocabulary: d.synth.vocabulary.clone(),
        };
        synth.validate().map_err(|e| r.error("synth.height", e.to_string()))?;
        let cfg = RunConfig {
            preset,
            seed: r.get("seed", d.seed)?,
            precision,
            lambda: r.get("lambda", d.lambda)?,
            max_line_length: r.get("max_line_length", d.max_line_length)?,
            encoder,
            attention,
            hidden: r.get("decoder.hidden", d.hidden)?,
            train,
            wbs,
            synth,
        };
        for (key, bad) in [
            ("decoder.hidden", cfg.hidden == 0),
            ("attention.dim", cfg.attention.dim == 0),
            ("attention.coverage_kernel", cfg.attention.coverage_kernel % 2 == 0),
            ("wbs.beam_width", cfg.wbs.beam_width == 0),
            ("max_line_length", cfg.max_line_length == 0),
            ("train.learning_rate", !(cfg.train.learning_rate > 0.0)),
            ("train.augment", !(0.0..=1.0).contains(&cfg.train.augment)),
        ] {
            if bad {
                return Err(r.error(key, "value out of range"));
            }
        }
        r.finish()?;
        Ok(cfg)
    }

    /// Complete `key=value` listing; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        kv("model.preset", self.preset.name().into());
        kv("seed", self.seed.to_string());
        kv("precision", self.precision.name().into());
        kv("lambda", self.lambda.to_string());
        kv("max_line_length", self.max_line_length.to_string());
        kv("encoder.conv_channels", list_text(&self.encoder.cb_channels));
        kv("encoder.conv_strides", strides_text(&self.encoder.cb_strides));
        kv("encoder.dsc_channels", list_text(&self.encoder.dscb_channels));
        kv("encoder.gated_placement", self.encoder.gated_placement.name().into());
        kv("encoder.norm_after_gated", self.encoder.norm_after_gated.to_string());
        kv("encoder.dropout_elementwise", self.encoder.dropout.p_elementwise.to_string());
        kv("encoder.dropout_channel", self.encoder.dropout.p_channel.to_string());
        kv("encoder.dropout_mix", self.encoder.dropout.mix.to_string());
        kv("attention.dim", self.attention.dim.to_string());
        kv("attention.coverage_channels", self.attention.coverage_channels.to_string());
        kv("attention.coverage_kernel", self.attention.coverage_kernel.to_string());
        kv("decoder.hidden", self.hidden.to_string());
        kv("train.iterations", self.train.iterations.to_string());
        kv("train.optimizer", self.train.optimizer.to_string());
        kv("train.learning_rate", self.train.learning_rate.to_string());
        kv("train.clip_norm", self.train.clip_norm.to_string());
        kv("train.dropout", self.train.dropout.to_string());
        kv("train.augment", self.train.augment.to_string());
        kv("train.pretrain_lines", self.train.pretrain_lines.to_string());
        kv("wbs.mode", self.wbs.mode.to_string());
        kv("wbs.beam_width", self.wbs.beam_width.to_string());
        kv("synth.height", self.synth.height.to_string());
        kv("synth.width", self.synth.width.to_string());
        kv("synth.min_lines", self.synth.min_lines.to_string());
        kv("synth.max_lines", self.synth.max_lines.to_string());
        kv("synth.line_pitch", self.synth.line_pitch.to_string());
        kv("synth.max_chars", self.synth.max_chars.to_string());
        kv("synth.punctuation", self.synth.punctuation.to_string());
        s
    }
}

impl std::str::FromStr for RunConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        RunConfig::parse(s, "<config>")
    }
}
