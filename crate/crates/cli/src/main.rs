mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Paragraph-level handwriting recognition on synthetic pages.
#[derive(Parser, Debug)]
#[command(name = "gatedlex", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic paragraph dataset.
    Synth(SynthArgs),
    /// Train a model on a dataset split and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a split with greedy and/or word beam search decoding.
    Eval(EvalArgs),
    /// Transcribe a single PGM image.
    Infer(InferArgs),
    /// Finite-difference gradient checks for every parameterized layer.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// key=value run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Split to generate as NAME:COUNT; repeatable.
    #[arg(long = "split", value_name = "NAME:COUNT", default_values = ["train:200", "val:20", "test:20"])]
    splits: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Loss CSV; defaults to the checkpoint path with a `.loss.csv` suffix.
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_parser = ["sgd", "adam"])]
    optimizer: Option<String>,
    /// Use Adam instead of plain SGD.
    #[arg(long, conflicts_with = "optimizer")]
    adam: bool,
    #[arg(long, value_parser = ["f32", "f64"])]
    precision: Option<String>,
    /// Iterations of single-line CTC pretraining before paragraph training.
    #[arg(long, value_name = "ITERATIONS")]
    pretrain_lines: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Decode {
    Greedy,
    Wbs,
    Both,
}

#[derive(Args, Debug, Clone)]
struct DecodeArgs {
    /// Text corpus for the lexicon, one transcript line per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_parser = ["words", "ngrams"])]
    wbs_mode: Option<String>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    max_lines: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, value_enum, default_value_t = Decode::Both)]
    decode: Decode,
    #[command(flatten)]
    decoding: DecodeArgs,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Binary PGM (P5) image.
    #[arg(long)]
    image: PathBuf,
    #[arg(long, value_enum, default_value_t = Decode::Greedy)]
    decode: Decode,
    #[command(flatten)]
    decoding: DecodeArgs,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of random seeds (0, 1, ...).
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Elements sampled per parameter tensor.
    #[arg(long, default_value_t = 20)]
    max_per_tensor: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
