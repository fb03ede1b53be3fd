mod commands;
mod data;
mod run;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use data::DataArgs;
use minseg::Error;

#[derive(Parser, Debug)]
#[command(name = "minseg", version, about = "Train, fold, evaluate and time minimal separable-convolution segmentation networks")]
struct Cli {
    /// Worker threads; 1 makes every command deterministic (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the network configurations of a grid, one per line.
    Enumerate(GridArgs),
    /// Write a synthetic dataset (PPM images, PGM masks, annotations, manifest).
    Synth(SynthArgs),
    /// Train one configuration and write checkpoints and the epoch history.
    Train(TrainArgs),
    /// Sweep θ and score a model or lookup table.
    Eval(EvalArgs),
    /// Write per-class probability maps and thresholded masks for images.
    Segment(SegmentArgs),
    /// Fold batch normalization into the convolutions of a trained model.
    Fold(FoldArgs),
    /// Time forward passes.
    Bench(BenchArgs),
    /// Train the color SVM and compile it into a lookup table.
    BaselineTrain(BaselineTrainArgs),
    /// Label images with a lookup table.
    BaselineSegment(BaselineSegmentArgs),
}

#[derive(Args, Debug, Clone)]
struct GridArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![3, 4])]
    layers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![3, 4, 5])]
    filters: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.25, 1.5, 2.0])]
    multipliers: Vec<f64>,
    #[arg(long = "stride", alias = "strides", value_delimiter = ',', default_values_t = vec![1, 2])]
    strides: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    classes: usize,
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output directory (default: a new directory under $MINSEG_RUN_ROOT, or ./runs).
    #[arg(long)]
    run_dir: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    count: usize,
    /// WIDTHxHEIGHT
    #[arg(long, default_value = "64x64", value_parser = data::parse_size)]
    size: (usize, usize),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Network configuration such as L3F4M1.5S2 (class count taken from --classes).
    #[arg(long)]
    config: String,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.004)]
    decay: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    #[arg(long, default_value_t = 25)]
    epochs: usize,
    /// Seed for weight init and per-epoch shuffles.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: std::path::PathBuf,
    /// Segmenter kind (cnn, cnn-folded, lut); sniffed from the file when omitted.
    #[arg(long)]
    kind: Option<String>,
    #[command(flatten)]
    data: DataArgs,
    /// Select θ* on the test split instead of the validation split.
    #[arg(long)]
    sweep_on_test: bool,
    /// Also write the thresholded test masks.
    #[arg(long)]
    save_masks: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long)]
    model: std::path::PathBuf,
    #[arg(long)]
    kind: Option<String>,
    /// Input PPM images.
    #[arg(long = "image", required = true, num_args = 1..)]
    images: Vec<std::path::PathBuf>,
    /// Take per-class θ* from an eval report.
    #[arg(long, conflicts_with = "theta")]
    report: Option<std::path::PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct FoldArgs {
    #[arg(long)]
    model: std::path::PathBuf,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Time a saved model or lookup table instead of fresh networks.
    #[arg(long, conflicts_with = "configs")]
    model: Option<std::path::PathBuf>,
    /// Comma-separated configurations (default: the whole grid).
    #[arg(long = "config", value_delimiter = ',')]
    configs: Vec<String>,
    #[command(flatten)]
    grid: GridArgs,
    /// Comma-separated WIDTHxHEIGHT list.
    #[arg(long, value_delimiter = ',', value_parser = data::parse_size, default_value = "640x480,320x256")]
    res: Vec<(usize, usize)>,
    #[arg(long, default_value_t = minseg::bench::DEFAULT_ITERATIONS)]
    iterations: usize,
    #[arg(long, default_value_t = minseg::bench::DEFAULT_WARMUP)]
    warmup: usize,
    /// Time networks with batch normalization left in place.
    #[arg(long)]
    unfolded: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct BaselineTrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = minseg::baseline::DEFAULT_BITS)]
    bits: u8,
    /// Class-balanced pixels sampled per image.
    #[arg(long, default_value_t = minseg::baseline::PIXELS_PER_IMAGE)]
    per_image: usize,
    #[arg(long, value_delimiter = ',', default_values_t = minseg::baseline::C_GRID.to_vec())]
    c_grid: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    svm_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct BaselineSegmentArgs {
    #[arg(long)]
    lut: std::path::PathBuf,
    #[arg(long = "image", required = true, num_args = 1..)]
    images: Vec<std::path::PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

/// 2 usage, 3 validation, 4 data or format, 5 divergence, 1 anything else.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) | Error::Unsupported(_) => 2,
        Error::Validation(_) => 3,
        Error::Format { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::DegenerateData(_) | Error::Size(_) | Error::Shape(_) => 4,
        Error::Divergence { .. } => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("global pool is built once");
    }
    let result = match cli.command {
        Command::Enumerate(a) => commands::enumerate(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Segment(a) => commands::segment(&a),
        Command::Fold(a) => commands::fold(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::BaselineTrain(a) => commands::baseline_train(&a),
        Command::BaselineSegment(a) => commands::baseline_segment(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
