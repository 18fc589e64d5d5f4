//! `dasformer` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dasformer::model::DwKind;
use dasformer::synth::SourceKind;

#[derive(Parser, Debug)]
#[command(name = "dasformer", version, about = "Multichannel speech separation with alternating spectrogram attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic convolutive-mixture dataset.
    GenData(GenDataArgs),
    /// Train a separator on a generated dataset.
    Train(TrainArgs),
    /// Separate one WAV mixture into per-source WAV files.
    Separate(SeparateArgs),
    /// Score separated sources against references.
    Eval(EvalArgs),
    /// Print trainable parameter counts.
    CountParams(CountParamsArgs),
    /// Write attention matrices of one mixture as text files.
    DumpAttn(DumpAttnArgs),
    /// Finite-difference check of the network gradients.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON run configuration with optional `model`, `train`, `scene` and `counts` objects.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Random seed for this command.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum DwArg {
    K3x3,
    Pointwise,
}

impl From<DwArg> for DwKind {
    fn from(d: DwArg) -> Self {
        match d {
            DwArg::K3x3 => DwKind::K3x3,
            DwArg::Pointwise => DwKind::Pointwise,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Start from a named configuration (dasformer-base, dasformer-plus, dasformer-micro).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub mics: Option<usize>,
    #[arg(long)]
    pub sources: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Drop squeeze-excitation from every inverted bottleneck.
    #[arg(long)]
    pub no_se: bool,
    #[arg(long, value_enum)]
    pub dw_kind: Option<DwArg>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum KindArg {
    BandDisjointNoise,
    Multitone,
    AmChirp,
}

impl From<KindArg> for SourceKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::BandDisjointNoise => SourceKind::BandDisjointNoise,
            KindArg::Multitone => SourceKind::Multitone,
            KindArg::AmChirp => SourceKind::AmChirp,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub mics: Option<usize>,
    #[arg(long)]
    pub sources: Option<usize>,
    #[arg(long)]
    pub sample_rate: Option<u32>,
    #[arg(long)]
    pub clip_seconds: Option<f64>,
    #[arg(long, value_enum)]
    pub source_kind: Option<KindArg>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for checkpoints and the metrics log.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a training checkpoint.
    #[arg(long, value_name = "CKPT")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub grad_accum: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Stop once validation SI-SDRi reaches this many dB.
    #[arg(long)]
    pub stop_at_si_sdri: Option<f64>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct SeparateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "CKPT")]
    pub checkpoint: PathBuf,
    /// Mixture WAV with one channel per microphone.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for `<stem>_s<i>.wav` outputs.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Separate with this checkpoint.
    #[arg(long, value_name = "CKPT", conflicts_with = "estimates", required_unless_present = "estimates")]
    pub checkpoint: Option<PathBuf>,
    /// Read estimates `<id>_s<i>.wav` from this directory instead.
    #[arg(long, value_name = "DIR")]
    pub estimates: Option<PathBuf>,
    /// Write the per-utterance CSV here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CountParamsArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Group the breakdown by this many name components.
    #[arg(long, default_value_t = 1)]
    pub depth: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModuleArg {
    Fsa,
    Bta,
    Both,
}

#[derive(Args, Debug)]
pub struct DumpAttnArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "CKPT")]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Block indices to keep (default all).
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
    /// Head indices to keep (default all).
    #[arg(long, value_delimiter = ',')]
    pub heads: Vec<usize>,
    /// Frame indices for FSA and bin indices for BTA (default all).
    #[arg(long, value_delimiter = ',')]
    pub slices: Vec<usize>,
    #[arg(long, value_enum, default_value = "both")]
    pub module: ModuleArg,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum LossArg {
    Projection,
    Waveform,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 6)]
    pub frames: usize,
    /// Frame length in samples; the check uses `frame/2 + 1` bins.
    #[arg(long)]
    pub frame_len: Option<usize>,
    #[arg(long, value_enum, default_value = "projection")]
    pub loss: LossArg,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    /// Check at most this many entries per tensor.
    #[arg(long)]
    pub max_entries: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
