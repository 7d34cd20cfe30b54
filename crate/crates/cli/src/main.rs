use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use featcodec::bovw::{ClusterMethod, GopStrategy};
use featcodec::local::StreamMode;

mod commands;
mod config;

pub const CODEBOOK_DIR_ENV: &str = "FEATCODEC_CODEBOOK_DIR";

/// Compression of binary local features and BoVW global descriptors from video.
///
/// Every subcommand is deterministic for a given seed and inputs. Rates are
/// reported in bits/feature for local features and bytes/query for global
/// descriptors.
#[derive(Parser, Debug)]
#[command(name = "featcodec", version, args_override_self = true)]
pub struct Cli {
    /// Config file with `[global]` and per-subcommand sections; flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for data-parallel stages.
    #[arg(long, short = 'j', global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic feature stream, pair file or planar sequence.
    Synth(SynthArgs),
    /// Rank dexels by asymmetric pairwise boosting on a pair file.
    RankDexels(RankArgs),
    /// Train intra and inter coding tables for one descriptor length K.
    TrainLocal(TrainLocalArgs),
    /// Encode a feature stream into a BFE1 bitstream.
    Encode(EncodeArgs),
    /// Decode a BFE1 bitstream into a K-dexel feature stream.
    Decode(DecodeArgs),
    /// Learn a visual-word dictionary.
    DictLearn(DictLearnArgs),
    /// Train the BoVW coding tables for one quantization step.
    TrainBovw(TrainBovwArgs),
    /// Encode per-frame global descriptors into a BGE1 bitstream.
    BovwEncode(BovwEncodeArgs),
    /// Decode a BGE1 bitstream into dequantized global descriptors (CSV).
    BovwDecode(BovwDecodeArgs),
    /// Homography precision of a (decoded) planar sequence.
    EvalHomography(EvalHomographyArgs),
    /// MAP on a synthetic retrieval database.
    EvalRetrieval(EvalRetrievalArgs),
    /// Rate/efficiency sweep over K, delta or GOP; writes CSV.
    Sweep(SweepArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Stream,
    Pairs,
    Planar,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Stream)]
    pub kind: SynthKind,
    /// Output stream (`.json` for JSON, anything else for BFS1) or pair CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth CSV, required for `--kind planar`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub frames: usize,
    #[arg(long, default_value_t = 512)]
    pub descriptor_length: usize,
    #[arg(long, default_value_t = 50)]
    pub min_features: usize,
    #[arg(long, default_value_t = 100)]
    pub max_features: usize,
    /// Probability that a feature persists into the next frame.
    #[arg(long, default_value_t = 0.9)]
    pub duplication: f64,
    /// Per-dexel flip probability between frames (stream, planar).
    #[arg(long)]
    pub flip: Option<f64>,
    #[arg(long, default_value_t = 640)]
    pub width: u32,
    #[arg(long, default_value_t = 480)]
    pub height: u32,
    /// Pair count (pairs).
    #[arg(long, default_value_t = 5000)]
    pub pairs: usize,
    /// Informative dexels (pairs).
    #[arg(long, default_value_t = 8)]
    pub planted: usize,
    /// Flip probability of planted dexels across matching pairs (pairs).
    #[arg(long, default_value_t = 0.05)]
    pub planted_flip: f64,
    /// Inlier correspondences per frame (planar).
    #[arg(long, default_value_t = 50)]
    pub inliers: usize,
    /// Outlier share of all correspondences (planar).
    #[arg(long, default_value_t = 0.2)]
    pub outlier_fraction: f64,
    /// Keypoint noise in pixels (planar).
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    /// CSV with `label,hexA,hexB` rows.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub descriptor_length: usize,
    /// Boosting rounds; defaults to the descriptor length.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Cost of a missed match relative to a false alarm.
    #[arg(long, default_value_t = featcodec::boosting::DEFAULT_ASYMMETRY)]
    pub asymmetry: f64,
    /// Output codebook file holding the dexel selection.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct WindowArgs {
    /// Reference search half-width in quarter pixels.
    #[arg(long, default_value_t = 64)]
    pub window_dx: u32,
    #[arg(long, default_value_t = 64)]
    pub window_dy: u32,
    /// Reference search half-range in quantized scale units.
    #[arg(long, default_value_t = 4)]
    pub window_dscale: u32,
}

#[derive(Args, Debug)]
pub struct TrainLocalArgs {
    /// Training streams (repeat or comma-separate in config files).
    #[arg(long, required = true, action = clap::ArgAction::Append)]
    pub train: Vec<PathBuf>,
    #[arg(long)]
    pub k: usize,
    /// Dexel selection from `rank-dexels`; identity order when absent.
    #[arg(long)]
    pub selection: Option<PathBuf>,
    #[arg(long, default_value_t = featcodec::local::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2)]
    pub passes: usize,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Output codebook; defaults to `local-k<K>.bfcb` in the codebook directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = CODEBOOK_DIR_ENV)]
    pub codebook_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long)]
    pub stream: PathBuf,
    /// Local codebook; defaults to `local-k<K>.bfcb` in the codebook directory.
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    #[arg(long, env = CODEBOOK_DIR_ENV)]
    pub codebook_dir: Option<PathBuf>,
    #[arg(long)]
    pub k: usize,
    /// Bits charged per unit of Hamming distance in the mode decision.
    #[arg(long, default_value_t = featcodec::local::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value = "auto")]
    pub mode: StreamMode,
    #[command(flatten)]
    pub window: WindowArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    #[arg(long, env = CODEBOOK_DIR_ENV)]
    pub codebook_dir: Option<PathBuf>,
    /// Needed only to locate the default codebook file.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DictLearnArgs {
    #[arg(long, required = true, action = clap::ArgAction::Append)]
    pub train: Vec<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub words: usize,
    #[arg(long, default_value = "kmedians")]
    pub method: ClusterMethod,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = featcodec::bovw::MAX_ITERATIONS)]
    pub max_iterations: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainBovwArgs {
    #[arg(long)]
    pub dict: PathBuf,
    #[arg(long, required = true, action = clap::ArgAction::Append)]
    pub train: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Output codebook; defaults to `bovw.bfcb` in the codebook directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = CODEBOOK_DIR_ENV)]
    pub codebook_dir: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlobalMode {
    Intra,
    Inter,
}

#[derive(Args, Debug)]
pub struct BovwEncodeArgs {
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    /// BoVW codebook; defaults to `bovw.bfcb` in the codebook directory.
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    #[arg(long, env = CODEBOOK_DIR_ENV)]
    pub codebook_dir: Option<PathBuf>,
    /// Must equal the step the codebook was trained with.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_enum, default_value_t = GlobalMode::Intra)]
    pub mode: GlobalMode,
    /// Frames per group of pictures; one descriptor is sent per group.
    #[arg(long, default_value_t = 1)]
    pub gop: usize,
    #[arg(long, default_value = "skip")]
    pub strategy: GopStrategy,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BovwDecodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    #[arg(long, env = CODEBOOK_DIR_ENV)]
    pub codebook_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalHomographyArgs {
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = featcodec::eval::DEFAULT_RATIO)]
    pub ratio: f64,
    /// Backprojection error threshold in pixels.
    #[arg(long, default_value_t = 3.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    /// RANSAC inlier threshold in pixels.
    #[arg(long, default_value_t = 3.0)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-pair backprojection errors as CSV.
    #[arg(long)]
    pub errors: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggregationArg {
    PerFrame,
    MedianRank,
}

#[derive(Args, Debug, Clone)]
pub struct RetrievalArgs {
    #[arg(long, default_value_t = 200)]
    pub images: usize,
    #[arg(long, default_value_t = 10)]
    pub clusters: usize,
    #[arg(long, default_value_t = 256)]
    pub descriptor_length: usize,
    #[arg(long, default_value_t = 256)]
    pub words: usize,
    #[arg(long, default_value = "kmedians")]
    pub method: ClusterMethod,
    #[arg(long, default_value_t = 8)]
    pub query_frames: usize,
}

#[derive(Args, Debug)]
pub struct EvalRetrievalArgs {
    #[command(flatten)]
    pub data: RetrievalArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use this dictionary instead of learning one.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// Quantization step; unquantized descriptors when absent.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Code query descriptors with the inter (previous-frame) model.
    #[arg(long)]
    pub inter: bool,
    #[arg(long, default_value_t = 1)]
    pub gop: usize,
    #[arg(long, default_value = "skip")]
    pub strategy: GopStrategy,
    #[arg(long, value_enum, default_value_t = AggregationArg::PerFrame)]
    pub aggregation: AggregationArg,
    #[arg(long, default_value_t = featcodec::eval::DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Re-rank the top candidates by ratio-test match count.
    #[arg(long)]
    pub rerank: bool,
    #[arg(long, default_value_t = featcodec::eval::DEFAULT_RATIO)]
    pub ratio: f64,
    /// Per-query AP as CSV.
    #[arg(long)]
    pub per_query: Option<PathBuf>,
    /// Relevance judgments of the synthetic database as JSON.
    #[arg(long)]
    pub relevance_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Axis and values, e.g. `k=8,64,512`, `delta=0.01,0.05`, `gop=1,5,10`.
    #[arg(long)]
    pub grid: featcodec::eval::SweepAxis,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Local coding mode for the K axis.
    #[arg(long, default_value = "auto")]
    pub mode: StreamMode,
    #[arg(long, default_value_t = featcodec::local::DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Frames of the planar sequence used on the K axis.
    #[arg(long, default_value_t = 101)]
    pub frames: usize,
    /// Dexel selection from `rank-dexels`.
    #[arg(long)]
    pub selection: Option<PathBuf>,
    /// Directory with `local-k<K>.bfcb`; trained on the fly when absent.
    #[arg(long, env = CODEBOOK_DIR_ENV)]
    pub codebook_dir: Option<PathBuf>,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Fixed step for the GOP axis.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value = "skip")]
    pub strategy: GopStrategy,
    #[arg(long)]
    pub inter: bool,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or inconsistent options.
    Usage(String),
    /// Failure while processing data.
    Data(featcodec::Error),
}

impl From<featcodec::Error> for CliError {
    fn from(e: featcodec::Error) -> Self {
        CliError::Data(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

fn parse_args(args: Vec<OsString>) -> Result<Cli, CliError> {
    let first = Cli::command().try_get_matches_from(&args).map_err(clap_exit)?;
    let cli = Cli::from_arg_matches(&first).map_err(clap_exit)?;
    let Some(path) = cli.config.clone() else {
        return Ok(cli);
    };
    let name = first.subcommand_name().expect("subcommand is required").to_string();
    let expanded = config::expand(Cli::command(), args, &path, &name)?;
    let matches = Cli::command().try_get_matches_from(expanded).map_err(clap_exit)?;
    Cli::from_arg_matches(&matches).map_err(clap_exit)
}

/// Help and version go to stdout with status 0; everything else is a usage
/// error.
fn clap_exit(e: clap::Error) -> CliError {
    use clap::error::ErrorKind;
    if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
        e.exit();
    }
    let text = e.to_string();
    let line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("invalid arguments")
        .trim_start_matches("error: ")
        .to_string();
    CliError::Usage(line)
}

fn main() -> ExitCode {
    let result = parse_args(std::env::args_os().collect()).and_then(|cli| {
        commands::init_threads(cli.jobs)?;
        commands::run(cli.command)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error[usage]: {}", msg.replace('\n', " "));
            ExitCode::from(2)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error[{}]: {}", e.class(), e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
