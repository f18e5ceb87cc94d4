use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use motionseg::dataset::Condition;
use motionseg::model::{FlowEstimator, MotionSource};
use motionseg::motion_energy::{MtNonlinearity, NormKind, TrainMode, V1Nonlinearity};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Parse a snake_case enum value through its serde representation.
fn snake<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "motionseg", version, about = "Motion segmentation experiments", args_override_self = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Global {
    /// TOML file whose keys stand in for flags; flags given on the command
    /// line take precedence.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render procedural training/test videos with ground truth.
    GenDataset(GenDataset),
    /// Render random-dot counterparts from stored ground-truth flow.
    GenDots(GenDots),
    /// Render a bank of shape identification trials.
    GenShapeTrials(GenShapeTrials),
    /// Compute motion energy maps for a frame sequence.
    Energy(Energy),
    /// Train a segmentation model.
    Train(Train),
    /// Evaluate a trained model on the test split.
    Eval(Eval),
    /// Score a trained model on the shape identification task.
    ShapeEval(ShapeEval),
    /// Run the experiment HTTP service.
    Serve(Serve),
    /// Merge result CSVs and print the aggregate table.
    Report(Report),
}

impl Command {
    pub const NAMES: [&'static str; 9] = [
        "gen-dataset",
        "gen-dots",
        "gen-shape-trials",
        "energy",
        "train",
        "eval",
        "shape-eval",
        "serve",
        "report",
    ];
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DotArgs {
    #[arg(long, default_value_t = 500)]
    pub n_dots: usize,
    #[arg(long, default_value_t = 8)]
    pub lifetime: u32,
    #[arg(long, default_value_t = 1.5)]
    pub dot_radius: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataset {
    #[arg(long, env = "GM_DATA_DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 25)]
    pub videos: usize,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 90)]
    pub frames: usize,
    #[arg(long, default_value_t = 4.0)]
    pub max_speed: f64,
    #[arg(long, default_value_t = 128)]
    pub texture_period: usize,
    /// Also render random dots for training videos.
    #[arg(long)]
    pub dots_for_train: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub dots: DotArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDots {
    #[arg(long, env = "GM_DATA_DIR")]
    pub data: PathBuf,
    /// train, test or all
    #[arg(long, default_value = "test")]
    pub split: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub dots: DotArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrialArgs {
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 30)]
    pub frames: usize,
    #[arg(long, default_value_t = 0.5)]
    pub speed_min: f64,
    #[arg(long, default_value_t = 1.5)]
    pub speed_max: f64,
    #[arg(long)]
    pub fixed_speed: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub dots: DotArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenShapeTrials {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 520)]
    pub trials: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub trial: TrialArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AblationArgs {
    /// Motion energy parameter file (defaults to the built-in bank).
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, value_parser = snake::<NormKind>, default_value = "channel")]
    pub norm: NormKind,
    #[arg(long, value_parser = snake::<V1Nonlinearity>, default_value = "square")]
    pub v1_nonlinearity: V1Nonlinearity,
    #[arg(long, value_parser = snake::<MtNonlinearity>, default_value = "rectified_square")]
    pub mt_nonlinearity: MtNonlinearity,
    #[arg(long)]
    pub no_v1_blur: bool,
    #[arg(long)]
    pub no_mt_blur: bool,
    #[arg(long)]
    pub no_mt_linear: bool,
    #[arg(long)]
    pub no_mt_stage: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Energy {
    /// Directory of `00000.png, 00001.png, ...`
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub ablation: AblationArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// energy, flow_multiscale or flow_multiframe
    #[arg(long, default_value = "energy")]
    pub motion: MotionSource,
    /// lk (Lucas-Kanade) or external (`.flo` files next to each video)
    #[arg(long, default_value = "lk")]
    pub estimator: FlowEstimator,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Train {
    #[arg(long, env = "GM_DATA_DIR")]
    pub data: PathBuf,
    /// Run directory (defaults to `<data>/runs/<motion>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 40_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = motionseg::seg::DEFAULT_FEATURES)]
    pub features: usize,
    #[arg(long, default_value_t = 5)]
    pub scales: usize,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub ablation: AblationArgs,
    #[arg(long, value_parser = snake::<TrainMode>, default_value = "fix")]
    pub train_v1_linear: TrainMode,
    #[arg(long, value_parser = snake::<TrainMode>, default_value = "fix")]
    pub train_v1_blur: TrainMode,
    #[arg(long, value_parser = snake::<TrainMode>, default_value = "fix")]
    pub train_mt_linear: TrainMode,
    #[arg(long, value_parser = snake::<TrainMode>, default_value = "fix")]
    pub train_mt_blur: TrainMode,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Eval {
    #[arg(long, env = "GM_DATA_DIR")]
    pub data: PathBuf,
    /// Defaults to `<data>/runs/<motion>/checkpoint.seg`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "energy")]
    pub motion: MotionSource,
    /// original, random_dots or both
    #[arg(long, default_value = "both")]
    pub condition: String,
    /// Name written in the model column.
    #[arg(long)]
    pub name: Option<String>,
    /// Defaults to `<checkpoint dir>/eval`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Eval {
    pub fn conditions(&self) -> Result<Vec<Condition>, String> {
        match self.condition.as_str() {
            "both" => Ok(vec![Condition::Original, Condition::RandomDots]),
            c => c.parse().map(|c| vec![c]).map_err(|e: motionseg::Error| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ShapeEval {
    #[arg(long, env = "GM_DATA_DIR")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "energy")]
    pub motion: MotionSource,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Width of informative-dot bins for the psychometric fit.
    #[arg(long, default_value_t = 10.0)]
    pub bin_width: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub trial: TrialArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Serve {
    /// Directory written by `gen-shape-trials`.
    #[arg(long)]
    pub bank: PathBuf,
    /// Where sessions and responses are stored.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Report {
    /// CSV files written by `eval`.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}
