use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use meshnet::model::{Ablation, Aggregation};

#[derive(Debug, Parser)]
#[command(
    name = "meshnet",
    version,
    about = "Face-unit neural network for 3D mesh classification and retrieval"
)]
pub struct Cli {
    /// Seed for every random draw (falls back to MESHNET_SEED, then the config file).
    #[arg(long, global = true, env = "MESHNET_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for preprocessing and evaluation (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Emit machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a <category>/<train|test>/*.off tree into face-set caches and a manifest.
    Preprocess(PreprocessArgs),
    /// Train a model on preprocessed caches.
    Train(TrainArgs),
    /// Evaluate a checkpoint: accuracy, per-class accuracy, mAP, face-count groups.
    Eval(EvalArgs),
    /// Write global features of a cache to an embeddings file.
    Embed(EmbedArgs),
    /// Nearest-neighbour queries and mAP over an embeddings file.
    Retrieve(RetrieveArgs),
    /// Finite-difference gradient checks of every layer op (64-bit).
    Gradcheck(GradcheckArgs),
    /// Per-module parameter and multiply-accumulate counts.
    Params(ParamsArgs),
    /// Color a mesh by one channel of its structural descriptor.
    Visualize(VisualizeArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Dataset root containing one directory per category.
    pub root: PathBuf,
    /// Output directory for train.mnet, test.mnet and manifest.json.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Face budget per mesh.
    #[arg(long, default_value_t = meshnet::preprocess::DEFAULT_FACE_BUDGET)]
    pub faces: usize,
    /// Skip meshes that fail to load or preprocess instead of aborting.
    #[arg(long)]
    pub skip_invalid: bool,
}

/// Model selection shared by `train` and `params`.
#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    /// Drop one component of the architecture.
    #[arg(long)]
    pub ablation: Option<Ablation>,
    /// Neighbourhood aggregation inside the mesh-conv blocks.
    #[arg(long)]
    pub aggregation: Option<Aggregation>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `preprocess`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON run configuration (`model`, `train`, `data`, `out`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoints, metrics and the resolved config.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

/// Where records come from: a preprocess directory plus split, or one cache.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory written by `preprocess`.
    #[arg(long, conflicts_with = "cache")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// A single .mnet cache.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file(self) -> &'static str {
        match self {
            Split::Train => "train.mnet",
            Split::Test => "test.mnet",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Embeddings file to write.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Row indices to query (each excluded from its own results).
    #[arg(long, short)]
    pub query: Vec<usize>,
    /// Results per query.
    #[arg(long, short, default_value_t = 10)]
    pub k: usize,
    /// Skip the mean-average-precision pass over the whole set.
    #[arg(long)]
    pub no_map: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Faces per shape.
    #[arg(long, default_value_t = 6)]
    pub faces: usize,
    /// Shapes per batch.
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    /// Sampled entries per parameter tensor.
    #[arg(long, default_value_t = 24)]
    pub samples: usize,
    /// Skew the analytic gradient of this op (harness self-test).
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// JSON run configuration; its `model` section is counted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of classes when no config is given.
    #[arg(long, default_value_t = 40)]
    pub classes: usize,
    /// Faces per sample for the multiply-accumulate estimate.
    #[arg(long, default_value_t = meshnet::preprocess::DEFAULT_FACE_BUDGET)]
    pub faces: usize,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Descriptor {
    Frc,
    Fkc,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Mesh file (.off or .obj).
    #[arg(long)]
    pub mesh: PathBuf,
    /// Feature channel to color by.
    #[arg(long)]
    pub channel: usize,
    /// Structural descriptor to read the channel from.
    #[arg(long, value_enum)]
    pub which: Descriptor,
    /// PLY file to write; values go to the same path with a .csv extension.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Face budget for decimation.
    #[arg(long, default_value_t = meshnet::preprocess::DEFAULT_FACE_BUDGET)]
    pub faces: usize,
}
