use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{GtFormat, Knn, PoolingMode, Switch, Weighting};

#[derive(Debug, Parser)]
#[command(name = "instret", version, about = "Instance retrieval: R-MAC aggregation, whitening, re-ranking and evaluation")]
pub struct Cli {
    /// JSON run configuration; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate a directory of FMAP files into one DSET of R-MAC descriptors.
    Aggregate(AggregateArgs),
    /// Fit PCA-whitening on a descriptor set and write a WHTN model.
    FitWhiten(FitWhitenArgs),
    /// Concatenate two models' descriptors and whiten the result.
    Ensemble(EnsembleArgs),
    /// Post-process, rank and score queries against a database.
    Eval(Box<EvalArgs>),
}

#[derive(Debug, Clone, Default, Args)]
pub struct AggregationArgs {
    /// R-MAC scales.
    #[arg(long = "rmac-L", value_name = "L")]
    pub rmac_l: Option<usize>,
    /// L2-normalise every region before summing.
    #[arg(long, value_enum)]
    pub rmac_region_norm: Option<Switch>,
    /// Pool every map down to N×N before R-MAC.
    #[arg(long, value_name = "N")]
    pub downsample: Option<usize>,
    #[arg(long, value_enum)]
    pub downsample_mode: Option<PoolingMode>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Directory of .fmap files.
    #[arg(long, value_name = "DIR")]
    pub features: Option<PathBuf>,
    /// Output DSET path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub aggregation: AggregationArgs,
}

#[derive(Debug, Args)]
pub struct FitWhitenArgs {
    /// Training descriptors: a DSET file or a directory of FMAP files.
    #[arg(long, value_name = "PATH")]
    pub features: Option<PathBuf>,
    /// Output dimension.
    #[arg(long, value_name = "D")]
    pub pca: Option<String>,
    /// Eigenvalue regulariser.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Output WHTN path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub aggregation: AggregationArgs,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// First model's database descriptors (DSET).
    pub a: PathBuf,
    /// Second model's database descriptors (DSET).
    pub b: PathBuf,
    /// Output dimension after whitening, or `true` to skip whitening.
    #[arg(long, value_name = "D|true")]
    pub pca: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Output DSET path for the database.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// First model's query descriptors, transformed with the database's model.
    #[arg(long, requires_all = ["queries_b", "queries_out"])]
    pub queries_a: Option<PathBuf>,
    #[arg(long, requires_all = ["queries_a", "queries_out"])]
    pub queries_b: Option<PathBuf>,
    #[arg(long, requires_all = ["queries_a", "queries_b"])]
    pub queries_out: Option<PathBuf>,
    /// Also write the fitted whitening model.
    #[arg(long)]
    pub whiten_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset label for the printed table.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Database descriptors: a DSET file or a directory of FMAP files.
    #[arg(long, value_name = "PATH")]
    pub features: Option<PathBuf>,
    /// Query descriptors: a DSET file or a directory of FMAP files.
    #[arg(long, value_name = "PATH")]
    pub queries: Option<PathBuf>,
    /// Ground truth: an Oxford-style directory or a JSON file.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Defaults to `oxford` for directories and `json` for files.
    #[arg(long, value_enum)]
    pub gt_format: Option<GtFormat>,
    /// Drop the `oxc1_`-style prefix from Oxford query image names.
    #[arg(long)]
    pub strip_prefix: bool,
    #[command(flatten)]
    pub aggregation: AggregationArgs,
    /// Whitening dimension(s): `512`, `true` (none) or a list like `32,64,true`.
    #[arg(long, value_name = "D|true|LIST")]
    pub pca: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Fit whitening on this set instead of the database.
    #[arg(long, value_name = "PATH")]
    pub whiten_train: Option<PathBuf>,
    /// Use a previously fitted WHTN model.
    #[arg(long, value_name = "PATH", conflicts_with = "whiten_train")]
    pub whiten_model: Option<PathBuf>,
    /// Pipeline spec, or a comma list of specs.
    #[arg(long)]
    pub pipeline: Option<String>,
    #[arg(long)]
    pub aqe_n: Option<usize>,
    #[arg(long)]
    pub dba_n: Option<usize>,
    #[arg(long, value_enum)]
    pub dba_weighting: Option<Weighting>,
    #[arg(long)]
    pub dfs_k: Option<usize>,
    #[arg(long)]
    pub dfs_kq: Option<usize>,
    #[arg(long)]
    pub dfs_alpha: Option<f64>,
    #[arg(long)]
    pub dfs_gamma: Option<f64>,
    #[arg(long)]
    pub dfs_tol: Option<f64>,
    #[arg(long)]
    pub dfs_max_iter: Option<usize>,
    #[arg(long, value_enum)]
    pub dfs_knn: Option<Knn>,
    /// Build the diffusion graph on the database before augmentation.
    #[arg(long)]
    pub dfs_on_original: bool,
    /// classic, easy, medium, hard, revisited, or a comma list.
    #[arg(long)]
    pub protocol: Option<String>,
    /// trapezoid, benchmark or plain.
    #[arg(long)]
    pub ap: Option<String>,
    /// junk-removed or raw.
    #[arg(long)]
    pub precision: Option<String>,
    /// JSON report path; sweeps derive one file per cell from it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write rankings as TSV.
    #[arg(long)]
    pub rankings: Option<PathBuf>,
}
