//! `nagrank`: extract → profile → rank → select, plus analysis utilities.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{ArgGroup, Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "nagrank", version, about = "Target-oriented pretraining data selection by neuron-activated graphs")]
pub struct Cli {
    /// TOML file with defaults for flags not given on the command line.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    /// Print the header of a NAG, profile or model file and exit.
    #[arg(long, value_name = "FILE")]
    pub format: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a seeded toy extraction model.
    InitModel(InitModelArgs),
    /// Corpus → NAG file.
    Extract(ExtractArgs),
    /// Target NAG file(s) → group profile.
    Profile(ProfileArgs),
    /// Score a candidate pool against a profile.
    Rank(RankArgs),
    /// Materialize a selection from a ranked file.
    Select(SelectArgs),
    /// Equal-share multi-target selection.
    Mix(MixArgs),
    /// Fuse NAG ranks with external quality scores.
    Fuse(FuseArgs),
    /// Masks, distance matrices, clustering, sensitivity, standard errors.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Flag targets sharing an n-gram with any test document.
    Decontam(DecontamArgs),
    /// Concatenate NAG shard files with identical headers.
    Merge(MergeArgs),
}

#[derive(Args, Debug)]
pub struct InitModelArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub n_layers: usize,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 128)]
    pub d_internal: usize,
    #[arg(long, default_value_t = 4)]
    pub n_heads: usize,
    #[arg(long, default_value_t = 256)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 64)]
    pub max_seq_len: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct NagArgs {
    /// Projection type: q, k, v, up, down.
    #[arg(long)]
    pub proj: Option<String>,
    /// Neurons kept per layer.
    #[arg(long, conflicts_with = "width_ratio")]
    pub k: Option<usize>,
    /// K as a fraction of the layer width, rounded to a multiple of 10.
    #[arg(long)]
    pub width_ratio: Option<f64>,
    /// Layer set: all or last.
    #[arg(long)]
    pub layers: Option<String>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub nag: NagArgs,
    /// Continue an interrupted run: keep complete records already in `--out`.
    #[arg(long, conflicts_with = "impacts")]
    pub resume: bool,
    /// Also dump per-document impact vectors.
    #[arg(long)]
    pub impacts: Option<PathBuf>,
    /// Skip unparseable corpus lines instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    /// One or more NAG files (shards are merged).
    #[arg(long = "nags", required = true, num_args = 1..)]
    pub nags: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    #[arg(long)]
    pub nags: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus providing token counts for budget selection.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("mode").args(["ratio", "budget"])))]
pub struct SelectArgs {
    #[arg(long)]
    pub ranked: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep the top fraction of the pool.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Keep the shortest top prefix reaching this many tokens.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Threshold-estimation sample size; 0 sorts the whole pool.
    #[arg(long)]
    pub sample_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct MixArgs {
    /// One ranked file per target, scored over the same pool.
    #[arg(long = "ranked", required = true, num_args = 1..)]
    pub ranked: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub sample_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    #[arg(long)]
    pub ranked: PathBuf,
    /// `doc_id<TAB>score` lines.
    #[arg(long)]
    pub quality: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Weight of the NAG percentile rank.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCommand {
    /// Build a deactivation mask.
    DeactivateMask(MaskArgs),
    /// Pairwise NAG distance matrix.
    Distmat(DistmatArgs),
    /// k-medoids over a distance matrix.
    Cluster(ClusterArgs),
    /// Spearman and top-set Jaccard between two rankings of one pool.
    Sensitivity(SensitivityArgs),
    /// Binomial standard error.
    Se(SeArgs),
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("count").args(["per_layer", "total"]).required(true)))]
pub struct MaskArgs {
    /// nag-topk, random, high-mean or high-delta.
    #[arg(long)]
    pub criterion: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub per_layer: Option<usize>,
    #[arg(long)]
    pub total: Option<usize>,
    /// Target profile (nag-topk).
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Model (random, high-mean, high-delta).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Target corpus (high-mean, high-delta).
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Reference corpus of random inputs (high-delta).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub proj: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct DistmatArgs {
    #[arg(long)]
    pub nags: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[arg(long)]
    pub distmat: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// One integer label per line, in matrix order; adds purity/NMI/ARI.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Assignments, one cluster id per line.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SeArgs {
    #[arg(long)]
    pub p: f64,
    #[arg(long)]
    pub n: u64,
}

#[derive(Args, Debug)]
pub struct DecontamArgs {
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long)]
    pub tests: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ngram: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MergeArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(required = true, num_args = 1..)]
    pub shards: Vec<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    commands::run(cli)
}
