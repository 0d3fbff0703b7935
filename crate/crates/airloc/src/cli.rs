//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "airloc", version, about = "Object-based room-level relocalization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene, its query/database split and appearance weights.
    GenSynth(GenSynthArgs),
    /// Write seeded appearance (VLAD) parameters.
    InitVlad(InitVladArgs),
    /// Build a room database from observations.
    BuildDb(BuildDbArgs),
    /// Relocalize query images against a database.
    Query(QueryArgs),
    /// Evaluate labelled queries: accuracy, precision/recall, stage timings.
    Eval(EvalArgs),
    /// Train the geometry encoder.
    TrainGeom(TrainGeomArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long, default_value_t = 20)]
    pub rooms: usize,
    #[arg(long, default_value_t = 5)]
    pub objects_min: usize,
    #[arg(long, default_value_t = 10)]
    pub objects_max: usize,
    /// Images per room.
    #[arg(long, default_value_t = 15)]
    pub images: usize,
    #[arg(long, default_value_t = 16)]
    pub keypoints_min: usize,
    #[arg(long, default_value_t = 32)]
    pub keypoints_max: usize,
    #[arg(long, default_value_t = 256)]
    pub descriptor_dim: usize,
    /// Descriptor noise sigma.
    #[arg(long, default_value_t = 0.2)]
    pub noise: f64,
    /// Keypoint jitter sigma, as a fraction of the image side.
    #[arg(long, default_value_t = 0.02)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0)]
    pub twin_pairs: usize,
    #[arg(long, default_value = "synth")]
    pub scene: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Database images per room in the split.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Fraction of each room's images held out as queries.
    #[arg(long, default_value_t = 0.5)]
    pub holdout: f64,
    /// Split seed; defaults to --seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Appearance clusters in the emitted vlad.json.
    #[arg(long, default_value_t = 32)]
    pub clusters: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InitVladArgs {
    #[arg(long, default_value_t = 32)]
    pub clusters: usize,
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildDbArgs {
    #[arg(long)]
    pub obs: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long)]
    pub vlad: PathBuf,
    /// Geometry weights; without them the database has no geometry embeddings.
    #[arg(long)]
    pub geom: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct RelocArgs {
    #[arg(long)]
    pub vlad: PathBuf,
    /// Geometry weights; omit to disable the geometry pathway.
    #[arg(long)]
    pub geom: Option<PathBuf>,
    /// Appearance weight in the ensemble.
    #[arg(long, default_value_t = 10.0)]
    pub w: f64,
    /// Gap between the top two per-object appearance scores below which
    /// geometry is consulted.
    #[arg(long, default_value_t = 0.1)]
    pub tdiff: f64,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub query_obs: PathBuf,
    #[command(flatten)]
    pub reloc: RelocArgs,
    /// Treat every observation in the file as one query instead of one
    /// query per image.
    #[arg(long)]
    pub single: bool,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[command(flatten)]
    pub reloc: RelocArgs,
    /// Number of uniform PR thresholds in [0, 1].
    #[arg(long, default_value_t = 101)]
    pub thresholds: usize,
    /// Worker threads; keep at 1 for timing runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainGeomArgs {
    #[arg(long)]
    pub train_obs: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.2)]
    pub margin: f64,
    #[arg(long, default_value_t = 5)]
    pub max_subset_images: usize,
    #[arg(long, default_value_t = 64)]
    pub mlp_hidden: usize,
    #[arg(long, default_value_t = 256)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 512)]
    pub gat_hidden: usize,
    #[arg(long, default_value_t = 1024)]
    pub out_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub heads: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    /// Weights file; the loss log goes next to it as `<stem>.loss.csv`.
    #[arg(long)]
    pub out: PathBuf,
}
