use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "carver", version, about = "Neural-field generator toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a generator to a multi-view scene.
    Fit(FitArgs),
    /// Render PNG frames and depth maps from a checkpoint.
    Render(RenderArgs),
    /// Score a checkpoint or an evaluation manifest.
    Eval(EvalArgs),
    /// Extract the generated shape as an OBJ mesh.
    ExtractMesh(MeshArgs),
    /// Draw camera poses from a config's pose prior.
    SamplePoses(SamplePosesArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Generator config (TOML).
    pub config: PathBuf,
    /// Built-in scene recipe (sphere, two_boxes, noise_blob) or a CRVT view archive.
    pub scene: String,
    /// Directory for the checkpoint and the loss/PSNR CSV.
    #[arg(long, default_value = "fit-out")]
    pub out: PathBuf,
    /// Overrides the config's fit seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("cameras").required(true).args(["pose", "orbit"])))]
pub struct RenderArgs {
    pub checkpoint: PathBuf,
    /// Pose label file; one frame per line.
    #[arg(long)]
    pub pose: Option<PathBuf>,
    /// Number of frames on a fixed-pitch circle around the scene.
    #[arg(long)]
    pub orbit: Option<usize>,
    /// Orbit pitch from the up axis, radians.
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    pub pitch: f64,
    /// Interpolate the latent toward its running mean (1 = off).
    #[arg(long)]
    pub truncation: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "render-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint (.crvt) or evaluation manifest (.toml).
    pub input: PathBuf,
    /// Comma-separated subset of fid, re, de, pe, id.
    #[arg(long, default_value = "re")]
    pub metrics: String,
    /// Checkpoint evaluation: samples to render.
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    /// Checkpoint evaluation: yaw between the two views of a sample, degrees.
    #[arg(long, default_value_t = 5.0)]
    pub baseline: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the report as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    pub checkpoint: PathBuf,
    /// Lattice points per axis (defaults to the config's).
    #[arg(long)]
    pub res: Option<usize>,
    /// Level set (defaults to the config's, else 0 for SDF and 10 for density).
    #[arg(long, allow_hyphen_values = true)]
    pub iso: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "mesh.obj")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SamplePosesArgs {
    pub config: PathBuf,
    #[arg(short = 'n', long = "count")]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output pose label file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
