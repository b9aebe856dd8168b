mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Synthetic lunar-landing datasets with exact pose, depth and flow ground truth.
#[derive(Parser, Debug)]
#[command(name = "lunagen", version, about)]
pub struct Cli {
    /// Top-level seed; stages derive named sub-seeds from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fuse or resample elevation rasters.
    #[command(subcommand)]
    Dem(DemCommand),
    /// Add craters, Perlin relief and boulders to a DEM.
    Augment(AugmentArgs),
    /// Render a trajectory into images and depth maps.
    Render(RenderArgs),
    /// Compute forward optical flow between consecutive rendered frames.
    Flow(FlowArgs),
    /// Recover camera poses from line-of-sight observations of landmarks.
    InvertLos(InvertLosArgs),
    /// Fit reflectance parameters or back-project albedo from photographs.
    #[command(subcommand)]
    Capture(CaptureCommand),
    /// Score optical-flow predictions.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Validate dataset manifests or list the archived dataset catalogue.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Run the whole pipeline from a config file or the bundled demo.
    Run(RunArgs),
}

#[derive(Subcommand, Debug)]
pub enum DemCommand {
    /// Merge a high-resolution DEM into a low-resolution one.
    Fuse {
        #[arg(long)]
        low: PathBuf,
        #[arg(long)]
        high: PathBuf,
        /// Blend band width in meters (default: 20 high-resolution cells).
        #[arg(long = "feather-m")]
        feather_m: Option<f64>,
        /// Remove the mean vertical offset between the grids first.
        #[arg(long = "offset-correct")]
        offset_correct: bool,
    },
    /// Bilinear resampling to a new cell size.
    Resample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long = "cell-size")]
        cell_size: f64,
    },
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub dem: PathBuf,
    /// `density,rmin,rmax,exp`, density per km².
    #[arg(long)]
    pub craters: Option<String>,
    /// `density,rmin,rmax,exp`, density per km².
    #[arg(long)]
    pub boulders: Option<String>,
    /// `amplitude,wavelength,octaves`.
    #[arg(long)]
    pub perlin: Option<String>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub traj: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    /// `t0:t1:dt`, both ends inclusive.
    #[arg(long)]
    pub frames: String,
    /// `n` for n × n samples per pixel.
    #[arg(long, default_value_t = 2)]
    pub ss: u32,
    #[arg(long)]
    pub shadows: bool,
    #[arg(long, default_value_t = 1000.0)]
    pub gain: f64,
    #[arg(long = "bit-depth", default_value_t = 8)]
    pub bit_depth: u8,
    /// Gaussian read noise, standard deviation in DN.
    #[arg(long = "read-noise")]
    pub read_noise: Option<f64>,
}

#[derive(Args, Debug)]
pub struct FlowArgs {
    /// Directory written by `render`.
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    /// Absolute depth tolerance of the occlusion test, meters.
    #[arg(long = "abs-tol", default_value_t = 0.5)]
    pub abs_tol: f64,
    /// Relative depth tolerance of the occlusion test.
    #[arg(long = "rel-tol", default_value_t = 1e-3)]
    pub rel_tol: f64,
}

#[derive(Args, Debug)]
pub struct InvertLosArgs {
    /// CSV `frame_id,landmark_id,dx,dy,dz`.
    #[arg(long)]
    pub obs: PathBuf,
    /// CSV `landmark_id,x,y,z`.
    #[arg(long)]
    pub landmarks: PathBuf,
    /// Initial trajectory CSV; observation frame ids index its rows.
    #[arg(long)]
    pub initial: PathBuf,
    #[arg(long = "max-iters", default_value_t = 100)]
    pub max_iters: usize,
}

#[derive(Args, Debug)]
pub struct CaptureInputs {
    /// Directory written by `render` holding the reference photographs.
    #[arg(long)]
    pub refs: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    /// Digital gain of the references, or the starting gain when fitted
    /// (default: the gain recorded by `render`).
    #[arg(long)]
    pub gain: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum CaptureCommand {
    /// Tune reflectance parameters until re-renders match the references.
    Fit {
        #[command(flatten)]
        inputs: CaptureInputs,
        /// Comma-separated subset of w,b,b0,h,gain.
        #[arg(long, default_value = "w,b")]
        free: String,
        #[arg(long, default_value_t = 2)]
        ss: u32,
        #[arg(long)]
        shadows: bool,
        #[arg(long = "max-iters", default_value_t = 200)]
        max_iters: usize,
    },
    /// Recover a per-texel albedo factor raster.
    Texture {
        #[command(flatten)]
        inputs: CaptureInputs,
    },
}

#[derive(Subcommand, Debug)]
pub enum BenchCommand {
    /// End-point error of `.flo` predictions against a dataset's ground truth.
    Epe {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Dataset root (default: the manifest's directory).
        #[arg(long)]
        root: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum DatasetCommand {
    /// Check files, checksums, image sizes and flow consistency.
    Validate {
        manifest: PathBuf,
        /// Dataset root (default: the manifest's directory).
        #[arg(long)]
        root: Option<PathBuf>,
        /// Check counts and ids only.
        #[arg(long = "metadata-only")]
        metadata_only: bool,
        /// Flow pairs to recompute.
        #[arg(long, default_value_t = 4)]
        samples: usize,
    },
    /// List archived datasets; with `--out`, write their metadata manifests.
    Catalog {
        /// Restrict to one dataset id.
        #[arg(long)]
        id: Option<String>,
    },
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "demo", required_unless_present = "demo")]
    pub config: Option<PathBuf>,
    /// Use the bundled miniature scene.
    #[arg(long)]
    pub demo: bool,
    /// Write the effective config to `--out` and stop.
    #[arg(long = "print-config")]
    pub print_config: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::dispatch(&cli) {
        Ok(commands::Status::Ok) => ExitCode::SUCCESS,
        Ok(commands::Status::ValidationFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
