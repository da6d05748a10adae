//! Command-line definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Pairs;

#[derive(Debug, Parser)]
#[command(name = "phodeconv", version, about = "Blind deconvolution of photon-limited images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Blur a clean image with a known kernel and add Poisson noise.
    Simulate(SimulateArgs),
    /// Estimate the kernel and the sharp image from a photon-count image.
    Deblur(DeblurArgs),
    /// Compare the analytic kernel gradient against finite differences.
    GradCheck(GradCheckArgs),
    /// Score a reconstruction against ground truth.
    Evaluate(EvaluateArgs),
    /// Run a sweep of photon levels, kernels and ablations.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Clean grayscale image (PNG or PGM).
    #[arg(long)]
    pub image: PathBuf,
    /// delta | gaussian:SIGMA_MAJOR:SIGMA_MINOR:THETA | line:LEN:THETA | motion:LEN:SEED | file:PATH
    #[arg(long)]
    pub kernel: String,
    /// Side of the rendered kernel (odd).
    #[arg(long, default_value_t = 15)]
    pub kernel_size: usize,
    /// Photon level: expected count at unit intensity.
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// File name for the counts; a `.txt` name writes a text matrix without the 16-bit limit.
    #[arg(long, default_value = "y.png")]
    pub y_name: String,
}

#[derive(Debug, Args)]
pub struct DeblurArgs {
    /// Observed photon counts (16-bit PNG, PGM or `.txt` matrix).
    #[arg(long)]
    pub y: PathBuf,
    /// Photon level; estimated from the counts when omitted.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Clean image; adds a PSNR column to the loss curve.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub blind: BlindArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverChoice {
    RichardsonLucy,
    ProjectedGradient,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    /// Kernel side M.
    #[arg(long, default_value_t = 5)]
    pub kernel_size: usize,
    /// Unroll depth K.
    #[arg(long, default_value_t = 4)]
    pub unroll_steps: usize,
    #[arg(long, default_value_t = 5)]
    pub instances: usize,
    #[arg(long, default_value_t = 20.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "circular")]
    pub boundary: String,
    #[arg(long, value_enum, default_value_t = SolverChoice::RichardsonLucy)]
    pub solver: SolverChoice,
    #[arg(long, default_value_t = 1e-5)]
    pub fd_step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Drop the solver's contribution to the gradient; the check must then fail.
    #[arg(long)]
    pub inject_bug: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub x_hat: PathBuf,
    #[arg(long)]
    pub x_true: PathBuf,
    #[arg(long, requires = "h_true")]
    pub h_hat: Option<PathBuf>,
    #[arg(long, requires = "h_hat")]
    pub h_true: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Compare kernels without searching for the best integer shift.
    #[arg(long)]
    pub no_align: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// `key = value` experiment file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub blind: BlindArgs,
}

/// One flag per configuration key; unset flags leave the file or default value.
#[derive(Debug, Default, Args)]
pub struct BlindArgs {
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Estimated kernel side (odd).
    #[arg(long)]
    pub kernel_size: Option<usize>,
    #[arg(long)]
    pub l1_enabled: Option<bool>,
    #[arg(long)]
    pub denoiser_enabled: Option<bool>,
    #[arg(long)]
    pub mass_free_step: Option<bool>,
    #[arg(long)]
    pub backtracking: Option<bool>,
    #[arg(long)]
    pub max_halvings: Option<usize>,
    #[arg(long)]
    pub mu0: Option<f64>,
    #[arg(long)]
    pub gamma0: Option<f64>,
    /// Divisor in the photon-level estimate.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub unroll_steps: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// circular | symmetric
    #[arg(long)]
    pub boundary: Option<String>,
    /// richardson_lucy | projected_gradient
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long)]
    pub pg_step_scale: Option<f64>,
    #[arg(long)]
    pub pg_ridge: Option<f64>,
    #[arg(long)]
    pub tv_weight: Option<f64>,
    #[arg(long)]
    pub tv_iterations: Option<usize>,
    /// anscombe_tv | passthrough
    #[arg(long)]
    pub denoise_mode: Option<String>,
    #[arg(long)]
    pub init_slope_constant: Option<f64>,
    #[arg(long)]
    pub init_intrinsic_blur: Option<f64>,
    #[arg(long)]
    pub init_sigma_min: Option<f64>,
    #[arg(long)]
    pub init_directions: Option<usize>,
    /// Take every step as computed, without backtracking.
    #[arg(long)]
    pub strict_alg1: bool,
}

impl BlindArgs {
    /// The flags that were given, as configuration pairs.
    pub fn pairs(&self) -> Pairs {
        let mut p = Pairs::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                p.insert(k.to_string(), v);
            }
        };
        let s = |v: &Option<String>| v.clone();
        put("max_iterations", self.max_iterations.map(|v| v.to_string()));
        put("step_size", self.step_size.map(|v| v.to_string()));
        put("kernel_size", self.kernel_size.map(|v| v.to_string()));
        put("l1_enabled", self.l1_enabled.map(|v| v.to_string()));
        put("denoiser_enabled", self.denoiser_enabled.map(|v| v.to_string()));
        put("mass_free_step", self.mass_free_step.map(|v| v.to_string()));
        put("backtracking", self.backtracking.map(|v| v.to_string()));
        put("max_halvings", self.max_halvings.map(|v| v.to_string()));
        put("mu0", self.mu0.map(|v| v.to_string()));
        put("gamma0", self.gamma0.map(|v| v.to_string()));
        put("beta", self.beta.map(|v| v.to_string()));
        put("unroll_steps", self.unroll_steps.map(|v| v.to_string()));
        put("epsilon", self.epsilon.map(|v| v.to_string()));
        put("boundary", s(&self.boundary));
        put("solver", s(&self.solver));
        put("pg_step_scale", self.pg_step_scale.map(|v| v.to_string()));
        put("pg_ridge", self.pg_ridge.map(|v| v.to_string()));
        put("tv_weight", self.tv_weight.map(|v| v.to_string()));
        put("tv_iterations", self.tv_iterations.map(|v| v.to_string()));
        put("denoise_mode", s(&self.denoise_mode));
        put("init_slope_constant", self.init_slope_constant.map(|v| v.to_string()));
        put("init_intrinsic_blur", self.init_intrinsic_blur.map(|v| v.to_string()));
        put("init_sigma_min", self.init_sigma_min.map(|v| v.to_string()));
        put("init_directions", self.init_directions.map(|v| v.to_string()));
        if self.strict_alg1 {
            put("backtracking", Some("false".into()));
        }
        p
    }
}
