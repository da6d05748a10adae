//! Flat `key = value` configuration.
//!
//! Every [`BlindConfig`] field has a key. Values are applied in a fixed key
//! order, so files are order-independent; later layers (command-line flags)
//! replace earlier ones (file), which replace defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use phodeconv::blind::BlindConfig;
use phodeconv::conv::Boundary;
use phodeconv::denoise::DenoiseMode;
use phodeconv::solver::SolverMethod;

use crate::error::UsageError;
use crate::kernels::KernelSpec;

pub type Pairs = BTreeMap<String, String>;

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Pairs> {
    let mut out = Pairs::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!(UsageError::new(format!("line {}: expected key = value", n + 1)));
        };
        let key = k.trim();
        if key.is_empty() {
            bail!(UsageError::new(format!("line {}: empty key", n + 1)));
        }
        out.insert(key.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> Result<Pairs> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot open {}", path.display()))?;
    parse_pairs(&text).with_context(|| format!("in {}", path.display()))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| UsageError::new(format!("{key}: cannot parse '{value}': {e}")).into())
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => bail!(UsageError::new(format!("{key}: expected true/false, got '{value}'"))),
    }
}

const SOLVER_RL: &str = "richardson_lucy";
const SOLVER_PG: &str = "projected_gradient";

/// Keys understood by [`apply_blind`], in application order.
pub const BLIND_KEYS: &[&str] = &[
    "max_iterations",
    "step_size",
    "kernel_size",
    "l1_enabled",
    "denoiser_enabled",
    "mass_free_step",
    "backtracking",
    "max_halvings",
    "mu0",
    "gamma0",
    "beta",
    "unroll_steps",
    "epsilon",
    "boundary",
    "solver",
    "pg_step_scale",
    "pg_ridge",
    "tv_weight",
    "tv_iterations",
    "denoise_mode",
    "init_slope_constant",
    "init_intrinsic_blur",
    "init_sigma_min",
    "init_directions",
];

/// Applies every recognised key of `pairs` to `cfg` and validates the result.
pub fn apply_blind(cfg: &mut BlindConfig, pairs: &Pairs) -> Result<()> {
    for &key in BLIND_KEYS {
        let Some(v) = pairs.get(key) else { continue };
        let v = v.as_str();
        match key {
            "max_iterations" => cfg.max_iterations = parse(key, v)?,
            "step_size" => cfg.step_size = parse(key, v)?,
            "kernel_size" => cfg.kernel_size = parse(key, v)?,
            "l1_enabled" => cfg.l1_enabled = parse_bool(key, v)?,
            "denoiser_enabled" => cfg.denoiser_enabled = parse_bool(key, v)?,
            "mass_free_step" => cfg.mass_free_step = parse_bool(key, v)?,
            "backtracking" => cfg.backtracking = parse_bool(key, v)?,
            "max_halvings" => cfg.max_halvings = parse(key, v)?,
            "mu0" => cfg.mu0 = parse(key, v)?,
            "gamma0" => cfg.gamma0 = parse(key, v)?,
            "beta" => cfg.beta = parse(key, v)?,
            "unroll_steps" => cfg.solver.unroll_steps = parse(key, v)?,
            "epsilon" => cfg.solver.epsilon = parse(key, v)?,
            "boundary" => cfg.solver.boundary = parse::<Boundary>(key, v)?,
            "solver" => {
                cfg.solver.method = match v {
                    SOLVER_RL => SolverMethod::RichardsonLucy,
                    SOLVER_PG => match cfg.solver.method {
                        m @ SolverMethod::ProjectedGradient { .. } => m,
                        _ => SolverMethod::projected_gradient(),
                    },
                    _ => bail!(UsageError::new(format!(
                        "solver: expected {SOLVER_RL} or {SOLVER_PG}, got '{v}'"
                    ))),
                }
            }
            "pg_step_scale" | "pg_ridge" => {
                let SolverMethod::ProjectedGradient { step_scale, ridge } = &mut cfg.solver.method else {
                    bail!(UsageError::new(format!("{key} requires solver = {SOLVER_PG}")));
                };
                let target = if key == "pg_step_scale" { step_scale } else { ridge };
                *target = parse(key, v)?;
            }
            "tv_weight" => cfg.denoise.tv_weight = parse(key, v)?,
            "tv_iterations" => cfg.denoise.tv_iterations = parse(key, v)?,
            "denoise_mode" => cfg.denoise.mode = parse::<DenoiseMode>(key, v)?,
            "init_slope_constant" => cfg.init.slope_constant = parse(key, v)?,
            "init_intrinsic_blur" => cfg.init.intrinsic_blur = parse(key, v)?,
            "init_sigma_min" => cfg.init.sigma_min = parse(key, v)?,
            "init_directions" => cfg.init.directions = parse(key, v)?,
            _ => unreachable!("key list and match arms agree"),
        }
    }
    cfg.validate().map_err(|e| UsageError::new(format!("invalid configuration: {e}")))?;
    Ok(())
}

/// Inverse of [`apply_blind`]: every field as a string, exact for floats.
pub fn blind_pairs(cfg: &BlindConfig) -> Vec<(&'static str, String)> {
    let mut out = vec![
        ("max_iterations", cfg.max_iterations.to_string()),
        ("step_size", cfg.step_size.to_string()),
        ("kernel_size", cfg.kernel_size.to_string()),
        ("l1_enabled", cfg.l1_enabled.to_string()),
        ("denoiser_enabled", cfg.denoiser_enabled.to_string()),
        ("mass_free_step", cfg.mass_free_step.to_string()),
        ("backtracking", cfg.backtracking.to_string()),
        ("max_halvings", cfg.max_halvings.to_string()),
        ("mu0", cfg.mu0.to_string()),
        ("gamma0", cfg.gamma0.to_string()),
        ("beta", cfg.beta.to_string()),
        ("unroll_steps", cfg.solver.unroll_steps.to_string()),
        ("epsilon", cfg.solver.epsilon.to_string()),
        ("boundary", cfg.solver.boundary.to_string()),
    ];
    match cfg.solver.method {
        SolverMethod::RichardsonLucy => out.push(("solver", SOLVER_RL.into())),
        SolverMethod::ProjectedGradient { step_scale, ridge } => {
            out.push(("solver", SOLVER_PG.into()));
            out.push(("pg_step_scale", step_scale.to_string()));
            out.push(("pg_ridge", ridge.to_string()));
        }
    }
    out.extend([
        ("tv_weight", cfg.denoise.tv_weight.to_string()),
        ("tv_iterations", cfg.denoise.tv_iterations.to_string()),
        ("denoise_mode", cfg.denoise.mode.to_string()),
        ("init_slope_constant", cfg.init.slope_constant.to_string()),
        ("init_intrinsic_blur", cfg.init.intrinsic_blur.to_string()),
        ("init_sigma_min", cfg.init.sigma_min.to_string()),
        ("init_directions", cfg.init.directions.to_string()),
    ]);
    out
}

/// One ablation setting applied on top of the base configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum Modifier {
    NoL1,
    NoDenoiser,
    Strict,
    Iterations(usize),
    Gamma0(f64),
}

/// A named combination of modifiers, written `full`, `no_l1+iters=10`, ...
///
/// `init_only` is the baseline that stops before the first kernel update.
#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    InitOnly,
    Modified(Vec<Modifier>),
}

impl Variant {
    pub fn full() -> Self {
        Self::Modified(Vec::new())
    }

    pub fn apply(&self, base: &BlindConfig) -> BlindConfig {
        let mut cfg = base.clone();
        if let Self::Modified(mods) = self {
            for m in mods {
                match *m {
                    Modifier::NoL1 => cfg.l1_enabled = false,
                    Modifier::NoDenoiser => cfg.denoiser_enabled = false,
                    Modifier::Strict => cfg.backtracking = false,
                    Modifier::Iterations(n) => cfg.max_iterations = n,
                    Modifier::Gamma0(g) => cfg.gamma0 = g,
                }
            }
        }
        cfg
    }
}

impl std::str::FromStr for Variant {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "init_only" {
            return Ok(Self::InitOnly);
        }
        if s == "full" {
            return Ok(Self::full());
        }
        let mut mods = Vec::new();
        for part in s.split('+') {
            let m = match part.split_once('=') {
                None => match part {
                    "no_l1" => Modifier::NoL1,
                    "no_denoiser" => Modifier::NoDenoiser,
                    "strict" => Modifier::Strict,
                    _ => bail!(UsageError::new(format!("unknown variant flag '{part}'"))),
                },
                Some(("iters", v)) => {
                    let n: usize = parse("iters", v)?;
                    if n == 0 {
                        bail!(UsageError::new("iters must be >= 1; use init_only for no iterations"));
                    }
                    Modifier::Iterations(n)
                }
                Some(("gamma0", v)) => Modifier::Gamma0(parse("gamma0", v)?),
                Some((k, _)) => bail!(UsageError::new(format!("unknown variant setting '{k}'"))),
            };
            mods.push(m);
        }
        Ok(Self::Modified(mods))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::InitOnly => f.write_str("init_only"),
            Self::Modified(mods) if mods.is_empty() => f.write_str("full"),
            Self::Modified(mods) => {
                let parts: Vec<String> = mods
                    .iter()
                    .map(|m| match m {
                        Modifier::NoL1 => "no_l1".to_string(),
                        Modifier::NoDenoiser => "no_denoiser".to_string(),
                        Modifier::Strict => "strict".to_string(),
                        Modifier::Iterations(n) => format!("iters={n}"),
                        Modifier::Gamma0(g) => format!("gamma0={g}"),
                    })
                    .collect();
                f.write_str(&parts.join("+"))
            }
        }
    }
}

/// Which artifacts a benchmark writes besides the aggregate table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Emit {
    pub images: bool,
    pub kernels: bool,
    pub csv: bool,
    pub curves: bool,
}

impl Default for Emit {
    fn default() -> Self {
        Self {
            images: false,
            kernels: false,
            csv: true,
            curves: false,
        }
    }
}

/// Everything a benchmark sweep needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub inputs: Vec<PathBuf>,
    pub alphas: Vec<f64>,
    pub kernels: Vec<KernelSpec>,
    /// side of the rendered ground-truth kernels
    pub true_kernel_size: usize,
    pub seed: u64,
    pub variants: Vec<Variant>,
    pub out_dir: PathBuf,
    pub emit: Emit,
    pub blind: BlindConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            alphas: vec![10.0, 20.0, 40.0],
            kernels: vec![KernelSpec::Gaussian {
                sigma_major: 2.5,
                sigma_minor: 1.2,
                theta: 0.5,
            }],
            true_kernel_size: 15,
            seed: 0,
            variants: vec![Variant::full()],
            out_dir: PathBuf::from("bench_out"),
            emit: Emit::default(),
            blind: BlindConfig::default(),
        }
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

const EXPERIMENT_KEYS: &[&str] = &[
    "inputs",
    "alphas",
    "kernels",
    "true_kernel_size",
    "seed",
    "variants",
    "out_dir",
    "emit_images",
    "emit_kernels",
    "emit_csv",
    "emit_curves",
];

impl ExperimentConfig {
    /// Layers `pairs` over `self`. Unknown keys are an error.
    pub fn apply(&mut self, pairs: &Pairs) -> Result<()> {
        for key in pairs.keys() {
            if !EXPERIMENT_KEYS.contains(&key.as_str()) && !BLIND_KEYS.contains(&key.as_str()) {
                bail!(UsageError::new(format!("unknown configuration key '{key}'")));
            }
        }
        for &key in EXPERIMENT_KEYS {
            let Some(v) = pairs.get(key) else { continue };
            match key {
                "inputs" => self.inputs = split_list(v).map(PathBuf::from).collect(),
                "alphas" => {
                    self.alphas = split_list(v).map(|a| parse::<f64>(key, a)).collect::<Result<_>>()?;
                    if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
                        bail!(UsageError::new(format!("alphas: photon level must be > 0, got {a}")));
                    }
                }
                "kernels" => self.kernels = split_list(v).map(str::parse).collect::<Result<_>>()?,
                "true_kernel_size" => self.true_kernel_size = parse(key, v)?,
                "seed" => self.seed = parse(key, v)?,
                "variants" => self.variants = split_list(v).map(str::parse).collect::<Result<_>>()?,
                "out_dir" => self.out_dir = PathBuf::from(v),
                "emit_images" => self.emit.images = parse_bool(key, v)?,
                "emit_kernels" => self.emit.kernels = parse_bool(key, v)?,
                "emit_csv" => self.emit.csv = parse_bool(key, v)?,
                "emit_curves" => self.emit.curves = parse_bool(key, v)?,
                _ => unreachable!(),
            }
        }
        apply_blind(&mut self.blind, pairs)
    }

    pub fn to_text(&self) -> String {
        let join = |items: Vec<String>| items.join(",");
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("inputs", join(self.inputs.iter().map(|p| p.display().to_string()).collect()));
        put("alphas", join(self.alphas.iter().map(f64::to_string).collect()));
        put("kernels", join(self.kernels.iter().map(ToString::to_string).collect()));
        put("true_kernel_size", self.true_kernel_size.to_string());
        put("seed", self.seed.to_string());
        put("variants", join(self.variants.iter().map(ToString::to_string).collect()));
        put("out_dir", self.out_dir.display().to_string());
        put("emit_images", self.emit.images.to_string());
        put("emit_kernels", self.emit.kernels.to_string());
        put("emit_csv", self.emit.csv.to_string());
        put("emit_curves", self.emit.curves.to_string());
        for (k, v) in blind_pairs(&self.blind) {
            put(k, v);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&parse_pairs(text)?)?;
        Ok(cfg)
    }
}
