//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use phodeconv::blind::{self, BlindConfig, RunReport};
use phodeconv::conv::Boundary;
use phodeconv::field::project_kernel;
use phodeconv::metrics::{embed_kernel_centered, evaluate, psnr_capped, PSNR_CAP_DB};
use phodeconv::poisson::{self, PhotonLevel};
use phodeconv::solver::{self, gradient_check, DifferentiableSolver, Objective, SolverConfig, SolverMethod, StopGradient};
use phodeconv::{BlurKernel, Field2D};

use crate::args::{BenchArgs, DeblurArgs, EvaluateArgs, Format, GradCheckArgs, SimulateArgs, SolverChoice};
use crate::config::{read_pairs, ExperimentConfig, Variant};
use crate::error::{CheckFailed, UsageError};
use crate::io;
use crate::kernels::KernelSpec;

/// Environment variable holding the bench worker count.
pub const THREADS_ENV: &str = "PHODECONV_THREADS";

fn photon_level(alpha: f64) -> Result<PhotonLevel> {
    PhotonLevel::new(alpha).map_err(|e| UsageError::new(e.to_string()).into())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SimulationMeta<'a> {
    image: String,
    kernel: &'a str,
    kernel_size: usize,
    alpha: f64,
    seed: u64,
    height: usize,
    width: usize,
    total_counts: f64,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let alpha = photon_level(args.alpha)?;
    let spec: KernelSpec = args.kernel.parse()?;
    let x = io::read_latent(&args.image)?;
    let h = spec.build(args.kernel_size)?;
    let y = poisson::simulate(&x, &h, alpha, args.seed)?;

    io::write_counts(&args.out.join(&args.y_name), &y)?;
    io::write_latent(&args.out.join("x_true.png"), &x)?;
    io::write_kernel(&args.out.join("h_true.txt"), &h)?;
    let meta = SimulationMeta {
        image: args.image.display().to_string(),
        kernel: &args.kernel,
        kernel_size: h.size(),
        alpha: args.alpha,
        seed: args.seed,
        height: y.height(),
        width: y.width(),
        total_counts: y.sum(),
    };
    io::write_text(&args.out.join("meta.json"), &(serde_json::to_string_pretty(&meta)? + "\n"))?;
    println!(
        "simulated {}x{} counts (total {}) at alpha {} into {}",
        y.height(),
        y.width(),
        y.sum(),
        args.alpha,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// deblur
// ---------------------------------------------------------------------------

/// Defaults, then the config file, then command-line flags.
fn layered_config(file: Option<&Path>, cli: &crate::config::Pairs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = file {
        cfg.apply(&read_pairs(path)?).with_context(|| format!("in {}", path.display()))?;
    }
    cfg.apply(cli)?;
    Ok(cfg)
}

/// `iter,loss,mu,gamma[,psnr]`, one row for the initialization and one per iteration.
pub fn loss_csv(report: &RunReport) -> String {
    let with_psnr = report.iterations.iter().any(|r| r.psnr.is_some());
    let mut out = String::from(if with_psnr { "iter,loss,mu,gamma,psnr\n" } else { "iter,loss,mu,gamma\n" });
    for r in &report.iterations {
        let _ = write!(out, "{},{},{},{}", r.k, r.loss, r.mu, r.gamma);
        if with_psnr {
            let _ = write!(out, ",{}", r.psnr.map_or(f64::NAN, |p| p.min(PSNR_CAP_DB)));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct InitSummary {
    sigma_major: f64,
    sigma_minor: f64,
    theta: f64,
}

#[derive(Serialize)]
struct DeblurSummary {
    status: &'static str,
    abort_reason: Option<String>,
    alpha: f64,
    alpha_estimated: bool,
    iterations: usize,
    accepted_steps: usize,
    initial_loss: f64,
    final_loss: f64,
    initialization: InitSummary,
    config: std::collections::BTreeMap<&'static str, String>,
}

fn write_run_outputs(out: &Path, report: &RunReport, cfg: &BlindConfig, aborted: Option<&str>) -> Result<()> {
    io::write_latent(&out.join("x_hat.png"), &report.final_image)?;
    io::write_kernel(&out.join("h_hat.txt"), &report.final_kernel)?;
    io::write_kernel(&out.join("h_init.txt"), &report.initial_kernel)?;
    io::write_text(&out.join("loss.csv"), &loss_csv(report))?;
    let summary = DeblurSummary {
        status: if aborted.is_some() { "aborted" } else { "ok" },
        abort_reason: aborted.map(str::to_string),
        alpha: report.alpha.get(),
        alpha_estimated: report.alpha_estimated,
        iterations: report.iterations.len() - 1,
        accepted_steps: report.iterations.iter().filter(|r| r.step > 0.0).count(),
        initial_loss: report.iterations[0].loss,
        final_loss: report.final_loss(),
        initialization: InitSummary {
            sigma_major: report.init_params.sigma_major,
            sigma_minor: report.init_params.sigma_minor,
            theta: report.init_params.theta,
        },
        config: crate::config::blind_pairs(cfg).into_iter().collect(),
    };
    io::write_text(&out.join("report.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))
}

pub fn deblur(args: &DeblurArgs) -> Result<()> {
    let cfg = layered_config(args.config.as_deref(), &args.blind.pairs())?.blind;
    let y = io::read_counts(&args.y)?;
    let alpha = args.alpha.map(photon_level).transpose()?;
    let reference = args.reference.as_deref().map(io::read_latent).transpose()?;
    match blind::run_with_reference(&y, alpha, &cfg, reference.as_ref()) {
        Ok(report) => {
            write_run_outputs(&args.out, &report, &cfg, None)?;
            println!(
                "alpha {}{}; loss {} -> {} over {} iterations; outputs in {}",
                report.alpha,
                if report.alpha_estimated { " (estimated)" } else { "" },
                report.iterations[0].loss,
                report.final_loss(),
                report.iterations.len() - 1,
                args.out.display()
            );
            Ok(())
        }
        Err(phodeconv::Error::Aborted { reason, report }) => {
            write_run_outputs(&args.out, &report, &cfg, Some(&reason))?;
            bail!(CheckFailed(format!("run aborted: {reason}; partial outputs in {}", args.out.display())))
        }
        Err(e) => Err(e.into()),
    }
}

// ---------------------------------------------------------------------------
// grad-check
// ---------------------------------------------------------------------------

struct GradInstance {
    y: Field2D,
    target: Field2D,
    h: BlurKernel,
}

fn random_kernel(rng: &mut ChaCha8Rng, m: usize) -> Result<BlurKernel> {
    Ok(project_kernel(&Field2D::from_fn(m, m, |_, _| rng.random::<f64>() + 0.05))?)
}

fn grad_instance(args: &GradCheckArgs, alpha: PhotonLevel, seed: u64) -> Result<GradInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Field2D::from_fn(args.height, args.width, |_, _| rng.random_range(0.1..1.0));
    let h_true = random_kernel(&mut rng, args.kernel_size)?;
    let y = poisson::simulate(&x, &h_true, alpha, rng.random())?;
    let target = y.scale(1.0 / alpha.get()).clamp(0.0, 1.0);
    let h = random_kernel(&mut rng, args.kernel_size)?;
    Ok(GradInstance { y, target, h })
}

pub fn grad_check(args: &GradCheckArgs) -> Result<()> {
    let alpha = photon_level(args.alpha)?;
    let boundary: Boundary = args.boundary.parse().map_err(|e| UsageError::new(format!("{e}")))?;
    let m = args.kernel_size;
    if m.is_multiple_of(2) || m > args.height.min(args.width) {
        bail!(UsageError::new(format!(
            "kernel size must be odd and fit in {}x{}, got {m}",
            args.height, args.width
        )));
    }
    if args.instances == 0 {
        bail!(UsageError::new("need at least one instance"));
    }
    let solver_cfg = SolverConfig {
        unroll_steps: args.unroll_steps,
        boundary,
        method: match args.solver {
            SolverChoice::RichardsonLucy => SolverMethod::RichardsonLucy,
            SolverChoice::ProjectedGradient => SolverMethod::projected_gradient(),
        },
        ..SolverConfig::default()
    };
    solver_cfg.validate().map_err(|e| UsageError::new(e.to_string()))?;

    println!(
        "grad-check: dims={}x{} M={} K={} alpha={} boundary={} solver={:?} instances={} seed={} fd_step={}{}",
        args.height,
        args.width,
        m,
        args.unroll_steps,
        args.alpha,
        boundary,
        args.solver,
        args.instances,
        args.seed,
        args.fd_step,
        if args.inject_bug { " inject_bug=true" } else { "" }
    );
    let mut worst: f64 = 0.0;
    for i in 0..args.instances {
        let inst = grad_instance(args, alpha, args.seed.wrapping_add(i as u64))?;
        let base = solver_cfg.build()?;
        let solver: Box<dyn DifferentiableSolver> =
            if args.inject_bug { Box::new(StopGradient::new(base)) } else { base };
        let obj = Objective::new(solver, boundary, &inst.y, &inst.target, alpha)?;
        let err = gradient_check(&obj, &inst.h, args.fd_step)?;
        println!("instance {i}: max_rel_error={err:e}");
        worst = worst.max(err);
    }
    println!("max_rel_error={worst:e} tolerance={:e}", args.tolerance);
    if !(worst <= args.tolerance) {
        println!("result: FAIL");
        bail!(CheckFailed(format!(
            "gradient check failed: max relative error {worst:e} exceeds {:e}",
            args.tolerance
        )));
    }
    println!("result: PASS");
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationRow {
    pub psnr: f64,
    pub ssim: f64,
    pub kernel_mae: Option<f64>,
    pub shift_y: Option<isize>,
    pub shift_x: Option<isize>,
}

/// Center-embeds the smaller of two kernels so both share a support.
pub fn common_support(a: &Field2D, b: &Field2D) -> Result<(Field2D, Field2D)> {
    let size = a.height().max(b.height());
    Ok((embed_kernel_centered(a, size)?, embed_kernel_centered(b, size)?))
}

pub fn evaluation_row(
    x_hat: &Field2D,
    x_true: &Field2D,
    kernels: Option<(&Field2D, &Field2D)>,
    align: bool,
) -> Result<EvaluationRow> {
    let psnr = psnr_capped(x_hat, x_true)?;
    let (mae, shift) = match kernels {
        Some((h_hat, h_true)) => {
            let (a, b) = common_support(h_hat, h_true)?;
            let r = evaluate(x_hat, x_true, &a, &b, align)?;
            (Some(r.kernel_mae), Some(r.alignment_shift))
        }
        None => (None, None),
    };
    Ok(EvaluationRow {
        psnr,
        ssim: phodeconv::metrics::ssim(x_hat, x_true)?,
        kernel_mae: mae,
        shift_y: shift.map(|s| s.0),
        shift_x: shift.map(|s| s.1),
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let x_hat = io::read_latent(&args.x_hat)?;
    let x_true = io::read_latent(&args.x_true)?;
    let kernels = match (&args.h_hat, &args.h_true) {
        (Some(a), Some(b)) => Some((io::read_kernel(a)?, io::read_kernel(b)?)),
        _ => None,
    };
    let row = evaluation_row(
        &x_hat,
        &x_true,
        kernels.as_ref().map(|(a, b)| (a.field(), b.field())),
        !args.no_align,
    )?;
    match args.format {
        Format::Csv => {
            println!("psnr,ssim,kernel_mae,shift_y,shift_x");
            println!(
                "{},{},{},{},{}",
                row.psnr,
                row.ssim,
                opt(row.kernel_mae),
                opt(row.shift_y),
                opt(row.shift_x)
            );
        }
        Format::Json => println!("{}", serde_json::to_string_pretty(&row)?),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

/// One row of the aggregate table.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BenchRow {
    pub image: String,
    pub kernel: String,
    pub alpha: f64,
    pub variant: String,
    pub status: String,
    pub psnr: f64,
    pub ssim: f64,
    pub kernel_mae: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    #[serde(skip)]
    key: (usize, usize, usize, usize),
}

pub const BENCH_HEADER: &str =
    "image,kernel,alpha,variant,status,psnr,ssim,kernel_mae,final_loss,iterations,accepted_steps";

impl BenchRow {
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.image,
            self.kernel,
            self.alpha,
            self.variant,
            self.status,
            self.psnr,
            self.ssim,
            self.kernel_mae,
            self.final_loss,
            self.iterations,
            self.accepted_steps
        )
    }
}

/// splitmix64 over the cell indices: seeds depend on the cell, not on scheduling.
fn cell_seed(seed: u64, cell: (usize, usize, usize)) -> u64 {
    let mut z = seed;
    for v in [cell.0, cell.1, cell.2] {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(v as u64);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// Variants to run: the configured list, plus the initialization-only baseline.
pub fn bench_variants(cfg: &ExperimentConfig) -> Vec<Variant> {
    let mut out: Vec<Variant> = Vec::new();
    for v in &cfg.variants {
        if !out.contains(v) {
            out.push(v.clone());
        }
    }
    if !out.contains(&Variant::InitOnly) {
        out.push(Variant::InitOnly);
    }
    out
}

struct Cell<'a> {
    image_name: String,
    x: &'a Field2D,
    spec: &'a KernelSpec,
    h_true: &'a BlurKernel,
    alpha: f64,
    key: (usize, usize, usize),
}

struct Outcome {
    kernel: BlurKernel,
    image: Field2D,
    final_loss: f64,
    iterations: usize,
    accepted: usize,
    status: String,
    report: Option<RunReport>,
}

fn run_variant(y: &Field2D, alpha: PhotonLevel, variant: &Variant, base: &BlindConfig) -> Result<Outcome> {
    let cfg = variant.apply(base);
    if *variant == Variant::InitOnly {
        let target = blind::loss_target(y, alpha, &cfg)?;
        let (_, h0) = blind::initial_kernel(&target, &cfg)?;
        let image = solver::solve(y, &h0, alpha, &cfg.solver)?;
        let final_loss = solver::loss_value(y, &target, &h0, alpha, &cfg.solver)?;
        return Ok(Outcome {
            kernel: h0,
            image,
            final_loss,
            iterations: 0,
            accepted: 0,
            status: "ok".into(),
            report: None,
        });
    }
    let (report, status) = match blind::run(y, Some(alpha), &cfg) {
        Ok(r) => (r, "ok".to_string()),
        Err(phodeconv::Error::Aborted { reason, report }) => (*report, format!("aborted: {reason}")),
        Err(e) => return Err(e.into()),
    };
    Ok(Outcome {
        kernel: report.final_kernel.clone(),
        image: report.final_image.clone(),
        final_loss: report.final_loss(),
        iterations: report.iterations.len() - 1,
        accepted: report.iterations.iter().filter(|r| r.step > 0.0).count(),
        status,
        report: Some(report),
    })
}

fn run_cell(cell: &Cell<'_>, variants: &[Variant], cfg: &ExperimentConfig) -> Result<Vec<BenchRow>> {
    let alpha = photon_level(cell.alpha)?;
    let y = poisson::simulate(cell.x, cell.h_true, alpha, cell_seed(cfg.seed, cell.key))?;
    let cell_dir = cfg.out_dir.join("runs").join(format!(
        "{}_k{}_a{}",
        file_safe(&cell.image_name),
        cell.key.1,
        file_safe(&cell.alpha.to_string())
    ));
    if cfg.emit.kernels {
        io::write_kernel(&cell_dir.join("h_true.txt"), cell.h_true)?;
    }
    if cfg.emit.images {
        io::write_latent(&cell_dir.join("y_scaled.png"), &y.scale(1.0 / cell.alpha))?;
    }
    let mut rows = Vec::with_capacity(variants.len());
    for (vi, variant) in variants.iter().enumerate() {
        let name = variant.to_string();
        let (key, row_base) = ((cell.key.0, cell.key.1, cell.key.2, vi), (cell.image_name.clone(), cell.spec.to_string()));
        let row = match run_variant(&y, alpha, variant, &cfg.blind) {
            Ok(o) => {
                let m = evaluation_row(&o.image, cell.x, Some((o.kernel.field(), cell.h_true.field())), true)?;
                let tag = file_safe(&name);
                if cfg.emit.images {
                    io::write_latent(&cell_dir.join(format!("x_hat_{tag}.png")), &o.image)?;
                }
                if cfg.emit.kernels {
                    io::write_kernel(&cell_dir.join(format!("h_hat_{tag}.txt")), &o.kernel)?;
                }
                if let (true, Some(r)) = (cfg.emit.curves, &o.report) {
                    io::write_text(&cell_dir.join(format!("loss_{tag}.csv")), &loss_csv(r))?;
                }
                BenchRow {
                    image: row_base.0,
                    kernel: row_base.1,
                    alpha: cell.alpha,
                    variant: name,
                    status: o.status,
                    psnr: m.psnr,
                    ssim: m.ssim,
                    kernel_mae: m.kernel_mae.unwrap_or(f64::NAN),
                    final_loss: o.final_loss,
                    iterations: o.iterations,
                    accepted_steps: o.accepted,
                    key,
                }
            }
            Err(e) => {
                log::warn!("{} / {} / alpha {} / {name}: {e:#}", cell.image_name, cell.spec, cell.alpha);
                BenchRow {
                    image: row_base.0,
                    kernel: row_base.1,
                    alpha: cell.alpha,
                    variant: name,
                    status: format!("error: {e}"),
                    psnr: f64::NAN,
                    ssim: f64::NAN,
                    kernel_mae: f64::NAN,
                    final_loss: f64::NAN,
                    iterations: 0,
                    accepted_steps: 0,
                    key,
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

fn thread_count() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => bail!(UsageError::new(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs every (image, kernel, alpha) cell with every variant. Rows come back
/// sorted by cell key (configuration order), independent of scheduling.
pub fn run_bench(cfg: &ExperimentConfig) -> Result<Vec<BenchRow>> {
    if cfg.inputs.is_empty() {
        bail!(UsageError::new("bench needs at least one input image (key 'inputs')"));
    }
    if cfg.alphas.is_empty() || cfg.kernels.is_empty() {
        bail!(UsageError::new("bench needs at least one alpha and one kernel"));
    }
    cfg.blind.validate().map_err(|e| UsageError::new(e.to_string()))?;
    let images: Vec<(String, Field2D)> = cfg
        .inputs
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok((name, io::read_latent(p)?))
        })
        .collect::<Result<_>>()?;
    let kernels: Vec<BlurKernel> = cfg
        .kernels
        .iter()
        .map(|k| k.build(cfg.true_kernel_size))
        .collect::<Result<_>>()?;
    let variants = bench_variants(cfg);

    let mut cells = Vec::new();
    for (ii, (name, x)) in images.iter().enumerate() {
        for (ki, (spec, h)) in cfg.kernels.iter().zip(&kernels).enumerate() {
            for (ai, &alpha) in cfg.alphas.iter().enumerate() {
                cells.push(Cell {
                    image_name: name.clone(),
                    x,
                    spec,
                    h_true: h,
                    alpha,
                    key: (ii, ki, ai),
                });
            }
        }
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("cannot start worker threads")?;
    let per_cell: Vec<Result<Vec<BenchRow>>> =
        pool.install(|| cells.par_iter().map(|c| run_cell(c, &variants, cfg)).collect());
    let mut rows = Vec::new();
    for r in per_cell {
        rows.extend(r?);
    }
    rows.sort_by_key(|r| r.key);
    Ok(rows)
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut out = format!("{BENCH_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    out
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let mut cli = args.blind.pairs();
    if let Some(out) = &args.out {
        cli.insert("out_dir".into(), out.display().to_string());
    }
    if let Some(seed) = args.seed {
        cli.insert("seed".into(), seed.to_string());
    }
    let cfg = layered_config(args.config.as_deref(), &cli)?;
    let rows = run_bench(&cfg)?;
    let out_dir: &PathBuf = &cfg.out_dir;
    io::write_text(&out_dir.join("config.txt"), &cfg.to_text())?;
    let table = bench_table(&rows);
    if cfg.emit.csv {
        io::write_text(&out_dir.join("summary.csv"), &table)?;
    }
    io::write_text(&out_dir.join("summary.json"), &(serde_json::to_string_pretty(&rows)? + "\n"))?;
    print!("{table}");
    let failed = rows.iter().filter(|r| r.status.starts_with("error")).count();
    if failed > 0 {
        bail!(CheckFailed(format!("{failed} of {} runs failed", rows.len())));
    }
    Ok(())
}
