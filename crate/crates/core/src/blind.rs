//! The outer kernel-estimation loop.
//!
//! Starting from a Gaussian fitted to the denoised image, the kernel is updated by
//! one inexact gradient step per iteration on
//! `L(h) + mu/2 ||h - v||^2`, projected back onto the simplex, and the split
//! variable `v` is refreshed by soft thresholding (`l1` prior). `mu` grows and
//! `gamma` shrinks geometrically by a factor of 1.01 every iteration.

use crate::denoise::{denoise, DenoiseConfig, DenoiseMode};
use crate::error::{invalid, Error, Result};
use crate::field::{project_kernel, BlurKernel, Field2D};
use crate::kernel_init::{estimate_gaussian_params, render_gaussian_kernel, GaussianBlurParams, InitConfig};
use crate::metrics::psnr;
use crate::poisson::{estimate_photon_level, PhotonLevel, DEFAULT_BETA};
use crate::solver::{DifferentiableSolver, LossEval, Objective, SolverConfig};

pub const MU0: f64 = 2.0;
pub const GAMMA0: f64 = 1e-3;
pub const SCHEDULE_FACTOR: f64 = 1.01;

pub const DEFAULT_MAX_ITERATIONS: usize = 20;
/// Applies to the per-pixel gradient, see [`step_gradient`].
pub const DEFAULT_STEP_SIZE: f64 = 0.1;
pub const DEFAULT_KERNEL_SIZE: usize = 31;
pub const DEFAULT_MAX_HALVINGS: usize = 5;
/// TV weight of the loss target. Stronger than the stand-alone denoiser
/// default: residual noise in the target pulls the kernel toward a sharp spike.
pub const TARGET_TV_WEIGHT: f64 = 1.0;

/// Elementwise soft threshold `sign(h) max(|h| - kappa, 0)`.
pub fn shrinkage(h: &Field2D, kappa: f64) -> Result<Field2D> {
    if !(kappa >= 0.0) {
        return Err(invalid(format!("threshold must be >= 0, got {kappa}")));
    }
    Ok(h.map(|v| soft_threshold(v, kappa)))
}

#[inline]
pub fn soft_threshold(v: f64, kappa: f64) -> f64 {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}

/// Iterate of the splitting scheme.
#[derive(Debug, Clone)]
pub struct HqsState {
    pub h: Field2D,
    pub v: Field2D,
    pub mu: f64,
    pub gamma: f64,
    pub k: usize,
}

impl HqsState {
    pub fn new(h0: &BlurKernel) -> Self {
        Self::with_schedule(h0, MU0, GAMMA0)
    }

    pub fn with_schedule(h0: &BlurKernel, mu0: f64, gamma0: f64) -> Self {
        Self {
            h: h0.field().clone(),
            v: h0.field().clone(),
            mu: mu0,
            gamma: gamma0,
            k: 0,
        }
    }

    /// `mu <- 1.01 mu`, `gamma <- gamma / 1.01`, `k <- k + 1`.
    pub fn advance_schedule(&mut self) {
        self.mu *= SCHEDULE_FACTOR;
        self.gamma /= SCHEDULE_FACTOR;
        self.k += 1;
    }

    pub fn threshold(&self) -> f64 {
        self.gamma / self.mu
    }
}

/// `project(h - delta (grad + mu (h - v)))`
pub fn h_step(state: &HqsState, grad: &Field2D, delta: f64) -> Result<BlurKernel> {
    state.h.check_same_dims(grad)?;
    let mut next = state.h.clone();
    let coupling = state.h.sub(&state.v);
    next.axpy(-delta, grad);
    next.axpy(-delta * state.mu, &coupling);
    project_kernel(&next)
}

/// Rescales a loss gradient into the direction used by the kernel step.
///
/// The step works on the per-pixel loss `L / n_pixels`. With `mass_free`, a
/// constant is subtracted so the full step direction `grad + mu (h - v)` sums
/// to zero: the solver output is invariant to the kernel's scale, so the
/// component along the all-ones direction only trades brightness and would be
/// undone (with a sign flip) by renormalization.
pub fn step_gradient(state: &HqsState, grad: &Field2D, n_pixels: usize, mass_free: bool) -> Result<Field2D> {
    state.h.check_same_dims(grad)?;
    if n_pixels == 0 {
        return Err(invalid("pixel count must be >= 1"));
    }
    let mut g = grad.scale(1.0 / n_pixels as f64);
    if mass_free {
        let drift = (g.sum() + state.mu * (state.h.sum() - state.v.sum())) / g.len() as f64;
        g = g.map(|x| x - drift);
    }
    Ok(g)
}

/// Soft-thresholded copy of `h` when the l1 prior is on, otherwise `h` itself.
/// An all-zero result falls back to `h`.
pub fn v_step(state: &HqsState, l1_enabled: bool) -> Field2D {
    if !l1_enabled {
        return state.h.clone();
    }
    let kappa = state.threshold();
    let v = state.h.map(|x| soft_threshold(x, kappa));
    if v.as_slice().iter().all(|&x| x == 0.0) {
        state.h.clone()
    } else {
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlindConfig {
    pub max_iterations: usize,
    pub step_size: f64,
    pub kernel_size: usize,
    pub l1_enabled: bool,
    pub denoiser_enabled: bool,
    /// Remove the kernel-mass component from the step direction, see [`step_gradient`].
    pub mass_free_step: bool,
    /// Halve the step (up to `max_halvings` times) whenever it would increase the loss.
    pub backtracking: bool,
    pub max_halvings: usize,
    pub mu0: f64,
    pub gamma0: f64,
    /// Divisor in the photon-level heuristic.
    pub beta: f64,
    pub solver: SolverConfig,
    pub denoise: DenoiseConfig,
    pub init: InitConfig,
}

impl Default for BlindConfig {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            step_size: DEFAULT_STEP_SIZE,
            kernel_size: DEFAULT_KERNEL_SIZE,
            l1_enabled: true,
            denoiser_enabled: true,
            mass_free_step: true,
            backtracking: true,
            max_halvings: DEFAULT_MAX_HALVINGS,
            mu0: MU0,
            gamma0: GAMMA0,
            beta: DEFAULT_BETA,
            solver: SolverConfig::default(),
            denoise: DenoiseConfig {
                tv_weight: TARGET_TV_WEIGHT,
                ..DenoiseConfig::default()
            },
            init: InitConfig::default(),
        }
    }
}

impl BlindConfig {
    /// Plain Algorithm-style iteration: every step is taken as computed.
    pub fn strict(mut self) -> Self {
        self.backtracking = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be >= 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid(format!("step_size must be > 0, got {}", self.step_size)));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(invalid(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        if !(self.mu0 > 0.0) || !(self.gamma0 >= 0.0) {
            return Err(invalid("mu0 must be > 0 and gamma0 >= 0"));
        }
        if !(self.beta > 0.0) {
            return Err(invalid("beta must be > 0"));
        }
        self.solver.validate()?;
        self.denoise.validate()?;
        self.init.validate()
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// 0 is the initialization
    pub k: usize,
    pub loss: f64,
    pub mu: f64,
    pub gamma: f64,
    /// step length actually taken to reach this iterate (0 for the initialization or a rejected step)
    pub step: f64,
    pub kernel: BlurKernel,
    /// PSNR of the clipped solver output against a reference, when one was supplied
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub iterations: Vec<IterationRecord>,
    pub init_params: GaussianBlurParams,
    pub initial_kernel: BlurKernel,
    /// `F(y, h0)` clipped to `[0, 1]`
    pub initial_image: Field2D,
    pub final_kernel: BlurKernel,
    /// `F(y, h)` clipped to `[0, 1]`
    pub final_image: Field2D,
    /// Denoised target `G(y)`.
    pub target: Field2D,
    pub alpha: PhotonLevel,
    pub alpha_estimated: bool,
}

impl RunReport {
    pub fn losses(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.loss).collect()
    }

    pub fn final_loss(&self) -> f64 {
        self.iterations.last().map_or(f64::NAN, |r| r.loss)
    }
}

/// Loss target: `G(y)` or, with the denoiser disabled, `y / alpha` clipped.
pub fn loss_target(y: &Field2D, alpha: PhotonLevel, cfg: &BlindConfig) -> Result<Field2D> {
    let dcfg = if cfg.denoiser_enabled {
        cfg.denoise
    } else {
        DenoiseConfig {
            mode: DenoiseMode::Passthrough,
            ..cfg.denoise
        }
    };
    denoise(y, alpha, &dcfg)
}

/// Fits and renders the initial Gaussian kernel from the loss target.
pub fn initial_kernel(target: &Field2D, cfg: &BlindConfig) -> Result<(GaussianBlurParams, BlurKernel)> {
    let params = estimate_gaussian_params(target, &cfg.init)?;
    let kernel = render_gaussian_kernel(&params, cfg.kernel_size)?;
    Ok((params, kernel))
}

pub fn run(y: &Field2D, alpha: Option<PhotonLevel>, cfg: &BlindConfig) -> Result<RunReport> {
    run_with_reference(y, alpha, cfg, None)
}

/// As [`run`]; with a reference image each record also carries the PSNR of the
/// current reconstruction.
pub fn run_with_reference(
    y: &Field2D,
    alpha: Option<PhotonLevel>,
    cfg: &BlindConfig,
    reference: Option<&Field2D>,
) -> Result<RunReport> {
    check_run_inputs(y, cfg, reference)?;
    let (alpha, alpha_estimated) = match alpha {
        Some(a) => (a, false),
        None => (estimate_photon_level(y, cfg.beta)?, true),
    };
    let target = loss_target(y, alpha, cfg)?;
    optimize(cfg.solver.build()?, y, alpha, alpha_estimated, target, cfg, reference)
}

/// Runs the loop against a caller-supplied loss target instead of `G(y)`, for
/// example the noiseless blurred image in a simulation.
pub fn run_with_target(
    y: &Field2D,
    alpha: PhotonLevel,
    target: &Field2D,
    cfg: &BlindConfig,
    reference: Option<&Field2D>,
) -> Result<RunReport> {
    check_run_inputs(y, cfg, reference)?;
    y.check_same_dims(target)?;
    optimize(cfg.solver.build()?, y, alpha, false, target.clone(), cfg, reference)
}

/// As [`run_with_target`] with a caller-provided solver in place of the one
/// described by `cfg.solver`. `cfg.solver.boundary` still selects the outer
/// reblurring boundary.
pub fn run_with_solver<S: DifferentiableSolver>(
    solver: S,
    y: &Field2D,
    alpha: PhotonLevel,
    target: &Field2D,
    cfg: &BlindConfig,
    reference: Option<&Field2D>,
) -> Result<RunReport> {
    check_run_inputs(y, cfg, reference)?;
    y.check_same_dims(target)?;
    optimize(solver, y, alpha, false, target.clone(), cfg, reference)
}

fn check_run_inputs(y: &Field2D, cfg: &BlindConfig, reference: Option<&Field2D>) -> Result<()> {
    cfg.validate()?;
    if let Some(r) = reference {
        y.check_same_dims(r)?;
    }
    let (rows, cols) = y.dims();
    if cfg.kernel_size > rows.min(cols) {
        return Err(invalid(format!(
            "kernel size {} exceeds image {rows}x{cols}",
            cfg.kernel_size
        )));
    }
    if let Some(v) = y.as_slice().iter().find(|&&v| v < 0.0) {
        return Err(invalid(format!("observed counts must be >= 0, found {v}")));
    }
    Ok(())
}

fn optimize<S: DifferentiableSolver>(
    solver: S,
    y: &Field2D,
    alpha: PhotonLevel,
    alpha_estimated: bool,
    target: Field2D,
    cfg: &BlindConfig,
    reference: Option<&Field2D>,
) -> Result<RunReport> {
    let (init_params, h0) = initial_kernel(&target, cfg)?;
    let objective = Objective::new(solver, cfg.solver.boundary, y, &target, alpha)?;

    let mut run = Run {
        cfg,
        objective: &objective,
        reference,
        state: HqsState::with_schedule(&h0, cfg.mu0, cfg.gamma0),
        records: Vec::with_capacity(cfg.max_iterations + 1),
        best: None,
    };
    let mut current = objective.loss_and_grad(&h0)?;
    if !current.loss.is_finite() {
        return Err(Error::NonFinite("initial loss".into()));
    }
    let initial_image = current.image.clamp(0.0, 1.0);
    run.record(&h0, &current, 0.0)?;

    for _ in 0..cfg.max_iterations {
        match run.iterate(&current) {
            Ok((kernel, eval, step)) => {
                run.state.h = kernel.field().clone();
                run.state.v = v_step(&run.state, cfg.l1_enabled);
                run.state.advance_schedule();
                run.record(&kernel, &eval, step)?;
                current = eval;
            }
            Err(reason) => {
                let report = run.finish(init_params, h0, initial_image, target.clone(), alpha, alpha_estimated, true)?;
                return Err(Error::Aborted {
                    reason,
                    report: Box::new(report),
                });
            }
        }
    }
    run.finish(init_params, h0, initial_image, target.clone(), alpha, alpha_estimated, false)
}

struct Run<'a, 'd, S> {
    cfg: &'a BlindConfig,
    objective: &'a Objective<'d, S>,
    reference: Option<&'a Field2D>,
    state: HqsState,
    records: Vec<IterationRecord>,
    /// lowest loss seen so far
    best: Option<(f64, BlurKernel, Field2D)>,
}

impl<S: DifferentiableSolver> Run<'_, '_, S> {
    fn record(&mut self, kernel: &BlurKernel, eval: &LossEval, step: f64) -> Result<()> {
        let image = eval.image.clamp(0.0, 1.0);
        let psnr = self.reference.map(|r| psnr(&image, r)).transpose()?;
        self.records.push(IterationRecord {
            k: self.state.k,
            loss: eval.loss,
            mu: self.state.mu,
            gamma: self.state.gamma,
            step,
            kernel: kernel.clone(),
            psnr,
        });
        if self.best.as_ref().is_none_or(|(l, _, _)| eval.loss < *l) {
            self.best = Some((eval.loss, kernel.clone(), image));
        }
        Ok(())
    }

    /// One gradient step from the current state. Returns the accepted kernel,
    /// its evaluation and the step length used, or a reason to abort.
    fn iterate(&self, current: &LossEval) -> std::result::Result<(BlurKernel, LossEval, f64), String> {
        let cfg = self.cfg;
        let mut delta = cfg.step_size;
        let attempts = if cfg.backtracking { cfg.max_halvings + 1 } else { 1 };
        let mut last_failure = String::new();
        let n = self.objective.pixels();
        let grad = step_gradient(&self.state, &current.grad, n, cfg.mass_free_step).map_err(|e| e.to_string())?;
        for _ in 0..attempts {
            match h_step(&self.state, &grad, delta) {
                Ok(kernel) => match self.objective.loss_and_grad(&kernel) {
                    Ok(eval) if eval.loss.is_finite() => {
                        if !cfg.backtracking || eval.loss <= current.loss {
                            return Ok((kernel, eval, delta));
                        }
                        last_failure = format!("loss increased to {}", eval.loss);
                    }
                    Ok(eval) => last_failure = format!("non-finite loss {}", eval.loss),
                    Err(e) => last_failure = e.to_string(),
                },
                Err(e) => last_failure = e.to_string(),
            }
            if !cfg.backtracking {
                return Err(format!("iteration {}: {last_failure}", self.state.k));
            }
            delta *= 0.5;
        }
        // every halving failed: stay at the current iterate
        let kernel = project_kernel(&self.state.h).map_err(|e| e.to_string())?;
        log::debug!("iteration {}: step rejected ({last_failure})", self.state.k);
        Ok((kernel, current.clone(), 0.0))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        self,
        init_params: GaussianBlurParams,
        initial_kernel: BlurKernel,
        initial_image: Field2D,
        target: Field2D,
        alpha: PhotonLevel,
        alpha_estimated: bool,
        aborted: bool,
    ) -> Result<RunReport> {
        let last = self.records.last().expect("initial record is always present");
        let (final_kernel, final_image) = if aborted {
            let (_, k, img) = self.best.expect("best is set with the first record");
            (k, img)
        } else {
            let img = self.objective.solve_raw(&last.kernel)?.clamp(0.0, 1.0);
            (last.kernel.clone(), img)
        };
        Ok(RunReport {
            iterations: self.records,
            init_params,
            initial_kernel,
            initial_image,
            final_kernel,
            final_image,
            target,
            alpha,
            alpha_estimated,
        })
    }
}
