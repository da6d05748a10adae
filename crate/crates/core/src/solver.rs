//! Differentiable non-blind Poisson deconvolution `F(y, h)`.
//!
//! The default solver unrolls `K` Richardson-Lucy iterations
//!
//! ```text
//! x_0     = mean(y) / alpha                       (flat)
//! b_t     = max(alpha * (h * x_t), eps)
//! x_{t+1} = x_t . corr(y / b_t, h)
//! ```
//!
//! and records every intermediate field so the exact gradient of a scalar loss
//! with respect to the kernel can be computed by replaying the recurrence in
//! reverse. The kernel is treated as an unconstrained array of reals here;
//! projection onto the simplex happens in the outer optimizer.
//!
//! [`Objective`] wraps a solver and evaluates the kernel loss
//! `L(h) = || g - h * F(y, h) ||^2` together with its gradient.

use crate::conv::{Boundary, ConvPlan};
use crate::error::{invalid, Result};
use crate::field::{
    check_kernel_shape, crop_center, embed_at, pad_symmetric, pad_symmetric_adjoint, BlurKernel,
    Field2D, Padding,
};
use crate::poisson::PhotonLevel;

/// Unroll depth used when nothing else is configured.
pub const DEFAULT_UNROLL_STEPS: usize = 8;
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Which unrolled iteration realizes `F`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub enum SolverMethod {
    #[default]
    RichardsonLucy,
    /// Fixed-step projected gradient descent on the Poisson NLL plus
    /// `ridge / 2 * ||x||^2`. The step is `step_scale * mean(y) / alpha^2`.
    ProjectedGradient { step_scale: f64, ridge: f64 },
}


impl SolverMethod {
    pub fn projected_gradient() -> Self {
        Self::ProjectedGradient {
            step_scale: 0.5,
            ridge: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub unroll_steps: usize,
    /// Lower bound on predicted intensities before division.
    pub epsilon: f64,
    pub boundary: Boundary,
    pub method: SolverMethod,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            unroll_steps: DEFAULT_UNROLL_STEPS,
            epsilon: DEFAULT_EPSILON,
            boundary: Boundary::Circular,
            method: SolverMethod::RichardsonLucy,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.unroll_steps == 0 {
            return Err(invalid("unroll_steps must be >= 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-3) {
            return Err(invalid(format!(
                "epsilon must lie in (0, 1e-3], got {}",
                self.epsilon
            )));
        }
        if let SolverMethod::ProjectedGradient { step_scale, ridge } = self.method {
            if !(step_scale > 0.0 && step_scale.is_finite()) || !(ridge >= 0.0 && ridge.is_finite()) {
                return Err(invalid("projected-gradient step_scale must be > 0 and ridge >= 0"));
            }
        }
        Ok(())
    }

    /// Builds the configured solver, wrapped for mirror boundaries if requested.
    pub fn build(&self) -> Result<Box<dyn DifferentiableSolver>> {
        self.validate()?;
        let inner: Box<dyn DifferentiableSolver> = match self.method {
            SolverMethod::RichardsonLucy => {
                Box::new(RichardsonLucy::new(self.unroll_steps, self.epsilon)?)
            }
            SolverMethod::ProjectedGradient { step_scale, ridge } => Box::new(
                ProjectedGradient::new(self.unroll_steps, self.epsilon, step_scale, ridge)?,
            ),
        };
        Ok(match self.boundary {
            Boundary::Circular => inner,
            Boundary::Symmetric => Box::new(MirrorPadded::new(inner)),
        })
    }
}

/// Maps an output-space cotangent back onto the kernel.
pub trait Pullback {
    /// Returns `J_h(F)^T x_bar`, shaped like the kernel.
    fn pullback(&self, x_bar: &Field2D) -> Result<Field2D>;
}

/// A non-blind solver `x = F(y, h)` with an exact vector-Jacobian product onto `h`.
///
/// Outputs are *unclipped*; callers clip for display.
pub trait DifferentiableSolver {
    fn forward(&self, y: &Field2D, h: &Field2D, alpha: PhotonLevel) -> Result<Field2D>;

    fn forward_vjp<'a>(
        &'a self,
        y: &Field2D,
        h: &Field2D,
        alpha: PhotonLevel,
    ) -> Result<(Field2D, Box<dyn Pullback + 'a>)>;
}

fn check_inputs(y: &Field2D, h: &Field2D) -> Result<()> {
    check_kernel_shape(h)?;
    let (rows, cols) = y.dims();
    if h.height() > rows || h.height() > cols {
        return Err(invalid(format!(
            "kernel side {} exceeds image {rows}x{cols}",
            h.height()
        )));
    }
    Ok(())
}

fn flat_start(y: &Field2D, alpha: PhotonLevel) -> Field2D {
    Field2D::filled(y.height(), y.width(), y.mean() / alpha.get())
}

// ---------------------------------------------------------------------------
// Richardson-Lucy
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct RichardsonLucy {
    steps: usize,
    epsilon: f64,
}

/// One recorded RL step.
#[derive(Debug, Clone)]
pub struct RlStep {
    /// iterate entering the step
    pub x: Field2D,
    /// guarded prediction `max(alpha (h * x), eps)`
    pub denom: Field2D,
    /// `y / denom`
    pub ratio: Field2D,
    /// `corr(ratio, h)`, the multiplicative update
    pub update: Field2D,
}

/// Everything the reverse pass needs: the observation, the plan and all steps.
pub struct UnrollTape {
    y: Field2D,
    alpha: f64,
    epsilon: f64,
    plan: ConvPlan,
    steps: Vec<RlStep>,
}

impl UnrollTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[RlStep] {
        &self.steps
    }

    /// Recomputes the solver output from the recorded last step.
    pub fn replay_output(&self) -> Field2D {
        let last = self.steps.last().expect("tape has at least one step");
        last.x.mul(&last.update)
    }
}

impl RichardsonLucy {
    pub fn new(steps: usize, epsilon: f64) -> Result<Self> {
        SolverConfig {
            unroll_steps: steps,
            epsilon,
            ..Default::default()
        }
        .validate()?;
        Ok(Self { steps, epsilon })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn forward_with_tape(
        &self,
        y: &Field2D,
        h: &Field2D,
        alpha: PhotonLevel,
    ) -> Result<(Field2D, UnrollTape)> {
        check_inputs(y, h)?;
        let plan = ConvPlan::new(h, y.height(), y.width())?;
        let a = alpha.get();
        let eps = self.epsilon;
        let mut x = flat_start(y, alpha);
        let mut steps = Vec::with_capacity(self.steps);
        for _ in 0..self.steps {
            let denom = plan.convolve(&x)?.map(|v| (a * v).max(eps));
            let ratio = y.zip_map(&denom, |yi, d| yi / d);
            let update = plan.correlate(&ratio)?;
            let next = x.mul(&update);
            steps.push(RlStep {
                x,
                denom,
                ratio,
                update,
            });
            x = next;
        }
        let tape = UnrollTape {
            y: y.clone(),
            alpha: a,
            epsilon: eps,
            plan,
            steps,
        };
        Ok((x, tape))
    }

    /// Reverse pass: gradient with respect to `h` given the cotangent of `x_K`.
    pub fn backward(&self, tape: &UnrollTape, x_bar: &Field2D) -> Result<Field2D> {
        let plan = &tape.plan;
        let (a, eps) = (tape.alpha, tape.epsilon);
        let m = plan.kernel_size();
        let mut h_bar = Field2D::zeros(m, m);
        let mut x_bar = x_bar.clone();
        for step in tape.steps.iter().rev() {
            // x_{t+1} = x_t . update
            let update_bar = x_bar.mul(&step.x);
            let mut x_prev_bar = x_bar.mul(&step.update);
            // update = corr(ratio, h)
            let ratio_bar = plan.convolve(&update_bar)?;
            h_bar.axpy(1.0, &plan.kernel_vjp(&update_bar, &step.ratio)?);
            // ratio = y / denom, denom = max(a (h * x), eps)
            let pred_bar = Field2D::from_fn(step.x.height(), step.x.width(), |r, c| {
                let d = step.denom.get(r, c);
                if d > eps {
                    -ratio_bar.get(r, c) * tape.y.get(r, c) / (d * d) * a
                } else {
                    0.0
                }
            });
            x_prev_bar.axpy(1.0, &plan.correlate(&pred_bar)?);
            h_bar.axpy(1.0, &plan.kernel_vjp(&step.x, &pred_bar)?);
            x_bar = x_prev_bar;
        }
        Ok(h_bar)
    }
}

struct RlPullback<'a> {
    solver: &'a RichardsonLucy,
    tape: UnrollTape,
}

impl Pullback for RlPullback<'_> {
    fn pullback(&self, x_bar: &Field2D) -> Result<Field2D> {
        self.solver.backward(&self.tape, x_bar)
    }
}

impl DifferentiableSolver for RichardsonLucy {
    fn forward(&self, y: &Field2D, h: &Field2D, alpha: PhotonLevel) -> Result<Field2D> {
        check_inputs(y, h)?;
        let plan = ConvPlan::new(h, y.height(), y.width())?;
        let a = alpha.get();
        let mut x = flat_start(y, alpha);
        for _ in 0..self.steps {
            let denom = plan.convolve(&x)?.map(|v| (a * v).max(self.epsilon));
            let ratio = y.zip_map(&denom, |yi, d| yi / d);
            x = x.mul(&plan.correlate(&ratio)?);
        }
        Ok(x)
    }

    fn forward_vjp<'a>(
        &'a self,
        y: &Field2D,
        h: &Field2D,
        alpha: PhotonLevel,
    ) -> Result<(Field2D, Box<dyn Pullback + 'a>)> {
        let (x, tape) = self.forward_with_tape(y, h, alpha)?;
        Ok((x, Box::new(RlPullback { solver: self, tape })))
    }
}

// ---------------------------------------------------------------------------
// Projected gradient on the Poisson NLL
// ---------------------------------------------------------------------------

/// `x_{t+1} = max(x_t - eta (alpha corr(1 - y / b_t, h) + ridge x_t), 0)` with
/// `b_t = max(alpha (h * x_t), eps)`.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedGradient {
    steps: usize,
    epsilon: f64,
    step_scale: f64,
    ridge: f64,
}

struct PgStep {
    x: Field2D,
    denom: Field2D,
    resid: Field2D,
    /// pre-projection value
    pre: Field2D,
}

struct PgPullback {
    y: Field2D,
    alpha: f64,
    epsilon: f64,
    eta: f64,
    ridge: f64,
    plan: ConvPlan,
    steps: Vec<PgStep>,
}

impl ProjectedGradient {
    pub fn new(steps: usize, epsilon: f64, step_scale: f64, ridge: f64) -> Result<Self> {
        SolverConfig {
            unroll_steps: steps,
            epsilon,
            method: SolverMethod::ProjectedGradient { step_scale, ridge },
            ..Default::default()
        }
        .validate()?;
        Ok(Self {
            steps,
            epsilon,
            step_scale,
            ridge,
        })
    }

    fn eta(&self, y: &Field2D, alpha: f64) -> f64 {
        self.step_scale * y.mean() / (alpha * alpha)
    }

    fn run(&self, y: &Field2D, h: &Field2D, alpha: PhotonLevel) -> Result<(Field2D, PgPullback)> {
        check_inputs(y, h)?;
        let plan = ConvPlan::new(h, y.height(), y.width())?;
        let a = alpha.get();
        let eta = self.eta(y, a);
        let mut x = flat_start(y, alpha);
        let mut steps = Vec::with_capacity(self.steps);
        for _ in 0..self.steps {
            let denom = plan.convolve(&x)?.map(|v| (a * v).max(self.epsilon));
            let resid = y.zip_map(&denom, |yi, d| 1.0 - yi / d);
            let grad = plan.correlate(&resid)?;
            let pre = Field2D::from_fn(x.height(), x.width(), |r, c| {
                let xv = x.get(r, c);
                xv - eta * (a * grad.get(r, c) + self.ridge * xv)
            });
            let next = pre.map(|v| v.max(0.0));
            steps.push(PgStep {
                x,
                denom,
                resid,
                pre,
            });
            x = next;
        }
        let pb = PgPullback {
            y: y.clone(),
            alpha: a,
            epsilon: self.epsilon,
            eta,
            ridge: self.ridge,
            plan,
            steps,
        };
        Ok((x, pb))
    }
}

impl Pullback for PgPullback {
    fn pullback(&self, x_bar: &Field2D) -> Result<Field2D> {
        let plan = &self.plan;
        let m = plan.kernel_size();
        let mut h_bar = Field2D::zeros(m, m);
        let mut x_bar = x_bar.clone();
        for step in self.steps.iter().rev() {
            let pre_bar = x_bar.zip_map(&step.pre, |g, p| if p > 0.0 { g } else { 0.0 });
            let mut x_prev_bar = pre_bar.scale(1.0 - self.eta * self.ridge);
            // grad = corr(resid, h), weighted by -eta * alpha
            let grad_bar = pre_bar.scale(-self.eta * self.alpha);
            let resid_bar = plan.convolve(&grad_bar)?;
            h_bar.axpy(1.0, &plan.kernel_vjp(&grad_bar, &step.resid)?);
            // resid = 1 - y / denom
            let pred_bar = Field2D::from_fn(step.x.height(), step.x.width(), |r, c| {
                let d = step.denom.get(r, c);
                if d > self.epsilon {
                    resid_bar.get(r, c) * self.y.get(r, c) / (d * d) * self.alpha
                } else {
                    0.0
                }
            });
            x_prev_bar.axpy(1.0, &plan.correlate(&pred_bar)?);
            h_bar.axpy(1.0, &plan.kernel_vjp(&step.x, &pred_bar)?);
            x_bar = x_prev_bar;
        }
        Ok(h_bar)
    }
}

impl DifferentiableSolver for ProjectedGradient {
    fn forward(&self, y: &Field2D, h: &Field2D, alpha: PhotonLevel) -> Result<Field2D> {
        Ok(self.run(y, h, alpha)?.0)
    }

    fn forward_vjp<'a>(
        &'a self,
        y: &Field2D,
        h: &Field2D,
        alpha: PhotonLevel,
    ) -> Result<(Field2D, Box<dyn Pullback + 'a>)> {
        let (x, pb) = self.run(y, h, alpha)?;
        Ok((x, Box::new(pb)))
    }
}

// ---------------------------------------------------------------------------
// Adapters
// ---------------------------------------------------------------------------

/// Runs the inner solver on a mirror-padded observation and crops the result.
pub struct MirrorPadded<S> {
    inner: S,
}

impl<S: DifferentiableSolver> MirrorPadded<S> {
    pub fn new(inner: S) -> Self {
        Self { inner }
    }
}

struct PaddedPullback<'a> {
    inner: Box<dyn Pullback + 'a>,
    pad: usize,
    padded_dims: (usize, usize),
}

impl Pullback for PaddedPullback<'_> {
    fn pullback(&self, x_bar: &Field2D) -> Result<Field2D> {
        let (ph, pw) = self.padded_dims;
        let full = embed_at(x_bar, self.pad, self.pad, ph, pw);
        self.inner.pullback(&full)
    }
}

impl<S: DifferentiableSolver> DifferentiableSolver for MirrorPadded<S> {
    fn forward(&self, y: &Field2D, h: &Field2D, alpha: PhotonLevel) -> Result<Field2D> {
        check_inputs(y, h)?;
        let padded = pad_symmetric(y, Padding::uniform(h.height() / 2))?;
        let x = self.inner.forward(&padded, h, alpha)?;
        crop_center(&x, y.height(), y.width())
    }

    fn forward_vjp<'a>(
        &'a self,
        y: &Field2D,
        h: &Field2D,
        alpha: PhotonLevel,
    ) -> Result<(Field2D, Box<dyn Pullback + 'a>)> {
        check_inputs(y, h)?;
        let pad = h.height() / 2;
        let padded = pad_symmetric(y, Padding::uniform(pad))?;
        let (x, inner) = self.inner.forward_vjp(&padded, h, alpha)?;
        let cropped = crop_center(&x, y.height(), y.width())?;
        Ok((
            cropped,
            Box::new(PaddedPullback {
                inner,
                pad,
                padded_dims: padded.dims(),
            }),
        ))
    }
}

impl<S: DifferentiableSolver + ?Sized> DifferentiableSolver for Box<S> {
    fn forward(&self, y: &Field2D, h: &Field2D, alpha: PhotonLevel) -> Result<Field2D> {
        (**self).forward(y, h, alpha)
    }

    fn forward_vjp<'a>(
        &'a self,
        y: &Field2D,
        h: &Field2D,
        alpha: PhotonLevel,
    ) -> Result<(Field2D, Box<dyn Pullback + 'a>)> {
        (**self).forward_vjp(y, h, alpha)
    }
}

/// Treats the inner solver's output as a constant: its pullback is zero.
///
/// Useful for ablations, and as a known-wrong gradient for checking that the
/// finite-difference conformance test catches missing terms.
pub struct StopGradient<S> {
    inner: S,
}

impl<S: DifferentiableSolver> StopGradient<S> {
    pub fn new(inner: S) -> Self {
        Self { inner }
    }
}

struct ZeroPullback(usize);

impl Pullback for ZeroPullback {
    fn pullback(&self, _x_bar: &Field2D) -> Result<Field2D> {
        Ok(Field2D::zeros(self.0, self.0))
    }
}

impl<S: DifferentiableSolver> DifferentiableSolver for StopGradient<S> {
    fn forward(&self, y: &Field2D, h: &Field2D, alpha: PhotonLevel) -> Result<Field2D> {
        self.inner.forward(y, h, alpha)
    }

    fn forward_vjp<'a>(
        &'a self,
        y: &Field2D,
        h: &Field2D,
        alpha: PhotonLevel,
    ) -> Result<(Field2D, Box<dyn Pullback + 'a>)> {
        let x = self.inner.forward(y, h, alpha)?;
        Ok((x, Box::new(ZeroPullback(h.height()))))
    }
}

// ---------------------------------------------------------------------------
// Kernel loss
// ---------------------------------------------------------------------------

/// Result of one loss evaluation with gradient.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub grad: Field2D,
    /// unclipped solver output at this kernel
    pub image: Field2D,
}

/// `L(h) = || g - h * F(y, h) ||^2` for a fixed observation and target.
pub struct Objective<'d, S> {
    solver: S,
    boundary: Boundary,
    y: &'d Field2D,
    target: &'d Field2D,
    alpha: PhotonLevel,
}

impl<'d, S: DifferentiableSolver> Objective<'d, S> {
    /// `boundary` applies to the outer reblurring `h * F(y, h)`; the solver handles
    /// its own borders.
    pub fn new(
        solver: S,
        boundary: Boundary,
        y: &'d Field2D,
        target: &'d Field2D,
        alpha: PhotonLevel,
    ) -> Result<Self> {
        y.check_same_dims(target)?;
        Ok(Self {
            solver,
            boundary,
            y,
            target,
            alpha,
        })
    }

    pub fn alpha(&self) -> PhotonLevel {
        self.alpha
    }

    pub fn pixels(&self) -> usize {
        self.y.len()
    }

    fn reblur(&self, x: &Field2D, h: &Field2D) -> Result<Field2D> {
        match self.boundary {
            Boundary::Circular => ConvPlan::new(h, x.height(), x.width())?.convolve(x),
            Boundary::Symmetric => crate::conv::convolve_symmetric(x, h),
        }
    }

    /// Unclipped solver output.
    pub fn solve_raw(&self, h: &Field2D) -> Result<Field2D> {
        self.solver.forward(self.y, h, self.alpha)
    }

    pub fn loss(&self, h: &Field2D) -> Result<f64> {
        let x = self.solve_raw(h)?;
        let pred = self.reblur(&x, h)?;
        Ok(self.target.sub(&pred).sum_squares())
    }

    pub fn loss_and_grad(&self, h: &Field2D) -> Result<LossEval> {
        let (x, pullback) = self.solver.forward_vjp(self.y, h, self.alpha)?;
        let m = h.height();
        let (x_bar, mut h_bar, loss) = match self.boundary {
            Boundary::Circular => {
                let plan = ConvPlan::new(h, x.height(), x.width())?;
                let resid = plan.convolve(&x)?.sub(self.target);
                let loss = resid.sum_squares();
                let z = resid.scale(2.0);
                (plan.correlate(&z)?, plan.kernel_vjp(&x, &z)?, loss)
            }
            Boundary::Symmetric => {
                let (rows, cols) = x.dims();
                let pad = Padding::uniform(m / 2);
                let xp = pad_symmetric(&x, pad)?;
                let plan = ConvPlan::new(h, xp.height(), xp.width())?;
                let full = plan.convolve(&xp)?;
                let resid = crop_center(&full, rows, cols)?.sub(self.target);
                let loss = resid.sum_squares();
                let z = embed_at(&resid.scale(2.0), m / 2, m / 2, xp.height(), xp.width());
                let x_bar = pad_symmetric_adjoint(&plan.correlate(&z)?, pad)?;
                (x_bar, plan.kernel_vjp(&xp, &z)?, loss)
            }
        };
        h_bar.axpy(1.0, &pullback.pullback(&x_bar)?);
        Ok(LossEval {
            loss,
            grad: h_bar,
            image: x,
        })
    }

    /// Central differences on the unconstrained loss, one kernel entry at a time.
    pub fn fd_grad(&self, h: &Field2D, step: f64) -> Result<Field2D> {
        if !(1e-7..=1e-3).contains(&step) {
            return Err(invalid(format!("finite-difference step {step} outside [1e-7, 1e-3]")));
        }
        let m = h.height();
        let mut grad = Field2D::zeros(m, m);
        for r in 0..m {
            for c in 0..m {
                let mut plus = h.clone();
                plus.set(r, c, h.get(r, c) + step);
                let mut minus = h.clone();
                minus.set(r, c, h.get(r, c) - step);
                let d = (self.loss(&plus)? - self.loss(&minus)?) / (2.0 * step);
                grad.set(r, c, d);
            }
        }
        Ok(grad)
    }
}

fn objective<'d>(
    y: &'d Field2D,
    g: &'d Field2D,
    alpha: PhotonLevel,
    cfg: &SolverConfig,
) -> Result<Objective<'d, Box<dyn DifferentiableSolver>>> {
    Objective::new(cfg.build()?, cfg.boundary, y, g, alpha)
}

/// `F(y, h)` clipped to `[0, 1]`.
pub fn solve(y: &Field2D, h: &BlurKernel, alpha: PhotonLevel, cfg: &SolverConfig) -> Result<Field2D> {
    let x = cfg.build()?.forward(y, h, alpha)?;
    Ok(x.clamp(0.0, 1.0))
}

pub fn loss_value(
    y: &Field2D,
    g: &Field2D,
    h: &Field2D,
    alpha: PhotonLevel,
    cfg: &SolverConfig,
) -> Result<f64> {
    objective(y, g, alpha, cfg)?.loss(h)
}

pub fn loss_and_grad(
    y: &Field2D,
    g: &Field2D,
    h: &Field2D,
    alpha: PhotonLevel,
    cfg: &SolverConfig,
) -> Result<(f64, Field2D)> {
    let e = objective(y, g, alpha, cfg)?.loss_and_grad(h)?;
    Ok((e.loss, e.grad))
}

pub fn fd_grad_oracle(
    y: &Field2D,
    g: &Field2D,
    h: &Field2D,
    alpha: PhotonLevel,
    cfg: &SolverConfig,
    step: f64,
) -> Result<Field2D> {
    objective(y, g, alpha, cfg)?.fd_grad(h, step)
}

/// `max|a - b| / max|b|`, the error measure used for gradient checks.
pub fn max_rel_error(a: &Field2D, b: &Field2D) -> f64 {
    let scale = b.max_abs();
    let diff = a.sub(b).max_abs();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Compares the analytic gradient of `obj` with central differences at `h`.
pub fn gradient_check<S: DifferentiableSolver>(
    obj: &Objective<'_, S>,
    h: &Field2D,
    step: f64,
) -> Result<f64> {
    let analytic = obj.loss_and_grad(h)?.grad;
    let numeric = obj.fd_grad(h, step)?;
    Ok(max_rel_error(&analytic, &numeric))
}

/// Squared residual `|| g - h * x ||^2` for a given image, with the requested boundary.
pub fn reblur_residual(x: &Field2D, g: &Field2D, h: &Field2D, boundary: Boundary) -> Result<f64> {
    x.check_same_dims(g)?;
    let pred = match boundary {
        Boundary::Circular => crate::conv::convolve_circular(x, h)?,
        Boundary::Symmetric => crate::conv::convolve_symmetric(x, h)?,
    };
    Ok(g.sub(&pred).sum_squares())
}
