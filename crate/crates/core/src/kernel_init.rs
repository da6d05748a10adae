//! Initial kernel: a tilted anisotropic Gaussian fitted from directional edge
//! sharpness of the denoised image.
//!
//! For each direction `phi` the steepest directional derivative `m(phi)` is
//! found. A blurred unit edge has peak slope inversely proportional to the blur
//! width, so the per-direction blur is read off as
//! `sigma(phi) = sqrt(max(c^2 / m(phi)^2 - b^2, sigma_min^2))`. The sharpest
//! direction gives the minor axis; the major axis is perpendicular to it.

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::field::{project_kernel, BlurKernel, Field2D};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBlurParams {
    pub sigma_major: f64,
    pub sigma_minor: f64,
    /// Major-axis tilt in `[0, pi)`, measured from the column (x) axis towards the row (y) axis.
    pub theta: f64,
}

impl GaussianBlurParams {
    pub fn new(sigma_major: f64, sigma_minor: f64, theta: f64) -> Result<Self> {
        if !(sigma_minor > 0.0 && sigma_major >= sigma_minor && sigma_major.is_finite()) {
            return Err(invalid(format!(
                "need sigma_major >= sigma_minor > 0, got ({sigma_major}, {sigma_minor})"
            )));
        }
        if !theta.is_finite() {
            return Err(invalid("theta must be finite"));
        }
        Ok(Self {
            sigma_major,
            sigma_minor,
            theta: theta.rem_euclid(PI),
        })
    }

    pub fn isotropic(sigma: f64) -> Result<Self> {
        Self::new(sigma, sigma, 0.0)
    }

    /// Smallest odd side covering three standard deviations of the major axis.
    pub fn recommended_size(&self) -> usize {
        2 * (3.0 * self.sigma_major).ceil() as usize + 1
    }
}

/// Constants of the slope-to-sigma rule.
///
/// A unit step blurred by a Gaussian of width `s` has peak slope
/// `1 / (sqrt(2 pi) s)`, hence `slope_constant` near `0.4`. `intrinsic_blur`
/// absorbs the width central differences report for a perfectly sharp step, so
/// unblurred edges land on `sigma_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    pub slope_constant: f64,
    pub intrinsic_blur: f64,
    pub sigma_min: f64,
    /// Number of sampled directions over `[0, pi)`.
    pub directions: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            slope_constant: 0.4,
            intrinsic_blur: 0.75,
            sigma_min: 0.3,
            directions: 36,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.slope_constant > 0.0 && self.intrinsic_blur >= 0.0 && self.sigma_min > 0.0) {
            return Err(invalid("init constants must be positive"));
        }
        if self.directions < 2 || !self.directions.is_multiple_of(2) {
            return Err(invalid("directions must be an even number >= 2"));
        }
        Ok(())
    }

    fn sigma_from_slope(&self, slope: f64) -> f64 {
        let floor = self.sigma_min * self.sigma_min;
        if slope <= 0.0 {
            return f64::INFINITY;
        }
        let s2 = (self.slope_constant / slope).powi(2) - self.intrinsic_blur.powi(2);
        s2.max(floor).sqrt()
    }
}

/// Central differences with edge replication, returned as `(d/dx, d/dy)`.
fn central_gradients(g: &Field2D) -> (Field2D, Field2D) {
    let (h, w) = g.dims();
    let gx = Field2D::from_fn(h, w, |r, c| {
        let l = c.saturating_sub(1);
        let rr = (c + 1).min(w - 1);
        (g.get(r, rr) - g.get(r, l)) / 2.0
    });
    let gy = Field2D::from_fn(h, w, |r, c| {
        let u = r.saturating_sub(1);
        let d = (r + 1).min(h - 1);
        (g.get(d, c) - g.get(u, c)) / 2.0
    });
    (gx, gy)
}

/// Peak absolute directional derivative for each of `n` directions `k pi / n`.
pub fn directional_slopes(g: &Field2D, n: usize) -> Vec<f64> {
    let (gx, gy) = central_gradients(g);
    (0..n)
        .map(|k| {
            let phi = k as f64 * PI / n as f64;
            let (cs, sn) = (phi.cos(), phi.sin());
            gx.as_slice()
                .iter()
                .zip(gy.as_slice())
                .fold(0.0f64, |m, (a, b)| m.max((cs * a + sn * b).abs()))
        })
        .collect()
}

pub fn estimate_gaussian_params(g: &Field2D, cfg: &InitConfig) -> Result<GaussianBlurParams> {
    cfg.validate()?;
    let (lo, hi) = (g.min(), g.max());
    if !(hi - lo > 1e-12) {
        return Err(Error::DegenerateInput(
            "cannot estimate blur from a constant image".into(),
        ));
    }
    let normalized = g.map(|v| (v - lo) / (hi - lo));
    let n = cfg.directions;
    let slopes = directional_slopes(&normalized, n);
    let sharpest = slopes
        .iter()
        .enumerate()
        .fold(0, |best, (k, &m)| if m > slopes[best] { k } else { best });
    let across = (sharpest + n / 2) % n;
    let sigma_minor = cfg.sigma_from_slope(slopes[sharpest]);
    let sigma_major = cfg.sigma_from_slope(slopes[across]);
    let theta = across as f64 * PI / n as f64;
    GaussianBlurParams::new(sigma_major.max(sigma_minor), sigma_minor, theta)
}

/// Samples `exp(-u^T S^-1 u / 2)` on an `size x size` grid and normalizes.
pub fn render_gaussian_kernel(p: &GaussianBlurParams, size: usize) -> Result<BlurKernel> {
    if size.is_multiple_of(2) {
        return Err(invalid(format!("kernel size must be odd, got {size}")));
    }
    if size < p.recommended_size() {
        log::warn!(
            "kernel size {size} truncates a Gaussian with sigma_major {:.2} (recommended {})",
            p.sigma_major,
            p.recommended_size()
        );
    }
    let r = (size / 2) as f64;
    let (cs, sn) = (p.theta.cos(), p.theta.sin());
    let (a2, b2) = (p.sigma_major.powi(2), p.sigma_minor.powi(2));
    let raw = Field2D::from_fn(size, size, |row, col| {
        let (dx, dy) = (col as f64 - r, row as f64 - r);
        let along = cs * dx + sn * dy;
        let across = -sn * dx + cs * dy;
        (-0.5 * (along * along / a2 + across * across / b2)).exp()
    });
    project_kernel(&raw)
}
