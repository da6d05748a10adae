//! Blur-preserving Poisson denoiser used as the target of the kernel loss.
//!
//! Counts are variance-stabilized with the Anscombe transform, smoothed with
//! Chambolle's dual-projection TV algorithm, mapped back and divided by the
//! photon level.

use crate::error::{invalid, Result};
use crate::field::Field2D;
use crate::poisson::PhotonLevel;

/// In Anscombe units, where the noise standard deviation is about 1.
pub const DEFAULT_TV_WEIGHT: f64 = 0.1;
pub const DEFAULT_TV_ITERATIONS: usize = 50;

/// Dual step of the projection iteration.
const TV_TAU: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DenoiseMode {
    #[default]
    AnscombeTv,
    /// `y / alpha`, clipped.
    Passthrough,
}

impl std::str::FromStr for DenoiseMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anscombe_tv" => Ok(Self::AnscombeTv),
            "passthrough" => Ok(Self::Passthrough),
            other => Err(invalid(format!("unknown denoise mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for DenoiseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::AnscombeTv => "anscombe_tv",
            Self::Passthrough => "passthrough",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseConfig {
    pub tv_weight: f64,
    pub tv_iterations: usize,
    pub mode: DenoiseMode,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            tv_weight: DEFAULT_TV_WEIGHT,
            tv_iterations: DEFAULT_TV_ITERATIONS,
            mode: DenoiseMode::AnscombeTv,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tv_weight >= 0.0 && self.tv_weight.is_finite()) {
            return Err(invalid(format!("tv_weight must be >= 0, got {}", self.tv_weight)));
        }
        if self.mode == DenoiseMode::AnscombeTv && self.tv_iterations == 0 {
            return Err(invalid("tv_iterations must be >= 1"));
        }
        Ok(())
    }
}

/// `2 sqrt(y + 3/8)`
pub fn anscombe(y: &Field2D) -> Result<Field2D> {
    if let Some(v) = y.as_slice().iter().find(|&&v| v < 0.0) {
        return Err(invalid(format!("anscombe: negative count {v}")));
    }
    Ok(y.map(|v| 2.0 * (v + 0.375).sqrt()))
}

/// Algebraic inverse `(z / 2)^2 - 3/8`.
pub fn inverse_anscombe(z: &Field2D) -> Field2D {
    z.map(|v| (v / 2.0).powi(2) - 0.375)
}

/// Forward differences with a zero difference across the last row/column.
fn gradient(u: &Field2D) -> (Field2D, Field2D) {
    let (h, w) = u.dims();
    let gx = Field2D::from_fn(h, w, |r, c| if c + 1 < w { u.get(r, c + 1) - u.get(r, c) } else { 0.0 });
    let gy = Field2D::from_fn(h, w, |r, c| if r + 1 < h { u.get(r + 1, c) - u.get(r, c) } else { 0.0 });
    (gx, gy)
}

/// Negative adjoint of [`gradient`].
fn divergence(px: &Field2D, py: &Field2D) -> Field2D {
    let (h, w) = px.dims();
    Field2D::from_fn(h, w, |r, c| {
        let dx = if w == 1 {
            0.0
        } else if c == 0 {
            px.get(r, c)
        } else if c + 1 == w {
            -px.get(r, c - 1)
        } else {
            px.get(r, c) - px.get(r, c - 1)
        };
        let dy = if h == 1 {
            0.0
        } else if r == 0 {
            py.get(r, c)
        } else if r + 1 == h {
            -py.get(r - 1, c)
        } else {
            py.get(r, c) - py.get(r - 1, c)
        };
        dx + dy
    })
}

/// Isotropic total variation with forward differences.
pub fn total_variation(u: &Field2D) -> f64 {
    let (gx, gy) = gradient(u);
    gx.as_slice()
        .iter()
        .zip(gy.as_slice())
        .map(|(a, b)| (a * a + b * b).sqrt())
        .sum()
}

/// Approximate minimizer of `1/2 ||u - z||^2 + weight TV(u)` after `iters`
/// Chambolle projection steps.
pub fn tv_denoise(z: &Field2D, weight: f64, iters: usize) -> Result<Field2D> {
    if !(weight >= 0.0 && weight.is_finite()) {
        return Err(invalid(format!("tv weight must be >= 0, got {weight}")));
    }
    if weight == 0.0 || iters == 0 {
        return Ok(z.clone());
    }
    let (h, w) = z.dims();
    let mut px = Field2D::zeros(h, w);
    let mut py = Field2D::zeros(h, w);
    let z_scaled = z.scale(1.0 / weight);
    for _ in 0..iters {
        let d = divergence(&px, &py).sub(&z_scaled);
        let (gx, gy) = gradient(&d);
        for i in 0..h * w {
            let (a, b) = (gx.as_slice()[i], gy.as_slice()[i]);
            let norm = 1.0 + TV_TAU * (a * a + b * b).sqrt();
            px.as_mut_slice()[i] = (px.as_slice()[i] + TV_TAU * a) / norm;
            py.as_mut_slice()[i] = (py.as_slice()[i] + TV_TAU * b) / norm;
        }
    }
    Ok(z.sub(&divergence(&px, &py).scale(weight)))
}

/// `G(y)`: an estimate of the blurred, noise-free image in `[0, 1]`.
pub fn denoise(y: &Field2D, alpha: PhotonLevel, cfg: &DenoiseConfig) -> Result<Field2D> {
    cfg.validate()?;
    let counts = match cfg.mode {
        DenoiseMode::Passthrough => y.clone(),
        DenoiseMode::AnscombeTv => {
            let z = anscombe(y)?;
            let smoothed = tv_denoise(&z, cfg.tv_weight, cfg.tv_iterations)?;
            inverse_anscombe(&smoothed)
        }
    };
    Ok(counts.scale(1.0 / alpha.get()).clamp(0.0, 1.0))
}
