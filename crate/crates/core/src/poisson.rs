//! Poisson forward model `y ~ Poisson(alpha * (h * x))`, its negative
//! log-likelihood, and the photon-level heuristic for raw captures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::conv::convolve_circular;
use crate::error::{invalid, Error, Result};
use crate::field::Field2D;

/// Default `beta` in `alpha_hat = sum(y) / (beta N)`.
pub const DEFAULT_BETA: f64 = 0.33;

/// Mean photon count per unit of normalized intensity.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PhotonLevel(f64);

impl PhotonLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(invalid(format!("photon level must be > 0, got {alpha}")));
        }
        Ok(Self(alpha))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl std::fmt::Display for PhotonLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Means below this use sequential-search inversion, above it PTRS.
const INVERSION_LIMIT: f64 = 30.0;

/// Draws one Poisson variate.
///
/// Small means use inversion by sequential search; larger means use Hörmann's
/// transformed rejection with squeeze (PTRS). Both are exact samplers.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    debug_assert!(mean >= 0.0 && mean.is_finite());
    if mean <= 0.0 {
        return 0;
    }
    if mean < INVERSION_LIMIT {
        sample_inversion(rng, mean)
    } else {
        sample_ptrs(rng, mean)
    }
}

fn sample_inversion<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
        // round-off guard: the tail mass left is below double precision
        if p < f64::EPSILON * 1e-3 && k as f64 > mean {
            break;
        }
    }
    k
}

fn sample_ptrs<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    let slam = mean.sqrt();
    let loglam = mean.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -mean + k * loglam - ln_gamma(k + 1.0);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// Poisson counts with per-pixel mean `mean`, reproducible for a given seed.
pub fn sample_field(mean: &Field2D, seed: u64) -> Result<Field2D> {
    if let Some(m) = mean.as_slice().iter().find(|&&m| m < 0.0) {
        return Err(Error::NonFinite(format!("negative Poisson mean {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = mean
        .as_slice()
        .iter()
        .map(|&m| sample_poisson(&mut rng, m) as f64)
        .collect();
    Field2D::new(mean.height(), mean.width(), counts)
}

/// `y = Poisson(alpha * (h * x))` with circular convolution.
pub fn simulate(x: &Field2D, h: &Field2D, alpha: PhotonLevel, seed: u64) -> Result<Field2D> {
    let blurred = convolve_circular(x, h)?;
    // FFT round-off can leave tiny negatives where the blurred image is zero
    let mean = blurred.map(|v| alpha.get() * v.max(0.0));
    sample_field(&mean, seed)
}

/// `sum(lam) - sum(y log lam)`, with `0 log 0 = 0`.
///
/// Returns `+inf` when some pixel has `y > 0` but `lam = 0`.
pub fn poisson_nll(y: &Field2D, lam: &Field2D) -> Result<f64> {
    y.check_same_dims(lam)?;
    let mut total = 0.0;
    for (&yi, &li) in y.as_slice().iter().zip(lam.as_slice()) {
        if li < 0.0 {
            return Err(invalid(format!("negative intensity {li}")));
        }
        total += li;
        if yi != 0.0 {
            if li == 0.0 {
                return Ok(f64::INFINITY);
            }
            total -= yi * li.ln();
        }
    }
    Ok(total)
}

/// `alpha_hat = sum(y) / (beta N)`.
pub fn estimate_photon_level(y: &Field2D, beta: f64) -> Result<PhotonLevel> {
    if !(beta > 0.0) {
        return Err(invalid(format!("beta must be > 0, got {beta}")));
    }
    let total = y.sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateInput(
            "cannot estimate photon level from an all-zero image".into(),
        ));
    }
    PhotonLevel::new(total / (beta * y.len() as f64))
}
