//! Synthetic ground-truth kernels for simulation and benchmarking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::field::{check_kernel_shape, project_kernel, BlurKernel, Field2D};

/// Straight linear motion of `length` pixels at angle `theta` (radians,
/// counter-clockwise from the column axis), anti-aliased.
pub fn linear_motion_kernel(size: usize, length: f64, theta: f64) -> Result<BlurKernel> {
    check_size(size)?;
    if !(length >= 0.0 && length <= (size - 1) as f64) {
        return Err(invalid(format!("motion length {length} does not fit a {size}x{size} kernel")));
    }
    let samples = (length * 8.0).ceil().max(1.0) as usize;
    let points: Vec<(f64, f64)> = (0..=samples)
        .map(|i| {
            let t = if samples == 0 { 0.0 } else { i as f64 / samples as f64 - 0.5 } * length;
            (-t * theta.sin(), t * theta.cos())
        })
        .collect();
    splat(size, &points)
}

/// Smooth random camera-shake trajectory with total extent below `size`.
///
/// The path integrates a velocity whose direction drifts by Gaussian-like
/// increments; it is then recentered on its mean so the kernel has no net shift.
pub fn random_motion_kernel(size: usize, length: f64, seed: u64) -> Result<BlurKernel> {
    check_size(size)?;
    if !(length > 0.0) {
        return Err(invalid(format!("motion length must be > 0, got {length}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = 64usize;
    let ds = length / steps as f64;
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let mut turn = 0.0;
    let mut pos = (0.0f64, 0.0f64);
    let mut points = Vec::with_capacity(steps + 1);
    points.push(pos);
    for _ in 0..steps {
        // sum of uniforms: cheap bell-shaped increment
        let kick: f64 = (0..4).map(|_| rng.random_range(-0.5..0.5)).sum::<f64>() * 0.08;
        turn = 0.9 * turn + kick;
        heading += turn;
        pos = (pos.0 + ds * heading.sin(), pos.1 + ds * heading.cos());
        points.push(pos);
    }
    let n = points.len() as f64;
    let (cy, cx) = points.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let limit = (size / 2) as f64 - 0.5;
    let extent = points
        .iter()
        .map(|p| (p.0 - cy).abs().max((p.1 - cx).abs()))
        .fold(0.0, f64::max);
    let shrink = if extent > limit { limit / extent } else { 1.0 };
    let centered: Vec<(f64, f64)> = points
        .iter()
        .map(|p| ((p.0 - cy) * shrink, (p.1 - cx) * shrink))
        .collect();
    splat(size, &centered)
}

fn check_size(size: usize) -> Result<()> {
    check_kernel_shape(&Field2D::zeros(size.max(1), size.max(1)))?;
    if size == 0 {
        return Err(invalid("kernel size must be >= 1"));
    }
    Ok(())
}

/// Bilinear deposit of equal-weight points given as offsets from the center.
fn splat(size: usize, points: &[(f64, f64)]) -> Result<BlurKernel> {
    let c = (size / 2) as f64;
    let mut k = Field2D::zeros(size, size);
    let last = (size - 1) as f64;
    for &(dy, dx) in points {
        let (r, col) = ((c + dy).clamp(0.0, last), (c + dx).clamp(0.0, last));
        let (r0, c0) = (r.floor(), col.floor());
        let (fr, fc) = (r - r0, col - c0);
        let (r0, c0) = (r0 as usize, c0 as usize);
        let (r1, c1) = ((r0 + 1).min(size - 1), (c0 + 1).min(size - 1));
        let mut add = |rr: usize, cc: usize, w: f64| k.set(rr, cc, k.get(rr, cc) + w);
        add(r0, c0, (1.0 - fr) * (1.0 - fc));
        add(r0, c1, (1.0 - fr) * fc);
        add(r1, c0, fr * (1.0 - fc));
        add(r1, c1, fr * fc);
    }
    project_kernel(&k)
}
