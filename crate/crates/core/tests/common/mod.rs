//! Synthetic scenes shared by the integration tests.

#![allow(dead_code)]

use phodeconv::Field2D;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(h: usize, w: usize, seed: u64) -> Field2D {
    let mut r = rng(seed);
    Field2D::from_fn(h, w, |_, _| r.random::<f64>())
}

/// Shaded background, rectangles and disks with values in `[0.05, 0.95]`.
pub fn scene(size: usize, seed: u64) -> Field2D {
    let mut r = rng(seed);
    let (gy, gx) = (r.random_range(-0.3..0.3), r.random_range(-0.3..0.3));
    let mut img = Field2D::from_fn(size, size, |y, x| {
        0.45 + gy * (y as f64 / size as f64 - 0.5) + gx * (x as f64 / size as f64 - 0.5)
    });
    for i in 0..10 {
        let v = r.random_range(0.05..0.95);
        let (cy, cx) = (r.random_range(0..size) as f64, r.random_range(0..size) as f64);
        let rad = r.random_range(2.0..size as f64 / 5.0);
        let (hh, hw) = (r.random_range(2..size / 3), r.random_range(2..size / 3));
        for y in 0..size {
            for x in 0..size {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let inside = if i % 2 == 0 {
                    dy * dy + dx * dx <= rad * rad
                } else {
                    dy.abs() <= hh as f64 && dx.abs() <= hw as f64
                };
                if inside {
                    img.set(y, x, v);
                }
            }
        }
    }
    img.clamp(0.05, 0.95)
}
