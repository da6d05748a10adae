//! Seeded random fields shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::{project_kernel, BlurKernel, Field2D};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_field(h: usize, w: usize, seed: u64) -> Field2D {
    let mut r = rng(seed);
    Field2D::from_fn(h, w, |_, _| r.random::<f64>())
}

pub fn random_kernel(m: usize, seed: u64) -> BlurKernel {
    project_kernel(&uniform_field(m, m, seed).map(|v| v + 0.05)).unwrap()
}

/// Smooth-ish test image in [0, 1] with a few edges.
pub fn blocks_image(h: usize, w: usize, seed: u64) -> Field2D {
    let mut r = rng(seed);
    let mut img = Field2D::filled(h, w, 0.2);
    for _ in 0..6 {
        let r0 = r.random_range(0..h);
        let c0 = r.random_range(0..w);
        let rh = r.random_range(2..=h / 2 + 2);
        let cw = r.random_range(2..=w / 2 + 2);
        let v = r.random_range(0.1..0.9);
        for rr in r0..(r0 + rh).min(h) {
            for cc in c0..(c0 + cw).min(w) {
                img.set(rr, cc, v);
            }
        }
    }
    img
}
