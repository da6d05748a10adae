//! Circular 2-D convolution and correlation through the FFT.
//!
//! Kernel convention: a kernel of side `M = 2r + 1` has its center pixel at
//! index `(r, r)`, which is the zero displacement. Entry `(a, b)` therefore acts at
//! displacement `(a - r, b - r)`:
//!
//! ```text
//! (h * x)(i, j) = sum_{a,b} h(a, b) x(i - (a - r), j - (b - r))      (indices mod dims)
//! ```
//!
//! so the delta kernel is the exact identity.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};
use crate::field::{check_kernel_shape, crop_center, pad_symmetric, Field2D, Padding};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Row/column FFT plans for one image size.
#[derive(Clone)]
pub struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            Self {
                height,
                width,
                row_fwd: p.plan_fft_forward(width),
                row_inv: p.plan_fft_inverse(width),
                col_fwd: p.plan_fft_forward(height),
                col_inv: p.plan_fft_inverse(height),
            }
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.height, self.width);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(buf);
        let mut t = transpose(buf, h, w);
        col.process(&mut t);
        let back = transpose(&t, w, h);
        buf.copy_from_slice(&back);
    }

    pub fn forward(&self, img: &Field2D) -> Vec<Complex64> {
        debug_assert_eq!(img.dims(), self.dims());
        let mut buf: Vec<Complex64> = img.as_slice().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        buf
    }

    /// Inverse transform keeping the real part, normalized by `1 / (H W)`.
    pub fn inverse_real(&self, mut spec: Vec<Complex64>) -> Field2D {
        self.transform(&mut spec, true);
        let norm = 1.0 / (self.height * self.width) as f64;
        Field2D::from_raw(
            self.height,
            self.width,
            spec.into_iter().map(|c| c.re * norm).collect(),
        )
    }
}

fn transpose(buf: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); h * w];
    for r in 0..h {
        for c in 0..w {
            out[c * h + r] = buf[r * w + c];
        }
    }
    out
}

fn check_kernel_fits(kernel: &Field2D, h: usize, w: usize) -> Result<()> {
    check_kernel_shape(kernel)?;
    let m = kernel.height();
    if m > h || m > w {
        return Err(invalid(format!(
            "kernel side {m} exceeds image dimensions {h}x{w}"
        )));
    }
    Ok(())
}

/// Places the kernel on an `h x w` grid with its center at `(0, 0)`.
fn embed_kernel(kernel: &Field2D, h: usize, w: usize) -> Field2D {
    let r = (kernel.height() / 2) as isize;
    let mut grid = Field2D::zeros(h, w);
    for a in 0..kernel.height() {
        let gr = (a as isize - r).rem_euclid(h as isize) as usize;
        for b in 0..kernel.width() {
            let gc = (b as isize - r).rem_euclid(w as isize) as usize;
            grid.set(gr, gc, kernel.get(a, b));
        }
    }
    grid
}

/// Frequency-domain kernel prepared for a fixed image size.
#[derive(Clone)]
pub struct ConvPlan {
    fft: Fft2,
    kernel_size: usize,
    spectrum: Vec<Complex64>,
}

impl ConvPlan {
    pub fn new(kernel: &Field2D, height: usize, width: usize) -> Result<Self> {
        check_kernel_fits(kernel, height, width)?;
        let fft = Fft2::new(height, width);
        let spectrum = fft.forward(&embed_kernel(kernel, height, width));
        Ok(Self {
            fft,
            kernel_size: kernel.height(),
            spectrum,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.fft.dims()
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    fn check(&self, img: &Field2D) -> Result<()> {
        if img.dims() != self.dims() {
            return Err(invalid(format!(
                "plan built for {:?}, image is {:?}",
                self.dims(),
                img.dims()
            )));
        }
        Ok(())
    }

    pub fn convolve(&self, img: &Field2D) -> Result<Field2D> {
        self.check(img)?;
        let mut s = self.fft.forward(img);
        for (a, k) in s.iter_mut().zip(&self.spectrum) {
            *a *= k;
        }
        Ok(self.fft.inverse_real(s))
    }

    /// Convolution with the 180-degree rotated kernel; the adjoint of [`Self::convolve`].
    pub fn correlate(&self, img: &Field2D) -> Result<Field2D> {
        self.check(img)?;
        let mut s = self.fft.forward(img);
        for (a, k) in s.iter_mut().zip(&self.spectrum) {
            *a *= k.conj();
        }
        Ok(self.fft.inverse_real(s))
    }

    /// Gradient of `<z, h * x>` with respect to every kernel entry:
    /// `g(a, b) = sum_i z(i) x(i - d(a, b))`.
    pub fn kernel_vjp(&self, x: &Field2D, z: &Field2D) -> Result<Field2D> {
        self.check(x)?;
        self.check(z)?;
        kernel_vjp_with(&self.fft, x, z, self.kernel_size)
    }
}

fn kernel_vjp_with(fft: &Fft2, x: &Field2D, z: &Field2D, size: usize) -> Result<Field2D> {
    let (h, w) = fft.dims();
    let xs = fft.forward(x);
    let mut zs = fft.forward(z);
    for (a, b) in zs.iter_mut().zip(&xs) {
        *a *= b.conj();
    }
    let xcorr = fft.inverse_real(zs);
    let r = (size / 2) as isize;
    Ok(Field2D::from_fn(size, size, |a, b| {
        let gr = (a as isize - r).rem_euclid(h as isize) as usize;
        let gc = (b as isize - r).rem_euclid(w as isize) as usize;
        xcorr.get(gr, gc)
    }))
}

/// Gradient of `<z, h * x>` with respect to a `size x size` kernel (circular boundary).
pub fn kernel_vjp(x: &Field2D, z: &Field2D, size: usize) -> Result<Field2D> {
    x.check_same_dims(z)?;
    let (h, w) = x.dims();
    if size.is_multiple_of(2) || size > h || size > w {
        return Err(invalid(format!("bad kernel size {size} for {h}x{w}")));
    }
    kernel_vjp_with(&Fft2::new(h, w), x, z, size)
}

pub fn convolve_circular(img: &Field2D, kernel: &Field2D) -> Result<Field2D> {
    ConvPlan::new(kernel, img.height(), img.width())?.convolve(img)
}

pub fn correlate_circular(img: &Field2D, kernel: &Field2D) -> Result<Field2D> {
    ConvPlan::new(kernel, img.height(), img.width())?.correlate(img)
}

/// Nested-sum periodic convolution. Quadratic cost; meant as a reference for small inputs.
pub fn direct_convolve_oracle(img: &Field2D, kernel: &Field2D) -> Result<Field2D> {
    let (h, w) = img.dims();
    check_kernel_fits(kernel, h, w)?;
    let m = kernel.height();
    let r = (m / 2) as isize;
    let (hi, wi) = (h as isize, w as isize);
    Ok(Field2D::from_fn(h, w, |i, j| {
        let mut acc = 0.0;
        for a in 0..m {
            let sr = (i as isize - (a as isize - r)).rem_euclid(hi) as usize;
            for b in 0..m {
                let sc = (j as isize - (b as isize - r)).rem_euclid(wi) as usize;
                acc += kernel.get(a, b) * img.get(sr, sc);
            }
        }
        acc
    }))
}

/// Convolution with mirror-extended borders: pad by `(M - 1) / 2`, convolve
/// circularly, crop back to the input size.
pub fn convolve_symmetric(img: &Field2D, kernel: &Field2D) -> Result<Field2D> {
    let (h, w) = img.dims();
    check_kernel_fits(kernel, h, w)?;
    let padded = pad_symmetric(img, Padding::uniform(kernel.height() / 2))?;
    let full = convolve_circular(&padded, kernel)?;
    crop_center(&full, h, w)
}

/// How image borders are treated by the solvers and the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    Circular,
    Symmetric,
}

impl std::str::FromStr for Boundary {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circular" => Ok(Self::Circular),
            "symmetric" => Ok(Self::Symmetric),
            other => Err(invalid(format!("unknown boundary mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Circular => "circular",
            Self::Symmetric => "symmetric",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::BlurKernel;

    fn lcg_field(h: usize, w: usize, seed: u64) -> Field2D {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Field2D::from_fn(h, w, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    fn rel_err(a: &Field2D, b: &Field2D) -> f64 {
        a.sub(b).max_abs() / b.max_abs().max(1e-300)
    }

    #[test]
    fn delta_is_identity() {
        let x = lcg_field(6, 9, 1);
        let d = BlurKernel::delta(5).unwrap();
        assert!(convolve_circular(&x, &d).unwrap().sub(&x).max_abs() < 1e-10);
        assert!(correlate_circular(&x, &d).unwrap().sub(&x).max_abs() < 1e-10);
        assert_eq!(direct_convolve_oracle(&x, &d).unwrap(), x);
        assert!(convolve_symmetric(&x, &d).unwrap().sub(&x).max_abs() < 1e-10);
    }

    #[test]
    fn constants_preserved() {
        let k = crate::field::project_kernel(&lcg_field(3, 3, 4)).unwrap();
        let c = Field2D::filled(7, 5, 0.37);
        assert!(convolve_circular(&c, &k).unwrap().sub(&c).max_abs() < 1e-12);
        assert!(convolve_symmetric(&c, &k).unwrap().sub(&c).max_abs() < 1e-12);
    }

    #[test]
    fn fft_matches_direct_on_small_case() {
        let x = lcg_field(4, 4, 7);
        let k = crate::field::project_kernel(&lcg_field(3, 3, 8)).unwrap();
        let fast = convolve_circular(&x, &k).unwrap();
        let slow = direct_convolve_oracle(&x, &k).unwrap();
        assert!(rel_err(&fast, &slow) < 1e-10);
    }

    #[test]
    fn single_pixel_image() {
        let x = Field2D::filled(1, 1, 0.8);
        let k = BlurKernel::delta(1).unwrap();
        assert_eq!(direct_convolve_oracle(&x, &k).unwrap(), x);
    }

    #[test]
    fn correlate_equals_convolve_with_rotated_kernel() {
        let x = lcg_field(8, 10, 3);
        let k = lcg_field(5, 5, 9);
        let a = correlate_circular(&x, &k).unwrap();
        let b = direct_convolve_oracle(&x, &k.rotate_180()).unwrap();
        assert!(rel_err(&a, &b) < 1e-10);
        let sym = k.add(&k.rotate_180());
        let c = correlate_circular(&x, &sym).unwrap();
        let d = convolve_circular(&x, &sym).unwrap();
        assert!(rel_err(&c, &d) < 1e-10);
    }

    #[test]
    fn symmetric_matches_stepwise_composition() {
        let x = lcg_field(8, 8, 11);
        let k = lcg_field(3, 3, 12);
        let padded = pad_symmetric(&x, Padding::uniform(1)).unwrap();
        let full = direct_convolve_oracle(&padded, &k).unwrap();
        let expected = crop_center(&full, 8, 8).unwrap();
        assert!(rel_err(&convolve_symmetric(&x, &k).unwrap(), &expected) < 1e-10);
    }

    #[test]
    fn oversize_kernel_rejected() {
        let x = lcg_field(4, 6, 1);
        let k = BlurKernel::delta(5).unwrap();
        assert!(convolve_circular(&x, &k).is_err());
        assert!(correlate_circular(&x, &k).is_err());
        assert!(direct_convolve_oracle(&x, &k).is_err());
        assert!(convolve_symmetric(&x, &k).is_err());
    }

    #[test]
    fn kernel_vjp_matches_brute_force() {
        let x = lcg_field(7, 6, 21);
        let z = lcg_field(7, 6, 22);
        let g = kernel_vjp(&x, &z, 3).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let mut e = Field2D::zeros(3, 3);
                e.set(a, b, 1.0);
                let expected = z.dot(&direct_convolve_oracle(&x, &e).unwrap());
                assert!((g.get(a, b) - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn plan_is_reusable() {
        let k = lcg_field(5, 5, 2);
        let x = lcg_field(12, 9, 5);
        let p1 = ConvPlan::new(&k, 12, 9).unwrap();
        let p2 = ConvPlan::new(&k, 12, 9).unwrap();
        let a = p1.convolve(&x).unwrap();
        assert_eq!(a, p1.convolve(&x).unwrap());
        assert!(rel_err(&a, &p2.convolve(&x).unwrap()) <= 1e-12);
        assert!(p1.convolve(&lcg_field(9, 12, 1)).is_err());
    }
}
