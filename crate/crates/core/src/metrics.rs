//! Image and kernel quality metrics.

use crate::error::{invalid, Result};
use crate::field::{embed_at, Field2D};

/// Value written out in place of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub kernel_mae: f64,
    pub alignment_shift: (isize, isize),
}

pub fn mse(a: &Field2D, b: &Field2D) -> Result<f64> {
    a.check_same_dims(b)?;
    Ok(a.sub(b).sum_squares() / a.len() as f64)
}

/// Peak-1 PSNR in dB; `+inf` for identical inputs.
pub fn psnr(a: &Field2D, b: &Field2D) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / e).log10())
}

/// PSNR with the infinite case replaced by [`PSNR_CAP_DB`].
pub fn psnr_capped(a: &Field2D, b: &Field2D) -> Result<f64> {
    Ok(psnr(a, b)?.min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable 'valid' filtering with a 1-D window.
fn filter_valid(img: &Field2D, win: &[f64]) -> Field2D {
    let n = win.len();
    let (h, w) = img.dims();
    let rows = Field2D::from_fn(h, w - n + 1, |r, c| {
        win.iter().enumerate().map(|(k, wk)| wk * img.get(r, c + k)).sum()
    });
    Field2D::from_fn(h - n + 1, w - n + 1, |r, c| {
        win.iter().enumerate().map(|(k, wk)| wk * rows.get(r + k, c)).sum()
    })
}

/// Mean SSIM over all fully contained 11x11 Gaussian (sigma 1.5) windows.
pub fn ssim(a: &Field2D, b: &Field2D) -> Result<f64> {
    a.check_same_dims(b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let mu_a = filter_valid(a, &win);
    let mu_b = filter_valid(b, &win);
    let e_aa = filter_valid(&a.mul(a), &win);
    let e_bb = filter_valid(&b.mul(b), &win);
    let e_ab = filter_valid(&a.mul(b), &win);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a.as_slice()[i], mu_b.as_slice()[i]);
        let var_a = e_aa.as_slice()[i] - ma * ma;
        let var_b = e_bb.as_slice()[i] - mb * mb;
        let cov = e_ab.as_slice()[i] - ma * mb;
        let num = (2.0 * (ma * mb) + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

/// Zero-pads a smaller square kernel to `size x size`, keeping it centered.
pub fn embed_kernel_centered(k: &Field2D, size: usize) -> Result<Field2D> {
    let m = k.height();
    if k.width() != m || m > size || !(size - m).is_multiple_of(2) {
        return Err(invalid(format!("cannot center a {m}x{} kernel in {size}x{size}", k.width())));
    }
    let off = (size - m) / 2;
    Ok(embed_at(k, off, off, size, size))
}

fn signed_shift(s: usize, m: usize) -> isize {
    let s = s as isize;
    let m = m as isize;
    if s > m / 2 {
        s - m
    } else {
        s
    }
}

/// `||h_est - h_true||_1 / M^2`, optionally after circularly shifting `h_est` to
/// best match `h_true`.
///
/// The reported shift `(dy, dx)` is the displacement of `h_est` relative to
/// `h_true`: with alignment, `h_est.roll(-dy, -dx)` is compared.
pub fn kernel_mae(h_est: &Field2D, h_true: &Field2D, align: bool) -> Result<(f64, (isize, isize))> {
    h_est.check_same_dims(h_true)?;
    let m = h_est.height();
    if h_est.width() != m {
        return Err(invalid("kernels must be square"));
    }
    let n = (m * m) as f64;
    if !align {
        return Ok((h_est.sub(h_true).l1_norm() / n, (0, 0)));
    }
    let mut shifts: Vec<(isize, isize)> = (0..m)
        .flat_map(|dy| (0..m).map(move |dx| (signed_shift(dy, m), signed_shift(dx, m))))
        .collect();
    shifts.sort_by_key(|&(dy, dx)| (dy.abs() + dx.abs(), dy, dx));
    let mut best = (f64::NEG_INFINITY, (0, 0));
    for (dy, dx) in shifts {
        let score = h_est.roll(-dy, -dx).dot(h_true);
        if score > best.0 {
            best = (score, (dy, dx));
        }
    }
    let (dy, dx) = best.1;
    Ok((h_est.roll(-dy, -dx).sub(h_true).l1_norm() / n, (dy, dx)))
}

pub fn evaluate(
    x_est: &Field2D,
    x_true: &Field2D,
    h_est: &Field2D,
    h_true: &Field2D,
    align: bool,
) -> Result<MetricReport> {
    let (mae, shift) = kernel_mae(h_est, h_true, align)?;
    Ok(MetricReport {
        psnr: psnr(x_est, x_true)?,
        ssim: ssim(x_est, x_true)?,
        kernel_mae: mae,
        alignment_shift: shift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::uniform_field;

    /// Per-window SSIM written directly from the definition, without separable filters.
    #[allow(clippy::needless_range_loop)]
    fn ssim_reference(a: &Field2D, b: &Field2D) -> f64 {
        let n = SSIM_WINDOW;
        let r = (n / 2) as f64;
        let mut w2 = vec![vec![0.0; n]; n];
        let mut total_w = 0.0;
        for (i, row) in w2.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let d2 = (i as f64 - r).powi(2) + (j as f64 - r).powi(2);
                *v = (-d2 / (2.0 * 1.5 * 1.5)).exp();
                total_w += *v;
            }
        }
        let (h, w) = a.dims();
        let mut acc = 0.0;
        let mut count = 0;
        for r0 in 0..=h - n {
            for c0 in 0..=w - n {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let wt = w2[i][j] / total_w;
                        ma += wt * a.get(r0 + i, c0 + j);
                        mb += wt * b.get(r0 + i, c0 + j);
                    }
                }
                let (mut va, mut vb, mut cab) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let wt = w2[i][j] / total_w;
                        let da = a.get(r0 + i, c0 + j) - ma;
                        let db = b.get(r0 + i, c0 + j) - mb;
                        va += wt * da * da;
                        vb += wt * db * db;
                        cab += wt * da * db;
                    }
                }
                let c1 = 0.0001;
                let c2 = 0.0009;
                acc += ((2.0 * ma * mb + c1) * (2.0 * cab + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn psnr_cases() {
        let a = Field2D::zeros(4, 4);
        let b = Field2D::filled(4, 4, 0.5);
        assert!((psnr(&a, &b).unwrap() - 6.0206).abs() < 1e-4);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(psnr_capped(&a, &a).unwrap(), PSNR_CAP_DB);
        let c = Field2D::filled(4, 4, 0.1);
        assert!((psnr(&a, &c).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Field2D::zeros(2, 2)).is_err());
        let x = uniform_field(9, 7, 1);
        let y = uniform_field(9, 7, 2);
        assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
    }

    #[test]
    fn ssim_identity_and_complement() {
        let a = uniform_field(24, 20, 3);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let inv = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 1.0);
        assert!(ssim(&a, &Field2D::zeros(24, 21)).is_err());
    }

    #[test]
    fn ssim_matches_reference() {
        let a = uniform_field(20, 23, 5);
        let b = a.map(|v| (v + 0.1).min(1.0));
        let fast = ssim(&a, &b).unwrap();
        let slow = ssim_reference(&a, &b);
        assert!((fast - slow).abs() < 1e-8, "{fast} vs {slow}");
        let c = uniform_field(20, 23, 6);
        assert!((ssim(&a, &c).unwrap() - ssim_reference(&a, &c)).abs() < 1e-8);
    }

    #[test]
    fn mae_shift_cases() {
        let mut d = Field2D::zeros(5, 5);
        d.set(2, 2, 1.0);
        assert_eq!(kernel_mae(&d, &d, true).unwrap(), (0.0, (0, 0)));
        let shifted = d.roll(1, 0);
        assert_eq!(kernel_mae(&shifted, &d, true).unwrap(), (0.0, (1, 0)));
        let (off, _) = kernel_mae(&shifted, &d, false).unwrap();
        assert!((off - 2.0 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn aligned_mae_never_worse() {
        for seed in 0..20 {
            let a = uniform_field(7, 7, seed);
            let b = uniform_field(7, 7, seed + 100);
            let (on, _) = kernel_mae(&a, &b, true).unwrap();
            let (off, _) = kernel_mae(&a, &b, false).unwrap();
            assert!(on <= off + 1e-15);
            assert_eq!(off, kernel_mae(&b, &a, false).unwrap().0);
            let (rolled, _) = kernel_mae(&a.roll(2, -1), &b, true).unwrap();
            assert!((rolled - on).abs() < 1e-15);
        }
    }

    #[test]
    fn embed_centers_small_kernel() {
        let k = Field2D::filled(3, 3, 1.0 / 9.0);
        let e = embed_kernel_centered(&k, 7).unwrap();
        assert_eq!(e.get(3, 3), 1.0 / 9.0);
        assert_eq!(e.get(1, 1), 0.0);
        assert!((e.sum() - 1.0).abs() < 1e-15);
        assert!(embed_kernel_centered(&k, 6).is_err());
    }
}
