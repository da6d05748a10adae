//! Dense row-major 2-D real fields and the blur-kernel type built on them.

use std::fmt;
use std::ops::Deref;

use crate::error::{invalid, Error, Result};

/// Absolute tolerance on the kernel sum for a field to count as a valid [`BlurKernel`].
pub const KERNEL_SUM_TOL: f64 = 1e-12;

/// An `height x width` grid of finite reals stored row-major.
#[derive(Clone, PartialEq)]
pub struct Field2D {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Field2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Field2D({}x{}", self.height, self.width)?;
        if self.data.len() <= 64 {
            write!(f, ", {:?}", self.data)?;
        }
        write!(f, ")")
    }
}

impl Field2D {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!("empty field {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(invalid(format!(
                "data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("entry {pos} is {}", data[pos])));
        }
        Ok(Self { height, width, data })
    }

    /// Builds a field from nested rows; every row must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(height * width);
        for row in rows {
            let row = row.as_ref();
            if row.len() != width {
                return Err(invalid("ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && value.is_finite());
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0);
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::from_raw(height, width, data)
    }

    /// Internal constructor for data produced by arithmetic on valid fields.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite entry");
        Self { height, width, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Inner product; panics on a shape mismatch.
    pub fn dot(&self, other: &Field2D) -> f64 {
        assert_eq!(self.dims(), other.dims(), "dot: shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field2D {
        Field2D::from_raw(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination; panics on a shape mismatch.
    pub fn zip_map(&self, other: &Field2D, f: impl Fn(f64, f64) -> f64) -> Field2D {
        assert_eq!(self.dims(), other.dims(), "zip_map: shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Field2D::from_raw(self.height, self.width, data)
    }

    pub fn scale(&self, s: f64) -> Field2D {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Field2D) -> Field2D {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field2D) -> Field2D {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field2D) -> Field2D {
        self.zip_map(other, |a, b| a * b)
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Field2D) {
        assert_eq!(self.dims(), other.dims(), "axpy: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Field2D {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn transpose(&self) -> Field2D {
        Field2D::from_fn(self.width, self.height, |r, c| self.get(c, r))
    }

    /// Rotation by 180 degrees (flip both axes).
    pub fn rotate_180(&self) -> Field2D {
        let mut data = self.data.clone();
        data.reverse();
        Field2D::from_raw(self.height, self.width, data)
    }

    /// Counter-clockwise rotation by 90 degrees.
    pub fn rotate_90(&self) -> Field2D {
        let (h, w) = self.dims();
        Field2D::from_fn(w, h, |r, c| self.get(c, w - 1 - r))
    }

    /// Circular shift: output `(r, c)` takes input `(r - dy, c - dx)` modulo the dims.
    pub fn roll(&self, dy: isize, dx: isize) -> Field2D {
        let (h, w) = (self.height as isize, self.width as isize);
        Field2D::from_fn(self.height, self.width, |r, c| {
            let sr = (r as isize - dy).rem_euclid(h) as usize;
            let sc = (c as isize - dx).rem_euclid(w) as usize;
            self.get(sr, sc)
        })
    }

    pub fn check_same_dims(&self, other: &Field2D) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }
}

/// Mirror index for edge-inclusive reflection (`... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - i - 1
    } else {
        i
    };
    debug_assert!((0..n).contains(&j));
    j as usize
}

/// Pad amounts `(top, bottom, left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }
}

/// Edge-inclusive mirror padding (a row `[1, 2, 3]` padded by one each side becomes
/// `[1, 1, 2, 3, 3]`).
pub fn pad_symmetric(img: &Field2D, pad: Padding) -> Result<Field2D> {
    let (h, w) = img.dims();
    if pad.top > h || pad.bottom > h || pad.left > w || pad.right > w {
        return Err(invalid(format!(
            "padding {pad:?} exceeds image dimensions {h}x{w}"
        )));
    }
    let out_h = h + pad.top + pad.bottom;
    let out_w = w + pad.left + pad.right;
    Ok(Field2D::from_fn(out_h, out_w, |r, c| {
        let sr = reflect(r as isize - pad.top as isize, h);
        let sc = reflect(c as isize - pad.left as isize, w);
        img.get(sr, sc)
    }))
}

/// Adjoint of [`pad_symmetric`]: every padded pixel is folded back onto the source
/// pixel it was copied from.
pub fn pad_symmetric_adjoint(padded: &Field2D, pad: Padding) -> Result<Field2D> {
    let (ph, pw) = padded.dims();
    if pad.top + pad.bottom >= ph || pad.left + pad.right >= pw {
        return Err(invalid("padding leaves no interior"));
    }
    let h = ph - pad.top - pad.bottom;
    let w = pw - pad.left - pad.right;
    if pad.top > h || pad.bottom > h || pad.left > w || pad.right > w {
        return Err(invalid(format!(
            "padding {pad:?} exceeds image dimensions {h}x{w}"
        )));
    }
    let mut out = Field2D::zeros(h, w);
    for r in 0..ph {
        let sr = reflect(r as isize - pad.top as isize, h);
        for c in 0..pw {
            let sc = reflect(c as isize - pad.left as isize, w);
            out.data[sr * w + sc] += padded.get(r, c);
        }
    }
    Ok(out)
}

/// Centered `out_h x out_w` window; the offset is `floor((H - out_h) / 2)` per axis.
pub fn crop_center(img: &Field2D, out_h: usize, out_w: usize) -> Result<Field2D> {
    let (h, w) = img.dims();
    if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
        return Err(invalid(format!(
            "cannot crop {out_h}x{out_w} from {h}x{w}"
        )));
    }
    let r0 = (h - out_h) / 2;
    let c0 = (w - out_w) / 2;
    Ok(crop_at(img, r0, c0, out_h, out_w))
}

pub(crate) fn crop_at(img: &Field2D, r0: usize, c0: usize, out_h: usize, out_w: usize) -> Field2D {
    let mut data = Vec::with_capacity(out_h * out_w);
    for r in r0..r0 + out_h {
        let start = r * img.width + c0;
        data.extend_from_slice(&img.data[start..start + out_w]);
    }
    Field2D::from_raw(out_h, out_w, data)
}

/// Adjoint of a crop at `(r0, c0)`: zero field of `(h, w)` with `img` written in place.
pub(crate) fn embed_at(img: &Field2D, r0: usize, c0: usize, h: usize, w: usize) -> Field2D {
    let mut out = Field2D::zeros(h, w);
    for (r, row) in img.rows().enumerate() {
        let start = (r0 + r) * w + c0;
        out.data[start..start + img.width].copy_from_slice(row);
    }
    out
}

/// A square, odd-sided, nonnegative kernel whose entries sum to one.
#[derive(Clone, PartialEq)]
pub struct BlurKernel(Field2D);

impl fmt::Debug for BlurKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlurKernel({:?})", self.0)
    }
}

impl BlurKernel {
    /// Validates `field` against the kernel invariants without modifying it.
    pub fn new(field: Field2D) -> Result<Self> {
        check_kernel_shape(&field)?;
        if !is_on_simplex(&field) {
            return Err(invalid(format!(
                "kernel entries must be >= 0 and sum to 1 (sum = {})",
                field.sum()
            )));
        }
        Ok(Self(field))
    }

    /// The identity kernel: one at the center, zero elsewhere.
    pub fn delta(size: usize) -> Result<Self> {
        let mut f = Field2D::zeros(size.max(1), size.max(1));
        check_kernel_shape(&f)?;
        let c = size / 2;
        f.set(c, c, 1.0);
        Ok(Self(f))
    }

    pub fn size(&self) -> usize {
        self.0.height()
    }

    /// Half-width `(M - 1) / 2`.
    pub fn radius(&self) -> usize {
        self.size() / 2
    }

    pub fn field(&self) -> &Field2D {
        &self.0
    }

    pub fn into_field(self) -> Field2D {
        self.0
    }

    /// Mass at the central pixel.
    pub fn center_mass(&self) -> f64 {
        let c = self.radius();
        self.0.get(c, c)
    }
}

impl Deref for BlurKernel {
    type Target = Field2D;

    fn deref(&self) -> &Field2D {
        &self.0
    }
}

impl AsRef<Field2D> for BlurKernel {
    fn as_ref(&self) -> &Field2D {
        &self.0
    }
}

pub(crate) fn check_kernel_shape(k: &Field2D) -> Result<()> {
    let (h, w) = k.dims();
    if h != w {
        return Err(invalid(format!("kernel must be square, got {h}x{w}")));
    }
    if h % 2 == 0 {
        return Err(invalid(format!("kernel side must be odd, got {h}")));
    }
    Ok(())
}

fn is_on_simplex(k: &Field2D) -> bool {
    k.as_slice().iter().all(|&v| v >= 0.0) && (k.sum() - 1.0).abs() <= KERNEL_SUM_TOL
}

/// Clips negative entries to zero and rescales to unit sum.
///
/// A field that already satisfies the kernel invariants is returned unchanged,
/// which makes the projection exactly idempotent.
pub fn project_kernel(k: &Field2D) -> Result<BlurKernel> {
    check_kernel_shape(k)?;
    if is_on_simplex(k) {
        return Ok(BlurKernel(k.clone()));
    }
    let clipped = k.map(|v| v.max(0.0));
    let total = clipped.sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateKernel(
            "no positive entries after clipping".into(),
        ));
    }
    Ok(BlurKernel(clipped.scale(1.0 / total)))
}
