//! Image and kernel files.
//!
//! Latent images are normalized to `[0, 1]` by the container maximum. Observed
//! images hold raw photon counts and are written as 16-bit grayscale PNG.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{DynamicImage, ImageBuffer, Luma};
use phodeconv::field::project_kernel;
use phodeconv::{BlurKernel, Field2D};

use crate::error::UsageError;

/// Largest count an observed-image file can hold.
pub const MAX_COUNT: f64 = 65535.0;

fn open(path: &Path) -> Result<DynamicImage> {
    let reader = image::ImageReader::open(path)
        .with_context(|| format!("cannot open {}", path.display()))?
        .with_guessed_format()
        .with_context(|| format!("cannot read {}", path.display()))?;
    reader
        .decode()
        .map_err(|e| UsageError::new(format!("cannot decode {}: {e}", path.display())).into())
}

fn to_field(w: u32, h: u32, data: impl Iterator<Item = f64>) -> Result<Field2D> {
    Ok(Field2D::new(h as usize, w as usize, data.collect())?)
}

/// Reads an 8/16-bit grayscale PNG or PGM (colour is converted to luma) as
/// intensities in `[0, 1]`.
pub fn read_latent(path: &Path) -> Result<Field2D> {
    let img = open(path)?;
    match img {
        DynamicImage::ImageLuma8(buf) => {
            to_field(buf.width(), buf.height(), buf.pixels().map(|p| p.0[0] as f64 / 255.0))
        }
        other => {
            let buf = other.to_luma16();
            to_field(buf.width(), buf.height(), buf.pixels().map(|p| p.0[0] as f64 / 65535.0))
        }
    }
}

fn is_text(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("txt"))
}

/// Reads raw photon counts from a grayscale PNG or PGM, or from a `.txt`
/// matrix written by [`write_counts`].
pub fn read_counts(path: &Path) -> Result<Field2D> {
    if is_text(path) {
        let text = fs::read_to_string(path).with_context(|| format!("cannot open {}", path.display()))?;
        return parse_matrix(&text).with_context(|| format!("in {}", path.display()));
    }
    let img = open(path)?;
    match img {
        DynamicImage::ImageLuma8(buf) => {
            to_field(buf.width(), buf.height(), buf.pixels().map(|p| p.0[0] as f64))
        }
        DynamicImage::ImageLuma16(buf) => {
            to_field(buf.width(), buf.height(), buf.pixels().map(|p| p.0[0] as f64))
        }
        _ => Err(UsageError::new(format!(
            "{}: observed images must be single-channel grayscale",
            path.display()
        ))
        .into()),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}

fn save16(path: &Path, field: &Field2D, f: impl Fn(f64) -> u16) -> Result<()> {
    ensure_parent(path)?;
    let (h, w) = field.dims();
    let data: Vec<u16> = field.as_slice().iter().map(|&v| f(v)).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, data).expect("buffer size matches dims");
    buf.save_with_format(path, image::ImageFormat::Png)
        .with_context(|| format!("cannot write {}", path.display()))
}

/// Writes a `[0, 1]` image as 16-bit PNG (values are clipped).
pub fn write_latent(path: &Path, field: &Field2D) -> Result<()> {
    save16(path, field, |v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
}

/// Writes integer counts: a `.txt` path gets a text matrix (no range limit),
/// anything else a 16-bit PNG, which fails on values above 65535.
pub fn write_counts(path: &Path, counts: &Field2D) -> Result<()> {
    if let Some(v) = counts.as_slice().iter().find(|&&v| v < 0.0 || v.fract() != 0.0) {
        bail!(UsageError::new(format!("counts must be non-negative integers, found {v}")));
    }
    if is_text(path) {
        return write_text(path, &format_matrix(counts));
    }
    if let Some(v) = counts.as_slice().iter().find(|&&v| v > MAX_COUNT) {
        bail!(UsageError::new(format!(
            "count {v} exceeds the 16-bit limit {MAX_COUNT}; lower the photon level or write a .txt file"
        )));
    }
    save16(path, counts, |v| v as u16)
}

/// `H W` on the first line, then `H` rows of `W` numbers.
pub fn format_matrix(f: &Field2D) -> String {
    let mut out = format!("{} {}\n", f.height(), f.width());
    for row in f.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<Field2D> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| UsageError::new("empty matrix file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| UsageError::new("matrix header must be 'H W'"))?;
    let [h, w] = dims[..] else {
        bail!(UsageError::new("matrix header must be 'H W'"));
    };
    let data = parse_rows(lines, w)?;
    if data.len() != h * w {
        bail!(UsageError::new(format!("matrix has {} rows, expected {h}", data.len() / w.max(1))));
    }
    Ok(Field2D::new(h, w, data).map_err(|e| UsageError::new(e.to_string()))?)
}

fn parse_rows<'a>(lines: impl Iterator<Item = &'a str>, width: usize) -> Result<Vec<f64>> {
    let mut data = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| UsageError::new(format!("row {}: {e}", i + 1)))?;
        if row.len() != width {
            bail!(UsageError::new(format!("row {} has {} entries, expected {width}", i + 1, row.len())));
        }
        data.extend(row);
    }
    Ok(data)
}

/// `M` on the first line, then `M` rows of `M` space-separated decimals.
pub fn format_kernel(k: &Field2D) -> String {
    let mut out = format!("{}\n", k.height());
    for row in k.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn parse_kernel(text: &str) -> Result<BlurKernel> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let m: usize = lines
        .next()
        .ok_or_else(|| UsageError::new("empty kernel file"))?
        .parse()
        .map_err(|_| UsageError::new("kernel header must be the side length M"))?;
    let data = parse_rows(lines, m).context("in kernel")?;
    if data.len() != m * m {
        bail!(UsageError::new(format!("kernel has {} rows, expected {m}", data.len() / m.max(1))));
    }
    let field = Field2D::new(m, m, data).map_err(|e| UsageError::new(e.to_string()))?;
    BlurKernel::new(field.clone())
        .or_else(|_| project_kernel(&field))
        .map_err(|e| UsageError::new(format!("invalid kernel: {e}")).into())
}

pub fn read_kernel(path: &Path) -> Result<BlurKernel> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot open {}", path.display()))?;
    parse_kernel(&text).with_context(|| format!("in {}", path.display()))
}

pub fn write_kernel(path: &Path, k: &Field2D) -> Result<()> {
    write_text(path, &format_kernel(k))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}
