//! Ground-truth kernel descriptions used by `simulate` and `bench`.
//!
//! Syntax (angles in radians, lengths and widths in pixels):
//! `delta`, `gaussian:SIGMA_MAJOR:SIGMA_MINOR:THETA`, `line:LENGTH:THETA`,
//! `motion:LENGTH:SEED`, `file:PATH`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Result};
use phodeconv::kernel_init::{render_gaussian_kernel, GaussianBlurParams};
use phodeconv::synth::{linear_motion_kernel, random_motion_kernel};
use phodeconv::BlurKernel;

use crate::error::UsageError;

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Delta,
    Gaussian { sigma_major: f64, sigma_minor: f64, theta: f64 },
    Line { length: f64, theta: f64 },
    Motion { length: f64, seed: u64 },
    File(PathBuf),
}

impl KernelSpec {
    /// Renders the kernel on a `size x size` grid; file kernels keep their own size.
    pub fn build(&self, size: usize) -> Result<BlurKernel> {
        let k = match self {
            Self::Delta => BlurKernel::delta(size)?,
            &Self::Gaussian {
                sigma_major,
                sigma_minor,
                theta,
            } => render_gaussian_kernel(&GaussianBlurParams::new(sigma_major, sigma_minor, theta)?, size)?,
            &Self::Line { length, theta } => linear_motion_kernel(size, length, theta)?,
            &Self::Motion { length, seed } => random_motion_kernel(size, length, seed)?,
            Self::File(p) => crate::io::read_kernel(p)?,
        };
        Ok(k)
    }
}

fn num<T: FromStr>(spec: &str, field: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| UsageError::new(format!("kernel spec '{spec}': bad number '{field}'")).into())
}

impl FromStr for KernelSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(path) = s.strip_prefix("file:") {
            if path.is_empty() {
                bail!(UsageError::new("kernel spec 'file:' needs a path"));
            }
            return Ok(Self::File(PathBuf::from(path)));
        }
        let parts: Vec<&str> = s.split(':').collect();
        let spec = match parts.as_slice() {
            ["delta"] => Self::Delta,
            ["gaussian", a, b, t] => Self::Gaussian {
                sigma_major: num(s, a)?,
                sigma_minor: num(s, b)?,
                theta: num(s, t)?,
            },
            ["line", l, t] => Self::Line {
                length: num(s, l)?,
                theta: num(s, t)?,
            },
            ["motion", l, seed] => Self::Motion {
                length: num(s, l)?,
                seed: num(s, seed)?,
            },
            _ => bail!(UsageError::new(format!(
                "unknown kernel spec '{s}' (expected delta, gaussian:A:B:THETA, line:LEN:THETA, motion:LEN:SEED or file:PATH)"
            ))),
        };
        Ok(spec)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Delta => f.write_str("delta"),
            Self::Gaussian {
                sigma_major,
                sigma_minor,
                theta,
            } => write!(f, "gaussian:{sigma_major}:{sigma_minor}:{theta}"),
            Self::Line { length, theta } => write!(f, "line:{length}:{theta}"),
            Self::Motion { length, seed } => write!(f, "motion:{length}:{seed}"),
            Self::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}
