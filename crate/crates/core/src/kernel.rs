//! Kernel functions and weighted Gram-matrix assembly.

use std::fmt;
use std::str::FromStr;

use faer::{Mat, MatRef};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gaussian,
    Laplacian,
    Lorentzian,
    Polynomial,
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelKind::Gaussian),
            "laplacian" => Ok(KernelKind::Laplacian),
            "lorentzian" => Ok(KernelKind::Lorentzian),
            "poly" | "polynomial" => Ok(KernelKind::Polynomial),
            other => Err(Error::Argument(format!("unknown kernel '{other}'"))),
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Gaussian => "gaussian",
            KernelKind::Laplacian => "laplacian",
            KernelKind::Lorentzian => "lorentzian",
            KernelKind::Polynomial => "polynomial",
        })
    }
}

/// A kernel with its scale `c` (and degree `α` for the polynomial kernel).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelSpec {
    kind: KernelKind,
    scale: f64,
    degree: Option<u32>,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, scale: f64, degree: Option<u32>) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Argument(format!("kernel scale must be positive, got {scale}")));
        }
        match (kind, degree) {
            (KernelKind::Polynomial, Some(a)) if a >= 1 => {}
            (KernelKind::Polynomial, _) => {
                return Err(Error::Argument("polynomial kernel needs degree >= 1".into()))
            }
            (_, Some(_)) => {
                return Err(Error::Argument(format!("{kind} kernel takes no degree")))
            }
            (_, None) => {}
        }
        Ok(Self { kind, scale, degree })
    }

    pub fn gaussian(scale: f64) -> Result<Self> {
        Self::new(KernelKind::Gaussian, scale, None)
    }

    pub fn laplacian(scale: f64) -> Result<Self> {
        Self::new(KernelKind::Laplacian, scale, None)
    }

    pub fn lorentzian(scale: f64) -> Result<Self> {
        Self::new(KernelKind::Lorentzian, scale, None)
    }

    pub fn polynomial(scale: f64, degree: u32) -> Result<Self> {
        Self::new(KernelKind::Polynomial, scale, Some(degree))
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn degree(&self) -> Option<u32> {
        self.degree
    }

    pub fn eval(&self, x: &[f64], xp: &[f64]) -> f64 {
        kernel_eval(self, x, xp)
    }
}

fn dist_sq(x: &[f64], xp: &[f64]) -> f64 {
    x.iter().zip(xp).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `S(x, x')` for the four supported kernels.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], xp: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), xp.len());
    let c = spec.scale;
    match spec.kind {
        KernelKind::Gaussian => (-dist_sq(x, xp) / (c * c)).exp(),
        KernelKind::Laplacian => (-dist_sq(x, xp).sqrt() / c).exp(),
        KernelKind::Lorentzian => 1.0 / (1.0 + dist_sq(x, xp) / (c * c)),
        KernelKind::Polynomial => {
            let dot: f64 = x.iter().zip(xp).map(|(a, b)| a * b).sum();
            (dot / (c * c) + 1.0).powi(spec.degree.unwrap_or(1) as i32)
        }
    }
}

fn columns(m: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)]).collect())
        .collect()
}

/// Weighted Gram matrix `G_jk = sqrt(w_j) S(a_j, b_k) sqrt(w_k)` over the
/// columns of `a` and `b`. Each entry is computed independently, so the
/// parallel assembly is bit-for-bit deterministic.
pub fn gram(
    spec: &KernelSpec,
    a: MatRef<'_, f64>,
    b: MatRef<'_, f64>,
    weights_a: &[f64],
    weights_b: &[f64],
) -> Result<Mat<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "point dimensions differ: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if weights_a.len() != a.ncols() || weights_b.len() != b.ncols() {
        return Err(Error::Shape("one weight per point required".into()));
    }
    let pa = columns(a);
    let pb = columns(b);
    let sa: Vec<f64> = weights_a.iter().map(|w| w.sqrt()).collect();
    let sb: Vec<f64> = weights_b.iter().map(|w| w.sqrt()).collect();
    let (m, n) = (pa.len(), pb.len());
    let rows: Vec<Vec<f64>> = pa
        .par_iter()
        .zip(sa.par_iter())
        .map(|(x, wx)| {
            pb.iter()
                .zip(&sb)
                .map(|(y, wy)| wx * kernel_eval(spec, x, y) * wy)
                .collect()
        })
        .collect();
    Ok(Mat::from_fn(m, n, |i, j| rows[i][j]))
}

/// Average ℓ2 norm of the mean-subtracted columns of `x`.
pub fn default_scale(x: MatRef<'_, f64>) -> Result<f64> {
    let (d, m) = (x.nrows(), x.ncols());
    if m == 0 {
        return Err(Error::Shape("no snapshots".into()));
    }
    let mean: Vec<f64> = (0..d)
        .map(|i| (0..m).map(|j| x[(i, j)]).sum::<f64>() / m as f64)
        .collect();
    let total: f64 = (0..m)
        .map(|j| {
            (0..d)
                .map(|i| (x[(i, j)] - mean[i]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    let scale = total / m as f64;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Degenerate(
            "all snapshots are identical; kernel scale would be zero".into(),
        ));
    }
    Ok(scale)
}
