//! Dense linear-algebra helpers shared by the decompositions.
//!
//! Everything here is a thin layer over faer: conversions between real and
//! complex matrices, deterministic ordering and phase conventions for
//! eigenvectors, and the Hermitian minimum-eigenpair solve used by the
//! kernelized pseudospectrum.

use std::cmp::Ordering;

use faer::{c64, Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Machine epsilon used by all rank-truncation rules.
pub const MACHINE_EPS: f64 = 2.2e-16;

pub fn to_complex(m: MatRef<'_, f64>) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| c64::new(m[(i, j)], 0.0))
}

pub fn real_part(m: MatRef<'_, c64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].re)
}

pub fn column(m: MatRef<'_, c64>, j: usize) -> Vec<c64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

pub fn real_column(m: MatRef<'_, f64>, j: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

pub fn all_finite(m: MatRef<'_, f64>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].is_finite()))
}

pub fn norm(v: &[c64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn real_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn mat_vec(m: MatRef<'_, c64>, v: &[c64]) -> Vec<c64> {
    assert_eq!(m.ncols(), v.len());
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

pub fn real_mat_vec(m: MatRef<'_, f64>, v: &[c64]) -> Vec<c64> {
    assert_eq!(m.ncols(), v.len());
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| v[j] * m[(i, j)]).sum())
        .collect()
}

/// `v^* H v` for a complex matrix `H`.
pub fn quad_form(h: MatRef<'_, c64>, v: &[c64]) -> c64 {
    let hv = mat_vec(h, v);
    v.iter().zip(&hv).map(|(a, b)| a.conj() * b).sum()
}

/// Replace `m` by `(m + m^T) / 2`.
pub fn symmetrize(m: &mut Mat<f64>) {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Replace `h` by `(h + h^*) / 2`.
pub fn hermitianize(h: &mut Mat<c64>) {
    let n = h.nrows();
    assert_eq!(n, h.ncols());
    for i in 0..n {
        h[(i, i)] = c64::new(h[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let avg = (h[(i, j)] + h[(j, i)].conj()) * 0.5;
            h[(i, j)] = avg;
            h[(j, i)] = avg.conj();
        }
    }
}

/// Index of the entry with largest magnitude; the first one wins among
/// entries equal up to a relative 1e-12.
fn dominant_index(magnitudes: impl Iterator<Item = f64> + Clone) -> usize {
    let max = magnitudes.clone().fold(0.0_f64, f64::max);
    let cut = max * (1.0 - 1e-12);
    magnitudes.into_iter().position(|m| m >= cut).unwrap_or(0)
}

/// Scale a vector to unit norm and rotate its phase so the dominant entry is
/// real and positive.
pub fn normalize_phase(v: &mut [c64]) {
    let n = norm(v);
    if n == 0.0 {
        return;
    }
    let k = dominant_index(v.iter().map(|z| z.norm()));
    let pivot = v[k];
    let rot = pivot.conj() / (pivot.norm() * n);
    for z in v.iter_mut() {
        *z *= rot;
    }
    v[k] = c64::new(v[k].norm(), 0.0);
}

/// Flip the sign of each column of `u` (and the matching column of `v`) so
/// the dominant entry of the `u` column is positive.
pub fn fix_signs(u: &mut Mat<f64>, mut v: Option<&mut Mat<f64>>) {
    for j in 0..u.ncols() {
        let k = dominant_index((0..u.nrows()).map(|i| u[(i, j)].abs()));
        if u.nrows() > 0 && u[(k, j)] < 0.0 {
            for i in 0..u.nrows() {
                u[(i, j)] = -u[(i, j)];
            }
            if let Some(v) = v.as_deref_mut() {
                for i in 0..v.nrows() {
                    v[(i, j)] = -v[(i, j)];
                }
            }
        }
    }
}

/// Eigenvalue order: descending modulus, ties broken by descending real part
/// and then descending imaginary part.
pub fn eigenvalue_order(a: &c64, b: &c64) -> Ordering {
    let scale = 1.0_f64.max(a.norm()).max(b.norm());
    let tol = 1e-12 * scale;
    let (ma, mb) = (a.norm(), b.norm());
    if (ma - mb).abs() > tol {
        return mb.partial_cmp(&ma).unwrap_or(Ordering::Equal);
    }
    if (a.re - b.re).abs() > tol {
        return b.re.partial_cmp(&a.re).unwrap_or(Ordering::Equal);
    }
    b.im.partial_cmp(&a.im).unwrap_or(Ordering::Equal)
}

/// Eigen-decomposition of a real square matrix: eigenvalues in
/// [`eigenvalue_order`], unit eigenvectors with normalized phase.
pub fn eigen_real(m: MatRef<'_, f64>) -> Result<(Vec<c64>, Mat<c64>)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Shape(format!("eigendecomposition of non-square {}x{} matrix", n, m.ncols())));
    }
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    if !all_finite(m) {
        return Err(Error::Numerical("non-finite entry in matrix to decompose".into()));
    }
    let evd = m
        .eigen()
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let values: Vec<c64> = evd.S().column_vector().iter().copied().collect();
    let vectors = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eigenvalue_order(&values[a], &values[b]));

    let mut sorted_vecs = Mat::<c64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = column(vectors, src);
        normalize_phase(&mut col);
        for (i, z) in col.into_iter().enumerate() {
            sorted_vecs[(i, dst)] = z;
        }
    }
    Ok((order.iter().map(|&k| values[k]).collect(), sorted_vecs))
}

/// Smallest eigenvalue of a Hermitian matrix together with its unit,
/// phase-normalized eigenvector. The input is Hermitianized first.
pub fn hermitian_min_eig(h: &Mat<c64>) -> Result<(f64, Vec<c64>)> {
    let mut h = h.clone();
    hermitianize(&mut h);
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("hermitian eigensolve failed: {e:?}")))?;
    // faer returns eigenvalues in nondecreasing order.
    let lam = evd.S().column_vector()[0].re;
    let mut v = column(evd.U(), 0);
    normalize_phase(&mut v);
    Ok((lam, v))
}

/// Smallest singular value of a complex matrix and its right singular vector.
pub fn min_singular(m: MatRef<'_, c64>) -> Result<(f64, Vec<c64>)> {
    let svd = m
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("svd failed: {e:?}")))?;
    let k = m.nrows().min(m.ncols());
    if m.ncols() == 0 {
        return Ok((0.0, Vec::new()));
    }
    if k < m.ncols() {
        // Wide matrix: a nontrivial null space exists.
        let full = m
            .svd()
            .map_err(|e| Error::Numerical(format!("svd failed: {e:?}")))?;
        let mut v = column(full.V(), m.ncols() - 1);
        normalize_phase(&mut v);
        return Ok((0.0, v));
    }
    let sigma = svd.S().column_vector()[k - 1].re.max(0.0);
    let mut v = column(svd.V(), k - 1);
    normalize_phase(&mut v);
    Ok((sigma, v))
}

/// Singular values of a complex matrix, nonincreasing.
pub fn singular_values(m: MatRef<'_, c64>) -> Result<Vec<f64>> {
    m.singular_values()
        .map_err(|e| Error::Numerical(format!("svd failed: {e:?}")))
}

/// 2-norm condition number of a square complex matrix (infinite when singular).
pub fn condition_number(m: MatRef<'_, c64>) -> Result<f64> {
    let s = singular_values(m)?;
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => Ok(hi / lo),
        (Some(_), Some(_)) => Ok(f64::INFINITY),
        _ => Ok(1.0),
    }
}

/// Moore-Penrose pseudoinverse with singular values below
/// `max(rows, cols) * eps * sigma_max` treated as zero.
pub fn pinv(m: MatRef<'_, c64>) -> Result<(Mat<c64>, usize)> {
    let (rows, cols) = (m.nrows(), m.ncols());
    if rows == 0 || cols == 0 {
        return Ok((Mat::zeros(cols, rows), 0));
    }
    let svd = m
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("svd failed: {e:?}")))?;
    let s: Vec<f64> = svd.S().column_vector().iter().map(|z| z.re).collect();
    let cut = rows.max(cols) as f64 * MACHINE_EPS * s[0];
    let rank = s.iter().filter(|&&x| x > cut).count();
    let u = svd.U();
    let v = svd.V();
    let out = Mat::from_fn(cols, rows, |i, j| {
        (0..rank)
            .map(|k| v[(i, k)] * u[(j, k)].conj() * (1.0 / s[k]))
            .sum()
    });
    Ok((out, rank))
}

/// Least-squares solution of `a * x ≈ b` via the pseudoinverse; also returns
/// the condition number of `a` (over its full column space).
pub fn lstsq(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> Result<(Mat<c64>, f64)> {
    if a.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "least squares with {} and {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.ncols() == 0 {
        return Ok((Mat::zeros(0, b.ncols()), 1.0));
    }
    let s = singular_values(a)?;
    let cond = if a.nrows() < a.ncols() || s.last().copied().unwrap_or(0.0) == 0.0 {
        f64::INFINITY
    } else {
        s[0] / s[s.len() - 1]
    };
    let (p, _) = pinv(a)?;
    Ok((&p * b, cond))
}

/// Maximum absolute entry of `m - I`.
pub fn max_dev_from_identity(m: MatRef<'_, f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((m[(i, j)] - target).abs());
        }
    }
    worst
}

/// Maximum absolute entry of `a - b`.
pub fn max_abs_diff(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    worst
}
