//! Synthetic systems with known spectra, used by the self-test, the
//! acceptance suite and the examples.

use faer::{Mat, MatRef};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg;
use crate::snapshot::SnapshotPairs;

/// `rows × cols` matrix of independent standard normal entries.
pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat<f64> {
    let mut m = Mat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// `rows × cols` (`cols ≤ rows`) matrix with orthonormal columns.
pub fn random_orthonormal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat<f64> {
    assert!(cols <= rows);
    let g = random_matrix(rows, cols, rng);
    let mut q = g.qr().compute_thin_Q();
    linalg::fix_signs(&mut q, None);
    q
}

/// Haar-like random orthogonal `d × d` matrix.
pub fn random_orthogonal<R: Rng>(d: usize, rng: &mut R) -> Mat<f64> {
    random_orthonormal(d, d, rng)
}

/// Planar rotation by `theta`.
pub fn rotation(theta: f64) -> Mat<f64> {
    let (s, c) = theta.sin_cos();
    faer::mat![[c, -s], [s, c]]
}

/// `M` random Gaussian states `X` and their images `Y = A X`.
pub fn linear_pairs<R: Rng>(a: MatRef<'_, f64>, m: usize, rng: &mut R) -> SnapshotPairs {
    let x = random_matrix(a.ncols(), m, rng);
    let y = a * &x;
    SnapshotPairs::new(x, y).expect("consistent shapes")
}

/// Trajectory `x_0, A x_0, …, A^{steps-1} x_0`, one state per column.
pub fn linear_trajectory(a: MatRef<'_, f64>, x0: &[f64], steps: usize) -> Mat<f64> {
    let d = x0.len();
    let mut out = Mat::zeros(d, steps);
    for i in 0..d {
        out[(i, 0)] = x0[i];
    }
    for t in 1..steps {
        for i in 0..d {
            out[(i, t)] = (0..d).map(|k| a[(i, k)] * out[(k, t - 1)]).sum();
        }
    }
    out
}

/// Smooth nonlinear map on the plane used to produce non-Koopman-invariant
/// data: a damped rotation with a quadratic perturbation.
pub fn nonlinear_pairs<R: Rng>(d: usize, m: usize, noise: f64, rng: &mut R) -> SnapshotPairs {
    let x = random_matrix(d, m, rng);
    let mut y = Mat::zeros(d, m);
    for j in 0..m {
        for i in 0..d {
            let next = x[((i + 1) % d, j)];
            let v: f64 = 0.8 * next + 0.3 * x[(i, j)] * x[(i, j)] - 0.1 * x[(i, j)] * next;
            let e: f64 = rng.sample(StandardNormal);
            y[(i, j)] = v + noise * e;
        }
    }
    SnapshotPairs::new(x, y).expect("consistent shapes")
}
