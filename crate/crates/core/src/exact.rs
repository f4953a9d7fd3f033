//! Exact DMD with residuals from the dual least-squares formulation.
//!
//! With `X ≈ U Σ V^T`, exact DMD compresses the dynamics to
//! `K̃ = U^T Y V Σ^{-1}`. Writing `B = Y V Σ^{-1}` and using `X V Σ^{-1} = U`,
//! `K̃` is also the least-squares solution of `min ‖B − U M‖_F`. That problem
//! has no vanishing-residual pathology, and a candidate eigenpair `(λ, v)` is
//! scored by the relative residual `‖(B − λU) v‖ / ‖v‖`, equivalently
//! `sqrt(v^*[L̃ − λK̃^* − λ̄K̃ + |λ|²I]v) / ‖v‖` with `L̃ = B^T B`.

use faer::{c64, Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::{self, MACHINE_EPS};
use crate::snapshot::SnapshotPairs;

/// Eigenvector matrices with condition number above this are flagged.
pub const DEFECTIVE_CONDITION: f64 = 1e12;

/// Rank-`r` factors of a snapshot matrix.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// `d × r`, orthonormal columns (POD modes).
    pub u: Mat<f64>,
    /// Length `r`, positive and nonincreasing.
    pub sigma: Vec<f64>,
    /// `M × r`, orthonormal columns.
    pub v: Mat<f64>,
    /// Rank asked for, `None` in automatic mode.
    pub requested_rank: Option<usize>,
    /// Number of singular values above the relative cut.
    pub numerical_rank: usize,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// True when the requested rank exceeded the numerical rank and was reduced.
    pub fn rank_reduced(&self) -> bool {
        self.requested_rank.is_some_and(|r| r > self.rank())
    }
}

/// Default relative singular-value cut: `max(d, M) · eps`.
pub fn default_rel_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * MACHINE_EPS
}

/// Truncated SVD of `x`. The effective rank is
/// `min(rank_request, #{σ_i > rel_tol · σ_1})`; `None` keeps every singular
/// value above the cut.
pub fn truncated_svd(
    x: MatRef<'_, f64>,
    rank_request: Option<usize>,
    rel_tol: Option<f64>,
) -> Result<TruncatedSvd> {
    let (d, m) = (x.nrows(), x.ncols());
    if d == 0 || m == 0 {
        return Err(Error::Rank("empty matrix".into()));
    }
    if let Some(r) = rank_request {
        if r == 0 || r > d.min(m) {
            return Err(Error::Argument(format!(
                "rank {r} outside 1..={} for a {d}x{m} matrix",
                d.min(m)
            )));
        }
    }
    if !linalg::all_finite(x) {
        return Err(Error::Argument("matrix contains non-finite values".into()));
    }
    let svd = x
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("svd failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let sigma_all: Vec<f64> = s.iter().copied().collect();
    if sigma_all[0] <= 0.0 {
        return Err(Error::Rank("matrix is identically zero".into()));
    }
    let tol = rel_tol.unwrap_or_else(|| default_rel_tol(d, m));
    let numerical_rank = sigma_all.iter().filter(|&&v| v > tol * sigma_all[0]).count();
    let r = rank_request.map_or(numerical_rank, |req| req.min(numerical_rank));

    let mut u = svd.U().subcols(0, r).to_owned();
    let mut v = svd.V().subcols(0, r).to_owned();
    linalg::fix_signs(&mut u, Some(&mut v));
    Ok(TruncatedSvd {
        u,
        sigma: sigma_all[..r].to_vec(),
        v,
        requested_rank: rank_request,
        numerical_rank,
    })
}

/// Output of exact DMD together with its residual machinery.
#[derive(Debug, Clone)]
pub struct ExactDmdResult {
    pub svd: TruncatedSvd,
    /// `K̃ = U^T Y V Σ^{-1}`.
    pub k_tilde: Mat<f64>,
    /// `L̃ = (Y V Σ^{-1})^T (Y V Σ^{-1})`, symmetric positive semidefinite.
    pub l_tilde: Mat<f64>,
    pub eigenvalues: Vec<c64>,
    /// Unit right eigenvectors of `K̃`, one per column.
    pub eigvec_coeffs: Mat<c64>,
    /// Exact modes `Φ = Y V Σ^{-1} W`.
    pub modes: Mat<c64>,
    /// Residual of each eigenpair.
    pub residuals: Vec<f64>,
    /// `B = Y V Σ^{-1}` (`d × r`).
    pub images: Mat<f64>,
    /// 2-norm condition number of the eigenvector matrix.
    pub eigvec_condition: f64,
    /// Set when `eigvec_condition` exceeds [`DEFECTIVE_CONDITION`].
    pub defective: bool,
    // R factor of the thin QR of [U  B]; split at column r.
    pencil: Mat<f64>,
}

/// Apply `sqrt(w_m · M)` column scaling; a no-op for uniform `1/M` weights.
fn weighted_columns(pairs: &SnapshotPairs) -> (Mat<f64>, Mat<f64>) {
    if pairs.has_default_weights() {
        return (pairs.x().to_owned(), pairs.y().to_owned());
    }
    let m = pairs.len() as f64;
    let scale: Vec<f64> = pairs.weights().iter().map(|w| (w * m).sqrt()).collect();
    let x = pairs.x();
    let y = pairs.y();
    (
        Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * scale[j]),
        Mat::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] * scale[j]),
    )
}

/// Exact DMD at the given rank (`None` = numerical rank) with residuals.
pub fn exact_dmd(pairs: &SnapshotPairs, rank: Option<usize>) -> Result<ExactDmdResult> {
    exact_dmd_with_tol(pairs, rank, None)
}

pub fn exact_dmd_with_tol(
    pairs: &SnapshotPairs,
    rank: Option<usize>,
    rel_tol: Option<f64>,
) -> Result<ExactDmdResult> {
    let (x, y) = weighted_columns(pairs);
    let svd = truncated_svd(x.as_ref(), rank, rel_tol)?;
    let r = svd.rank();
    let d = x.nrows();

    // B = Y V Σ^{-1}
    let yv = &y * &svd.v;
    let images = Mat::from_fn(d, r, |i, j| yv[(i, j)] / svd.sigma[j]);
    let k_tilde = svd.u.transpose() * &images;
    let mut l_tilde = images.transpose() * &images;
    linalg::symmetrize(&mut l_tilde);

    let (eigenvalues, eigvec_coeffs) = linalg::eigen_real(k_tilde.as_ref())?;
    let modes = linalg::to_complex(images.as_ref()) * &eigvec_coeffs;
    let eigvec_condition = linalg::condition_number(eigvec_coeffs.as_ref())?;

    let joined = Mat::from_fn(d, 2 * r, |i, j| {
        if j < r {
            svd.u[(i, j)]
        } else {
            images[(i, j - r)]
        }
    });
    let pencil = joined.qr().thin_R().to_owned();

    let mut result = ExactDmdResult {
        svd,
        k_tilde,
        l_tilde,
        eigenvalues,
        eigvec_coeffs,
        modes,
        residuals: Vec::new(),
        images,
        eigvec_condition,
        defective: eigvec_condition > DEFECTIVE_CONDITION,
        pencil,
    };
    result.residuals = (0..r)
        .map(|j| {
            let w = linalg::column(result.eigvec_coeffs.as_ref(), j);
            result.residual(result.eigenvalues[j], &w)
        })
        .collect::<Result<_>>()?;
    Ok(result)
}

impl ExactDmdResult {
    pub fn rank(&self) -> usize {
        self.svd.rank()
    }

    /// Relative residual `‖(B − λU) v‖ / ‖v‖`, evaluated directly from the
    /// `d × r` factors.
    pub fn residual(&self, lambda: c64, v: &[c64]) -> Result<f64> {
        self.check_coeffs(v)?;
        let nv = linalg::norm(v);
        let bv = linalg::real_mat_vec(self.images.as_ref(), v);
        let uv = linalg::real_mat_vec(self.svd.u.as_ref(), v);
        let diff: Vec<c64> = bv.iter().zip(&uv).map(|(b, u)| b - lambda * u).collect();
        Ok(linalg::norm(&diff) / nv)
    }

    /// The same residual through the `r × r` Gram form
    /// `sqrt(v^*[L̃ − λK̃^* − λ̄K̃ + |λ|²I]v) / ‖v‖`, clamped at zero.
    pub fn residual_gram(&self, lambda: c64, v: &[c64]) -> Result<f64> {
        self.check_coeffs(v)?;
        let h = self.residual_form(lambda);
        let num = linalg::quad_form(h.as_ref(), v).re;
        let den: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        Ok((num / den).max(0.0).sqrt())
    }

    /// Shortcut valid at an exact eigenpair:
    /// `sqrt(w^* L̃ w / ‖w‖² − |λ|²)`, clamped at zero.
    pub fn residual_eigenpair_shortcut(&self, j: usize) -> f64 {
        let w = linalg::column(self.eigvec_coeffs.as_ref(), j);
        let l = linalg::to_complex(self.l_tilde.as_ref());
        let num = linalg::quad_form(l.as_ref(), &w).re;
        let den: f64 = w.iter().map(|z| z.norm_sqr()).sum();
        (num / den - self.eigenvalues[j].norm_sqr()).max(0.0).sqrt()
    }

    /// Hermitian matrix `L̃ − z K̃^T − z̄ K̃ + |z|² I`.
    pub fn residual_form(&self, z: c64) -> Mat<c64> {
        let r = self.rank();
        let mut h = Mat::from_fn(r, r, |i, j| {
            let mut e = c64::new(self.l_tilde[(i, j)], 0.0)
                - z * self.k_tilde[(j, i)]
                - z.conj() * self.k_tilde[(i, j)];
            if i == j {
                e += c64::new(z.norm_sqr(), 0.0);
            }
            e
        });
        linalg::hermitianize(&mut h);
        h
    }

    /// Pseudospectral point solve: `τ(z) = min_{‖v‖=1} ‖(B − zU)v‖` and the
    /// minimizing unit vector. Uses the QR-compressed pencil of `[U B]`, so
    /// the cost per point is independent of `d`.
    pub fn pseudo_point(&self, z: c64) -> Result<(f64, Vec<c64>)> {
        let r = self.rank();
        let rows = self.pencil.nrows();
        let m = Mat::from_fn(rows, r, |i, j| {
            c64::new(self.pencil[(i, r + j)], 0.0) - z * self.pencil[(i, j)]
        });
        linalg::min_singular(m.as_ref())
    }

    /// Statespace mode `B v` attached to a coefficient vector.
    pub fn mode_of(&self, v: &[c64]) -> Vec<c64> {
        linalg::real_mat_vec(self.images.as_ref(), v)
    }

    fn check_coeffs(&self, v: &[c64]) -> Result<()> {
        if v.len() != self.rank() {
            return Err(Error::Shape(format!(
                "coefficient vector has length {}, rank is {}",
                v.len(),
                self.rank()
            )));
        }
        if linalg::norm(v) == 0.0 {
            return Err(Error::Argument("coefficient vector must be nonzero".into()));
        }
        Ok(())
    }
}

/// `τ(z)` and its minimizing vector; see [`ExactDmdResult::pseudo_point`].
pub fn exact_pseudo_point(result: &ExactDmdResult, z: c64) -> Result<(f64, Vec<c64>)> {
    result.pseudo_point(z)
}

/// Residual of the Galerkin (projected) formulation, with the POD feature map
/// `x ↦ x^T U`:
///
/// `sqrt(v^*[U^T Y Y^T U − λ U^T Y X^T U − λ̄ U^T X Y^T U + |λ|² U^T X X^T U]v
///       / v^* U^T X X^T U v)`.
///
/// The numerator is `‖(Y^T − λX^T) U v‖²` and the denominator `‖X^T U v‖²`;
/// both are evaluated as norms of `M`-vectors. When `r = M ≤ d` this
/// residual vanishes at every eigenpair of `K̃^T`, which is why it cannot
/// certify anything.
pub fn naive_projected_residual(
    result: &ExactDmdResult,
    pairs: &SnapshotPairs,
    lambda: c64,
    v: &[c64],
) -> Result<f64> {
    result.check_coeffs(v)?;
    if pairs.dim() != result.svd.u.nrows() {
        return Err(Error::Shape("pairs do not match the decomposition".into()));
    }
    let (x, y) = weighted_columns(pairs);
    let uv = linalg::real_mat_vec(result.svd.u.as_ref(), v);
    let xt_uv = linalg::real_mat_vec(x.transpose(), &uv);
    let yt_uv = linalg::real_mat_vec(y.transpose(), &uv);
    let den = linalg::norm(&xt_uv);
    if den <= 0.0 {
        return Err(Error::Degenerate("X^T U v vanishes".into()));
    }
    let diff: Vec<c64> = yt_uv.iter().zip(&xt_uv).map(|(a, b)| a - lambda * b).collect();
    Ok(linalg::norm(&diff) / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use faer::mat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn svd_of_identity() {
        let x = Mat::<f64>::identity(2, 2);
        let s = truncated_svd(x.as_ref(), Some(2), None).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0]);
        let rebuilt = &s.u * Mat::from_fn(2, 2, |i, j| if i == j { s.sigma[i] } else { 0.0 })
            * s.v.transpose();
        assert!(linalg::max_dev_from_identity(rebuilt.as_ref()) < 1e-15);
    }

    #[test]
    fn svd_of_rank_one_diagonal() {
        let x = mat![[3.0, 0.0], [0.0, 0.0]];
        let s = truncated_svd(x.as_ref(), Some(1), None).unwrap();
        assert_eq!(s.sigma.len(), 1);
        assert!((s.sigma[0] - 3.0).abs() < 1e-15);
        // Asking for more than the numerical rank silently reduces it.
        let s = truncated_svd(x.as_ref(), Some(2), None).unwrap();
        assert_eq!(s.rank(), 1);
        assert!(s.rank_reduced());
    }

    #[test]
    fn svd_of_constructed_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = synthetic::random_orthonormal(5, 2, &mut rng);
        let v = synthetic::random_orthonormal(4, 2, &mut rng);
        let x = Mat::from_fn(5, 4, |i, j| 2.0 * u[(i, 0)] * v[(j, 0)] + u[(i, 1)] * v[(j, 1)]);
        let s = truncated_svd(x.as_ref(), Some(2), None).unwrap();
        assert!((s.sigma[0] - 2.0).abs() < 1e-12);
        assert!((s.sigma[1] - 1.0).abs() < 1e-12);
        let utu = s.u.transpose() * &s.u;
        let vtv = s.v.transpose() * &s.v;
        assert!(linalg::max_dev_from_identity(utu.as_ref()) <= 1e-12);
        assert!(linalg::max_dev_from_identity(vtv.as_ref()) <= 1e-12);
    }

    #[test]
    fn svd_errors() {
        let zero = Mat::<f64>::zeros(3, 2);
        assert!(matches!(truncated_svd(zero.as_ref(), None, None), Err(Error::Rank(_))));
        let x = Mat::<f64>::identity(2, 2);
        assert!(matches!(truncated_svd(x.as_ref(), Some(3), None), Err(Error::Argument(_))));
        assert!(matches!(truncated_svd(x.as_ref(), Some(0), None), Err(Error::Argument(_))));
    }

    #[test]
    fn scalar_linear_system() {
        let pairs = SnapshotPairs::new(mat![[1.0, 0.5, 0.25]], mat![[0.5, 0.25, 0.125]]).unwrap();
        let res = exact_dmd(&pairs, Some(1)).unwrap();
        assert!((res.eigenvalues[0] - c64::new(0.5, 0.0)).norm() < 1e-14);
        assert!(res.residuals[0] < 1e-12);
    }

    #[test]
    fn identity_dynamics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = synthetic::random_matrix(2, 10, &mut rng);
        let pairs = SnapshotPairs::new(x.clone(), x).unwrap();
        let res = exact_dmd(&pairs, Some(2)).unwrap();
        for (lam, r) in res.eigenvalues.iter().zip(&res.residuals) {
            assert!((lam - c64::new(1.0, 0.0)).norm() < 1e-12);
            assert!(*r < 1e-12);
        }
    }

    #[test]
    fn planar_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = synthetic::rotation(std::f64::consts::FRAC_PI_3);
        let pairs = synthetic::linear_pairs(a.as_ref(), 50, &mut rng);
        let res = exact_dmd(&pairs, Some(2)).unwrap();
        let h = 3.0_f64.sqrt() / 2.0;
        assert!((res.eigenvalues[0] - c64::new(0.5, h)).norm() < 1e-12);
        assert!((res.eigenvalues[1] - c64::new(0.5, -h)).norm() < 1e-12);
        assert!(res.residuals.iter().all(|&r| r <= 1e-12));
        assert!(!res.defective);
    }

    #[test]
    fn modes_match_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = synthetic::random_matrix(6, 20, &mut rng);
        let y = synthetic::random_matrix(6, 20, &mut rng);
        let pairs = SnapshotPairs::new(x, y).unwrap();
        let res = exact_dmd(&pairs, Some(4)).unwrap();
        for j in 0..4 {
            let w = linalg::column(res.eigvec_coeffs.as_ref(), j);
            let expect = res.mode_of(&w);
            let got = linalg::column(res.modes.as_ref(), j);
            let err: Vec<c64> = expect.iter().zip(&got).map(|(a, b)| a - b).collect();
            assert!(linalg::norm(&err) <= 1e-10 * linalg::norm(&expect));
        }
        let asym = linalg::max_abs_diff(res.l_tilde.as_ref(), res.l_tilde.transpose());
        assert!(asym <= 1e-12);
    }

    #[test]
    fn pseudo_point_at_exact_eigenvalue() {
        let pairs = SnapshotPairs::new(mat![[1.0, 0.5, 0.25]], mat![[0.5, 0.25, 0.125]]).unwrap();
        let res = exact_dmd(&pairs, Some(1)).unwrap();
        let (tau, v) = res.pseudo_point(c64::new(0.5, 0.0)).unwrap();
        assert!(tau < 1e-10);
        assert!((linalg::norm(&v) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pseudo_point_at_zero_is_smallest_singular_value_of_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = synthetic::random_matrix(7, 15, &mut rng);
        let y = synthetic::random_matrix(7, 15, &mut rng);
        let pairs = SnapshotPairs::new(x, y).unwrap();
        let res = exact_dmd(&pairs, Some(5)).unwrap();
        let (tau, _) = res.pseudo_point(c64::new(0.0, 0.0)).unwrap();
        let sv = res.images.singular_values().unwrap();
        assert!((tau - sv[4]).abs() < 1e-12);
    }

    #[test]
    fn naive_residual_scalar_hand_computed() {
        // d = 1, u = ±1: residual = ‖Y − X‖ / ‖X‖ = 0.1 / sqrt(3).
        let pairs = SnapshotPairs::new(mat![[1.0, 1.0, 1.0]], mat![[1.0, 1.0, 1.1]]).unwrap();
        let res = exact_dmd(&pairs, Some(1)).unwrap();
        let r = naive_projected_residual(&res, &pairs, c64::new(1.0, 0.0), &[c64::new(1.0, 0.0)])
            .unwrap();
        let expect = (0.0_f64 + 0.0 + 0.1 * 0.1).sqrt() / 3.0_f64.sqrt();
        assert!((r - expect).abs() < 1e-14, "{r} vs {expect}");
    }

    #[test]
    fn naive_residual_identity_dynamics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = synthetic::random_matrix(3, 8, &mut rng);
        let pairs = SnapshotPairs::new(x.clone(), x).unwrap();
        let res = exact_dmd(&pairs, Some(3)).unwrap();
        let v = vec![c64::new(0.3, 0.1), c64::new(-1.0, 0.2), c64::new(0.5, 0.0)];
        let r = naive_projected_residual(&res, &pairs, c64::new(1.0, 0.0), &v).unwrap();
        assert!(r < 1e-13);
    }

    #[test]
    fn wrong_length_vector_is_rejected() {
        let pairs = SnapshotPairs::new(mat![[1.0, 0.5, 0.25]], mat![[0.5, 0.25, 0.125]]).unwrap();
        let res = exact_dmd(&pairs, Some(1)).unwrap();
        assert!(res.residual(c64::new(0.0, 0.0), &[]).is_err());
        assert!(res.residual(c64::new(0.0, 0.0), &[c64::new(0.0, 0.0)]).is_err());
    }
}
