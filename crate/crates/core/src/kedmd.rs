//! Kernelized EDMD and its dual residuals.
//!
//! From the Gram matrices `Ĝ = √W S_XX √W` and `Â = √W S_YX √W` the
//! eigendecomposition `Ĝ = Q Σ² Q^T` gives the compression
//! `K̂ = Σ̂^† Q̂^T Â Q̂ Σ̂^†` on the `r` leading principal components. The
//! transpose `K̂^T` solves a least-squares problem in the implicit feature
//! space whose residual is carried by *left* eigenvectors:
//!
//! `res(λ, v) = sqrt(v^*[L̂ − λK̂^* − λ̄K̂ + |λ|²I]v) / ‖v‖`, with
//! `L̂ = (Q̂Σ̂^†)^T (√W S_YY √W) (Q̂Σ̂^†)`.

use faer::{c64, Mat, Side};

use crate::error::{Error, Result};
use crate::kernel::{gram, KernelSpec};
use crate::linalg::{self, MACHINE_EPS};
use crate::snapshot::SnapshotPairs;

/// Two eigenvalues closer than this make left/right pairing ambiguous.
pub const PAIRING_AMBIGUITY: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct KedmdResult {
    pub spec: KernelSpec,
    /// `M × r`, orthonormal columns: leading eigenvectors of `Ĝ`.
    pub q_hat: Mat<f64>,
    /// Length `r`, square roots of the leading eigenvalues of `Ĝ`.
    pub sigma_hat: Vec<f64>,
    pub k_hat: Mat<f64>,
    /// Symmetric positive semidefinite.
    pub l_hat: Mat<f64>,
    pub eigenvalues: Vec<c64>,
    /// Unit right eigenvectors of `K̂` (columns).
    pub right_vecs: Mat<c64>,
    /// Unit left eigenvectors of `K̂` (columns `v` with `v^* K̂ = λ v^*`).
    pub left_vecs: Mat<c64>,
    pub residuals: Vec<f64>,
    pub requested_rank: Option<usize>,
    /// Number of eigenvalues of `Ĝ` above `M · eps · σ_1²`.
    pub numerical_rank: usize,
    /// Some left/right eigenvector pairing was ambiguous.
    pub pairing_ambiguous: bool,
    pub eigvec_condition: f64,
    pub defective: bool,
}

/// Kernelized EDMD with left-eigenvector residuals. `rank = None` keeps the
/// full numerical rank of `Ĝ`.
pub fn kedmd(pairs: &SnapshotPairs, spec: &KernelSpec, rank: Option<usize>) -> Result<KedmdResult> {
    let m = pairs.len();
    if let Some(r) = rank {
        if r == 0 || r > m {
            return Err(Error::Argument(format!("rank {r} outside 1..={m}")));
        }
    }
    let w = pairs.weights();
    let g = gram(spec, pairs.x(), pairs.x(), w, w)?;
    let a = gram(spec, pairs.y(), pairs.x(), w, w)?;
    let myy = gram(spec, pairs.y(), pairs.y(), w, w)?;

    let evd = g
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("gram eigensolve failed: {e:?}")))?;
    // faer sorts ascending; flip to descending and clamp roundoff negatives.
    let eig: Vec<f64> = evd.S().column_vector().iter().rev().map(|v| v.max(0.0)).collect();
    let q_all = evd.U();
    if eig[0] <= 0.0 {
        return Err(Error::Rank("kernel Gram matrix is zero".into()));
    }
    let cut = m as f64 * MACHINE_EPS * eig[0];
    let numerical_rank = eig.iter().filter(|&&v| v > cut).count();
    let r = rank.map_or(numerical_rank, |req| req.min(numerical_rank));

    let mut q_hat = Mat::from_fn(m, r, |i, j| q_all[(i, m - 1 - j)]);
    linalg::fix_signs(&mut q_hat, None);
    let sigma_hat: Vec<f64> = eig[..r].iter().map(|v| v.sqrt()).collect();
    let p = Mat::from_fn(m, r, |i, j| q_hat[(i, j)] / sigma_hat[j]);

    let k_hat = p.transpose() * (&a * &p);
    let mut l_hat = p.transpose() * (&myy * &p);
    linalg::symmetrize(&mut l_hat);

    let (eigenvalues, right_vecs) = linalg::eigen_real(k_hat.as_ref())?;
    let (left_vals, left_all) = linalg::eigen_real(k_hat.transpose())?;
    let (left_vecs, pairing_ambiguous) = pair_left_vectors(&eigenvalues, &left_vals, &left_all);
    let eigvec_condition = linalg::condition_number(right_vecs.as_ref())?;

    let mut result = KedmdResult {
        spec: *spec,
        q_hat,
        sigma_hat,
        k_hat,
        l_hat,
        eigenvalues,
        right_vecs,
        left_vecs,
        residuals: Vec::new(),
        requested_rank: rank,
        numerical_rank,
        pairing_ambiguous,
        eigvec_condition,
        defective: eigvec_condition > crate::exact::DEFECTIVE_CONDITION,
    };
    result.residuals = (0..r)
        .map(|j| {
            let v = linalg::column(result.left_vecs.as_ref(), j);
            result.residual(result.eigenvalues[j], &v)
        })
        .collect::<Result<_>>()?;
    Ok(result)
}

/// Greedy match of each `λ_j` to the unused eigenvalue of `K̂^T` closest to
/// `conj(λ_j)`.
fn pair_left_vectors(values: &[c64], left_vals: &[c64], left_vecs: &Mat<c64>) -> (Mat<c64>, bool) {
    let n = values.len();
    let mut used = vec![false; n];
    let mut out = Mat::<c64>::zeros(n, n);
    let mut ambiguous = false;
    for (j, lam) in values.iter().enumerate() {
        let target = lam.conj();
        let mut best: Option<(usize, f64)> = None;
        for (k, mu) in left_vals.iter().enumerate() {
            if used[k] {
                continue;
            }
            let dist = (mu - target).norm();
            if best.is_none_or(|(_, bd)| dist < bd) {
                best = Some((k, dist));
            }
        }
        let (k, _) = best.expect("as many left as right eigenvalues");
        used[k] = true;
        let close = left_vals
            .iter()
            .enumerate()
            .filter(|&(i, mu)| i != k && (mu - left_vals[k]).norm() < PAIRING_AMBIGUITY)
            .count();
        ambiguous |= close > 0;
        for i in 0..n {
            out[(i, j)] = left_vecs[(i, k)];
        }
    }
    (out, ambiguous)
}

impl KedmdResult {
    pub fn rank(&self) -> usize {
        self.sigma_hat.len()
    }

    /// `Q̂ Σ̂^†` (`M × r`).
    pub fn whitening(&self) -> Mat<f64> {
        Mat::from_fn(self.q_hat.nrows(), self.rank(), |i, j| {
            self.q_hat[(i, j)] / self.sigma_hat[j]
        })
    }

    /// `L̂ − z K̂^T − z̄ K̂ + |z|² I`, Hermitianized.
    pub fn residual_form(&self, z: c64) -> Mat<c64> {
        let r = self.rank();
        let mut h = Mat::from_fn(r, r, |i, j| {
            let mut e = c64::new(self.l_hat[(i, j)], 0.0)
                - z * self.k_hat[(j, i)]
                - z.conj() * self.k_hat[(i, j)];
            if i == j {
                e += c64::new(z.norm_sqr(), 0.0);
            }
            e
        });
        linalg::hermitianize(&mut h);
        h
    }

    /// `sqrt(v^* H(λ) v / ‖v‖²)`, clamped at zero.
    pub fn residual(&self, lambda: c64, v: &[c64]) -> Result<f64> {
        if v.len() != self.rank() {
            return Err(Error::Shape(format!(
                "coefficient vector has length {}, rank is {}",
                v.len(),
                self.rank()
            )));
        }
        let den: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if den == 0.0 {
            return Err(Error::Argument("coefficient vector must be nonzero".into()));
        }
        let num = linalg::quad_form(self.residual_form(lambda).as_ref(), v).re;
        Ok((num / den).max(0.0).sqrt())
    }

    /// `τ(z) = sqrt(max(λ_min(H(z)), 0))` and the minimizing unit vector.
    pub fn pseudo_point(&self, z: c64) -> Result<(f64, Vec<c64>)> {
        let (lam, v) = linalg::hermitian_min_eig(&self.residual_form(z))?;
        Ok((lam.max(0.0).sqrt(), v))
    }
}

pub fn kedmd_pseudo_point(result: &KedmdResult, z: c64) -> Result<(f64, Vec<c64>)> {
    result.pseudo_point(z)
}

/// Evaluate the learned dictionary `x ↦ k(x) Q̂ Σ̂^†` at an arbitrary state,
/// with `k(x)_m = sqrt(w_m) S(x, x_m) sqrt(w̄)`. At a training point `x_j`
/// this reproduces row `j` of `Q̂ Σ̂`. Only uniform weights are supported.
pub fn eval_dictionary_at(result: &KedmdResult, pairs: &SnapshotPairs, x: &[f64]) -> Result<Vec<f64>> {
    let wbar = pairs.uniform_weight().ok_or_else(|| {
        Error::Unsupported("out-of-sample evaluation requires uniform weights".into())
    })?;
    if x.len() != pairs.dim() {
        return Err(Error::Shape(format!(
            "point has dimension {}, data has {}",
            x.len(),
            pairs.dim()
        )));
    }
    if pairs.len() != result.q_hat.nrows() {
        return Err(Error::Shape("pairs do not match the decomposition".into()));
    }
    let xs = pairs.x();
    let row: Vec<f64> = (0..pairs.len())
        .map(|m| {
            let xm: Vec<f64> = (0..xs.nrows()).map(|i| xs[(i, m)]).collect();
            wbar * result.spec.eval(x, &xm)
        })
        .collect();
    let p = result.whitening();
    Ok((0..result.rank())
        .map(|j| (0..row.len()).map(|m| row[m] * p[(m, j)]).sum())
        .collect())
}

/// Residual of the Galerkin formulation in the feature map `x ↦ Ψ(x) Ẑ`:
/// `‖(Â Q̂Σ̂^† − λ Q̂Σ̂) v‖ / ‖Q̂Σ̂ v‖`, the two `M × r` factors being the
/// weighted feature matrices of `Y` and `X` in that map. At full rank it
/// vanishes at every eigenpair of `K̂`.
pub fn naive_kernel_residual(
    result: &KedmdResult,
    pairs: &SnapshotPairs,
    lambda: c64,
    v: &[c64],
) -> Result<f64> {
    if v.len() != result.rank() {
        return Err(Error::Shape("coefficient vector length differs from rank".into()));
    }
    if pairs.len() != result.q_hat.nrows() {
        return Err(Error::Shape("pairs do not match the decomposition".into()));
    }
    let w = pairs.weights();
    let a = gram(&result.spec, pairs.y(), pairs.x(), w, w)?;
    let fy = &a * result.whitening();
    let fx = Mat::from_fn(result.q_hat.nrows(), result.rank(), |i, j| {
        result.q_hat[(i, j)] * result.sigma_hat[j]
    });
    let yv = linalg::real_mat_vec(fy.as_ref(), v);
    let xv = linalg::real_mat_vec(fx.as_ref(), v);
    let den = linalg::norm(&xv);
    if den <= 0.0 {
        return Err(Error::Degenerate("feature image of v vanishes".into()));
    }
    let diff: Vec<c64> = yv.iter().zip(&xv).map(|(a, b)| a - lambda * b).collect();
    Ok(linalg::norm(&diff) / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spread_pairs(seed: u64, d: usize, m: usize, noise: f64) -> SnapshotPairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        synthetic::nonlinear_pairs(d, m, noise, &mut rng)
    }

    #[test]
    fn identity_dynamics_gives_unit_compression() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = synthetic::random_matrix(6, 12, &mut rng);
        let pairs = SnapshotPairs::new(x.clone(), x).unwrap();
        let spec = KernelSpec::gaussian(3.0).unwrap();
        let res = kedmd(&pairs, &spec, None).unwrap();
        let r = res.rank();
        assert!(linalg::max_dev_from_identity(res.k_hat.as_ref()) < 1e-9);
        assert!(linalg::max_dev_from_identity(res.l_hat.as_ref()) < 1e-9);
        for j in 0..r {
            assert!((res.eigenvalues[j] - c64::new(1.0, 0.0)).norm() < 1e-9);
            assert!(res.residuals[j] < 1e-4);
        }
        let (tau, _) = res.pseudo_point(c64::new(1.0, 0.0)).unwrap();
        assert!(tau < 1e-8, "tau = {tau}");
    }

    #[test]
    fn rank_one_compression_is_rayleigh_quotient() {
        let pairs = spread_pairs(4, 3, 10, 0.1);
        let spec = KernelSpec::laplacian(1.5).unwrap();
        let res = kedmd(&pairs, &spec, Some(1)).unwrap();
        let w = pairs.weights();
        let a = gram(&spec, pairs.y(), pairs.x(), w, w).unwrap();
        let q = linalg::real_column(res.q_hat.as_ref(), 0);
        let aq: Vec<f64> = (0..10).map(|i| (0..10).map(|k| a[(i, k)] * q[k]).sum()).collect();
        let qaq: f64 = q.iter().zip(&aq).map(|(x, y)| x * y).sum();
        let expect = qaq / (res.sigma_hat[0] * res.sigma_hat[0]);
        assert!((res.k_hat[(0, 0)] - expect).abs() < 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn whitened_features_are_orthonormal() {
        let pairs = spread_pairs(5, 4, 25, 0.05);
        let spec = KernelSpec::gaussian(2.0).unwrap();
        let res = kedmd(&pairs, &spec, Some(10)).unwrap();
        let w = pairs.weights();
        let g = gram(&spec, pairs.x(), pairs.x(), w, w).unwrap();
        let p = res.whitening();
        let gram_whitened = p.transpose() * (&g * &p);
        assert!(linalg::max_dev_from_identity(gram_whitened.as_ref()) < 1e-8);
        let qtq = res.q_hat.transpose() * &res.q_hat;
        assert!(linalg::max_dev_from_identity(qtq.as_ref()) < 1e-10);
        let asym = linalg::max_abs_diff(res.l_hat.as_ref(), res.l_hat.transpose());
        assert!(asym <= 1e-10);
    }

    #[test]
    fn left_vectors_are_left_eigenvectors() {
        let pairs = spread_pairs(6, 3, 20, 0.1);
        let spec = KernelSpec::gaussian(2.0).unwrap();
        let res = kedmd(&pairs, &spec, Some(8)).unwrap();
        let kc = linalg::to_complex(res.k_hat.as_ref());
        let knorm = res.k_hat.norm_l2();
        for j in 0..res.rank() {
            let v = linalg::column(res.left_vecs.as_ref(), j);
            // v^* K̂ = λ v^*  <=>  K̂^T conj... check via (K̂^* v) = conj(λ) v.
            let kt_v = linalg::mat_vec(kc.transpose(), &v);
            let err: Vec<c64> = kt_v
                .iter()
                .zip(&v)
                .map(|(a, b)| a - res.eigenvalues[j].conj() * b)
                .collect();
            assert!(linalg::norm(&err) <= 1e-8 * knorm, "pair {j}");
        }
    }

    #[test]
    fn residuals_nonnegative_and_bound_tau() {
        let pairs = spread_pairs(7, 3, 20, 0.2);
        let spec = KernelSpec::lorentzian(1.0).unwrap();
        let res = kedmd(&pairs, &spec, Some(10)).unwrap();
        for j in 0..res.rank() {
            assert!(res.residuals[j] >= 0.0);
            let (tau, _) = res.pseudo_point(res.eigenvalues[j]).unwrap();
            assert!(tau <= res.residuals[j] + 1e-8);
        }
    }

    #[test]
    fn pseudo_point_large_z_and_conjugate_symmetry() {
        let pairs = spread_pairs(8, 3, 15, 0.1);
        let spec = KernelSpec::gaussian(1.5).unwrap();
        let res = kedmd(&pairs, &spec, Some(6)).unwrap();
        let z = c64::new(6e5, 8e5);
        let (tau, _) = res.pseudo_point(z).unwrap();
        assert!((tau / z.norm() - 1.0).abs() < 1e-4);
        let z = c64::new(0.3, 0.7);
        let (t1, _) = res.pseudo_point(z).unwrap();
        let (t2, _) = res.pseudo_point(z.conj()).unwrap();
        assert!((t1 - t2).abs() < 1e-10);
    }

    #[test]
    fn dictionary_at_training_points_reproduces_scaled_basis() {
        let pairs = spread_pairs(9, 3, 15, 0.1);
        let spec = KernelSpec::gaussian(2.0).unwrap();
        let res = kedmd(&pairs, &spec, None).unwrap();
        for j in [0, 7, 14] {
            let xj = linalg::real_column(pairs.x(), j);
            let phi = eval_dictionary_at(&res, &pairs, &xj).unwrap();
            for (k, val) in phi.iter().enumerate() {
                let expect = res.q_hat[(j, k)] * res.sigma_hat[k];
                assert!((val - expect).abs() < 1e-8, "row {j} col {k}");
            }
        }
    }

    #[test]
    fn dictionary_vanishes_far_away() {
        let pairs = spread_pairs(10, 2, 12, 0.1);
        let spec = KernelSpec::gaussian(0.5).unwrap();
        let res = kedmd(&pairs, &spec, None).unwrap();
        let phi = eval_dictionary_at(&res, &pairs, &[50.0, -50.0]).unwrap();
        let sig_norm = linalg::real_norm(&res.sigma_hat);
        assert!(linalg::real_norm(&phi) <= 1e-6 * sig_norm);
    }

    #[test]
    fn dictionary_single_point() {
        let pairs = SnapshotPairs::with_weights(
            faer::mat![[0.5], [1.0]],
            faer::mat![[0.2], [0.1]],
            vec![1.0],
        )
        .unwrap();
        let spec = KernelSpec::laplacian(1.0).unwrap();
        let res = kedmd(&pairs, &spec, Some(1)).unwrap();
        let x = [0.0, 0.3];
        let phi = eval_dictionary_at(&res, &pairs, &x).unwrap();
        let expect = spec.eval(&x, &[0.5, 1.0]) / res.sigma_hat[0] * res.q_hat[(0, 0)];
        assert!((phi[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn dictionary_rejects_nonuniform_weights() {
        let pairs = SnapshotPairs::with_weights(
            faer::mat![[0.5, 1.0]],
            faer::mat![[0.2, 0.1]],
            vec![0.3, 0.7],
        )
        .unwrap();
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let res = kedmd(&pairs, &spec, None).unwrap();
        assert!(matches!(
            eval_dictionary_at(&res, &pairs, &[0.0]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn naive_residual_identity_dynamics() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = synthetic::random_matrix(4, 10, &mut rng);
        let pairs = SnapshotPairs::new(x.clone(), x).unwrap();
        let spec = KernelSpec::gaussian(2.0).unwrap();
        let res = kedmd(&pairs, &spec, Some(5)).unwrap();
        let v = vec![c64::new(1.0, 0.5); 5];
        let r = naive_kernel_residual(&res, &pairs, c64::new(1.0, 0.0), &v).unwrap();
        assert!(r < 1e-12);
    }

    #[test]
    fn naive_residual_matches_dense_quadratic_form() {
        let pairs = spread_pairs(14, 3, 18, 0.2);
        let spec = KernelSpec::gaussian(2.0).unwrap();
        let res = kedmd(&pairs, &spec, Some(7)).unwrap();
        // Weighted feature matrices rebuilt point by point through the dictionary.
        let m = pairs.len();
        let rows = |states: faer::MatRef<'_, f64>| {
            let mut out = Mat::<f64>::zeros(m, 7);
            for j in 0..m {
                let phi = eval_dictionary_at(&res, &pairs, &linalg::real_column(states, j)).unwrap();
                for k in 0..7 {
                    out[(j, k)] = phi[k];
                }
            }
            out
        };
        let fx = rows(pairs.x());
        let fy = rows(pairs.y());
        for j in 0..7 {
            let lam = res.eigenvalues[j];
            let v = linalg::column(res.right_vecs.as_ref(), j);
            let form = Mat::from_fn(7, 7, |a, b| {
                let yy: f64 = (0..m).map(|i| fy[(i, a)] * fy[(i, b)]).sum();
                let yx: f64 = (0..m).map(|i| fy[(i, a)] * fx[(i, b)]).sum();
                let xy: f64 = (0..m).map(|i| fx[(i, a)] * fy[(i, b)]).sum();
                let xx: f64 = (0..m).map(|i| fx[(i, a)] * fx[(i, b)]).sum();
                c64::new(yy + lam.norm_sqr() * xx, 0.0) - lam * yx - lam.conj() * xy
            });
            let gram = Mat::from_fn(7, 7, |a, b| {
                c64::new((0..m).map(|i| fx[(i, a)] * fx[(i, b)]).sum(), 0.0)
            });
            let num = linalg::quad_form(form.as_ref(), &v).re;
            let den = linalg::quad_form(gram.as_ref(), &v).re;
            let dense = (num / den).max(0.0).sqrt();
            let naive = naive_kernel_residual(&res, &pairs, lam, &v).unwrap();
            assert!(naive > 0.0);
            assert!((naive - dense).abs() < 1e-8, "{naive} vs {dense}");
        }
    }

    #[test]
    fn rank_request_beyond_numerical_rank_is_reduced() {
        // Polynomial kernel of degree 1 in d = 2 has feature dimension 3.
        let pairs = spread_pairs(13, 2, 10, 0.1);
        let spec = KernelSpec::polynomial(1.0, 1).unwrap();
        let res = kedmd(&pairs, &spec, Some(8)).unwrap();
        assert_eq!(res.numerical_rank, 3);
        assert_eq!(res.rank(), 3);
        assert!(kedmd(&pairs, &spec, Some(11)).is_err());
    }
}
