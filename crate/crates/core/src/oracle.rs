//! Explicit-dictionary EDMD, used as an independent reference for the
//! implicit (kernel and SVD-based) formulations.

use faer::{c64, Mat, MatRef};

use crate::error::{Error, Result};
use crate::kedmd::KedmdResult;
use crate::kernel::gram;
use crate::linalg::{self, MACHINE_EPS};
use crate::snapshot::SnapshotPairs;

/// Largest feature dimension [`poly_feature_map`] will build.
pub const MAX_FEATURES: usize = 10_000;

type FeatureFn = dyn Fn(&[f64]) -> Vec<c64> + Send + Sync;

/// A finite dictionary `x ↦ (ψ_1(x), …, ψ_N(x))` of complex observables.
pub struct ExplicitDictionary {
    labels: Vec<String>,
    map: Box<FeatureFn>,
}

impl std::fmt::Debug for ExplicitDictionary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExplicitDictionary").field("labels", &self.labels).finish()
    }
}

impl ExplicitDictionary {
    pub fn new<F>(labels: Vec<String>, map: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<c64> + Send + Sync + 'static,
    {
        Self { labels, map: Box::new(map) }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn eval(&self, x: &[f64]) -> Vec<c64> {
        let out = (self.map)(x);
        debug_assert_eq!(out.len(), self.size());
        out
    }

    /// `M × N` matrix whose row `m` is `Ψ(x_m)` for the columns of `states`.
    pub fn matrix(&self, states: MatRef<'_, f64>) -> Mat<c64> {
        let n = self.size();
        let mut out = Mat::zeros(states.ncols(), n);
        for m in 0..states.ncols() {
            let x: Vec<f64> = (0..states.nrows()).map(|i| states[(i, m)]).collect();
            for (j, v) in self.eval(&x).into_iter().enumerate() {
                out[(m, j)] = v;
            }
        }
        out
    }
}

/// Projections onto the columns of `u`: `ψ_j(x) = u_j^T x`.
pub fn pod_dictionary(u: MatRef<'_, f64>) -> ExplicitDictionary {
    let u = u.to_owned();
    let labels = (0..u.ncols()).map(|j| format!("pod{j}")).collect();
    ExplicitDictionary::new(labels, move |x| {
        (0..u.ncols())
            .map(|j| c64::new((0..u.nrows()).map(|i| u[(i, j)] * x[i]).sum(), 0.0))
            .collect()
    })
}

/// Exponent vectors of total degree `≤ degree` in `d` variables, graded by
/// degree and lexicographically descending within a degree.
pub fn monomial_exponents(d: usize, degree: u32) -> Vec<Vec<u32>> {
    fn fill(prefix: &mut Vec<u32>, d: usize, left: u32, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == d - 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            fill(prefix, d, left - e, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for total in 0..=degree {
        fill(&mut Vec::with_capacity(d), d, total, &mut out);
    }
    out
}

fn binomial(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Explicit feature map of the polynomial kernel `(⟨x, x'⟩ / c² + 1)^α`:
/// monomials `x^β / c^{|β|}` scaled by `sqrt(α! / (β! (α − |β|)!))`, so that
/// `Ψ(x) · Ψ(x') = S(x, x')`.
pub fn poly_feature_map(scale: f64, degree: u32, d: usize) -> Result<ExplicitDictionary> {
    if d == 0 || degree == 0 {
        return Err(Error::Argument("dimension and degree must be positive".into()));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Argument(format!("scale must be positive, got {scale}")));
    }
    let n = binomial(d as u64 + u64::from(degree), u64::from(degree));
    if n > MAX_FEATURES as f64 {
        return Err(Error::Argument(format!(
            "feature dimension {n} exceeds {MAX_FEATURES}"
        )));
    }
    let exps = monomial_exponents(d, degree);
    let coef: Vec<f64> = exps
        .iter()
        .map(|b| {
            let tot: u32 = b.iter().sum();
            let denom: f64 = b.iter().map(|&e| factorial(e)).product::<f64>() * factorial(degree - tot);
            (factorial(degree) / denom).sqrt() / scale.powi(tot as i32)
        })
        .collect();
    let labels = exps
        .iter()
        .map(|b| {
            let parts: Vec<String> = b
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(i, &e)| if e == 1 { format!("x{i}") } else { format!("x{i}^{e}") })
                .collect();
            if parts.is_empty() { "1".to_string() } else { parts.join("*") }
        })
        .collect();
    Ok(ExplicitDictionary::new(labels, move |x| {
        exps.iter()
            .zip(&coef)
            .map(|(b, c)| {
                let v: f64 = b.iter().zip(x).map(|(&e, xi)| xi.powi(e as i32)).product();
                c64::new(c * v, 0.0)
            })
            .collect()
    }))
}

/// Galerkin matrices of EDMD in an explicit dictionary, together with the
/// weighted feature matrices they are built from.
#[derive(Debug, Clone)]
pub struct ExplicitEdmd {
    /// `K = (W^{1/2}Ψ_X)^† W^{1/2}Ψ_Y`, equal to `G^† A`.
    pub k: Mat<c64>,
    /// `Ψ_X^* W Ψ_X`.
    pub g: Mat<c64>,
    /// `Ψ_X^* W Ψ_Y`.
    pub a: Mat<c64>,
    /// `Ψ_Y^* W Ψ_Y`.
    pub l: Mat<c64>,
    /// `W^{1/2} Ψ_X` (`M × N`).
    pub psi_x: Mat<c64>,
    /// `W^{1/2} Ψ_Y` (`M × N`).
    pub psi_y: Mat<c64>,
    /// Numerical rank of `G`; below `N` the pseudoinverse was needed.
    pub rank: usize,
}

pub fn explicit_edmd(pairs: &SnapshotPairs, dict: &ExplicitDictionary) -> Result<ExplicitEdmd> {
    let w = pairs.weights();
    let mut px = dict.matrix(pairs.x());
    let mut py = dict.matrix(pairs.y());
    for (m, wm) in w.iter().enumerate() {
        let s = wm.sqrt();
        for j in 0..dict.size() {
            px[(m, j)] *= s;
            py[(m, j)] *= s;
        }
    }
    let g = px.adjoint() * &px;
    let a = px.adjoint() * &py;
    let l = py.adjoint() * &py;
    let (px_pinv, rank) = linalg::pinv(px.as_ref())?;
    if rank == 0 {
        return Err(Error::Rank("dictionary Gram matrix is zero".into()));
    }
    let k = &px_pinv * &py;
    Ok(ExplicitEdmd { k, g, a, l, psi_x: px, psi_y: py, rank })
}

fn check_len(edmd: &ExplicitEdmd, g: &[c64]) -> Result<()> {
    let n = edmd.g.nrows();
    if g.len() != n {
        return Err(Error::Shape(format!("vector has length {}, dictionary has {n}", g.len())));
    }
    Ok(())
}

/// `‖W^{1/2}(Ψ_Y − λΨ_X) g‖ / ‖W^{1/2}Ψ_X g‖`, the square root of
/// `g^*[L − λA^* − λ̄A + |λ|²G]g / g^*Gg` evaluated without forming the
/// cancelling quadratic form.
pub fn explicit_residual(edmd: &ExplicitEdmd, lambda: c64, g: &[c64]) -> Result<f64> {
    check_len(edmd, g)?;
    let xg = linalg::mat_vec(edmd.psi_x.as_ref(), g);
    let yg = linalg::mat_vec(edmd.psi_y.as_ref(), g);
    let den = linalg::norm(&xg);
    if den <= MACHINE_EPS.sqrt() * edmd.psi_x.norm_l2() * linalg::norm(g) || den == 0.0 {
        return Err(Error::Degenerate("g^* G g vanishes".into()));
    }
    let diff: Vec<c64> = yg.iter().zip(&xg).map(|(y, x)| y - lambda * x).collect();
    Ok(linalg::norm(&diff) / den)
}

/// `sqrt(g^*[L − λA^* − λ̄A + |λ|²G]g / g^*Gg)` from the Galerkin matrices
/// alone, clamped at zero. Accurate to roughly `sqrt(eps)` near zero.
pub fn explicit_residual_gram(
    g_mat: MatRef<'_, c64>,
    a_mat: MatRef<'_, c64>,
    l_mat: MatRef<'_, c64>,
    lambda: c64,
    g: &[c64],
) -> Result<f64> {
    let n = g_mat.nrows();
    if g.len() != n || a_mat.nrows() != n || l_mat.nrows() != n {
        return Err(Error::Shape("Galerkin matrices and vector disagree in size".into()));
    }
    let den = linalg::quad_form(g_mat, g).re;
    let scale = g_mat.norm_l2() * linalg::norm(g).powi(2);
    if den <= MACHINE_EPS * scale || den <= 0.0 {
        return Err(Error::Degenerate("g^* G g vanishes".into()));
    }
    let form = Mat::from_fn(n, n, |i, j| {
        l_mat[(i, j)] - lambda * a_mat[(j, i)].conj() - lambda.conj() * a_mat[(i, j)]
            + c64::new(lambda.norm_sqr(), 0.0) * g_mat[(i, j)]
    });
    let num = linalg::quad_form(form.as_ref(), g).re;
    Ok((num / den).max(0.0).sqrt())
}

/// Kernel residual assembled directly from freshly computed Gram matrices:
/// with `g = Q̂Σ̂^† v`, `sqrt(g^T-form [M_YY − λÂ^T − λ̄Â + |λ|²Ĝ] / ‖v‖²)`.
/// Mathematically identical to [`KedmdResult::residual`] but independent of
/// the compressed matrices.
pub fn kernel_gram_residual(
    result: &KedmdResult,
    pairs: &SnapshotPairs,
    lambda: c64,
    v: &[c64],
) -> Result<f64> {
    if v.len() != result.rank() {
        return Err(Error::Shape("vector length differs from rank".into()));
    }
    let w = pairs.weights();
    let spec = &result.spec;
    let g = gram(spec, pairs.x(), pairs.x(), w, w)?;
    let a = gram(spec, pairs.y(), pairs.x(), w, w)?;
    let myy = gram(spec, pairs.y(), pairs.y(), w, w)?;
    let pv = linalg::real_mat_vec(result.whitening().as_ref(), v);
    let m = g.nrows();
    let form = Mat::from_fn(m, m, |i, j| {
        c64::new(myy[(i, j)] + lambda.norm_sqr() * g[(i, j)], 0.0)
            - lambda * a[(j, i)]
            - lambda.conj() * a[(i, j)]
    });
    let num = linalg::quad_form(form.as_ref(), &pv).re;
    let den: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::Argument("vector must be nonzero".into()));
    }
    Ok((num / den).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use crate::synthetic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_pairs() -> SnapshotPairs {
        SnapshotPairs::new(faer::mat![[1.0, 2.0, -1.0]], faer::mat![[0.5, 1.0, -0.5]]).unwrap()
    }

    #[test]
    fn scalar_identity_dictionary() {
        let dict = ExplicitDictionary::new(vec!["x".into()], |x| vec![c64::new(x[0], 0.0)]);
        let e = explicit_edmd(&scalar_pairs(), &dict).unwrap();
        assert!((e.k[(0, 0)] - c64::new(0.5, 0.0)).norm() < 1e-14);
        let r = explicit_residual(&e, c64::new(0.5, 0.0), &[c64::new(1.0, 0.0)]).unwrap();
        assert!(r < 1e-7);
    }

    #[test]
    fn constant_and_linear_dictionary() {
        let dict = ExplicitDictionary::new(vec!["1".into(), "x".into()], |x| {
            vec![c64::new(1.0, 0.0), c64::new(x[0], 0.0)]
        });
        let e = explicit_edmd(&scalar_pairs(), &dict).unwrap();
        let expect = [[1.0, 0.0], [0.0, 0.5]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((e.k[(i, j)] - c64::new(expect[i][j], 0.0)).norm() < 1e-13);
            }
        }
    }

    fn fourier_pairs(m: usize, omega: f64) -> SnapshotPairs {
        let step = std::f64::consts::TAU / m as f64;
        let theta = Mat::from_fn(1, m, |_, j| step * j as f64);
        let shifted = Mat::from_fn(1, m, |_, j| step * j as f64 + omega);
        SnapshotPairs::new(theta, shifted).unwrap()
    }

    fn fourier_dictionary(ks: Vec<i32>) -> ExplicitDictionary {
        let labels = ks.iter().map(|k| format!("e{k}")).collect();
        ExplicitDictionary::new(labels, move |x| {
            ks.iter().map(|&k| c64::cis(f64::from(k) * x[0])).collect()
        })
    }

    #[test]
    fn fourier_dictionary_under_rotation() {
        let omega = 0.7;
        let ks: Vec<i32> = (-2..=2).collect();
        let e = explicit_edmd(&fourier_pairs(16, omega), &fourier_dictionary(ks.clone())).unwrap();
        for (i, &k) in ks.iter().enumerate() {
            let lam = c64::cis(f64::from(k) * omega);
            for j in 0..ks.len() {
                let expect = if i == j { lam } else { c64::new(0.0, 0.0) };
                assert!((e.k[(i, j)] - expect).norm() < 1e-10, "({i},{j})");
            }
            let mut g = vec![c64::new(0.0, 0.0); ks.len()];
            g[i] = c64::new(1.0, 0.0);
            assert!(explicit_residual(&e, lam, &g).unwrap() < 1e-10);
            let via_gram =
                explicit_residual_gram(e.g.as_ref(), e.a.as_ref(), e.l.as_ref(), lam, &g).unwrap();
            assert!(via_gram < 1e-7);
        }
    }

    #[test]
    fn residual_at_zero_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pairs = synthetic::nonlinear_pairs(2, 30, 0.1, &mut rng);
        let dict = poly_feature_map(1.0, 2, 2).unwrap();
        let e = explicit_edmd(&pairs, &dict).unwrap();
        let g: Vec<c64> = (0..6).map(|i| c64::new(1.0 - 0.2 * i as f64, 0.3)).collect();
        let expect = (linalg::quad_form(e.l.as_ref(), &g).re / linalg::quad_form(e.g.as_ref(), &g).re).sqrt();
        let zero = c64::new(0.0, 0.0);
        assert!((explicit_residual(&e, zero, &g).unwrap() - expect).abs() < 1e-10 * expect);
        let via_gram = explicit_residual_gram(e.g.as_ref(), e.a.as_ref(), e.l.as_ref(), zero, &g).unwrap();
        assert!((via_gram - expect).abs() < 1e-10 * expect);
        let lam = c64::new(0.3, -0.8);
        let direct = explicit_residual(&e, lam, &g).unwrap();
        let via_gram = explicit_residual_gram(e.g.as_ref(), e.a.as_ref(), e.l.as_ref(), lam, &g).unwrap();
        assert!((direct - via_gram).abs() < 1e-8);
    }

    #[test]
    fn quadratic_feature_map_by_hand() {
        let map = poly_feature_map(2.0, 2, 1).unwrap();
        let f = map.eval(&[2.0]);
        let expect = [1.0, 2f64.sqrt() * 2.0 / 2.0, 4.0 / 4.0];
        for (a, b) in f.iter().zip(expect) {
            assert!((a.re - b).abs() < 1e-15);
        }
        let dot: f64 = f.iter().map(|z| z.re * z.re).sum();
        assert!((dot - 4.0).abs() < 1e-14);
        let lin = poly_feature_map(1.0, 1, 1).unwrap();
        assert_eq!(lin.labels(), &["1".to_string(), "x0".to_string()]);
    }

    #[test]
    fn residual_rejects_null_direction() {
        let dict = ExplicitDictionary::new(vec!["x".into(), "0".into()], |x| {
            vec![c64::new(x[0], 0.0), c64::new(0.0, 0.0)]
        });
        let e = explicit_edmd(&scalar_pairs(), &dict).unwrap();
        let g = [c64::new(0.0, 0.0), c64::new(1.0, 0.0)];
        assert!(matches!(explicit_residual(&e, c64::new(0.5, 0.0), &g), Err(Error::Degenerate(_))));
    }

    #[test]
    fn monomials_graded_lex() {
        let e = monomial_exponents(2, 2);
        let expect: Vec<Vec<u32>> = vec![
            vec![0, 0],
            vec![1, 0],
            vec![0, 1],
            vec![2, 0],
            vec![1, 1],
            vec![0, 2],
        ];
        assert_eq!(e, expect);
        assert_eq!(monomial_exponents(3, 3).len(), 20);
    }

    #[test]
    fn poly_feature_map_reproduces_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (d, alpha, c) in [(2usize, 2u32, 1.0), (3, 3, 1.7), (1, 4, 0.5)] {
            let spec = KernelSpec::polynomial(c, alpha).unwrap();
            let map = poly_feature_map(c, alpha, d).unwrap();
            let pts = synthetic::random_matrix(d, 6, &mut rng);
            let feats = map.matrix(pts.as_ref());
            for a in 0..6 {
                for b in 0..6 {
                    let dot: c64 = (0..map.size()).map(|j| feats[(a, j)] * feats[(b, j)]).sum();
                    let xa = linalg::real_column(pts.as_ref(), a);
                    let xb = linalg::real_column(pts.as_ref(), b);
                    let s = spec.eval(&xa, &xb);
                    assert!((dot.re - s).abs() <= 1e-12 * s.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn poly_feature_map_limits() {
        assert_eq!(poly_feature_map(1.0, 2, 2).unwrap().size(), 6);
        assert_eq!(poly_feature_map(1.0, 2, 2).unwrap().labels()[4], "x0*x1");
        assert!(poly_feature_map(1.0, 3, 100).is_err());
        assert!(poly_feature_map(0.0, 2, 2).is_err());
        assert!(poly_feature_map(1.0, 0, 2).is_err());
    }

    #[test]
    fn pod_dictionary_dual_of_exact_dmd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pairs = synthetic::nonlinear_pairs(5, 30, 0.05, &mut rng);
        let res = crate::exact::exact_dmd(&pairs, Some(4)).unwrap();
        let dict = pod_dictionary(res.svd.u.as_ref());
        let e = explicit_edmd(&pairs, &dict).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let diff = (e.k[(i, j)] - c64::new(res.k_tilde[(j, i)], 0.0)).norm();
                assert!(diff < 1e-10, "({i},{j}) {diff}");
            }
        }
    }
}
