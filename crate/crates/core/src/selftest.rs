//! Oracle equivalence suite: each check compares a production code path
//! against an independent computation on fixed-seed synthetic data.

use std::fmt;

use faer::{c64, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::exact::{exact_dmd, naive_projected_residual};
use crate::kedmd::{kedmd, naive_kernel_residual};
use crate::kernel::{default_scale, KernelSpec};
use crate::linalg;
use crate::oracle::{self, explicit_edmd, explicit_residual, kernel_gram_residual, poly_feature_map};
use crate::snapshot::{delay_embed, SnapshotPairs, TrajectorySet};
use crate::spectral::{grid_sweep, GridAxes};
use crate::synthetic;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<31} value={:.3e} tol={:.1e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.tolerance
            )?;
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        writeln!(f, "{passed}/{} checks passed", self.checks.len())
    }
}

fn check(name: &'static str, value: f64, tolerance: f64) -> Check {
    Check {
        name,
        value,
        tolerance,
        passed: value <= tolerance,
    }
}

/// Largest distance in a greedy nearest-neighbour matching of two
/// eigenvalue lists (infinite if the lengths differ).
pub fn match_eigenvalues(a: &[c64], b: &[c64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst = 0.0_f64;
    for x in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, y)| (i, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("lengths match");
        used[k] = true;
        worst = worst.max(d);
    }
    worst
}

pub fn random_complex_vector<R: Rng>(n: usize, rng: &mut R) -> Vec<c64> {
    (0..n)
        .map(|_| c64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect()
}

fn random_lambda<R: Rng>(rng: &mut R) -> c64 {
    c64::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5))
}

fn orthogonal_pairs(d: usize, m: usize, seed: u64) -> (Mat<f64>, SnapshotPairs) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = synthetic::random_orthogonal(d, &mut rng);
    let pairs = synthetic::linear_pairs(a.as_ref(), m, &mut rng);
    (a, pairs)
}

fn dmd_duality() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pairs = synthetic::nonlinear_pairs(6, 40, 0.05, &mut rng);
    let res = exact_dmd(&pairs, Some(4))?;
    let e = explicit_edmd(&pairs, &oracle::pod_dictionary(res.svd.u.as_ref()))?;
    let mut worst = 0.0_f64;
    for i in 0..4 {
        for j in 0..4 {
            worst = worst.max((e.k[(i, j)] - c64::new(res.k_tilde[(j, i)], 0.0)).norm());
        }
    }
    Ok(check("dmd-galerkin-duality", worst, 1e-10))
}

fn dmd_orthogonal() -> Result<Check> {
    let (_, pairs) = orthogonal_pairs(8, 200, 12);
    let res = exact_dmd(&pairs, Some(8))?;
    let worst = res
        .residuals
        .iter()
        .copied()
        .chain(res.eigenvalues.iter().map(|l| (l.norm() - 1.0).abs()))
        .fold(0.0, f64::max);
    Ok(check("dmd-orthogonal-residuals", worst, 1e-10))
}

fn dmd_residual_forms() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let pairs = synthetic::nonlinear_pairs(8, 50, 0.1, &mut rng);
    let res = exact_dmd(&pairs, Some(6))?;
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let lam = random_lambda(&mut rng);
        let v = random_complex_vector(6, &mut rng);
        worst = worst.max((res.residual(lam, &v)? - res.residual_gram(lam, &v)?).abs());
    }
    Ok(check("dmd-residual-forms", worst, 1e-8))
}

fn dmd_naive_vanishes() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let pairs = synthetic::nonlinear_pairs(10, 6, 0.1, &mut rng);
    let res = exact_dmd(&pairs, Some(6))?;
    // Eigenpairs of K̃^T drive the naive residual.
    let (vals, vecs) = linalg::eigen_real(res.k_tilde.transpose())?;
    let mut worst = 0.0_f64;
    for (j, &lam) in vals.iter().enumerate() {
        let v = linalg::column(vecs.as_ref(), j);
        worst = worst.max(naive_projected_residual(&res, &pairs, lam, &v)?);
    }
    Ok(check("dmd-naive-residual-vanishes", worst, 1e-10))
}

fn dmd_pseudospectrum() -> Result<Check> {
    let (_, pairs) = orthogonal_pairs(6, 60, 15);
    let res = exact_dmd(&pairs, None)?;
    let axes: GridAxes = "-1.5:1.5:11,-1.5:1.5:11".parse()?;
    let grid = grid_sweep(|z| res.pseudo_point(z), &axes)?;
    let mut worst = 0.0_f64;
    for k in 0..axes.len() {
        let z = axes.node(k);
        let dist = res.eigenvalues.iter().map(|l| (z - l).norm()).fold(f64::INFINITY, f64::min);
        worst = worst.max((grid.tau[k] - dist).abs());
    }
    Ok(check("dmd-pseudospectrum-normal", worst, 1e-8))
}

fn poly_setup() -> Result<(SnapshotPairs, KernelSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let pairs = synthetic::nonlinear_pairs(2, 20, 0.1, &mut rng);
    Ok((pairs, KernelSpec::polynomial(1.0, 2)?))
}

fn kernel_poly_equivalence() -> Result<Check> {
    let (pairs, spec) = poly_setup()?;
    let res = kedmd(&pairs, &spec, Some(6))?;
    let e = explicit_edmd(&pairs, &poly_feature_map(1.0, 2, 2)?)?;
    let (vals, _) = eigen_complex(&e.k)?;
    Ok(check("kernel-poly-equivalence", match_eigenvalues(&res.eigenvalues, &vals), 1e-6))
}

/// Galerkin-side residuals: explicit EDMD eigenpairs against the naive
/// kernel residual of the matching right eigenvectors.
fn kernel_explicit_naive() -> Result<Check> {
    let (pairs, spec) = poly_setup()?;
    let res = kedmd(&pairs, &spec, Some(6))?;
    let e = explicit_edmd(&pairs, &poly_feature_map(1.0, 2, 2)?)?;
    let (vals, vecs) = eigen_complex(&e.k)?;
    let mut worst = 0.0_f64;
    for (j, lam) in res.eigenvalues.iter().enumerate() {
        let k = (0..vals.len())
            .min_by(|&a, &b| (vals[a] - lam).norm().total_cmp(&(vals[b] - lam).norm()))
            .expect("nonempty");
        let g = linalg::column(vecs.as_ref(), k);
        let v = linalg::column(res.right_vecs.as_ref(), j);
        let naive = naive_kernel_residual(&res, &pairs, *lam, &v)?;
        worst = worst.max((explicit_residual(&e, vals[k], &g)? - naive).abs());
    }
    Ok(check("kernel-explicit-naive", worst, 1e-6))
}

/// Dual residuals: with `h = Q̂Σ̂^† v` the left-eigenvector residual equals
/// `‖Ψ_Y^T h − λ̄ Ψ_X^T h‖ / ‖Ψ_X^T h‖` in the explicit feature space.
fn kernel_explicit_dual() -> Result<Check> {
    let (pairs, spec) = poly_setup()?;
    let res = kedmd(&pairs, &spec, Some(6))?;
    let e = explicit_edmd(&pairs, &poly_feature_map(1.0, 2, 2)?)?;
    let p = res.whitening();
    let mut worst = 0.0_f64;
    for j in 0..res.rank() {
        let h = linalg::real_mat_vec(p.as_ref(), &linalg::column(res.left_vecs.as_ref(), j));
        let a = linalg::mat_vec(e.psi_y.transpose(), &h);
        let b = linalg::mat_vec(e.psi_x.transpose(), &h);
        let lam = res.eigenvalues[j].conj();
        let diff: Vec<c64> = a.iter().zip(&b).map(|(x, y)| x - lam * y).collect();
        let feature_side = linalg::norm(&diff) / linalg::norm(&b);
        worst = worst.max((feature_side - res.residuals[j]).abs());
    }
    Ok(check("kernel-explicit-dual", worst, 1e-6))
}

fn kernel_residual_forms() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pairs = synthetic::nonlinear_pairs(3, 25, 0.1, &mut rng);
    let spec = KernelSpec::gaussian(default_scale(pairs.x())?)?;
    let res = kedmd(&pairs, &spec, Some(10))?;
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let lam = random_lambda(&mut rng);
        let v = random_complex_vector(10, &mut rng);
        worst = worst.max((res.residual(lam, &v)? - kernel_gram_residual(&res, &pairs, lam, &v)?).abs());
    }
    Ok(check("kernel-residual-forms", worst, 1e-7))
}

fn kernel_naive_vanishes() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let pairs = synthetic::nonlinear_pairs(10, 30, 0.1, &mut rng);
    let spec = KernelSpec::gaussian(default_scale(pairs.x())?)?;
    let res = kedmd(&pairs, &spec, None)?;
    if res.rank() != 30 {
        return Ok(check("kernel-naive-residual-vanishes", f64::INFINITY, 1e-8));
    }
    let mut worst = 0.0_f64;
    for j in 0..res.rank() {
        let v = linalg::column(res.right_vecs.as_ref(), j);
        worst = worst.max(naive_kernel_residual(&res, &pairs, res.eigenvalues[j], &v)?);
    }
    Ok(check("kernel-naive-residual-vanishes", worst, 1e-8))
}

fn fourier_oracle() -> Result<Check> {
    let omega = 0.9;
    let m = 16;
    let step = std::f64::consts::TAU / m as f64;
    let pairs = SnapshotPairs::new(
        Mat::from_fn(1, m, |_, j| step * j as f64),
        Mat::from_fn(1, m, |_, j| step * j as f64 + omega),
    )?;
    let ks: Vec<i32> = (-2..=2).collect();
    let kk = ks.clone();
    let dict = oracle::ExplicitDictionary::new(
        ks.iter().map(|k| format!("e{k}")).collect(),
        move |x| kk.iter().map(|&k| c64::cis(f64::from(k) * x[0])).collect(),
    );
    let e = explicit_edmd(&pairs, &dict)?;
    let mut worst = 0.0_f64;
    for (i, &k) in ks.iter().enumerate() {
        for j in 0..ks.len() {
            let expect = if i == j { c64::cis(f64::from(k) * omega) } else { c64::new(0.0, 0.0) };
            worst = worst.max((e.k[(i, j)] - expect).norm());
        }
    }
    Ok(check("oracle-fourier-rotation", worst, 1e-10))
}

fn embedding_count() -> Result<Check> {
    let series = Mat::from_fn(60, 123, |i, t| ((i * 7 + t) as f64 * 0.1).sin());
    let pairs = delay_embed(&TrajectorySet::from_rows(series.as_ref())?, 10)?;
    Ok(check("embedding-snapshot-count", (pairs.len() as f64 - 6780.0).abs(), 0.0))
}

/// Unsorted eigenpairs of a complex matrix.
fn eigen_complex(m: &Mat<c64>) -> Result<(Vec<c64>, Mat<c64>)> {
    let evd = m
        .eigen()
        .map_err(|e| crate::Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let vals: Vec<c64> = evd.S().column_vector().iter().copied().collect();
    Ok((vals, evd.U().to_owned()))
}

/// Run every check. Errors inside a check count as failures.
pub fn run_selftest() -> SelftestReport {
    let suite: [(&'static str, fn() -> Result<Check>); 12] = [
        ("dmd-galerkin-duality", dmd_duality),
        ("dmd-orthogonal-residuals", dmd_orthogonal),
        ("dmd-residual-forms", dmd_residual_forms),
        ("dmd-naive-residual-vanishes", dmd_naive_vanishes),
        ("dmd-pseudospectrum-normal", dmd_pseudospectrum),
        ("kernel-poly-equivalence", kernel_poly_equivalence),
        ("kernel-explicit-naive", kernel_explicit_naive),
        ("kernel-explicit-dual", kernel_explicit_dual),
        ("kernel-residual-forms", kernel_residual_forms),
        ("kernel-naive-residual-vanishes", kernel_naive_vanishes),
        ("oracle-fourier-rotation", fourier_oracle),
        ("embedding-snapshot-count", embedding_count),
    ];
    let checks = suite
        .iter()
        .map(|(name, f)| f().unwrap_or_else(|_| check(name, f64::INFINITY, 0.0)))
        .collect();
    SelftestReport { checks }
}
