//! Grid pseudospectra, residual thresholding, and Koopman mode
//! decompositions for compression and forecasting.

use std::fmt;
use std::str::FromStr;

use faer::{c64, Mat, MatRef};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::ExactDmdResult;
use crate::kedmd::KedmdResult;
use crate::kernel::KernelSpec;
use crate::linalg;
use crate::snapshot::{delay_embed, format_f64, SnapshotPairs, TrajectorySet};

/// Mode fits with a condition number above this carry a warning.
pub const ILL_CONDITIONED_FIT: f64 = 1e12;

/// Real and imaginary sample points of a rectangular grid in `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxes {
    re: Vec<f64>,
    im: Vec<f64>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

impl GridAxes {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        for (name, axis) in [("real", &re), ("imaginary", &im)] {
            if axis.is_empty() {
                return Err(Error::Argument(format!("{name} axis is empty")));
            }
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument(format!("{name} axis has non-finite values")));
            }
            if axis.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Argument(format!("{name} axis is not sorted")));
            }
        }
        Ok(Self { re, im })
    }

    /// `n_re × n_im` equally spaced nodes on `[re0, re1] × [im0, im1]`.
    pub fn linspace(re: (f64, f64, usize), im: (f64, f64, usize)) -> Result<Self> {
        for (lo, hi, n) in [re, im] {
            if n == 0 {
                return Err(Error::Argument("grid axes need at least one point".into()));
            }
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::Argument(format!("invalid grid range {lo}:{hi}")));
            }
        }
        Self::new(linspace(re.0, re.1, re.2), linspace(im.0, im.1, im.2))
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn len(&self) -> usize {
        self.re.len() * self.im.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node with flat index `k`: row `k / n_re` (imaginary), column `k % n_re`.
    pub fn node(&self, k: usize) -> c64 {
        let n = self.re.len();
        c64::new(self.re[k % n], self.im[k / n])
    }
}

impl FromStr for GridAxes {
    type Err = Error;

    /// Parses `"re0:re1:n_re,im0:im1:n_im"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Argument(format!("grid spec {s:?} is not re0:re1:n,im0:im1:n"));
        let axes: Vec<&str> = s.split(',').collect();
        if axes.len() != 2 {
            return Err(bad());
        }
        let mut parsed = Vec::with_capacity(2);
        for axis in axes {
            let parts: Vec<&str> = axis.split(':').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            let lo: f64 = parts[0].parse().map_err(|_| bad())?;
            let hi: f64 = parts[1].parse().map_err(|_| bad())?;
            let n: usize = parts[2].parse().map_err(|_| bad())?;
            parsed.push((lo, hi, n));
        }
        Self::linspace(parsed[0], parsed[1])
    }
}

/// `τ` sampled on a grid. `tau` is row-major with one row per imaginary
/// value: entry `i * n_re + j` belongs to `re_axis[j] + i·im_axis[i]`.
#[derive(Debug, Clone, Serialize)]
pub struct PseudospectrumGrid {
    pub re_axis: Vec<f64>,
    pub im_axis: Vec<f64>,
    pub tau: Vec<f64>,
    pub epsilon: Option<f64>,
}

impl PseudospectrumGrid {
    pub fn at(&self, im_index: usize, re_index: usize) -> f64 {
        self.tau[im_index * self.re_axis.len() + re_index]
    }

    /// Flat indices of nodes with `τ < epsilon`.
    pub fn sublevel_set(&self, epsilon: f64) -> Vec<usize> {
        (0..self.tau.len()).filter(|&k| self.tau[k] < epsilon).collect()
    }

    /// CSV with one row per imaginary value and one column per real value.
    pub fn to_csv(&self) -> String {
        let n = self.re_axis.len();
        let mut out = String::new();
        for row in self.tau.chunks(n) {
            let line: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Evaluate `pseudo_point` at every node of `axes`. Nodes are computed in
/// parallel and stored by index, so the result does not depend on
/// scheduling.
pub fn grid_sweep<F>(pseudo_point: F, axes: &GridAxes) -> Result<PseudospectrumGrid>
where
    F: Fn(c64) -> Result<(f64, Vec<c64>)> + Sync,
{
    let tau = (0..axes.len())
        .into_par_iter()
        .map(|k| pseudo_point(axes.node(k)).map(|(t, _)| t.max(0.0)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(PseudospectrumGrid {
        re_axis: axes.re.clone(),
        im_axis: axes.im.clone(),
        tau,
        epsilon: None,
    })
}

/// Indices `j` with `residuals[j] ≤ epsilon`, in their original order.
pub fn filter_modes(residuals: &[f64], epsilon: f64) -> Result<Vec<usize>> {
    if !(epsilon > 0.0) {
        return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok((0..residuals.len()).filter(|&j| residuals[j] <= epsilon).collect())
}

/// How modes are chosen for a truncated Koopman mode decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    /// The `k` eigenpairs with smallest residual.
    Residual,
    /// The decomposition of the leading `k` principal components.
    Pca,
}

impl FromStr for Ordering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "residual" => Ok(Self::Residual),
            "pca" => Ok(Self::Pca),
            other => Err(Error::Argument(format!("unknown ordering {other:?}"))),
        }
    }
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Residual => "residual",
            Self::Pca => "pca",
        })
    }
}

/// Either decomposition, as input to [`fit_kmd`].
#[derive(Debug, Clone, Copy)]
pub enum Decomposition<'a> {
    Exact(&'a ExactDmdResult),
    Kernel(&'a KedmdResult),
}

impl Decomposition<'_> {
    pub fn rank(&self) -> usize {
        match self {
            Self::Exact(r) => r.rank(),
            Self::Kernel(r) => r.rank(),
        }
    }

    pub fn eigenvalues(&self) -> &[c64] {
        match self {
            Self::Exact(r) => &r.eigenvalues,
            Self::Kernel(r) => &r.eigenvalues,
        }
    }

    pub fn residuals(&self) -> &[f64] {
        match self {
            Self::Exact(r) => &r.residuals,
            Self::Kernel(r) => &r.residuals,
        }
    }
}

/// Out-of-sample evaluation of the selected eigenfunctions.
#[derive(Debug, Clone)]
pub enum EigenfunctionMap {
    /// `g(x) = E x` with `E` of shape `k × d`.
    Linear(Mat<c64>),
    /// `g(x) = Σ_m w̄ S(x, x_m) C[m, :]` with training states `x_m`.
    Kernel {
        spec: KernelSpec,
        centers: Mat<f64>,
        weight: f64,
        coeffs: Mat<c64>,
    },
}

impl EigenfunctionMap {
    pub fn eval(&self, x: &[f64]) -> Vec<c64> {
        match self {
            Self::Linear(e) => linalg::mat_vec(e.as_ref(), &x.iter().map(|&v| c64::new(v, 0.0)).collect::<Vec<_>>()),
            Self::Kernel { spec, centers, weight, coeffs } => {
                let mut out = vec![c64::new(0.0, 0.0); coeffs.ncols()];
                let mut xm = vec![0.0; centers.nrows()];
                for m in 0..centers.ncols() {
                    for (i, v) in xm.iter_mut().enumerate() {
                        *v = centers[(i, m)];
                    }
                    let s = weight * spec.eval(x, &xm);
                    for (j, o) in out.iter_mut().enumerate() {
                        *o += coeffs[(m, j)] * s;
                    }
                }
                out
            }
        }
    }
}

/// A truncated Koopman mode decomposition `x_n ≈ mean + Re Σ_j ξ_j λ_j^n g_j(x_0)`.
#[derive(Debug, Clone)]
pub struct ForecastModel {
    pub eigenvalues: Vec<c64>,
    pub residuals: Vec<f64>,
    /// `d × k` Koopman modes `Ξ`.
    pub modes: Mat<c64>,
    /// `M × k` eigenfunction values on the training states.
    pub eigfun_on_data: Mat<c64>,
    /// Indices of the selected eigenpairs in the source decomposition. For
    /// pca ordering these index the rank-`k` decomposition.
    pub selected: Vec<usize>,
    pub ordering: Ordering,
    pub eigfun: EigenfunctionMap,
    pub mean: Vec<f64>,
    pub fit_condition: f64,
    pub warnings: Vec<String>,
}

/// Fit a `k`-mode decomposition. `pairs` must be the (centred) data the
/// decomposition was computed from; pass the removed mean via
/// [`ForecastModel::with_mean`].
pub fn fit_kmd(
    source: Decomposition<'_>,
    pairs: &SnapshotPairs,
    k: usize,
    ordering: Ordering,
) -> Result<ForecastModel> {
    let r = source.rank();
    if k > r {
        return Err(Error::Argument(format!("k = {k} exceeds rank {r}")));
    }
    let (eigenvalues, residuals, selected, eigfun, on_data) = match (source, ordering) {
        (_, Ordering::Residual) => {
            let mut idx: Vec<usize> = (0..r).collect();
            let res = source.residuals();
            idx.sort_by(|&a, &b| res[a].total_cmp(&res[b]).then(a.cmp(&b)));
            idx.truncate(k);
            let vals = idx.iter().map(|&j| source.eigenvalues()[j]).collect();
            let resid = idx.iter().map(|&j| res[j]).collect();
            let (map, data) = match source {
                Decomposition::Exact(e) => exact_eigfuns(e.svd.u.as_ref(), &e.eigvec_coeffs, &idx, pairs)?,
                Decomposition::Kernel(kr) => kernel_eigfuns(kr, &kr.right_vecs, &idx, pairs)?,
            };
            (vals, resid, idx, map, data)
        }
        (Decomposition::Exact(e), Ordering::Pca) => {
            let block = e.k_tilde.as_ref().submatrix(0, 0, k, k);
            let (vals, vecs) = linalg::eigen_real(block)?;
            let idx: Vec<usize> = (0..k).collect();
            let u = e.svd.u.as_ref().subcols(0, k);
            let resid = pca_residuals(&vals, &vecs, |lam, v| e.residual(lam, &pad(v, r)))?;
            let (map, data) = exact_eigfuns(u, &vecs, &idx, pairs)?;
            (vals, resid, idx, map, data)
        }
        (Decomposition::Kernel(kr), Ordering::Pca) => {
            let block = kr.k_hat.as_ref().submatrix(0, 0, k, k);
            let (vals, vecs) = linalg::eigen_real(block)?;
            let (_, left) = linalg::eigen_real(block.transpose())?;
            let idx: Vec<usize> = (0..k).collect();
            // Residuals of the rank-k decomposition use its own left vectors;
            // padding with zeros embeds them in the rank-r residual form,
            // whose leading k×k block is the rank-k form.
            let resid = pca_left_residuals(kr, &vals, &left, k)?;
            let (map, data) = kernel_eigfuns(kr, &vecs, &idx, pairs)?;
            (vals, resid, idx, map, data)
        }
    };

    let d = pairs.dim();
    let xt = Mat::from_fn(pairs.len(), d, |m, i| c64::new(pairs.x()[(i, m)], 0.0));
    let (xi_t, cond) = linalg::lstsq(on_data.as_ref(), xt.as_ref())?;
    let modes = xi_t.transpose().to_owned();
    let mut warnings = Vec::new();
    if k > 0 && !(cond <= ILL_CONDITIONED_FIT) {
        warnings.push(format!("ill-conditioned eigenfunction fit (condition number {cond:.3e})"));
    }
    Ok(ForecastModel {
        eigenvalues,
        residuals,
        modes,
        eigfun_on_data: on_data,
        selected,
        ordering,
        eigfun,
        mean: vec![0.0; d],
        fit_condition: cond,
        warnings,
    })
}

fn pad(v: &[c64], r: usize) -> Vec<c64> {
    let mut out = v.to_vec();
    out.resize(r, c64::new(0.0, 0.0));
    out
}

fn pca_residuals<F>(vals: &[c64], vecs: &Mat<c64>, residual: F) -> Result<Vec<f64>>
where
    F: Fn(c64, &[c64]) -> Result<f64>,
{
    (0..vals.len())
        .map(|j| residual(vals[j], &linalg::column(vecs.as_ref(), j)))
        .collect()
}

fn pca_left_residuals(kr: &KedmdResult, vals: &[c64], left: &Mat<c64>, k: usize) -> Result<Vec<f64>> {
    // Pair each λ with the left eigenvector whose eigenvalue is closest to λ̄.
    let (left_vals, _) = linalg::eigen_real(kr.k_hat.as_ref().submatrix(0, 0, k, k).transpose())?;
    let mut used = vec![false; k];
    let mut out = Vec::with_capacity(k);
    for lam in vals {
        let pick = (0..k)
            .filter(|&i| !used[i])
            .min_by(|&a, &b| {
                (left_vals[a] - lam.conj())
                    .norm()
                    .total_cmp(&(left_vals[b] - lam.conj()).norm())
            })
            .expect("as many left as right eigenvalues");
        used[pick] = true;
        let v = pad(&linalg::column(left.as_ref(), pick), kr.rank());
        out.push(kr.residual(*lam, &v)?);
    }
    Ok(out)
}

/// Eigenfunctions `g(x) = (W^{-1} U^T x)[idx]` for a decomposition with
/// POD basis `u` (`d × n`) and eigenvector matrix `w` (`n × n`).
fn exact_eigfuns(
    u: MatRef<'_, f64>,
    w: &Mat<c64>,
    idx: &[usize],
    pairs: &SnapshotPairs,
) -> Result<(EigenfunctionMap, Mat<c64>)> {
    let d = u.nrows();
    if idx.is_empty() {
        return Ok((EigenfunctionMap::Linear(Mat::zeros(0, d)), Mat::zeros(pairs.len(), 0)));
    }
    let (w_inv, _) = linalg::pinv(w.as_ref())?;
    let uc = linalg::to_complex(u);
    let full = &w_inv * uc.transpose();
    let e = Mat::from_fn(idx.len(), d, |a, i| full[(idx[a], i)]);
    let xc = linalg::to_complex(pairs.x());
    let on_data = (&e * &xc).transpose().to_owned();
    Ok((EigenfunctionMap::Linear(e), on_data))
}

/// Eigenfunctions `Q̂_n Σ̂_n V[:, idx]` using the first `n = vecs.nrows()`
/// principal components of a kernel decomposition.
fn kernel_eigfuns(
    kr: &KedmdResult,
    vecs: &Mat<c64>,
    idx: &[usize],
    pairs: &SnapshotPairs,
) -> Result<(EigenfunctionMap, Mat<c64>)> {
    let n = vecs.nrows();
    let m = kr.q_hat.nrows();
    if pairs.len() != m {
        return Err(Error::Shape("pairs do not match the decomposition".into()));
    }
    let v = Mat::from_fn(n, idx.len(), |i, a| vecs[(i, idx[a])]);
    let fx = Mat::from_fn(m, n, |i, j| c64::new(kr.q_hat[(i, j)] * kr.sigma_hat[j], 0.0));
    let on_data = &fx * &v;
    let p = Mat::from_fn(m, n, |i, j| c64::new(kr.q_hat[(i, j)] / kr.sigma_hat[j], 0.0));
    let coeffs = &p * &v;
    let weight = pairs.uniform_weight().ok_or_else(|| {
        Error::Unsupported("kernel eigenfunctions out of sample require uniform weights".into())
    })?;
    let map = EigenfunctionMap::Kernel {
        spec: kr.spec,
        centers: pairs.x().to_owned(),
        weight,
        coeffs,
    };
    Ok((map, on_data))
}

impl ForecastModel {
    pub fn with_mean(mut self, mean: Vec<f64>) -> Self {
        assert_eq!(mean.len(), self.modes.nrows());
        self.mean = mean;
        self
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.modes.nrows()
    }

    /// Predicted states at steps `1..=n_steps` from `x0` (`d × n_steps`).
    pub fn forecast(&self, x0: &[f64], n_steps: usize) -> Result<Mat<f64>> {
        let d = self.dim();
        if x0.len() != d {
            return Err(Error::Shape(format!("initial state has length {}, expected {d}", x0.len())));
        }
        if n_steps == 0 {
            return Err(Error::Argument("n_steps must be at least 1".into()));
        }
        let centred: Vec<f64> = x0.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let g = self.eigfun.eval(&centred);
        Ok(forecast(self, &g, n_steps))
    }
}

/// `x̂_n = mean + Re Σ_j ξ_j λ_j^n g_j` for `n = 1..=n_steps`, with
/// eigenfunction values `g` already evaluated at the (centred) initial state.
pub fn forecast(model: &ForecastModel, g: &[c64], n_steps: usize) -> Mat<f64> {
    let d = model.dim();
    let k = model.len();
    let mut coef: Vec<c64> = g.to_vec();
    let mut out = Mat::zeros(d, n_steps);
    for n in 0..n_steps {
        for j in 0..k {
            coef[j] *= model.eigenvalues[j];
        }
        for i in 0..d {
            let s: c64 = (0..k).map(|j| model.modes[(i, j)] * coef[j]).sum();
            out[(i, n)] = s.re + model.mean[i];
        }
    }
    out
}

/// Forecast every realization of `test` from its first delay window.
/// Returns `(forecasts, truths)`, each `d × n` with `n = T_i − q`, capped at
/// `max_steps` when given.
pub fn forecast_realizations(
    model: &ForecastModel,
    test: &TrajectorySet,
    q: usize,
    max_steps: Option<usize>,
) -> Result<(Vec<Mat<f64>>, Vec<Mat<f64>>)> {
    let mut forecasts = Vec::with_capacity(test.len());
    let mut truths = Vec::with_capacity(test.len());
    for r in test.realizations() {
        let single = TrajectorySet::new(vec![r.clone()])?;
        let pairs = delay_embed(&single, q)?;
        let n = max_steps.map_or(pairs.len(), |s| s.min(pairs.len()));
        if n == 0 {
            return Err(Error::Argument("forecast horizon must be at least 1".into()));
        }
        let x0 = linalg::real_column(pairs.x(), 0);
        forecasts.push(model.forecast(&x0, n)?);
        truths.push(pairs.y().subcols(0, n).to_owned());
    }
    Ok((forecasts, truths))
}

/// Mean over realizations of `Σ (x̂ − x)² / Σ x²`.
pub fn mise(forecasts: &[Mat<f64>], truth: &[Mat<f64>]) -> Result<f64> {
    if forecasts.is_empty() || forecasts.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} forecasts for {} truths",
            forecasts.len(),
            truth.len()
        )));
    }
    let mut total = 0.0;
    for (i, (f, t)) in forecasts.iter().zip(truth).enumerate() {
        if (f.nrows(), f.ncols()) != (t.nrows(), t.ncols()) {
            return Err(Error::Shape(format!("forecast {i} does not match its truth")));
        }
        let mut err = 0.0;
        let mut energy = 0.0;
        for j in 0..t.ncols() {
            for r in 0..t.nrows() {
                err += (f[(r, j)] - t[(r, j)]).powi(2);
                energy += t[(r, j)].powi(2);
            }
        }
        if energy == 0.0 {
            return Err(Error::Degenerate(format!("truth {i} has zero energy")));
        }
        total += err / energy;
    }
    Ok(total / forecasts.len() as f64)
}
