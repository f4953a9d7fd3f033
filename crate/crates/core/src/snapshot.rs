//! Snapshot data: paired state matrices, multi-realization time series, and
//! the CSV / binary matrix formats.
//!
//! Matrices are stored with one snapshot per column (`d` rows, `M` columns).
//! Time series are stored with one timestep per row (`T` rows, `p` channels).

use std::fs;
use std::io::Write;
use std::path::Path;

use faer::{Mat, MatRef};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;

const BINARY_MAGIC: &[u8; 4] = b"RDMD";
const BINARY_VERSION: u32 = 1;
const BINARY_HEADER_LEN: usize = 4 + 4 + 8 + 8;

/// Paired snapshot matrices `X`, `Y` (`d × M`) with positive quadrature weights.
#[derive(Debug, Clone)]
pub struct SnapshotPairs {
    x: Mat<f64>,
    y: Mat<f64>,
    weights: Vec<f64>,
}

impl SnapshotPairs {
    /// Pairs with uniform weights `1/M`.
    pub fn new(x: Mat<f64>, y: Mat<f64>) -> Result<Self> {
        let m = x.ncols();
        Self::with_weights(x, y, vec![1.0 / m.max(1) as f64; m])
    }

    pub fn with_weights(x: Mat<f64>, y: Mat<f64>, weights: Vec<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() || x.ncols() != y.ncols() {
            return Err(Error::Shape(format!(
                "X is {}x{} but Y is {}x{}",
                x.nrows(),
                x.ncols(),
                y.nrows(),
                y.ncols()
            )));
        }
        if x.ncols() == 0 || x.nrows() == 0 {
            return Err(Error::Shape("snapshot matrices must be nonempty".into()));
        }
        if weights.len() != x.ncols() {
            return Err(Error::Shape(format!(
                "{} weights for {} snapshots",
                weights.len(),
                x.ncols()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::Argument(format!("weights must be positive, got {w}")));
        }
        if !linalg::all_finite(x.as_ref()) || !linalg::all_finite(y.as_ref()) {
            return Err(Error::Argument("snapshot data contains non-finite values".into()));
        }
        Ok(Self { x, y, weights })
    }

    /// Pairs of consecutive columns of a single trajectory.
    pub fn from_trajectory(states: MatRef<'_, f64>) -> Result<Self> {
        let t = states.ncols();
        if t < 2 {
            return Err(Error::Shape("a trajectory needs at least two snapshots".into()));
        }
        let x = states.subcols(0, t - 1).to_owned();
        let y = states.subcols(1, t - 1).to_owned();
        Self::new(x, y)
    }

    pub fn x(&self) -> MatRef<'_, f64> {
        self.x.as_ref()
    }

    pub fn y(&self) -> MatRef<'_, f64> {
        self.y.as_ref()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// State dimension `d`.
    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    /// Number of snapshot pairs `M`.
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    /// The common weight when all weights agree to a relative 1e-12.
    pub fn uniform_weight(&self) -> Option<f64> {
        let w0 = self.weights[0];
        self.weights
            .iter()
            .all(|w| (w - w0).abs() <= 1e-12 * w0)
            .then_some(w0)
    }

    /// Whether the weights are uniform and equal to `1/M`.
    pub fn has_default_weights(&self) -> bool {
        self.uniform_weight()
            .is_some_and(|w| (w * self.len() as f64 - 1.0).abs() <= 1e-12)
    }
}

/// A collection of time series realizations, each `T_i × p`.
#[derive(Debug, Clone)]
pub struct TrajectorySet {
    realizations: Vec<Mat<f64>>,
}

impl TrajectorySet {
    pub fn new(realizations: Vec<Mat<f64>>) -> Result<Self> {
        if let Some(first) = realizations.first() {
            let p = first.ncols();
            for (i, r) in realizations.iter().enumerate() {
                if r.nrows() < 2 {
                    return Err(Error::Shape(format!(
                        "realization {i} has {} timesteps, needs at least 2",
                        r.nrows()
                    )));
                }
                if r.ncols() != p {
                    return Err(Error::Shape(format!(
                        "realization {i} has {} channels, expected {p}",
                        r.ncols()
                    )));
                }
            }
        }
        Ok(Self { realizations })
    }

    /// Scalar realizations, one per row of `rows` (each row is a `T × 1` series).
    pub fn from_rows(rows: MatRef<'_, f64>) -> Result<Self> {
        let series = (0..rows.nrows())
            .map(|i| Mat::from_fn(rows.ncols(), 1, |t, _| rows[(i, t)]))
            .collect();
        Self::new(series)
    }

    pub fn realizations(&self) -> &[Mat<f64>] {
        &self.realizations
    }

    pub fn len(&self) -> usize {
        self.realizations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }

    /// Channel count `p` (0 for an empty set).
    pub fn channels(&self) -> usize {
        self.realizations.first().map_or(0, |r| r.ncols())
    }
}

/// On-disk matrix encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Binary,
}

impl MatrixFormat {
    /// `.bin` / `.rdmd` map to binary, everything else to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("rdmd") => MatrixFormat::Binary,
            _ => MatrixFormat::Csv,
        }
    }
}

impl std::str::FromStr for MatrixFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(MatrixFormat::Csv),
            "binary" | "bin" => Ok(MatrixFormat::Binary),
            other => Err(Error::Argument(format!("unknown matrix format '{other}'"))),
        }
    }
}

pub fn load_matrix(path: &Path, format: MatrixFormat, transpose: bool) -> Result<Mat<f64>> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let m = match format {
        MatrixFormat::Csv => parse_csv(&bytes)?,
        MatrixFormat::Binary => parse_binary(&bytes)?,
    };
    Ok(if transpose { m.transpose().to_owned() } else { m })
}

pub fn save_matrix(path: &Path, m: MatRef<'_, f64>, format: MatrixFormat) -> Result<()> {
    let bytes = match format {
        MatrixFormat::Csv => encode_csv(m).into_bytes(),
        MatrixFormat::Binary => encode_binary(m),
    };
    let mut f = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(&bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parse comma-separated rows (no header). Row and column numbers in errors
/// are 1-based.
pub fn parse_csv(bytes: &[u8]) -> Result<Mat<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: i + 1,
            col: 0,
            message: e.to_string(),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field.parse::<f64>().map_err(|e| Error::Parse {
                    row: i + 1,
                    col: j + 1,
                    message: format!("'{field}': {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Shape(format!(
                    "row {} has {} columns, row 1 has {}",
                    i + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Format a float with 17 significant digits (lossless for f64).
pub fn format_f64(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    format!("{v:.16e}")
}

pub fn encode_csv(m: MatRef<'_, f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols()).map(|j| format_f64(m[(i, j)])).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn encode_binary(m: MatRef<'_, f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(BINARY_HEADER_LEN + 8 * m.nrows() * m.ncols());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn parse_binary(bytes: &[u8]) -> Result<Mat<f64>> {
    let header_err = |msg: &str| Error::Parse {
        row: 0,
        col: 0,
        message: msg.to_string(),
    };
    if bytes.len() < BINARY_HEADER_LEN {
        return Err(header_err("truncated header"));
    }
    if &bytes[0..4] != BINARY_MAGIC {
        return Err(header_err("bad magic, expected RDMD"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != BINARY_VERSION {
        return Err(header_err(&format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Shape(format!("header claims {rows}x{cols} matrix")))?;
    let payload = &bytes[BINARY_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Shape(format!(
            "header claims {rows}x{cols} ({expected} bytes) but payload has {} bytes",
            payload.len()
        )));
    }
    let value = |k: usize| f64::from_le_bytes(payload[8 * k..8 * k + 8].try_into().expect("8 bytes"));
    Ok(Mat::from_fn(rows, cols, |i, j| value(j * rows + i)))
}

/// Forward-window delay embedding.
///
/// For each realization and each start `n` with `n + q < T_i`, the column of
/// `X` stacks samples `s_n .. s_{n+q-1}` channel by channel (entry
/// `c * q + k` holds channel `c` at lag `k`), and the column of `Y` is the
/// same window shifted one step forward. Columns of all realizations are
/// concatenated in order; weights are uniform.
pub fn delay_embed(traj: &TrajectorySet, q: usize) -> Result<SnapshotPairs> {
    if q == 0 {
        return Err(Error::Argument("delay q must be at least 1".into()));
    }
    if traj.is_empty() {
        return Err(Error::Argument("no realizations to embed".into()));
    }
    for (index, r) in traj.realizations().iter().enumerate() {
        if r.nrows() <= q {
            return Err(Error::Embedding {
                index,
                steps: r.nrows(),
                delay: q,
            });
        }
    }
    let p = traj.channels();
    let d = p * q;
    let m: usize = traj.realizations().iter().map(|r| r.nrows() - q).sum();
    let mut x = Mat::<f64>::zeros(d, m);
    let mut y = Mat::<f64>::zeros(d, m);
    let mut col = 0;
    for r in traj.realizations() {
        for n in 0..(r.nrows() - q) {
            for c in 0..p {
                for k in 0..q {
                    x[(c * q + k, col)] = r[(n + k, c)];
                    y[(c * q + k, col)] = r[(n + k + 1, c)];
                }
            }
            col += 1;
        }
    }
    SnapshotPairs::new(x, y)
}

/// Subtract the column mean of `X` from every column of both `X` and `Y`.
pub fn mean_subtract(pairs: &SnapshotPairs) -> (SnapshotPairs, Vec<f64>) {
    let (d, m) = (pairs.dim(), pairs.len());
    let mean: Vec<f64> = (0..d)
        .map(|i| (0..m).map(|j| pairs.x[(i, j)]).sum::<f64>() / m as f64)
        .collect();
    let x = Mat::from_fn(d, m, |i, j| pairs.x[(i, j)] - mean[i]);
    let y = Mat::from_fn(d, m, |i, j| pairs.y[(i, j)] - mean[i]);
    let centred = SnapshotPairs {
        x,
        y,
        weights: pairs.weights.clone(),
    };
    (centred, mean)
}

/// Deterministic random partition into `(train, test)` with `n_test`
/// realizations held out. Both halves keep the original relative order.
pub fn split_realizations(
    traj: &TrajectorySet,
    n_test: usize,
    seed: u64,
) -> Result<(TrajectorySet, TrajectorySet)> {
    let n = traj.len();
    if n_test >= n {
        return Err(Error::Argument(format!(
            "n_test = {n_test} must be smaller than the {n} realizations"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut test_idx = idx[..n_test].to_vec();
    test_idx.sort_unstable();
    let mut is_test = vec![false; n];
    for &i in &test_idx {
        is_test[i] = true;
    }
    let pick = |want: bool| {
        traj.realizations()
            .iter()
            .zip(&is_test)
            .filter(|(_, &t)| t == want)
            .map(|(r, _)| r.clone())
            .collect::<Vec<_>>()
    };
    Ok((
        TrajectorySet { realizations: pick(false) },
        TrajectorySet { realizations: pick(true) },
    ))
}
