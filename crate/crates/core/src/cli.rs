//! The `resdmd` command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use faer::{c64, Mat, MatRef};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{exact_dmd, ExactDmdResult};
use crate::kedmd::{kedmd, KedmdResult};
use crate::kernel::{default_scale, KernelKind, KernelSpec};
use crate::linalg;
use crate::selftest::run_selftest;
use crate::snapshot::{
    delay_embed, load_matrix, mean_subtract, save_matrix, split_realizations, MatrixFormat,
    SnapshotPairs, TrajectorySet,
};
use crate::spectral::{
    filter_modes, fit_kmd, forecast_realizations, grid_sweep, mise, Decomposition, GridAxes,
    Ordering,
};

#[derive(Debug, Parser)]
#[command(name = "resdmd", version, about = "Residual dynamic mode decomposition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact DMD with eigenpair residuals.
    Dmd(DmdArgs),
    /// Kernelized EDMD with left-eigenpair residuals.
    Kedmd(KedmdArgs),
    /// Pseudospectrum on a grid.
    Pseudospec(PseudospecArgs),
    /// Keep only eigenpairs with residual at most epsilon.
    Validate(ValidateArgs),
    /// Residual-minimizing eigenfunction coefficients at one point.
    Eigfun(EigfunArgs),
    /// Time-delay embedding of a set of scalar time series.
    Embed(EmbedArgs),
    /// Koopman mode forecast of held-out realizations.
    Forecast(ForecastArgs),
    /// Forecast error against the number of retained modes, for both orderings.
    Compress(CompressArgs),
    /// Run the oracle equivalence suite.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Binary,
}

impl From<FormatArg> for MatrixFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => MatrixFormat::Csv,
            FormatArg::Binary => MatrixFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Exact,
    Kedmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderingArg {
    Residual,
    Pca,
}

impl From<OrderingArg> for Ordering {
    fn from(o: OrderingArg) -> Self {
        match o {
            OrderingArg::Residual => Ordering::Residual,
            OrderingArg::Pca => Ordering::Pca,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankArg {
    Auto,
    Fixed(usize),
}

fn parse_rank(s: &str) -> std::result::Result<RankArg, String> {
    if s == "auto" {
        return Ok(RankArg::Auto);
    }
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("expected a positive integer or 'auto', got '{s}'")),
        Ok(n) => Ok(RankArg::Fixed(n)),
    }
}

impl RankArg {
    fn get(self) -> Option<usize> {
        match self {
            RankArg::Auto => None,
            RankArg::Fixed(n) => Some(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleArg {
    Auto,
    Fixed(f64),
}

fn parse_scale(s: &str) -> std::result::Result<ScaleArg, String> {
    if s == "auto" {
        return Ok(ScaleArg::Auto);
    }
    match s.parse::<f64>() {
        Ok(c) if c.is_finite() && c > 0.0 => Ok(ScaleArg::Fixed(c)),
        _ => Err(format!("expected a positive number or 'auto', got '{s}'")),
    }
}

fn parse_complex(s: &str) -> std::result::Result<c64, String> {
    let bad = || format!("expected 're,im', got '{s}'");
    let (re, im) = s.split_once(',').ok_or_else(bad)?;
    let re: f64 = re.trim().parse().map_err(|_| bad())?;
    let im: f64 = im.trim().parse().map_err(|_| bad())?;
    if !(re.is_finite() && im.is_finite()) {
        return Err(bad());
    }
    Ok(c64::new(re, im))
}

fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("expected a positive number, got '{s}'")),
    }
}

/// Snapshot matrices: `X` and either `Y` or consecutive columns of `X`.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Snapshot matrix X (one snapshot per column), or a trajectory when --input-y is absent.
    #[arg(long)]
    pub input: PathBuf,
    /// Snapshot matrix Y; without it, pairs are consecutive columns of --input.
    #[arg(long)]
    pub input_y: Option<PathBuf>,
    /// Input encoding; inferred from the file extension by default.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Inputs store one snapshot per row.
    #[arg(long)]
    pub transpose: bool,
    /// Subtract the mean of X from both X and Y.
    #[arg(long)]
    pub mean_subtract: bool,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    pub kernel: KernelArg,
    /// Kernel scale c, or 'auto' for the average norm of the centred snapshots.
    #[arg(long, default_value = "auto", value_parser = parse_scale)]
    pub scale: ScaleArg,
    /// Degree of the polynomial kernel.
    #[arg(long, default_value_t = 2)]
    pub degree: u32,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KernelArg {
    Gaussian,
    Laplacian,
    Lorentzian,
    Poly,
}

impl From<KernelArg> for KernelKind {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Gaussian => KernelKind::Gaussian,
            KernelArg::Laplacian => KernelKind::Laplacian,
            KernelArg::Lorentzian => KernelKind::Lorentzian,
            KernelArg::Poly => KernelKind::Polynomial,
        }
    }
}

#[derive(Debug, Args)]
pub struct DmdArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "auto", value_parser = parse_rank)]
    pub rank: RankArg,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KedmdArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "auto", value_parser = parse_rank)]
    pub rank: RankArg,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Decomposition choice shared by the analysis subcommands.
#[derive(Debug, Args)]
pub struct MethodArgs {
    #[arg(long, value_enum, default_value = "exact")]
    pub method: Method,
    #[arg(long, default_value = "auto", value_parser = parse_rank)]
    pub rank: RankArg,
    #[command(flatten)]
    pub kernel: KernelArgs,
}

#[derive(Debug, Args)]
pub struct PseudospecArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    /// Grid as re0:re1:n_re,im0:im1:n_im.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
    /// Threshold recorded with the grid (JSON output lists the sublevel set).
    #[arg(long, value_parser = parse_positive)]
    pub epsilon: Option<f64>,
    /// Output file; `.json` selects JSON, anything else CSV (one row per imaginary value).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    #[arg(long, value_parser = parse_positive)]
    pub epsilon: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EigfunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    /// Spectral parameter as re,im.
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    pub lambda: c64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Scalar time series, one realization per row.
#[derive(Debug, Args)]
pub struct SeriesArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Series are stored one per column instead of one per row.
    #[arg(long)]
    pub transpose: bool,
    /// Delay-embedding depth q.
    #[arg(long, default_value_t = 1)]
    pub delay: usize,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub series: SeriesArgs,
    /// Destination of the embedded X matrix.
    #[arg(long)]
    pub output: PathBuf,
    /// Destination of the embedded Y matrix.
    #[arg(long)]
    pub output_y: PathBuf,
}

#[derive(Debug, Args)]
pub struct KmdArgs {
    #[command(flatten)]
    pub series: SeriesArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    /// Number of held-out realizations.
    #[arg(long, default_value_t = 1)]
    pub n_test: usize,
    /// Seed of the train/test split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Subtract the training mean before the decomposition.
    #[arg(long)]
    pub mean_subtract: bool,
    /// Forecast horizon cap (default: the full remaining length).
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub kmd: KmdArgs,
    /// Number of retained modes (default: the rank).
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long, value_enum, default_value = "residual")]
    pub ordering: OrderingArg,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[command(flatten)]
    pub kmd: KmdArgs,
    /// Largest number of retained modes (default: the rank).
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Write the report as JSON to this file as well.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

/// Run the CLI on `args` (including the program name). Results go to
/// `stdout`, diagnostics to `stderr`; the return value is the exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let rendered = e.to_string();
            let line = rendered
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            let _ = writeln!(stderr, "error[usage]: {line}");
            return EXIT_VALIDATION;
        }
    };
    match run(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(stderr, "error[{}]: {msg}", e.kind());
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn emit(output: Option<&Path>, content: &[u8], stdout: &mut dyn Write) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, content).map_err(|e| io_err(path, e)),
        None => stdout
            .write_all(content)
            .map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

fn emit_json<T: Serialize>(output: Option<&Path>, value: &T, stdout: &mut dyn Write) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numerical(format!("serialization failed: {e}")))?;
    text.push('\n');
    emit(output, text.as_bytes(), stdout)
}

fn warn(stderr: &mut dyn Write, warnings: &[String]) {
    for w in warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
}

fn format_of(path: &Path, explicit: Option<FormatArg>) -> MatrixFormat {
    explicit.map_or_else(|| MatrixFormat::from_path(path), Into::into)
}

/// Loaded snapshot pairs and the mean removed from them, if any.
struct Dataset {
    pairs: SnapshotPairs,
    mean: Option<Vec<f64>>,
}

fn load_pairs(args: &DataArgs) -> Result<Dataset> {
    let x = load_matrix(&args.input, format_of(&args.input, args.format), args.transpose)?;
    let pairs = match &args.input_y {
        Some(path) => {
            let y = load_matrix(path, format_of(path, args.format), args.transpose)?;
            SnapshotPairs::new(x, y)?
        }
        None => SnapshotPairs::from_trajectory(x.as_ref())?,
    };
    Ok(if args.mean_subtract {
        let (pairs, mean) = mean_subtract(&pairs);
        Dataset { pairs, mean: Some(mean) }
    } else {
        Dataset { pairs, mean: None }
    })
}

fn kernel_spec(args: &KernelArgs, x: MatRef<'_, f64>) -> Result<KernelSpec> {
    let kind: KernelKind = args.kernel.into();
    let scale = match args.scale {
        ScaleArg::Auto => default_scale(x)?,
        ScaleArg::Fixed(c) => c,
    };
    let degree = (kind == KernelKind::Polynomial).then_some(args.degree);
    KernelSpec::new(kind, scale, degree)
}

enum Fitted {
    Exact(ExactDmdResult),
    Kernel(KedmdResult),
}

impl Fitted {
    fn decomposition(&self) -> Decomposition<'_> {
        match self {
            Fitted::Exact(r) => Decomposition::Exact(r),
            Fitted::Kernel(r) => Decomposition::Kernel(r),
        }
    }

    fn pseudo_point(&self, z: c64) -> Result<(f64, Vec<c64>)> {
        match self {
            Fitted::Exact(r) => r.pseudo_point(z),
            Fitted::Kernel(r) => r.pseudo_point(z),
        }
    }

    fn method(&self) -> &'static str {
        match self {
            Fitted::Exact(_) => "exact",
            Fitted::Kernel(_) => "kedmd",
        }
    }

    fn warnings(&self) -> Vec<String> {
        match self {
            Fitted::Exact(r) => exact_warnings(r),
            Fitted::Kernel(r) => kernel_warnings(r),
        }
    }
}

fn fit(args: &MethodArgs, pairs: &SnapshotPairs) -> Result<Fitted> {
    Ok(match args.method {
        Method::Exact => Fitted::Exact(exact_dmd(pairs, args.rank.get())?),
        Method::Kedmd => {
            let spec = kernel_spec(&args.kernel, pairs.x())?;
            Fitted::Kernel(kedmd(pairs, &spec, args.rank.get())?)
        }
    })
}

fn exact_warnings(r: &ExactDmdResult) -> Vec<String> {
    let mut out = Vec::new();
    if r.svd.rank_reduced() {
        out.push(format!(
            "requested rank {} reduced to numerical rank {}",
            r.svd.requested_rank.unwrap_or(0),
            r.rank()
        ));
    }
    if r.defective {
        out.push(format!(
            "eigenvector matrix is nearly singular (condition number {:.3e})",
            r.eigvec_condition
        ));
    }
    out
}

fn kernel_warnings(r: &KedmdResult) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(req) = r.requested_rank {
        if req > r.rank() {
            out.push(format!("requested rank {req} reduced to numerical rank {}", r.rank()));
        }
    }
    if r.defective {
        out.push(format!(
            "eigenvector matrix is nearly singular (condition number {:.3e})",
            r.eigvec_condition
        ));
    }
    if r.pairing_ambiguous {
        out.push("left/right eigenvector pairing is ambiguous for repeated eigenvalues".into());
    }
    out
}

// JSON shapes. Field names are part of the documented output format.

/// Real matrix, row-major.
#[derive(Debug, Serialize)]
pub struct JsonMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl JsonMatrix {
    pub fn new(m: MatRef<'_, f64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
            .collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

/// Complex matrix, row-major, entries as `[re, im]`.
#[derive(Debug, Serialize)]
pub struct JsonComplexMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl JsonComplexMatrix {
    pub fn new(m: MatRef<'_, c64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| pair(m[(i, j)])))
            .collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

fn pair(z: c64) -> [f64; 2] {
    [z.re, z.im]
}

fn pairs_of(zs: &[c64]) -> Vec<[f64; 2]> {
    zs.iter().copied().map(pair).collect()
}

#[derive(Serialize)]
struct KernelJson {
    kind: KernelKind,
    scale: f64,
    degree: Option<u32>,
}

impl From<&KernelSpec> for KernelJson {
    fn from(s: &KernelSpec) -> Self {
        Self { kind: s.kind(), scale: s.scale(), degree: s.degree() }
    }
}

#[derive(Serialize)]
struct DmdJson {
    method: &'static str,
    dim: usize,
    snapshots: usize,
    requested_rank: Option<usize>,
    rank: usize,
    numerical_rank: usize,
    singular_values: Vec<f64>,
    eigenvalues: Vec<[f64; 2]>,
    residuals: Vec<f64>,
    eigvec_condition: f64,
    defective: bool,
    modes: JsonComplexMatrix,
    mean: Option<Vec<f64>>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct KedmdJson {
    method: &'static str,
    kernel: KernelJson,
    dim: usize,
    snapshots: usize,
    requested_rank: Option<usize>,
    rank: usize,
    numerical_rank: usize,
    gram_singular_values: Vec<f64>,
    eigenvalues: Vec<[f64; 2]>,
    residuals: Vec<f64>,
    eigvec_condition: f64,
    defective: bool,
    pairing_ambiguous: bool,
    mean: Option<Vec<f64>>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct PseudospecJson<'a> {
    method: &'static str,
    re_axis: &'a [f64],
    im_axis: &'a [f64],
    tau: &'a [f64],
    epsilon: Option<f64>,
    /// Flat indices with tau < epsilon.
    sublevel_set: Option<Vec<usize>>,
}

#[derive(Serialize)]
struct ValidateJson {
    method: &'static str,
    epsilon: f64,
    kept: Vec<usize>,
    eigenvalues: Vec<[f64; 2]>,
    residuals: Vec<f64>,
}

#[derive(Serialize)]
struct EigfunJson {
    method: &'static str,
    lambda: [f64; 2],
    residual: f64,
    coefficients: Vec<[f64; 2]>,
    /// Exact DMD only: the state-space vector `U v`.
    mode: Option<Vec<[f64; 2]>>,
}

#[derive(Serialize)]
struct EmbedJson {
    dim: usize,
    snapshots: usize,
    realizations: usize,
    delay: usize,
}

#[derive(Serialize)]
struct ForecastJson {
    method: &'static str,
    ordering: Ordering,
    modes: usize,
    train: Vec<usize>,
    test: Vec<usize>,
    eigenvalues: Vec<[f64; 2]>,
    residuals: Vec<f64>,
    mise: f64,
    errors: Vec<f64>,
    forecasts: Vec<JsonMatrix>,
    fit_condition: f64,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct CompressJson {
    method: &'static str,
    rank: usize,
    train: Vec<usize>,
    test: Vec<usize>,
    modes: Vec<usize>,
    mise_residual: Vec<f64>,
    mise_pca: Vec<f64>,
    warnings: Vec<String>,
}

fn run(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Dmd(a) => {
            let data = load_pairs(&a.data)?;
            let r = exact_dmd(&data.pairs, a.rank.get())?;
            let warnings = exact_warnings(&r);
            warn(stderr, &warnings);
            let out = DmdJson {
                method: "exact",
                dim: data.pairs.dim(),
                snapshots: data.pairs.len(),
                requested_rank: r.svd.requested_rank,
                rank: r.rank(),
                numerical_rank: r.svd.numerical_rank,
                singular_values: r.svd.sigma.clone(),
                eigenvalues: pairs_of(&r.eigenvalues),
                residuals: r.residuals.clone(),
                eigvec_condition: r.eigvec_condition,
                defective: r.defective,
                modes: JsonComplexMatrix::new(r.modes.as_ref()),
                mean: data.mean,
                warnings,
            };
            emit_json(a.output.as_deref(), &out, stdout)?;
        }
        Command::Kedmd(a) => {
            let data = load_pairs(&a.data)?;
            let spec = kernel_spec(&a.kernel, data.pairs.x())?;
            let r = kedmd(&data.pairs, &spec, a.rank.get())?;
            let warnings = kernel_warnings(&r);
            warn(stderr, &warnings);
            let out = KedmdJson {
                method: "kedmd",
                kernel: (&spec).into(),
                dim: data.pairs.dim(),
                snapshots: data.pairs.len(),
                requested_rank: r.requested_rank,
                rank: r.rank(),
                numerical_rank: r.numerical_rank,
                gram_singular_values: r.sigma_hat.clone(),
                eigenvalues: pairs_of(&r.eigenvalues),
                residuals: r.residuals.clone(),
                eigvec_condition: r.eigvec_condition,
                defective: r.defective,
                pairing_ambiguous: r.pairing_ambiguous,
                mean: data.mean,
                warnings,
            };
            emit_json(a.output.as_deref(), &out, stdout)?;
        }
        Command::Pseudospec(a) => {
            let axes: GridAxes = a.grid.parse()?;
            let data = load_pairs(&a.data)?;
            let fitted = fit(&a.method, &data.pairs)?;
            warn(stderr, &fitted.warnings());
            let mut grid = grid_sweep(|z| fitted.pseudo_point(z), &axes)?;
            grid.epsilon = a.epsilon;
            let json = a
                .output
                .as_deref()
                .and_then(Path::extension)
                .is_some_and(|e| e.eq_ignore_ascii_case("json"));
            if json {
                let out = PseudospecJson {
                    method: fitted.method(),
                    re_axis: &grid.re_axis,
                    im_axis: &grid.im_axis,
                    tau: &grid.tau,
                    epsilon: grid.epsilon,
                    sublevel_set: grid.epsilon.map(|e| grid.sublevel_set(e)),
                };
                emit_json(a.output.as_deref(), &out, stdout)?;
            } else {
                emit(a.output.as_deref(), grid.to_csv().as_bytes(), stdout)?;
            }
        }
        Command::Validate(a) => {
            let data = load_pairs(&a.data)?;
            let fitted = fit(&a.method, &data.pairs)?;
            warn(stderr, &fitted.warnings());
            let d = fitted.decomposition();
            let kept = filter_modes(d.residuals(), a.epsilon)?;
            let out = ValidateJson {
                method: fitted.method(),
                epsilon: a.epsilon,
                eigenvalues: kept.iter().map(|&j| pair(d.eigenvalues()[j])).collect(),
                residuals: kept.iter().map(|&j| d.residuals()[j]).collect(),
                kept,
            };
            emit_json(a.output.as_deref(), &out, stdout)?;
        }
        Command::Eigfun(a) => {
            let data = load_pairs(&a.data)?;
            let fitted = fit(&a.method, &data.pairs)?;
            warn(stderr, &fitted.warnings());
            let (residual, v) = fitted.pseudo_point(a.lambda)?;
            let mode = match &fitted {
                Fitted::Exact(r) => {
                    let u = linalg::to_complex(r.svd.u.as_ref());
                    Some(pairs_of(&linalg::mat_vec(u.as_ref(), &v)))
                }
                Fitted::Kernel(_) => None,
            };
            let out = EigfunJson {
                method: fitted.method(),
                lambda: pair(a.lambda),
                residual,
                coefficients: pairs_of(&v),
                mode,
            };
            emit_json(a.output.as_deref(), &out, stdout)?;
        }
        Command::Embed(a) => {
            let traj = load_series(&a.series)?;
            let pairs = delay_embed(&traj, a.series.delay)?;
            save_matrix(&a.output, pairs.x(), MatrixFormat::from_path(&a.output))?;
            save_matrix(&a.output_y, pairs.y(), MatrixFormat::from_path(&a.output_y))?;
            let out = EmbedJson {
                dim: pairs.dim(),
                snapshots: pairs.len(),
                realizations: traj.len(),
                delay: a.series.delay,
            };
            emit_json(None, &out, stdout)?;
        }
        Command::Forecast(a) => {
            let setup = KmdSetup::new(&a.kmd)?;
            let rank = setup.fitted.decomposition().rank();
            let k = a.modes.unwrap_or(rank);
            let ordering: Ordering = a.ordering.into();
            let model = fit_kmd(setup.fitted.decomposition(), &setup.pairs, k, ordering)?
                .with_mean(setup.mean.clone());
            let mut warnings = setup.fitted.warnings();
            warnings.extend(model.warnings.iter().cloned());
            warn(stderr, &warnings);
            let (forecasts, truths) =
                forecast_realizations(&model, &setup.test, a.kmd.series.delay, a.kmd.steps)?;
            let errors = forecasts
                .iter()
                .zip(&truths)
                .map(|(f, t)| mise(std::slice::from_ref(f), std::slice::from_ref(t)))
                .collect::<Result<Vec<_>>>()?;
            let out = ForecastJson {
                method: setup.fitted.method(),
                ordering,
                modes: k,
                train: setup.train_idx,
                test: setup.test_idx,
                eigenvalues: pairs_of(&model.eigenvalues),
                residuals: model.residuals.clone(),
                mise: mise(&forecasts, &truths)?,
                errors,
                forecasts: forecasts.iter().map(|f| JsonMatrix::new(f.as_ref())).collect(),
                fit_condition: model.fit_condition,
                warnings,
            };
            emit_json(a.output.as_deref(), &out, stdout)?;
        }
        Command::Compress(a) => {
            let setup = KmdSetup::new(&a.kmd)?;
            let rank = setup.fitted.decomposition().rank();
            let kmax = a.modes.unwrap_or(rank);
            if kmax > rank {
                return Err(Error::Argument(format!("--modes {kmax} exceeds rank {rank}")));
            }
            let mut warnings = setup.fitted.warnings();
            let mut curves = [Vec::new(), Vec::new()];
            for k in 1..=kmax {
                for (curve, ordering) in curves.iter_mut().zip([Ordering::Residual, Ordering::Pca]) {
                    let model = fit_kmd(setup.fitted.decomposition(), &setup.pairs, k, ordering)?
                        .with_mean(setup.mean.clone());
                    for w in &model.warnings {
                        warnings.push(format!("k={k} {ordering}: {w}"));
                    }
                    let (f, t) =
                        forecast_realizations(&model, &setup.test, a.kmd.series.delay, a.kmd.steps)?;
                    curve.push(mise(&f, &t)?);
                }
            }
            warn(stderr, &warnings);
            let [mise_residual, mise_pca] = curves;
            let out = CompressJson {
                method: setup.fitted.method(),
                rank,
                train: setup.train_idx,
                test: setup.test_idx,
                modes: (1..=kmax).collect(),
                mise_residual,
                mise_pca,
                warnings,
            };
            emit_json(a.output.as_deref(), &out, stdout)?;
        }
        Command::Selftest(a) => {
            let report = run_selftest();
            emit(None, report.to_string().as_bytes(), stdout)?;
            if let Some(path) = a.output.as_deref() {
                emit_json(Some(path), &report, stdout)?;
            }
            return Ok(if report.all_passed() { EXIT_OK } else { EXIT_RUNTIME });
        }
    }
    Ok(EXIT_OK)
}

fn load_series(args: &SeriesArgs) -> Result<TrajectorySet> {
    let rows = load_matrix(&args.input, format_of(&args.input, args.format), args.transpose)?;
    TrajectorySet::from_rows(rows.as_ref())
}

/// Train/test split, embedding, optional centring, and the decomposition.
struct KmdSetup {
    fitted: Fitted,
    pairs: SnapshotPairs,
    mean: Vec<f64>,
    test: TrajectorySet,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
}

impl KmdSetup {
    fn new(a: &KmdArgs) -> Result<Self> {
        let traj = load_series(&a.series)?;
        if a.n_test == 0 {
            return Err(Error::Argument("--n-test must be at least 1".into()));
        }
        let (train, test, train_idx, test_idx) = split_with_indices(&traj, a.n_test, a.seed)?;
        let pairs = delay_embed(&train, a.series.delay)?;
        let (pairs, mean) = if a.mean_subtract {
            mean_subtract(&pairs)
        } else {
            let d = pairs.dim();
            (pairs, vec![0.0; d])
        };
        let fitted = fit(&a.method, &pairs)?;
        Ok(Self { fitted, pairs, mean, test, train_idx, test_idx })
    }
}

/// [`split_realizations`] plus the original indices of each half.
fn split_with_indices(
    traj: &TrajectorySet,
    n_test: usize,
    seed: u64,
) -> Result<(TrajectorySet, TrajectorySet, Vec<usize>, Vec<usize>)> {
    // Tag each realization with its index in an extra column, split, read the tags back.
    let tagged: Vec<Mat<f64>> = traj
        .realizations()
        .iter()
        .enumerate()
        .map(|(i, r)| Mat::from_fn(r.nrows(), r.ncols() + 1, |t, c| if c < r.ncols() { r[(t, c)] } else { i as f64 }))
        .collect();
    let (train, test) = split_realizations(&TrajectorySet::new(tagged)?, n_test, seed)?;
    let untag = |set: &TrajectorySet| -> Result<(TrajectorySet, Vec<usize>)> {
        let idx = set.realizations().iter().map(|r| r[(0, r.ncols() - 1)] as usize).collect();
        let stripped = set
            .realizations()
            .iter()
            .map(|r| r.subcols(0, r.ncols() - 1).to_owned())
            .collect();
        Ok((TrajectorySet::new(stripped)?, idx))
    };
    let (train, train_idx) = untag(&train)?;
    let (test, test_idx) = untag(&test)?;
    Ok((train, test, train_idx, test_idx))
}

/// Configure worker threads from `RESDMD_THREADS` and pin faer's dense
/// kernels to sequential execution so results do not depend on the count.
pub fn configure_threads() -> Result<()> {
    faer::set_global_parallelism(faer::Par::Seq);
    let threads = match std::env::var("RESDMD_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::Argument(format!("RESDMD_THREADS must be a positive integer, got '{v}'"))
        })?),
        Err(_) => None,
    };
    if let Some(n) = threads {
        // A second initialization (tests, embedding) is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}
