//! C ABI over the `resdmd` library.
//!
//! Every entry point returns a [`ResdmdStatus`]. On failure the message is
//! available from [`resdmd_last_error_message`] on the same thread. Matrices
//! are passed column-major, one snapshot per column. Handles are opaque and
//! must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use faer::Mat;
use resdmd::kernel::default_scale;
use resdmd::spectral::{grid_sweep, GridAxes};
use resdmd::{c64, Error, ExactDmdResult, KedmdResult, KernelKind, KernelSpec, SnapshotPairs};

/// Status codes returned by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResdmdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Rank = 4,
    Numerical = 5,
    Degenerate = 6,
    Unsupported = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResdmdKernel {
    Gaussian = 0,
    Laplacian = 1,
    Lorentzian = 2,
    Polynomial = 3,
}

/// Opaque exact DMD result.
pub struct ResdmdExactDmd {
    inner: ExactDmdResult,
}

/// Opaque kernel EDMD result.
pub struct ResdmdKedmd {
    inner: KedmdResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> ResdmdStatus {
    match e {
        Error::Shape(_) | Error::Embedding { .. } => ResdmdStatus::Shape,
        Error::Rank(_) => ResdmdStatus::Rank,
        Error::Numerical(_) => ResdmdStatus::Numerical,
        Error::Degenerate(_) => ResdmdStatus::Degenerate,
        Error::Unsupported(_) => ResdmdStatus::Unsupported,
        Error::Argument(_) | Error::Io { .. } | Error::Parse { .. } => ResdmdStatus::InvalidArgument,
    }
}

struct Fail(ResdmdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ResdmdStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, translating errors and panics into status codes.
fn guard<F>(f: F) -> ResdmdStatus
where
    F: FnOnce() -> Result<(), Fail>,
{
    faer::set_global_parallelism(faer::Par::Seq);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ResdmdStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ResdmdStatus::Panic
        }
    }
}

/// # Safety
/// `x` and `y` must each point to `d * m` doubles.
unsafe fn read_pairs(x: *const f64, y: *const f64, d: usize, m: usize) -> Result<SnapshotPairs, Fail> {
    if x.is_null() {
        return Err(null("x"));
    }
    if y.is_null() {
        return Err(null("y"));
    }
    if d == 0 || m == 0 {
        return Err(Fail(ResdmdStatus::Shape, format!("empty data: d = {d}, m = {m}")));
    }
    let len = d
        .checked_mul(m)
        .ok_or_else(|| Fail(ResdmdStatus::Shape, "d * m overflows".into()))?;
    let xs = std::slice::from_raw_parts(x, len);
    let ys = std::slice::from_raw_parts(y, len);
    let pairs = SnapshotPairs::new(
        Mat::from_fn(d, m, |i, j| xs[j * d + i]),
        Mat::from_fn(d, m, |i, j| ys[j * d + i]),
    )?;
    Ok(pairs)
}

fn rank_arg(rank: usize) -> Option<usize> {
    (rank > 0).then_some(rank)
}

/// # Safety
/// `out` must be null or point to `len` writable doubles.
unsafe fn write_out(out: *mut f64, values: impl ExactSizeIterator<Item = f64>, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    let dst = std::slice::from_raw_parts_mut(out, values.len());
    for (d, v) in dst.iter_mut().zip(values) {
        *d = v;
    }
    Ok(())
}

/// Pointer to a NUL-terminated description of the last error on this thread
/// (empty after a successful call). Valid until the next call on the thread.
#[no_mangle]
pub extern "C" fn resdmd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn resdmd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Exact DMD of column-major `d × m` snapshot matrices. `rank = 0` selects
/// the numerical rank.
///
/// # Safety
/// `x` and `y` must point to `d * m` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn resdmd_exact_dmd_new(
    x: *const f64,
    y: *const f64,
    d: usize,
    m: usize,
    rank: usize,
    out: *mut *mut ResdmdExactDmd,
) -> ResdmdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let pairs = read_pairs(x, y, d, m)?;
        let inner = resdmd::exact_dmd(&pairs, rank_arg(rank))?;
        *out = Box::into_raw(Box::new(ResdmdExactDmd { inner }));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from [`resdmd_exact_dmd_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn resdmd_exact_dmd_free(h: *mut ResdmdExactDmd) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// # Safety
/// `h` must be a live handle (or null, which yields 0).
#[no_mangle]
pub unsafe extern "C" fn resdmd_exact_dmd_rank(h: *const ResdmdExactDmd) -> usize {
    h.as_ref().map_or(0, |h| h.inner.rank())
}

/// Eigenvalues into `re` and `im`, each of length `rank`.
///
/// # Safety
/// `h` must be a live handle; `re` and `im` must hold `rank` doubles.
#[no_mangle]
pub unsafe extern "C" fn resdmd_exact_dmd_eigenvalues(
    h: *const ResdmdExactDmd,
    re: *mut f64,
    im: *mut f64,
) -> ResdmdStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        write_out(re, h.inner.eigenvalues.iter().map(|l| l.re), "re")?;
        write_out(im, h.inner.eigenvalues.iter().map(|l| l.im), "im")
    })
}

/// Eigenpair residuals, length `rank`.
///
/// # Safety
/// `h` must be a live handle; `out` must hold `rank` doubles.
#[no_mangle]
pub unsafe extern "C" fn resdmd_exact_dmd_residuals(h: *const ResdmdExactDmd, out: *mut f64) -> ResdmdStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        write_out(out, h.inner.residuals.iter().copied(), "out")
    })
}

/// Pseudospectrum indicator at `z = re + i im`.
///
/// # Safety
/// `h` must be a live handle; `tau` must be writable.
#[no_mangle]
pub unsafe extern "C" fn resdmd_exact_dmd_pseudo_point(
    h: *const ResdmdExactDmd,
    re: f64,
    im: f64,
    tau: *mut f64,
) -> ResdmdStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        let (t, _) = h.inner.pseudo_point(c64::new(re, im))?;
        write_out(tau, std::iter::once(t), "tau")
    })
}

/// Indicator on the `n_re × n_im` grid of evenly spaced nodes; `tau` is
/// filled as `tau[i_im * n_re + i_re]`.
///
/// # Safety
/// `h` must be a live handle; `tau` must hold `n_re * n_im` doubles.
#[no_mangle]
pub unsafe extern "C" fn resdmd_exact_dmd_pseudospectrum(
    h: *const ResdmdExactDmd,
    re_min: f64,
    re_max: f64,
    n_re: usize,
    im_min: f64,
    im_max: f64,
    n_im: usize,
    tau: *mut f64,
) -> ResdmdStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        let axes = GridAxes::linspace((re_min, re_max, n_re), (im_min, im_max, n_im))?;
        let grid = grid_sweep(|z| h.inner.pseudo_point(z), &axes)?;
        write_out(tau, grid.tau.iter().copied(), "tau")
    })
}

/// Kernel EDMD. `scale <= 0` selects the default scale; `degree` is only
/// used by the polynomial kernel; `rank = 0` selects the numerical rank.
///
/// # Safety
/// `x` and `y` must point to `d * m` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn resdmd_kedmd_new(
    x: *const f64,
    y: *const f64,
    d: usize,
    m: usize,
    kernel: ResdmdKernel,
    scale: f64,
    degree: u32,
    rank: usize,
    out: *mut *mut ResdmdKedmd,
) -> ResdmdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let pairs = read_pairs(x, y, d, m)?;
        let kind = match kernel {
            ResdmdKernel::Gaussian => KernelKind::Gaussian,
            ResdmdKernel::Laplacian => KernelKind::Laplacian,
            ResdmdKernel::Lorentzian => KernelKind::Lorentzian,
            ResdmdKernel::Polynomial => KernelKind::Polynomial,
        };
        let scale = if scale > 0.0 { scale } else { default_scale(pairs.x())? };
        let degree = (kind == KernelKind::Polynomial).then_some(degree);
        let spec = KernelSpec::new(kind, scale, degree)?;
        let inner = resdmd::kedmd(&pairs, &spec, rank_arg(rank))?;
        *out = Box::into_raw(Box::new(ResdmdKedmd { inner }));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from [`resdmd_kedmd_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn resdmd_kedmd_free(h: *mut ResdmdKedmd) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// # Safety
/// `h` must be a live handle (or null, which yields 0).
#[no_mangle]
pub unsafe extern "C" fn resdmd_kedmd_rank(h: *const ResdmdKedmd) -> usize {
    h.as_ref().map_or(0, |h| h.inner.rank())
}

/// # Safety
/// `h` must be a live handle; `re` and `im` must hold `rank` doubles.
#[no_mangle]
pub unsafe extern "C" fn resdmd_kedmd_eigenvalues(h: *const ResdmdKedmd, re: *mut f64, im: *mut f64) -> ResdmdStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        write_out(re, h.inner.eigenvalues.iter().map(|l| l.re), "re")?;
        write_out(im, h.inner.eigenvalues.iter().map(|l| l.im), "im")
    })
}

/// # Safety
/// `h` must be a live handle; `out` must hold `rank` doubles.
#[no_mangle]
pub unsafe extern "C" fn resdmd_kedmd_residuals(h: *const ResdmdKedmd, out: *mut f64) -> ResdmdStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        write_out(out, h.inner.residuals.iter().copied(), "out")
    })
}

/// # Safety
/// `h` must be a live handle; `tau` must be writable.
#[no_mangle]
pub unsafe extern "C" fn resdmd_kedmd_pseudo_point(
    h: *const ResdmdKedmd,
    re: f64,
    im: f64,
    tau: *mut f64,
) -> ResdmdStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        let (t, _) = h.inner.pseudo_point(c64::new(re, im))?;
        write_out(tau, std::iter::once(t), "tau")
    })
}

/// Same layout as [`resdmd_exact_dmd_pseudospectrum`].
///
/// # Safety
/// `h` must be a live handle; `tau` must hold `n_re * n_im` doubles.
#[no_mangle]
pub unsafe extern "C" fn resdmd_kedmd_pseudospectrum(
    h: *const ResdmdKedmd,
    re_min: f64,
    re_max: f64,
    n_re: usize,
    im_min: f64,
    im_max: f64,
    n_im: usize,
    tau: *mut f64,
) -> ResdmdStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        let axes = GridAxes::linspace((re_min, re_max, n_re), (im_min, im_max, n_im))?;
        let grid = grid_sweep(|z| h.inner.pseudo_point(z), &axes)?;
        write_out(tau, grid.tau.iter().copied(), "tau")
    })
}
