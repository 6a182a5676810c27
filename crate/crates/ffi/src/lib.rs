//! C ABI for the shapefit solver.
//!
//! Every fallible function returns a [`ShapefitStatus`]; on failure the
//! message is kept per thread and read back with [`shapefit_last_error`].
//! Models are opaque handles released with [`shapefit_model_free`].
//! Covariate matrices are column-major: element `(i, j)` is at `x[j * n + i]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use shapefit::backfit::{fit, AdditiveFit, Dataset, FitConfig};
use shapefit::component::{ShapeMode, ShapeSpec};
use shapefit::io::ModelFile;
use shapefit::{prox, Error};

/// Result codes. Nonzero values mirror the library's error kinds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapefitStatus {
    Ok = 0,
    InvalidInput = 1,
    LengthMismatch = 2,
    BadCell = 3,
    Model = 4,
    Config = 5,
    Csv = 6,
    Io = 7,
    Json = 8,
    NullPointer = 9,
    Panic = 10,
}

/// Shape family of every component.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapefitMode {
    Unconstrained = 0,
    Isotonic = 1,
    Convex = 2,
    ConvexIncreasing = 3,
    Dc = 4,
    ApproxConvex = 5,
    Tv = 6,
}

fn mode_of(code: i32) -> Result<ShapeMode, Error> {
    Ok(match code {
        0 => ShapeMode::Unconstrained,
        1 => ShapeMode::Isotonic,
        2 => ShapeMode::Convex,
        3 => ShapeMode::ConvexIncreasing,
        4 => ShapeMode::Dc,
        5 => ShapeMode::ApproxConvex,
        6 => ShapeMode::Tv,
        _ => return Err(Error::InvalidInput(format!("unknown mode code {code}"))),
    })
}

/// Penalties shared by every component. `lambda_t` only matters for
/// `Tv` and (as LISO) `Isotonic`; `lambda_d` for `Dc` and `ApproxConvex`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ShapefitSpec {
    /// A [`ShapefitMode`] value.
    pub mode: i32,
    pub lambda_d: f64,
    pub lambda_t: f64,
    pub lambda_s: f64,
}

/// Solver controls. Start from [`shapefit_default_options`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ShapefitOptions {
    pub outer_tol: f64,
    pub max_sweeps: usize,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

/// Opaque fitted model.
pub struct ShapefitModel {
    file: ModelFile,
    fit: AdditiveFit,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ShapefitStatus {
    match e {
        Error::InvalidInput(_) => ShapefitStatus::InvalidInput,
        Error::LengthMismatch { .. } => ShapefitStatus::LengthMismatch,
        Error::BadCell { .. } => ShapefitStatus::BadCell,
        Error::Model(_) => ShapefitStatus::Model,
        Error::Config(_) => ShapefitStatus::Config,
        Error::Csv(_) => ShapefitStatus::Csv,
        Error::Io(_) => ShapefitStatus::Io,
        Error::Json(_) => ShapefitStatus::Json,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, records any failure and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ShapefitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ShapefitStatus::Ok
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            ShapefitStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".to_string());
            ShapefitStatus::Panic
        }
    }
}

unsafe fn input<'a>(ptr: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a>(ptr: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

unsafe fn columns_of(x: *const f64, n: usize, p: usize) -> Result<Vec<Vec<f64>>, Failure> {
    let len = n.checked_mul(p).ok_or(Failure::Lib(Error::InvalidInput("n * p overflows".into())))?;
    let x = input(x, len, "x")?;
    Ok((0..p).map(|j| x[j * n..(j + 1) * n].to_vec()).collect())
}

unsafe fn path_of<'a>(path: *const c_char) -> Result<&'a Path, Failure> {
    if path.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Error::InvalidInput("path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

unsafe fn model_ref<'a>(model: *const ShapefitModel) -> Result<&'a ShapefitModel, Failure> {
    model.as_ref().ok_or(Failure::Null("model"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn shapefit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL after a success.
/// The pointer stays valid until the next call into the library.
#[no_mangle]
pub extern "C" fn shapefit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// The solver's default controls.
#[no_mangle]
pub extern "C" fn shapefit_default_options() -> ShapefitOptions {
    let d = FitConfig::default();
    ShapefitOptions {
        outer_tol: d.outer_tol,
        max_sweeps: d.max_sweeps,
        inner_tol: d.inner_tol,
        inner_max_iter: d.inner_max_iter,
    }
}

/// Fits an additive model to `n` rows of `p` column-major covariates.
/// `options` may be NULL for defaults. On success `*out` owns a new model.
///
/// # Safety
/// `x` must hold `n * p` doubles, `y` `n` doubles, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn shapefit_fit(
    x: *const f64,
    n: usize,
    p: usize,
    y: *const f64,
    spec: *const ShapefitSpec,
    options: *const ShapefitOptions,
    out: *mut *mut ShapefitModel,
) -> ShapefitStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = ptr::null_mut();
        let spec = spec.as_ref().ok_or(Failure::Null("spec"))?;
        let shape = ShapeSpec {
            mode: mode_of(spec.mode)?,
            lambda_d: spec.lambda_d,
            lambda_t: spec.lambda_t,
            lambda_s: spec.lambda_s,
        };
        let opts = options.as_ref().copied().unwrap_or_else(|| shapefit_default_options());
        let config = FitConfig {
            outer_tol: opts.outer_tol,
            max_sweeps: opts.max_sweeps,
            inner_tol: opts.inner_tol,
            inner_max_iter: opts.inner_max_iter,
            ..FitConfig::new(shape)
        };
        let data = Dataset::new(columns_of(x, n, p)?, input(y, n, "y")?.to_vec())?;
        let fitted = fit(&data, &config)?;
        let file = ModelFile::from_fit(&fitted, data.names(), "y", &shape)?;
        *out = Box::into_raw(Box::new(ShapefitModel { file, fit: fitted }));
        Ok(())
    })
}

/// Predicts `n` rows of column-major covariates into `out` (length `n`).
/// If `out_of_range` is not NULL it receives, per column, the number of
/// queries clamped to the knot range.
///
/// # Safety
/// `x` must hold `n * p` doubles with `p` equal to the model's column count;
/// `out` must hold `n` doubles and `out_of_range` (if set) `p` sizes.
#[no_mangle]
pub unsafe extern "C" fn shapefit_predict(
    model: *const ShapefitModel,
    x: *const f64,
    n: usize,
    p: usize,
    out: *mut f64,
    out_of_range: *mut usize,
) -> ShapefitStatus {
    guard(|| {
        let m = model_ref(model)?;
        let pred = m.fit.predict(&columns_of(x, n, p)?)?;
        output(out, n, "out")?.copy_from_slice(&pred.values);
        if !out_of_range.is_null() {
            slice::from_raw_parts_mut(out_of_range, p).copy_from_slice(&pred.out_of_range);
        }
        Ok(())
    })
}

/// Writes the model file format used by the command line tool.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn shapefit_model_save(model: *const ShapefitModel, path: *const c_char) -> ShapefitStatus {
    guard(|| {
        let m = model_ref(model)?;
        m.file.save(path_of(path)?)?;
        Ok(())
    })
}

/// Reads a model file. On success `*out` owns a new model.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn shapefit_model_load(path: *const c_char, out: *mut *mut ShapefitModel) -> ShapefitStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = ptr::null_mut();
        let file = ModelFile::load(path_of(path)?)?;
        let fit = file.to_fit();
        *out = Box::into_raw(Box::new(ShapefitModel { file, fit }));
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn shapefit_model_free(model: *mut ShapefitModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of components (covariate columns); 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn shapefit_model_num_components(model: *const ShapefitModel) -> usize {
    model.as_ref().map_or(0, |m| m.file.components.len())
}

/// Intercept (the training response mean); NaN for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn shapefit_model_intercept(model: *const ShapefitModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.file.intercept)
}

/// Penalized training objective; NaN for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn shapefit_model_objective(model: *const ShapefitModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.file.fit.objective)
}

/// Number of nonzero components; 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn shapefit_model_active_count(model: *const ShapefitModel) -> usize {
    model
        .as_ref()
        .map_or(0, |m| m.file.components.iter().filter(|c| c.norm > 0.0).count())
}

/// Knot count of component `j` (written to `*len`).
///
/// # Safety
/// `model` must be a live handle and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn shapefit_model_component_len(
    model: *const ShapefitModel,
    j: usize,
    len: *mut usize,
) -> ShapefitStatus {
    guard(|| {
        let m = model_ref(model)?;
        let c = m.file.components.get(j).ok_or_else(|| Error::InvalidInput(format!("no component {j}")))?;
        *len.as_mut().ok_or(Failure::Null("len"))? = c.knots.len();
        Ok(())
    })
}

/// Copies component `j`'s knots and values; both buffers hold `len`
/// doubles, which must equal [`shapefit_model_component_len`].
///
/// # Safety
/// `x` and `f` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn shapefit_model_component(
    model: *const ShapefitModel,
    j: usize,
    x: *mut f64,
    f: *mut f64,
    len: usize,
) -> ShapefitStatus {
    guard(|| {
        let m = model_ref(model)?;
        let c = m.file.components.get(j).ok_or_else(|| Error::InvalidInput(format!("no component {j}")))?;
        if len != c.knots.len() {
            return Err(Error::LengthMismatch {
                expected: c.knots.len(),
                actual: len,
            }
            .into());
        }
        let (x, f) = (output(x, len, "x")?, output(f, len, "f")?);
        for (k, kv) in c.knots.iter().enumerate() {
            x[k] = kv[0];
            f[k] = kv[1];
        }
        Ok(())
    })
}

/// Total-variation denoising of `v` (length `n`) into `out`.
///
/// # Safety
/// `v` and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn shapefit_tv_prox(v: *const f64, n: usize, lambda: f64, out: *mut f64) -> ShapefitStatus {
    guard(|| {
        let z = prox::tv_prox(input(v, n, "v")?, lambda)?;
        output(out, n, "out")?.copy_from_slice(&z);
        Ok(())
    })
}

/// Projection of `v` onto nondecreasing sequences.
///
/// # Safety
/// `v` and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn shapefit_pav_isotonic(v: *const f64, n: usize, out: *mut f64) -> ShapefitStatus {
    guard(|| {
        let z = prox::pav_isotonic(input(v, n, "v")?);
        output(out, n, "out")?.copy_from_slice(&z);
        Ok(())
    })
}
