//! C ABI for `nsktr`.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_new`/`*_read`/`nsktr_fit` call and released by the matching `*_free`.
//! Functions return an [`NsktrStatus`]; on failure the message is available
//! from [`nsktr_last_error`] on the same thread. Arrays are column-major
//! `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nsktr::io::{read_dataset, read_model, read_tensor, write_model, write_tensor, ModelFile};
use nsktr::{fit, predict, Dataset, DenseTensor, ErrorKind, FitOptions, Loss, ModeRegConfig, NsktrError, RhoRule};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NsktrStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Bad argument value or inconsistent sizes.
    InvalidArgument = 2,
    /// Malformed or unreadable file or data.
    DataError = 3,
    /// The optimizer failed (factorization, non-finite objective, ...).
    NumericalError = 4,
    /// A Rust panic was caught at the boundary.
    InternalError = 5,
}

/// Loss selector for [`nsktr_dataset_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NsktrLoss {
    Linear = 0,
    Logistic = 1,
}

impl From<NsktrLoss> for Loss {
    fn from(l: NsktrLoss) -> Self {
        match l {
            NsktrLoss::Linear => Loss::Linear,
            NsktrLoss::Logistic => Loss::Logistic,
        }
    }
}

/// Dense tensor.
pub struct NsktrTensor(DenseTensor);

/// Covariate tensors with their responses.
pub struct NsktrDataset(Dataset);

/// Fit settings.
pub struct NsktrOptions(FitOptions);

/// Trained model with its penalties and fit metadata.
pub struct NsktrModel(ModelFile);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &NsktrError) -> NsktrStatus {
    match e {
        NsktrError::InvalidParameter { .. }
        | NsktrError::ShapeMismatch(_)
        | NsktrError::LengthMismatch { .. }
        | NsktrError::InvalidDims(_)
        | NsktrError::ModeOutOfRange { .. }
        | NsktrError::Usage(_) => NsktrStatus::InvalidArgument,
        _ => match e.kind() {
            ErrorKind::Numerical => NsktrStatus::NumericalError,
            _ => NsktrStatus::DataError,
        },
    }
}

struct Failure(NsktrStatus, String);

impl From<NsktrError> for Failure {
    fn from(e: NsktrError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(NsktrStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(NsktrStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NsktrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NsktrStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            NsktrStatus::InternalError
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nsktr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies `values` (length ∏dims, column-major) into a new tensor.
///
/// # Safety
/// `dims` must point to `ndims` values and `values` to their product.
#[no_mangle]
pub unsafe extern "C" fn nsktr_tensor_new(
    ndims: usize,
    dims: *const usize,
    values: *const f64,
    out: *mut *mut NsktrTensor,
) -> NsktrStatus {
    guard(|| {
        let dims = slice(dims, ndims, "dims")?.to_vec();
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| invalid("dims overflow"))?;
        let values = slice(values, len, "values")?.to_vec();
        put(out, NsktrTensor(DenseTensor::new(dims, values)?))
    })
}

/// # Safety
/// `t` must be null or a tensor from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nsktr_tensor_free(t: *mut NsktrTensor) {
    free(t)
}

/// Number of modes, or 0 for a null tensor.
///
/// # Safety
/// `t` must be null or a live tensor.
#[no_mangle]
pub unsafe extern "C" fn nsktr_tensor_ndims(t: *const NsktrTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.ndims())
}

/// Number of entries, or 0 for a null tensor.
///
/// # Safety
/// `t` must be null or a live tensor.
#[no_mangle]
pub unsafe extern "C" fn nsktr_tensor_len(t: *const NsktrTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.len())
}

/// Writes the dims into `out` (capacity `cap`, at least `ndims`).
///
/// # Safety
/// `t` must be a live tensor and `out` writable for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn nsktr_tensor_dims(t: *const NsktrTensor, out: *mut usize, cap: usize) -> NsktrStatus {
    guard(|| {
        let t = as_ref(t, "tensor")?;
        copy_out(t.0.dims(), out, cap)
    })
}

/// Copies the values (column-major) into `out` (capacity `cap`).
///
/// # Safety
/// `t` must be a live tensor and `out` writable for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn nsktr_tensor_values(t: *const NsktrTensor, out: *mut f64, cap: usize) -> NsktrStatus {
    guard(|| {
        let t = as_ref(t, "tensor")?;
        copy_out(t.0.values(), out, cap)
    })
}

unsafe fn copy_out<T: Copy>(src: &[T], out: *mut T, cap: usize) -> Result<(), Failure> {
    if cap < src.len() {
        return Err(invalid(format!("buffer holds {cap} values, {} needed", src.len())));
    }
    if src.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(null("output buffer"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// # Safety
/// `file` must be a nul-terminated path.
#[no_mangle]
pub unsafe extern "C" fn nsktr_tensor_read(file: *const c_char, out: *mut *mut NsktrTensor) -> NsktrStatus {
    guard(|| put(out, NsktrTensor(read_tensor(path(file)?)?)))
}

/// # Safety
/// `t` must be a live tensor and `file` a nul-terminated path.
#[no_mangle]
pub unsafe extern "C" fn nsktr_tensor_write(t: *const NsktrTensor, file: *const c_char) -> NsktrStatus {
    guard(|| Ok(write_tensor(path(file)?, &as_ref(t, "tensor")?.0)?))
}

/// Builds a dataset from `n` sample tensors (copied) and `n` responses.
/// Logistic responses must be -1 or +1.
///
/// # Safety
/// `samples` must point to `n` live tensors and `responses` to `n` values.
#[no_mangle]
pub unsafe extern "C" fn nsktr_dataset_new(
    samples: *const *const NsktrTensor,
    n: usize,
    responses: *const f64,
    loss: NsktrLoss,
    out: *mut *mut NsktrDataset,
) -> NsktrStatus {
    guard(|| {
        let ptrs = slice(samples, n, "samples")?;
        let xs = ptrs
            .iter()
            .map(|&p| as_ref(p, "sample").map(|t| t.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let y = slice(responses, n, "responses")?.to_vec();
        put(out, NsktrDataset(Dataset::new(xs, y, loss.into())?))
    })
}

/// Reads a dataset directory written by the `nsktr simulate` command.
///
/// # Safety
/// `dir` must be a nul-terminated path.
#[no_mangle]
pub unsafe extern "C" fn nsktr_dataset_read(dir: *const c_char, out: *mut *mut NsktrDataset) -> NsktrStatus {
    guard(|| put(out, NsktrDataset(read_dataset(path(dir)?, None)?.data)))
}

/// # Safety
/// `d` must be null or a live dataset.
#[no_mangle]
pub unsafe extern "C" fn nsktr_dataset_free(d: *mut NsktrDataset) {
    free(d)
}

/// # Safety
/// `d` must be null or a live dataset.
#[no_mangle]
pub unsafe extern "C" fn nsktr_dataset_len(d: *const NsktrDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.len())
}

/// Default options with the given rank; every mode starts unpenalized.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nsktr_options_new(rank: usize, out: *mut *mut NsktrOptions) -> NsktrStatus {
    guard(|| {
        if rank == 0 {
            return Err(invalid("rank must be positive"));
        }
        put(out, NsktrOptions(FitOptions::default().with_rank(rank)))
    })
}

/// # Safety
/// `o` must be null or live options.
#[no_mangle]
pub unsafe extern "C" fn nsktr_options_free(o: *mut NsktrOptions) {
    free(o)
}

unsafe fn options_mut<'a>(o: *mut NsktrOptions) -> Result<&'a mut FitOptions, Failure> {
    o.as_mut().map(|o| &mut o.0).ok_or_else(|| null("options"))
}

/// Sets the penalties of 0-based `mode`; earlier modes without settings
/// stay unpenalized.
///
/// # Safety
/// `o` must be live options.
#[no_mangle]
pub unsafe extern "C" fn nsktr_options_set_mode(
    o: *mut NsktrOptions,
    mode: usize,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
    nonneg: bool,
) -> NsktrStatus {
    guard(|| {
        let opts = options_mut(o)?;
        let cfg = ModeRegConfig::new(lambda1, lambda2, lambda3, nonneg)?;
        if opts.per_mode.len() <= mode {
            opts.per_mode.resize(mode + 1, ModeRegConfig::default());
        }
        opts.per_mode[mode] = cfg;
        Ok(())
    })
}

/// # Safety
/// `o` must be live options.
#[no_mangle]
pub unsafe extern "C" fn nsktr_options_set_seed(o: *mut NsktrOptions, seed: u64) -> NsktrStatus {
    guard(|| {
        options_mut(o)?.seed = seed;
        Ok(())
    })
}

/// Sweep cap and relative-change tolerance of the outer loop.
///
/// # Safety
/// `o` must be live options.
#[no_mangle]
pub unsafe extern "C" fn nsktr_options_set_outer(o: *mut NsktrOptions, max_sweeps: usize, tol: f64) -> NsktrStatus {
    guard(|| {
        let opts = options_mut(o)?;
        if max_sweeps == 0 || !(tol >= 0.0) {
            return Err(invalid("need max_sweeps >= 1 and tol >= 0"));
        }
        opts.outer_iters = max_sweeps;
        opts.outer_tol = tol;
        Ok(())
    })
}

/// ADMM penalty, tolerance and whether ρ is scaled by the design.
///
/// # Safety
/// `o` must be live options.
#[no_mangle]
pub unsafe extern "C" fn nsktr_options_set_admm(
    o: *mut NsktrOptions,
    rho: f64,
    tol: f64,
    design_scaled: bool,
) -> NsktrStatus {
    guard(|| {
        let opts = options_mut(o)?;
        let mut admm = opts.admm.clone();
        admm.rho = rho;
        admm.tol = tol;
        admm.rho_rule = if design_scaled { RhoRule::DesignScaled } else { RhoRule::Fixed };
        admm.validate()?;
        opts.admm = admm;
        Ok(())
    })
}

/// Fits a model.
///
/// # Safety
/// `data` and `opts` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nsktr_fit(
    data: *const NsktrDataset,
    opts: *const NsktrOptions,
    out: *mut *mut NsktrModel,
) -> NsktrStatus {
    guard(|| {
        let data = &as_ref(data, "dataset")?.0;
        let opts = &as_ref(opts, "options")?.0;
        let report = fit(data, opts)?;
        put(out, NsktrModel(ModelFile::from_report(&report, opts.seed)))
    })
}

/// # Safety
/// `m` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn nsktr_model_free(m: *mut NsktrModel) {
    free(m)
}

/// # Safety
/// `m` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn nsktr_model_rank(m: *const NsktrModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.model.rank())
}

/// # Safety
/// `m` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn nsktr_model_ndims(m: *const NsktrModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.model.ndims())
}

/// Outer sweeps run by the fit.
///
/// # Safety
/// `m` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn nsktr_model_iterations(m: *const NsktrModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.meta.iterations)
}

/// Final objective, or NaN if unknown.
///
/// # Safety
/// `m` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn nsktr_model_objective(m: *const NsktrModel) -> f64 {
    m.as_ref().and_then(|m| m.0.meta.final_objective).unwrap_or(f64::NAN)
}

/// Copies factor `mode` (I_d x R, column-major) into `out`.
///
/// # Safety
/// `m` must be live and `out` writable for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn nsktr_model_factor(
    m: *const NsktrModel,
    mode: usize,
    out: *mut f64,
    cap: usize,
) -> NsktrStatus {
    guard(|| {
        let model = &as_ref(m, "model")?.0.model;
        if mode >= model.ndims() {
            return Err(NsktrError::ModeOutOfRange {
                mode,
                ndims: model.ndims(),
            }
            .into());
        }
        copy_out(model.factor(mode).as_slice(), out, cap)
    })
}

/// Prediction for one sample: `⟨x, B⟩` (linear) or `Pr(y = 1)` (logistic).
///
/// # Safety
/// `m` and `x` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nsktr_model_predict(
    m: *const NsktrModel,
    x: *const NsktrTensor,
    out: *mut f64,
) -> NsktrStatus {
    guard(|| {
        let m = &as_ref(m, "model")?.0;
        let x = &as_ref(x, "tensor")?.0;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = predict(&m.model, x, m.meta.loss)?;
        Ok(())
    })
}

/// # Safety
/// `file` must be a nul-terminated path; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nsktr_model_read(file: *const c_char, out: *mut *mut NsktrModel) -> NsktrStatus {
    guard(|| put(out, NsktrModel(read_model(path(file)?)?)))
}

/// # Safety
/// `m` must be live and `file` a nul-terminated path.
#[no_mangle]
pub unsafe extern "C" fn nsktr_model_write(m: *const NsktrModel, file: *const c_char) -> NsktrStatus {
    guard(|| Ok(write_model(path(file)?, &as_ref(m, "model")?.0)?))
}
