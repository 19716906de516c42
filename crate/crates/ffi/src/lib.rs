//! C ABI for `oodcert`.
//!
//! Every function returns an [`OodStatus`] and writes results through out
//! pointers. On failure, `oodcert_last_error_message` returns a description that
//! stays valid until the next failing call on the same thread. Models and
//! predictors are opaque handles released with their `_free` function. Panics are
//! caught at the boundary and reported as `OOD_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use oodcert::bounds::{self, EpsilonBound};
use oodcert::conformal::calibrate;
use oodcert::verifier::{self, VerificationConfig};
use oodcert::{
    CalibrationSet, ConformalPredictor, Error, GaussianLatentModel, KernelKind, KernelSpec,
    LatentVector, SampleStream,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OodStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Format = 3,
    Validation = 4,
    DegenerateCalibration = 5,
    Io = 6,
    Internal = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OodKernel {
    Uniform = 0,
    Gaussian = 1,
}

/// Latent distribution handle.
pub struct OodModel(GaussianLatentModel);

/// Calibrated conformal predictor handle.
pub struct OodPredictor(ConformalPredictor);

/// Result of `oodcert_verify`. All ε fields are already clamped to at most 1.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OodVerification {
    pub n_samples: u64,
    pub violations: u64,
    pub observed_rate: f64,
    /// Chernoff bound on the β-discounted count.
    pub epsilon: f64,
    pub epsilon_unadjusted: f64,
    pub epsilon_exact: f64,
    pub elapsed_seconds: f64,
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = Result<(), Failure>;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn status_of(e: &Error) -> OodStatus {
    match e {
        Error::Argument(_) => OodStatus::InvalidArgument,
        Error::Format { .. } => OodStatus::Format,
        Error::Validation(_) => OodStatus::Validation,
        Error::DegenerateCalibration(_) => OodStatus::DegenerateCalibration,
        Error::Io { .. } => OodStatus::Io,
        Error::Internal(_) => OodStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Outcome) -> OodStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OodStatus::Ok,
        Ok(Err(Failure::Null(name))) => {
            set_last_error(format!("null pointer passed for `{name}`"));
            OodStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            OodStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn write<T>(p: *mut T, name: &'static str, value: T) -> Outcome {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    p.write(value);
    Ok(())
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &'static str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn c_path(p: *const c_char, name: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::Argument(format!("`{name}` is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn bound_value(b: EpsilonBound) -> f64 {
    b.value
}

/// Message for the most recent failure on this thread; empty if none. Owned by
/// the library.
#[no_mangle]
pub extern "C" fn oodcert_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn oodcert_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a latent-model JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oodcert_model_load(path: *const c_char, out: *mut *mut OodModel) -> OodStatus {
    guard(|| {
        let p = c_path(path, "path")?;
        let model = GaussianLatentModel::load(p)?;
        write(out, "out", Box::into_raw(Box::new(OodModel(model))))
    })
}

/// Standard normal model of dimension `dim`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oodcert_model_standard_normal(dim: usize, out: *mut *mut OodModel) -> OodStatus {
    guard(|| {
        let model = GaussianLatentModel::standard_normal(dim)?;
        write(out, "out", Box::into_raw(Box::new(OodModel(model))))
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn oodcert_model_free(model: *mut OodModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oodcert_model_dim(model: *const OodModel, out: *mut usize) -> OodStatus {
    guard(|| write(out, "out", deref(model, "model")?.0.dim()))
}

/// Log density at the `len` coordinates of `x`.
///
/// # Safety
/// `model` must be a live handle, `x` must point to `len` doubles, and `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn oodcert_model_log_density(
    model: *const OodModel,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> OodStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let v = LatentVector::new(slice(x, len, "x")?.to_vec())?;
        write(out, "out", m.0.log_density(&v)?)
    })
}

/// Calibrates a predictor from `n_points` row-major points of dimension `dim`.
/// A `bandwidth` of zero or less selects Scott's rule.
///
/// # Safety
/// `points` must point to `n_points * dim` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oodcert_predictor_calibrate(
    points: *const f64,
    n_points: usize,
    dim: usize,
    beta: f64,
    kernel: OodKernel,
    bandwidth: f64,
    out: *mut *mut OodPredictor,
) -> OodStatus {
    guard(|| {
        if dim == 0 {
            return Err(Error::Argument("dim must be at least 1".into()).into());
        }
        let len = n_points
            .checked_mul(dim)
            .ok_or_else(|| Error::Argument("n_points * dim overflows".into()))?;
        let flat = slice(points, len, "points")?;
        let pts = flat
            .chunks_exact(dim)
            .map(|c| LatentVector::new(c.to_vec()))
            .collect::<oodcert::Result<Vec<_>>>()?;
        let cal = CalibrationSet::new(pts, "ffi")?;
        let kind = match kernel {
            OodKernel::Uniform => KernelKind::Uniform,
            OodKernel::Gaussian => KernelKind::Gaussian,
        };
        let spec = if bandwidth > 0.0 {
            KernelSpec::fixed(kind, bandwidth)
        } else {
            KernelSpec::scott(kind)
        };
        let p = calibrate(cal, spec, beta)?;
        write(out, "out", Box::into_raw(Box::new(OodPredictor(p))))
    })
}

/// Loads a predictor snapshot and its referenced calibration set.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oodcert_predictor_load(path: *const c_char, out: *mut *mut OodPredictor) -> OodStatus {
    guard(|| {
        let p = ConformalPredictor::load(c_path(path, "path")?)?;
        write(out, "out", Box::into_raw(Box::new(OodPredictor(p))))
    })
}

/// Releases a predictor. Null is ignored.
///
/// # Safety
/// `predictor` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn oodcert_predictor_free(predictor: *mut OodPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}

/// # Safety
/// `predictor` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oodcert_predictor_dim(predictor: *const OodPredictor, out: *mut usize) -> OodStatus {
    guard(|| write(out, "out", deref(predictor, "predictor")?.0.dim()))
}

/// Conformity threshold `t*`.
///
/// # Safety
/// `predictor` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oodcert_predictor_threshold(predictor: *const OodPredictor, out: *mut f64) -> OodStatus {
    guard(|| write(out, "out", deref(predictor, "predictor")?.0.threshold()))
}

/// # Safety
/// `predictor` must be a live handle, `x` must point to `len` doubles, and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn oodcert_predictor_conformity(
    predictor: *const OodPredictor,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> OodStatus {
    guard(|| {
        let p = deref(predictor, "predictor")?;
        write(out, "out", p.0.conformity_slice(slice(x, len, "x")?)?)
    })
}

/// Whether `x` lies in the safe (in-distribution) region.
///
/// # Safety
/// `predictor` must be a live handle, `x` must point to `len` doubles, and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn oodcert_predictor_is_safe(
    predictor: *const OodPredictor,
    x: *const f64,
    len: usize,
    out: *mut bool,
) -> OodStatus {
    guard(|| {
        let p = deref(predictor, "predictor")?;
        let v = LatentVector::new(slice(x, len, "x")?.to_vec())?;
        write(out, "out", p.0.is_safe(&v)?)
    })
}

/// Monte-Carlo certification run.
///
/// # Safety
/// `model` and `predictor` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oodcert_verify(
    model: *const OodModel,
    predictor: *const OodPredictor,
    n_samples: u64,
    delta: f64,
    seed: u64,
    stream_index: u64,
    workers: usize,
    out: *mut OodVerification,
) -> OodStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let p = deref(predictor, "predictor")?;
        let config = VerificationConfig::new(&m.0, &p.0, n_samples, delta, SampleStream::new(seed, stream_index))
            .with_workers(workers);
        let rep = verifier::verify(&config)?;
        write(
            out,
            "out",
            OodVerification {
                n_samples: rep.n_samples,
                violations: rep.violations,
                observed_rate: rep.observed_rate,
                epsilon: rep.epsilon.value,
                epsilon_unadjusted: rep.epsilon_unadjusted.value,
                epsilon_exact: rep.epsilon_exact.value,
                elapsed_seconds: rep.elapsed,
            },
        )
    })
}

/// `1 − δ^(1/N)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oodcert_epsilon_no_violations(n: u64, delta: f64, out: *mut f64) -> OodStatus {
    guard(|| write(out, "out", bound_value(bounds::epsilon_no_violations(n, delta)?)))
}

/// Chernoff bound for `r` violations among `n` samples.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oodcert_epsilon_chernoff(n: u64, r: f64, delta: f64, out: *mut f64) -> OodStatus {
    guard(|| write(out, "out", bound_value(bounds::epsilon_chernoff(n, r, delta)?)))
}

/// Chernoff bound on the `(1 − β)`-discounted count.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oodcert_epsilon_adjusted(n: u64, r: u64, delta: f64, beta: f64, out: *mut f64) -> OodStatus {
    guard(|| write(out, "out", bound_value(bounds::epsilon_adjusted(n, r, delta, beta)?)))
}

/// Smallest ε satisfying the binomial scenario condition, by bisection.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oodcert_exact_epsilon(n: u64, r: u64, d: u64, delta: f64, out: *mut f64) -> OodStatus {
    guard(|| write(out, "out", bound_value(bounds::exact_epsilon(n, r, d, delta)?)))
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oodcert_binomial_condition_holds(
    n: u64,
    r: u64,
    d: u64,
    epsilon: f64,
    delta: f64,
    out: *mut bool,
) -> OodStatus {
    guard(|| write(out, "out", bounds::binomial_condition_holds(n, r, d, epsilon, delta)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn null_out_pointer_is_reported() {
        let s = unsafe { oodcert_epsilon_no_violations(10, 0.5, ptr::null_mut()) };
        assert_eq!(s, OodStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(oodcert_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("out"));
    }

    #[test]
    fn error_kinds_map_to_distinct_codes() {
        let mut x = 0.0;
        let s = unsafe { oodcert_epsilon_chernoff(0, 0.0, 0.5, &mut x) };
        assert_eq!(s, OodStatus::InvalidArgument);
        let s = unsafe { oodcert_epsilon_chernoff(10, 0.0, 0.5, &mut x) };
        assert_eq!(s, OodStatus::Ok);
        assert!((x - 2.0 * 2f64.ln() / 10.0).abs() < 1e-15);
    }

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(oodcert_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
