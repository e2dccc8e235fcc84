//! C interface to `jsdlfi`.
//!
//! Every function returns a [`JsdlfiStatus`]; results go through out
//! pointers. On failure the message is available from
//! [`jsdlfi_last_error_message`] on the same thread. Models and surrogates
//! are opaque handles created from JSON and released with the matching
//! `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use jsdlfi::asymptotics::exact_expected_jsd;
use jsdlfi::divergence::jsd;
use jsdlfi::inference::{chi2_quantile, test_statistic};
use jsdlfi::surrogate::{surrogate_expected_jsd, GpSurrogate};
use jsdlfi::{CategoricalPmf, Error, MixingWeight, ModelSpec, RngStream, SimulatorModel};

/// Status code returned by every function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JsdlfiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Unsupported = 4,
    Numerical = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque simulator model.
pub struct JsdlfiModel(Arc<dyn SimulatorModel>);

/// Opaque fitted surrogate.
pub struct JsdlfiSurrogate(GpSurrogate);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(JsdlfiStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidPmf(_) | Error::InvalidCounts(_) | Error::Domain(_) | Error::Argument(_) => {
                JsdlfiStatus::InvalidArgument
            }
            Error::Unsupported(_) => JsdlfiStatus::Unsupported,
            Error::DegenerateVariance | Error::Numerical(_) => JsdlfiStatus::Numerical,
            Error::Config(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => JsdlfiStatus::Config,
        };
        Failure(code, e.to_string())
    }
}

fn fail(code: JsdlfiStatus, msg: impl Into<String>) -> Failure {
    Failure(code, msg.into())
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> JsdlfiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => JsdlfiStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            JsdlfiStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(JsdlfiStatus::NullPointer, "null array pointer"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(JsdlfiStatus::NullPointer, "null string pointer"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(JsdlfiStatus::InvalidArgument, "string is not UTF-8"))
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(JsdlfiStatus::NullPointer, "null output pointer"));
    }
    out.write(v);
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(JsdlfiStatus::NullPointer, "null handle"))
}

fn weight(pi: f64) -> Result<MixingWeight, Failure> {
    Ok(MixingWeight::new(pi)?)
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn jsdlfi_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a model from its JSON description, e.g.
/// `{"model": "softmax_decay", "params": {"k": 5}}`.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn jsdlfi_model_from_json(json: *const c_char, out: *mut *mut JsdlfiModel) -> JsdlfiStatus {
    guard(|| {
        let spec: ModelSpec = serde_json::from_str(text(json)?).map_err(Error::from)?;
        let model = spec.build()?;
        write(out, Box::into_raw(Box::new(JsdlfiModel(model))))
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from `jsdlfi_model_from_json` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jsdlfi_model_free(model: *mut JsdlfiModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Parameter dimension, category count and epoch count of a model.
///
/// # Safety
/// `model` must be a live handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jsdlfi_model_shape(
    model: *const JsdlfiModel,
    dim: *mut usize,
    k: *mut usize,
    epochs: *mut usize,
) -> JsdlfiStatus {
    guard(|| {
        let m = &handle(model)?.0;
        write(dim, m.dim())?;
        write(k, m.k())?;
        write(epochs, m.epochs())
    })
}

/// Simulates `n` draws per epoch at `theta`, seeded by `(seed, stream)`.
/// Writes `epochs * k` counts, epoch-major, to `out`.
///
/// # Safety
/// `theta` must hold `theta_len` values and `out` room for `out_len` counts.
#[no_mangle]
pub unsafe extern "C" fn jsdlfi_simulate(
    model: *const JsdlfiModel,
    theta: *const f64,
    theta_len: usize,
    n: u64,
    seed: u64,
    stream: u64,
    out: *mut u64,
    out_len: usize,
) -> JsdlfiStatus {
    guard(|| {
        let m = &handle(model)?.0;
        let theta = slice(theta, theta_len)?;
        let need = m.epochs() * m.k();
        if out_len < need {
            return Err(fail(JsdlfiStatus::BufferTooSmall, format!("output needs {need} entries")));
        }
        if out.is_null() {
            return Err(fail(JsdlfiStatus::NullPointer, "null output pointer"));
        }
        let counts = m.simulate(theta, n, &mut RngStream::new(seed, stream).rng())?;
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (chunk, c) in dst.chunks_mut(m.k()).zip(&counts) {
            chunk.copy_from_slice(c.counts());
        }
        Ok(())
    })
}

/// Jensen-Shannon divergence of two length-`k` probability vectors with
/// mixing weight `pi`.
///
/// # Safety
/// `p` and `q` must hold `k` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jsdlfi_jsd(p: *const f64, q: *const f64, k: usize, pi: f64, out: *mut f64) -> JsdlfiStatus {
    guard(|| {
        let p = CategoricalPmf::new(slice(p, k)?.to_vec())?;
        let q = CategoricalPmf::new(slice(q, k)?.to_vec())?;
        write(out, jsd(&p, &q, weight(pi)?))
    })
}

/// Exact expectation of JSD(p_hat, Q) where `n·Q` is multinomial with
/// probabilities `p_theta`.
///
/// # Safety
/// `p_hat` and `p_theta` must hold `k` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jsdlfi_exact_expected_jsd(
    p_hat: *const f64,
    p_theta: *const f64,
    k: usize,
    n: u64,
    pi: f64,
    out: *mut f64,
) -> JsdlfiStatus {
    guard(|| {
        let a = CategoricalPmf::new(slice(p_hat, k)?.to_vec())?;
        let b = CategoricalPmf::new(slice(p_theta, k)?.to_vec())?;
        write(out, exact_expected_jsd(&a, &b, n, weight(pi)?)?)
    })
}

/// Single-epoch test statistic from an expected JSD, the observed size and
/// the simulated (or effective) size.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jsdlfi_test_statistic(
    expected_jsd: f64,
    n_obs: f64,
    n_eff: f64,
    k: usize,
    pi: f64,
    out: *mut f64,
) -> JsdlfiStatus {
    guard(|| {
        if k < 2 || n_obs.is_nan() || n_obs <= 0.0 || n_eff.is_nan() || n_eff <= 0.0 || !expected_jsd.is_finite() {
            return Err(fail(JsdlfiStatus::InvalidArgument, "need k >= 2, positive sizes and a finite JSD"));
        }
        write(out, test_statistic(expected_jsd, n_obs, n_eff, k, weight(pi)?))
    })
}

/// Quantile of the χ² distribution with `dof` degrees of freedom.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jsdlfi_chi2_quantile(q: f64, dof: u32, out: *mut f64) -> JsdlfiStatus {
    guard(|| {
        if !(q > 0.0 && q < 1.0) || dof == 0 {
            return Err(fail(JsdlfiStatus::InvalidArgument, "need 0 < q < 1 and dof >= 1"));
        }
        write(out, chi2_quantile(q, dof))
    })
}

/// Loads a surrogate saved by the `bolfi` command (the `surrogate` field of
/// its JSON report) or by `GpSurrogate::to_json`.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn jsdlfi_surrogate_from_json(json: *const c_char, out: *mut *mut JsdlfiSurrogate) -> JsdlfiStatus {
    guard(|| {
        let s = GpSurrogate::from_json(text(json)?)?;
        write(out, Box::into_raw(Box::new(JsdlfiSurrogate(s))))
    })
}

/// Releases a surrogate. NULL is ignored.
///
/// # Safety
/// `s` must come from `jsdlfi_surrogate_from_json` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jsdlfi_surrogate_free(s: *mut JsdlfiSurrogate) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Posterior mean and variance in normalized units, and the denormalized
/// expected JSD, at `theta`. Any of the out pointers may be NULL.
///
/// # Safety
/// `s` must be a live handle and `theta` must hold `theta_len` values.
#[no_mangle]
pub unsafe extern "C" fn jsdlfi_surrogate_predict(
    s: *const JsdlfiSurrogate,
    theta: *const f64,
    theta_len: usize,
    mean: *mut f64,
    variance: *mut f64,
    expected_jsd: *mut f64,
) -> JsdlfiStatus {
    guard(|| {
        let s = &handle(s)?.0;
        let theta = slice(theta, theta_len)?;
        if theta.len() != s.bounds().len() {
            return Err(fail(JsdlfiStatus::InvalidArgument, format!("theta must have {} components", s.bounds().len())));
        }
        let (m, v) = s.predict(theta);
        if !mean.is_null() {
            mean.write(m);
        }
        if !variance.is_null() {
            variance.write(v);
        }
        if !expected_jsd.is_null() {
            expected_jsd.write(surrogate_expected_jsd(s, theta));
        }
        Ok(())
    })
}
