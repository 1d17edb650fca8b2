//! C ABI over the spread-hawkes library.
//!
//! Objects are opaque handles created by `sh_*_new`/`sh_*_read`/`sh_fit`/`sh_simulate`
//! and released with the matching `sh_*_free`. Every fallible call returns an
//! [`ShStatus`]; on failure `sh_last_error()` describes the error for the calling thread.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use spread_hawkes::estimator::{self, FitConfig, FitReport};
use spread_hawkes::simulator::{simulate, SimConfig, StopRule};
use spread_hawkes::{diagnostics, ingest, likelihood, Error, EventStream, ModelVariant, ParamSet};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Numerical = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Validated event stream.
pub struct ShStream(EventStream);

/// Parameter set of one model variant.
pub struct ShParams(ParamSet);

/// Result of a maximum-likelihood fit.
pub struct ShFitReport(FitReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ShStatus {
    match e {
        Error::Io(_) => ShStatus::Io,
        Error::Config(_) | Error::InvalidParams(_) => ShStatus::InvalidArgument,
        Error::NegativeIntensity { .. } | Error::NoFiniteStart | Error::Explosion { .. } => ShStatus::Numerical,
        _ => ShStatus::Data,
    }
}

struct Fail(ShStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ShStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(ShStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ShStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ShStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            ShStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn variant(s: &str) -> Result<ModelVariant, Fail> {
    s.parse().map_err(invalid)
}

/// Message of the last failed call on this thread, or NULL. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn sh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn sh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn sh_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads an event CSV written by the `preprocess` or `simulate` commands.
#[no_mangle]
pub unsafe extern "C" fn sh_stream_read(path: *const c_char, out: *mut *mut ShStream) -> ShStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let f = File::open(path).map_err(|e| Fail(ShStatus::Io, format!("{path}: {e}")))?;
        let s = ingest::read_events(f)?;
        *out = Box::into_raw(Box::new(ShStream(s)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sh_stream_write(stream: *const ShStream, path: *const c_char) -> ShStatus {
    guard(|| {
        let s = handle(stream, "stream")?;
        let path = str_arg(path, "path")?;
        let f = File::create(path).map_err(|e| Fail(ShStatus::Io, format!("{path}: {e}")))?;
        ingest::write_events(&s.0, std::io::BufWriter::new(f))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sh_stream_len(stream: *const ShStream, out: *mut usize) -> ShStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(stream, "stream")?.0.len();
        Ok(())
    })
}

/// Session length in seconds.
#[no_mangle]
pub unsafe extern "C" fn sh_stream_duration(stream: *const ShStream, out: *mut f64) -> ShStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(stream, "stream")?.0.duration();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sh_stream_free(stream: *mut ShStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// Builds a parameter set from `n` values in the variant's parameter order.
#[no_mangle]
pub unsafe extern "C" fn sh_params_new(
    variant_name: *const c_char,
    values: *const f64,
    n: usize,
    out: *mut *mut ShParams,
) -> ShStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let v = variant(str_arg(variant_name, "variant")?)?;
        if values.is_null() && n > 0 {
            return Err(null("values"));
        }
        let vals = if n == 0 { Vec::new() } else { std::slice::from_raw_parts(values, n).to_vec() };
        *out = Box::into_raw(Box::new(ShParams(ParamSet::new(v, vals)?)));
        Ok(())
    })
}

/// Parses a parameter-set JSON or a fit report.
#[no_mangle]
pub unsafe extern "C" fn sh_params_from_json(json: *const c_char, out: *mut *mut ShParams) -> ShStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let p = estimator::params_from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(ShParams(p)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sh_params_count(params: *const ShParams, out: *mut usize) -> ShStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(params, "params")?.0.values().len();
        Ok(())
    })
}

/// Copies the values into `buf`; `ShStatus::BufferTooSmall` if `cap` is less than the count.
#[no_mangle]
pub unsafe extern "C" fn sh_params_values(params: *const ShParams, buf: *mut f64, cap: usize) -> ShStatus {
    guard(|| {
        let v = handle(params, "params")?.0.values();
        copy_out(v, buf, cap)
    })
}

/// Parameter set as JSON; free with `sh_string_free`.
#[no_mangle]
pub unsafe extern "C" fn sh_params_to_json(params: *const ShParams, out: *mut *mut c_char) -> ShStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let s = serde_json::to_string(&handle(params, "params")?.0).map_err(Error::from)?;
        *out = CString::new(s).map_err(|e| invalid(e.to_string()))?.into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sh_params_free(params: *mut ShParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

unsafe fn copy_out(v: &[f64], buf: *mut f64, cap: usize) -> Result<(), Fail> {
    if cap < v.len() {
        return Err(Fail(ShStatus::BufferTooSmall, format!("need {} slots, got {cap}", v.len())));
    }
    if v.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        return Err(null("buf"));
    }
    ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
    Ok(())
}

/// Log-likelihood of `stream` under `params`; `-inf` where some event has zero intensity.
#[no_mangle]
pub unsafe extern "C" fn sh_log_likelihood(
    stream: *const ShStream,
    params: *const ShParams,
    out: *mut f64,
) -> ShStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ll = likelihood::log_likelihood(&handle(stream, "stream")?.0, &handle(params, "params")?.0)?;
        *out = ll.value;
        Ok(())
    })
}

/// Simulates from the default book (100.00/100.01, one-tick jumps). Runs for
/// `horizon` seconds when it is positive, else until `n_events` events.
#[no_mangle]
pub unsafe extern "C" fn sh_simulate(
    params: *const ShParams,
    horizon: f64,
    n_events: usize,
    seed: u64,
    out: *mut *mut ShStream,
) -> ShStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let p = handle(params, "params")?;
        let stop = if horizon > 0.0 {
            StopRule::Horizon(horizon)
        } else if n_events > 0 {
            StopRule::Events(n_events)
        } else {
            return Err(invalid("give a positive horizon or event count"));
        };
        let s = simulate(&SimConfig::new(p.0.clone(), stop, seed))?;
        *out = Box::into_raw(Box::new(ShStream(s)));
        Ok(())
    })
}

/// Fits `variant` by maximum likelihood.
#[no_mangle]
pub unsafe extern "C" fn sh_fit(
    stream: *const ShStream,
    variant_name: *const c_char,
    beta0: f64,
    restarts: usize,
    seed: u64,
    out: *mut *mut ShFitReport,
) -> ShStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let s = handle(stream, "stream")?;
        let cfg = FitConfig {
            variant: variant(str_arg(variant_name, "variant")?)?,
            beta0,
            restarts,
            seed,
            ..Default::default()
        };
        let rep = estimator::fit(&s.0, &cfg)?;
        *out = Box::into_raw(Box::new(ShFitReport(rep)));
        Ok(())
    })
}

/// Copy of the fitted parameters; free with `sh_params_free`.
#[no_mangle]
pub unsafe extern "C" fn sh_fit_report_params(report: *const ShFitReport, out: *mut *mut ShParams) -> ShStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let r = handle(report, "report")?;
        *out = Box::into_raw(Box::new(ShParams(r.0.params.clone())));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sh_fit_report_log_likelihood(report: *const ShFitReport, out: *mut f64) -> ShStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(report, "report")?.0.log_likelihood;
        Ok(())
    })
}

/// Full report as JSON; free with `sh_string_free`.
#[no_mangle]
pub unsafe extern "C" fn sh_fit_report_json(report: *const ShFitReport, out: *mut *mut c_char) -> ShStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let s = handle(report, "report")?.0.to_json()?;
        *out = CString::new(s).map_err(|e| invalid(e.to_string()))?.into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sh_fit_report_free(report: *mut ShFitReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Pooled time-change residuals, process by process. `*len` always receives the
/// residual count; pass `buf = NULL, cap = 0` to query it.
#[no_mangle]
pub unsafe extern "C" fn sh_residuals(
    stream: *const ShStream,
    params: *const ShParams,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> ShStatus {
    guard(|| {
        let len = out_arg(len, "len")?;
        let r = diagnostics::residuals(&handle(stream, "stream")?.0, &handle(params, "params")?.0)?;
        let pooled = r.pooled();
        *len = pooled.len();
        copy_out(&pooled, buf, cap)
    })
}

/// Kolmogorov-Smirnov distance of the pooled residuals to Exp(1).
#[no_mangle]
pub unsafe extern "C" fn sh_ks_statistic(stream: *const ShStream, params: *const ShParams, out: *mut f64) -> ShStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let r = diagnostics::residuals(&handle(stream, "stream")?.0, &handle(params, "params")?.0)?;
        *out = diagnostics::ks_statistic(&r.pooled());
        Ok(())
    })
}
