//! C interface to the `ihdg` solver.
//!
//! Objects are opaque handles created by `ihdg_*_new`/`ihdg_run` and released
//! with the matching `*_free`. Every fallible call returns an `IhdgStatus`;
//! on failure `ihdg_last_error` gives a message for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ihdg::bench::{self, RunRecord};
use ihdg::config::ExperimentConfig;
use ihdg::solver::Outcome;
use ihdg::theory::Verdict;
use ihdg::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IhdgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Bad key, value or combination of settings.
    InvalidConfig = 3,
    /// Mesh, order, model or size outside what the solver supports.
    InvalidInput = 4,
    /// Singular local or global system.
    Numerical = 5,
    Io = 6,
    /// The requested value does not exist for this run.
    Unavailable = 7,
    BufferTooSmall = 8,
    /// A Rust panic was caught at the boundary.
    Internal = 9,
}

/// Run outcome.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IhdgOutcome {
    Converged = 0,
    Diverged = 1,
    MaxIterations = 2,
}

/// Experiment configuration.
pub struct IhdgConfig {
    inner: ExperimentConfig,
}

/// Finished run.
pub struct IhdgRun {
    inner: RunRecord,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IhdgStatus {
    match e {
        Error::Config(_) | Error::UnsupportedFlux { .. } => IhdgStatus::InvalidConfig,
        Error::SingularLocalOperator { .. } | Error::SingularSystem | Error::DegenerateFace { .. } => {
            IhdgStatus::Numerical
        }
        Error::Io(_) => IhdgStatus::Io,
        _ => IhdgStatus::InvalidInput,
    }
}

fn fail(status: IhdgStatus, msg: &str) -> IhdgStatus {
    set_last_error(msg);
    status
}

/// Runs `f`, turning errors and panics into a status and a last-error message.
fn guard(f: impl FnOnce() -> Result<(), (IhdgStatus, String)>) -> IhdgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IhdgStatus::Ok,
        Ok(Err((s, msg))) => fail(s, &msg),
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(IhdgStatus::Internal, &format!("internal error: {msg}"))
        }
    }
}

fn lib(e: Error) -> (IhdgStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (IhdgStatus, String)> {
    if p.is_null() {
        return Err((IhdgStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (IhdgStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (IhdgStatus, String)> {
    p.as_ref().ok_or_else(|| (IhdgStatus::NullPointer, format!("{what} is null")))
}

fn out<T>(p: *mut T, what: &str) -> Result<*mut T, (IhdgStatus, String)> {
    if p.is_null() {
        Err((IhdgStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(p)
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ihdg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ihdg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Clears the last-error message of this thread.
#[no_mangle]
pub extern "C" fn ihdg_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Creates a configuration with the defaults of the named experiment
/// (`transport2d-discont`, `transport3d-smooth`, `shallow-standing-wave`,
/// `convdiff3d`, `elliptic3d`, `contaminant`).
///
/// # Safety
/// `experiment` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ihdg_config_new(experiment: *const c_char, out_config: *mut *mut IhdgConfig) -> IhdgStatus {
    guard(|| {
        let o = out(out_config, "out_config")?;
        let id = text(experiment, "experiment")?.parse().map_err(lib)?;
        *o = Box::into_raw(Box::new(IhdgConfig {
            inner: ExperimentConfig::new(id),
        }));
        Ok(())
    })
}

/// Parses a configuration file body (`key = value` lines).
///
/// # Safety
/// `source` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ihdg_config_parse(source: *const c_char, out_config: *mut *mut IhdgConfig) -> IhdgStatus {
    guard(|| {
        let o = out(out_config, "out_config")?;
        let cfg = ExperimentConfig::parse(text(source, "source")?).map_err(lib)?;
        *o = Box::into_raw(Box::new(IhdgConfig { inner: cfg }));
        Ok(())
    })
}

/// Sets one key, with the same syntax as the configuration file.
///
/// # Safety
/// `config` must come from `ihdg_config_new` or `ihdg_config_parse`; `key`
/// and `value` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ihdg_config_set(config: *mut IhdgConfig, key: *const c_char, value: *const c_char) -> IhdgStatus {
    guard(|| {
        let cfg = config
            .as_mut()
            .ok_or_else(|| (IhdgStatus::NullPointer, "config is null".to_string()))?;
        let key = text(key, "key")?;
        let value = text(value, "value")?;
        let mut next = cfg.inner.clone();
        next.set(key, value).map_err(lib)?;
        next.validate().map_err(lib)?;
        cfg.inner = next;
        Ok(())
    })
}

/// Number of elements of the configured mesh.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ihdg_config_elements(config: *const IhdgConfig, out_count: *mut usize) -> IhdgStatus {
    guard(|| {
        let cfg = handle(config, "config")?;
        *out(out_count, "out_count")? = cfg.inner.n_elements();
        Ok(())
    })
}

/// Releases a configuration. NULL is ignored.
///
/// # Safety
/// `config` must be NULL or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ihdg_config_free(config: *mut IhdgConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Theory verdict: writes 1 for convergent, 0 for non-convergent.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ihdg_predict(config: *const IhdgConfig, out_convergent: *mut c_int) -> IhdgStatus {
    guard(|| {
        let cfg = handle(config, "config")?;
        let o = out(out_convergent, "out_convergent")?;
        let p = bench::predict(&cfg.inner).map_err(lib)?;
        *o = c_int::from(p.verdict == Verdict::Convergent);
        Ok(())
    })
}

/// Runs the experiment without writing files. A run that diverges still
/// returns `Ok`; query its outcome.
///
/// # Safety
/// `config` must be a live handle; `out_run` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ihdg_run(config: *const IhdgConfig, out_run: *mut *mut IhdgRun) -> IhdgStatus {
    guard(|| {
        let cfg = handle(config, "config")?;
        let o = out(out_run, "out_run")?;
        ihdg::solver::init_threads();
        let r = bench::execute(&cfg.inner).map_err(lib)?;
        *o = Box::into_raw(Box::new(IhdgRun { inner: r }));
        Ok(())
    })
}

/// Releases a run. NULL is ignored.
///
/// # Safety
/// `run` must be NULL or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ihdg_run_free(run: *mut IhdgRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ihdg_run_outcome(run: *const IhdgRun, out_outcome: *mut IhdgOutcome) -> IhdgStatus {
    guard(|| {
        let r = handle(run, "run")?;
        *out(out_outcome, "out_outcome")? = match r.inner.outcome {
            Outcome::Converged => IhdgOutcome::Converged,
            Outcome::Diverged => IhdgOutcome::Diverged,
            Outcome::MaxIterations => IhdgOutcome::MaxIterations,
        };
        Ok(())
    })
}

/// Iterations of a steady run, or the mean per time step.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ihdg_run_iterations(run: *const IhdgRun, out_iterations: *mut c_double) -> IhdgStatus {
    guard(|| {
        let r = handle(run, "run")?;
        *out(out_iterations, "out_iterations")? = r.inner.iterations;
        Ok(())
    })
}

/// Final L2 error of the primary unknown. `Unavailable` when the experiment
/// has no exact solution or the run did not converge.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ihdg_run_l2_error(run: *const IhdgRun, out_error: *mut c_double) -> IhdgStatus {
    guard(|| {
        let r = handle(run, "run")?;
        let o = out(out_error, "out_error")?;
        let e = r
            .inner
            .l2_error
            .ok_or_else(|| (IhdgStatus::Unavailable, "no L2 error for this run".to_string()))?;
        *o = e;
        Ok(())
    })
}

/// Copies the residual history into `buffer`. `out_len` always receives the
/// full length; with a NULL or short buffer the call returns
/// `BufferTooSmall` and copies nothing.
///
/// # Safety
/// `run` must be a live handle; `buffer` must hold `capacity` doubles or be
/// NULL; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ihdg_run_residuals(
    run: *const IhdgRun,
    buffer: *mut c_double,
    capacity: usize,
    out_len: *mut usize,
) -> IhdgStatus {
    guard(|| {
        let r = handle(run, "run")?;
        let res = &r.inner.residuals;
        *out(out_len, "out_len")? = res.len();
        if buffer.is_null() || capacity < res.len() {
            return Err((
                IhdgStatus::BufferTooSmall,
                format!("residual history has {} entries, buffer holds {capacity}", res.len()),
            ));
        }
        ptr::copy_nonoverlapping(res.as_ptr(), buffer, res.len());
        Ok(())
    })
}

/// Solves the same problem directly and reports the largest nodal difference
/// from the iterative solution.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ihdg_oracle_difference(config: *const IhdgConfig, out_difference: *mut c_double) -> IhdgStatus {
    guard(|| {
        let cfg = handle(config, "config")?;
        let o = out(out_difference, "out_difference")?;
        *o = bench::oracle_check(&cfg.inner).map_err(lib)?.max_difference;
        Ok(())
    })
}
