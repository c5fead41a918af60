//! C ABI over the transport-mc estimators.
//!
//! Every fallible function returns a [`TmcStatus`]. On failure the message is
//! kept per thread and read with [`tmc_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use transport_mc::cli::{
    emit_config, load_config, parse_config, ConfigDocument, EstimatorKind, ProblemSection,
    RunConfig,
};
use transport_mc::montecarlo::run_estimate;
use transport_mc::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TmcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Invalid configuration, parameter or expression.
    Config = 3,
    /// The problem is outside what the estimator supports.
    Unsupported = 4,
    /// Overflow or a non-finite value from the problem functions.
    Numeric = 5,
    Run = 6,
    Io = 7,
    Panic = 8,
    /// The requested value does not exist for this problem.
    Unavailable = 9,
}

/// Opaque solver handle: a validated configuration plus overrides.
pub struct TmcSolver {
    config: RunConfig,
}

/// Summary of one Monte Carlo run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TmcEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence_level: f64,
    pub n_samples: u64,
    pub n_effective: u64,
    pub poisoned: u64,
    /// Nonzero when one sample dominates the second moment or samples were poisoned.
    pub exploding_variance: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

struct Failure(TmcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::Domain(_) | Error::Parse { .. } => TmcStatus::Config,
            Error::Unsupported(_) => TmcStatus::Unsupported,
            Error::Problem(_) | Error::Overflow(_) => TmcStatus::Numeric,
            Error::Run(_) | Error::Csv(_) => TmcStatus::Run,
            Error::Io(_) => TmcStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn guard<F>(body: F) -> TmcStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => TmcStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {message}"));
            TmcStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(TmcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| Failure(TmcStatus::InvalidUtf8, format!("{what} is not UTF-8: {e}")))
}

unsafe fn solver_mut<'a>(ptr: *mut TmcSolver) -> Result<&'a mut TmcSolver, Failure> {
    ptr.as_mut().ok_or_else(|| null("solver"))
}

unsafe fn publish(out: *mut *mut TmcSolver, config: RunConfig) -> Result<(), Failure> {
    *out = Box::into_raw(Box::new(TmcSolver { config }));
    Ok(())
}

/// Builds a solver from a TOML configuration document.
///
/// # Safety
/// `toml` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tmc_solver_from_toml(
    toml: *const c_char,
    out: *mut *mut TmcSolver,
) -> TmcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = parse_config(text(toml, "toml")?)?;
        publish(out, config)
    })
}

/// Builds a solver from a TOML configuration file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tmc_solver_from_file(
    path: *const c_char,
    out: *mut *mut TmcSolver,
) -> TmcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = load_config(Path::new(text(path, "path")?))?;
        publish(out, config)
    })
}

/// Builds a solver for a built-in problem with default settings.
///
/// # Safety
/// `name` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tmc_solver_builtin(
    name: *const c_char,
    out: *mut *mut TmcSolver,
) -> TmcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let doc = ConfigDocument {
            problem: ProblemSection {
                builtin: Some(text(name, "name")?.to_string()),
                ..ProblemSection::default()
            },
            ..ConfigDocument::default()
        };
        let config = parse_config(&emit_config(&doc)?)?;
        publish(out, config)
    })
}

/// Releases a solver. Null is ignored.
///
/// # Safety
/// `solver` must come from one of the constructors and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tmc_solver_free(solver: *mut TmcSolver) {
    if !solver.is_null() {
        drop(Box::from_raw(solver));
    }
}

/// Moves the evaluation point.
///
/// # Safety
/// `solver` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tmc_solver_set_point(solver: *mut TmcSolver, t: f64, x: f64) -> TmcStatus {
    guard(|| {
        let s = solver_mut(solver)?;
        s.config = s.config.clone().at(t, x)?;
        Ok(())
    })
}

/// Selects the estimator by its configuration name, e.g. `"perturbed"`.
///
/// # Safety
/// `solver` must be a live handle and `kind` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tmc_solver_set_estimator(
    solver: *mut TmcSolver,
    kind: *const c_char,
) -> TmcStatus {
    guard(|| {
        let s = solver_mut(solver)?;
        let kind = EstimatorKind::parse(text(kind, "kind")?)?;
        s.config.estimator(kind)?;
        s.config.kind = kind;
        Ok(())
    })
}

/// # Safety
/// `solver` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tmc_solver_set_samples(
    solver: *mut TmcSolver,
    n_samples: u64,
) -> TmcStatus {
    guard(|| {
        let s = solver_mut(solver)?;
        let mut mc = s.config.mc.clone();
        mc.n_samples = n_samples;
        mc.validate()?;
        s.config.mc = mc;
        Ok(())
    })
}

/// # Safety
/// `solver` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tmc_solver_set_seed(solver: *mut TmcSolver, seed: u64) -> TmcStatus {
    guard(|| {
        solver_mut(solver)?.config.mc.master_seed = seed;
        Ok(())
    })
}

/// Worker threads; 0 restores the default.
///
/// # Safety
/// `solver` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tmc_solver_set_threads(solver: *mut TmcSolver, threads: u32) -> TmcStatus {
    guard(|| {
        solver_mut(solver)?.config.mc.threads = (threads > 0).then_some(threads as usize);
        Ok(())
    })
}

/// Runs the selected estimator. Results depend only on the configuration and seed.
///
/// # Safety
/// `solver` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tmc_solver_run(
    solver: *const TmcSolver,
    out: *mut TmcEstimate,
) -> TmcStatus {
    guard(|| {
        let s = solver.as_ref().ok_or_else(|| null("solver"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let est = s.config.estimator(s.config.kind)?;
        let r = run_estimate(est.as_ref(), &s.config.mc)?;
        *out = TmcEstimate {
            mean: r.mean,
            std_error: r.std_error,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            confidence_level: r.confidence_level,
            n_samples: r.n_samples,
            n_effective: r.n_effective,
            poisoned: r.poisoned_count,
            exploding_variance: i32::from(r.exploding_variance()),
        };
        Ok(())
    })
}

/// Exact solution at the current point, or `Unavailable` when none is known.
///
/// # Safety
/// `solver` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tmc_solver_exact_value(
    solver: *const TmcSolver,
    out: *mut f64,
) -> TmcStatus {
    guard(|| {
        let s = solver.as_ref().ok_or_else(|| null("solver"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        match s.config.references().true_value {
            Some(v) => {
                *out = v;
                Ok(())
            }
            None => Err(Failure(
                TmcStatus::Unavailable,
                "no exact solution for this problem".into(),
            )),
        }
    })
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn tmc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |m| m.as_ptr())
    })
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn tmc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
