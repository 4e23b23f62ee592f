//! C ABI over the mfglab solvers.
//!
//! Objects cross the boundary as opaque handles created by `mfg_*` constructors
//! and released with the matching `*_free`. Every fallible call returns an
//! [`MfgStatus`]; on failure the message is available from [`mfg_last_error`]
//! on the same thread until the next failing call. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mfglab::cli::{parse_config, run_plan, OutputFormat, ProblemConfig, RunOptions};
use mfglab::solvers::{
    solve_ergodic, solve_finite_horizon, ErgodicMethod, ErgodicSolution, FiniteHorizonSolution,
};
use mfglab::{Error, MfgProblem, SolverConfig};
use serde::Deserialize;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfgStatus {
    Ok = 0,
    InvalidArgument = 1,
    Config = 2,
    NonConvergence = 3,
    Io = 4,
    Numerical = 5,
    Panic = 6,
}

/// Which path of a finite-horizon solution to read.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfgPath {
    Value = 0,
    Density = 1,
}

/// A problem together with the solver settings used on it.
pub struct MfgProblemHandle {
    problem: MfgProblem,
    solver: SolverConfig,
}

pub struct MfgErgodicHandle {
    sol: ErgodicSolution,
}

pub struct MfgFiniteHandle {
    sol: FiniteHorizonSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MfgStatus {
    match err {
        Error::Config { .. } | Error::InvalidGrid(_) => MfgStatus::Config,
        Error::InvalidArgument(_) | Error::GridMismatch => MfgStatus::InvalidArgument,
        Error::NonConvergence { .. } => MfgStatus::NonConvergence,
        Error::Io(_) => MfgStatus::Io,
        _ => MfgStatus::Numerical,
    }
}

fn fail(err: Error) -> MfgStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

fn invalid(msg: &str) -> MfgStatus {
    set_error(msg.to_string());
    MfgStatus::InvalidArgument
}

/// Runs `f`, turning a panic into [`MfgStatus::Panic`].
fn guard(f: impl FnOnce() -> MfgStatus) -> MfgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MfgStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, MfgStatus> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not valid UTF-8")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemDoc {
    problem: ProblemConfig,
    #[serde(default)]
    solver: SolverConfig,
}

/// Version string of the library; static storage.
#[no_mangle]
pub extern "C" fn mfg_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message of the last failure on this thread, or null.
#[no_mangle]
pub extern "C" fn mfg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a problem from `{"problem": {...}, "solver": {...}}`, the same
/// fields as an experiment plan.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfg_problem_from_json(
    json: *const c_char,
    out: *mut *mut MfgProblemHandle,
) -> MfgStatus {
    guard(|| {
        if out.is_null() {
            return invalid("out is null");
        }
        *out = ptr::null_mut();
        let text = match str_arg(json, "json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: ProblemDoc = match serde_path_to_error::deserialize(de) {
            Ok(d) => d,
            Err(e) => {
                let path = e.path().to_string();
                return fail(Error::Config {
                    path,
                    message: e.into_inner().to_string(),
                });
            }
        };
        if let Err(e) = doc.solver.validate() {
            return fail(e);
        }
        match doc.problem.build() {
            Ok(problem) => {
                *out = Box::into_raw(Box::new(MfgProblemHandle {
                    problem,
                    solver: doc.solver,
                }));
                MfgStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `h` must come from [`mfg_problem_from_json`] and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mfg_problem_free(h: *mut MfgProblemHandle) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of grid nodes, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live problem handle.
#[no_mangle]
pub unsafe extern "C" fn mfg_problem_grid_len(h: *const MfgProblemHandle) -> usize {
    h.as_ref().map_or(0, |h| h.problem.grid().len())
}

/// # Safety
/// `h` must be a live problem handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfg_solve_ergodic(
    h: *const MfgProblemHandle,
    out: *mut *mut MfgErgodicHandle,
) -> MfgStatus {
    guard(|| {
        if out.is_null() {
            return invalid("out is null");
        }
        *out = ptr::null_mut();
        let Some(h) = h.as_ref() else {
            return invalid("problem handle is null");
        };
        match solve_ergodic(&h.problem, ErgodicMethod::Newton, &h.solver) {
            Ok(sol) => {
                *out = Box::into_raw(Box::new(MfgErgodicHandle { sol }));
                MfgStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Ergodic constant, or NaN for a null handle.
///
/// # Safety
/// `h` must be null or a live ergodic handle.
#[no_mangle]
pub unsafe extern "C" fn mfg_ergodic_lambda(h: *const MfgErgodicHandle) -> f64 {
    h.as_ref().map_or(f64::NAN, |h| h.sol.lambda)
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, len: usize) -> MfgStatus {
    if buf.is_null() {
        return invalid("buffer is null");
    }
    if len != values.len() {
        return invalid(&format!("buffer holds {len} values, need {}", values.len()));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, len);
    MfgStatus::Ok
}

/// Copies `u_bar` (or `m_bar` when `density` is nonzero) into `buf`, which must hold exactly the grid length.
///
/// # Safety
/// `h` must be a live ergodic handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_ergodic_copy(
    h: *const MfgErgodicHandle,
    density: c_int,
    buf: *mut f64,
    len: usize,
) -> MfgStatus {
    guard(|| {
        let Some(h) = h.as_ref() else {
            return invalid("ergodic handle is null");
        };
        let f = if density != 0 { &h.sol.m } else { &h.sol.u };
        copy_out(f.values(), buf, len)
    })
}

/// # Safety
/// `h` must come from [`mfg_solve_ergodic`] and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mfg_ergodic_free(h: *mut MfgErgodicHandle) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// # Safety
/// `h` must be a live problem handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfg_solve_finite(
    h: *const MfgProblemHandle,
    horizon: f64,
    out: *mut *mut MfgFiniteHandle,
) -> MfgStatus {
    guard(|| {
        if out.is_null() {
            return invalid("out is null");
        }
        *out = ptr::null_mut();
        let Some(h) = h.as_ref() else {
            return invalid("problem handle is null");
        };
        match solve_finite_horizon(&h.problem, horizon, &h.solver) {
            Ok(sol) => {
                *out = Box::into_raw(Box::new(MfgFiniteHandle { sol }));
                MfgStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of time frames (steps + 1), or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live finite-horizon handle.
#[no_mangle]
pub unsafe extern "C" fn mfg_finite_frames(h: *const MfgFiniteHandle) -> usize {
    h.as_ref().map_or(0, |h| h.sol.u_path.frames().len())
}

/// Picard iterations used, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live finite-horizon handle.
#[no_mangle]
pub unsafe extern "C" fn mfg_finite_iterations(h: *const MfgFiniteHandle) -> usize {
    h.as_ref().map_or(0, |h| h.sol.iterations)
}

/// Final fixed-point residual, or NaN for a null handle.
///
/// # Safety
/// `h` must be null or a live finite-horizon handle.
#[no_mangle]
pub unsafe extern "C" fn mfg_finite_residual(h: *const MfgFiniteHandle) -> f64 {
    h.as_ref().map_or(f64::NAN, |h| h.sol.residual)
}

/// Copies one frame of `u` or `m` into `buf`.
///
/// # Safety
/// `h` must be a live finite-horizon handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_finite_copy_frame(
    h: *const MfgFiniteHandle,
    path: MfgPath,
    frame: usize,
    buf: *mut f64,
    len: usize,
) -> MfgStatus {
    guard(|| {
        let Some(h) = h.as_ref() else {
            return invalid("finite-horizon handle is null");
        };
        let p = match path {
            MfgPath::Value => &h.sol.u_path,
            MfgPath::Density => &h.sol.m_path,
        };
        match p.frames().get(frame) {
            Some(f) => copy_out(f.values(), buf, len),
            None => invalid(&format!(
                "frame {frame} out of range (have {})",
                p.frames().len()
            )),
        }
    })
}

/// # Safety
/// `h` must come from [`mfg_solve_finite`] and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mfg_finite_free(h: *mut MfgFiniteHandle) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Parses the plan at `config_path` and runs it into `out_dir`, writing CSV
/// series. `exit_code`, when not null, receives the command-line exit status.
///
/// # Safety
/// Both paths must be NUL-terminated strings; `exit_code` null or writable.
#[no_mangle]
pub unsafe extern "C" fn mfg_run_plan(
    config_path: *const c_char,
    out_dir: *const c_char,
    exit_code: *mut c_int,
) -> MfgStatus {
    guard(|| {
        let set_code = |c: i32| {
            if !exit_code.is_null() {
                *exit_code = c;
            }
        };
        let (cfg, out) = match (
            str_arg(config_path, "config_path"),
            str_arg(out_dir, "out_dir"),
        ) {
            (Ok(c), Ok(o)) => (c, o),
            (Err(s), _) | (_, Err(s)) => {
                set_code(2);
                return s;
            }
        };
        let plan = match parse_config(&PathBuf::from(cfg), None) {
            Ok(p) => p,
            Err(e) => {
                set_code(e.exit_code());
                return fail(e);
            }
        };
        let opts = RunOptions {
            out: PathBuf::from(out),
            format: OutputFormat::Csv,
            jobs: None,
        };
        match run_plan(&plan, &opts) {
            Ok(m) => {
                set_code(m.exit_code);
                match (m.exit_code, m.error) {
                    (0, _) => MfgStatus::Ok,
                    (code, err) => {
                        let msg = err
                            .unwrap_or_else(|| format!("{} sweep row(s) failed", m.failures.len()));
                        set_error(msg);
                        match code {
                            2 => MfgStatus::Config,
                            4 => MfgStatus::Io,
                            _ => MfgStatus::NonConvergence,
                        }
                    }
                }
            }
            Err(e) => {
                set_code(e.exit_code());
                fail(e)
            }
        }
    })
}
