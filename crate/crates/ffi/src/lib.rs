//! C ABI for the exitflow solver.
//!
//! Objects cross the boundary as opaque handles created by `exf_config_parse` or
//! `exf_solve` and released with the matching `*_free`. Every fallible call
//! returns an [`ExfStatus`]; on failure the message is available from
//! [`exf_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use exitflow::config::{ExperimentConfig, Problem};
use exitflow::dynamics::SpeedField;
use exitflow::hjb::{solve_value_function, ValueGrid};
use exitflow::pipeline::{self, Command};
use exitflow::trajectories::integrate_optimal_perturbed;
use exitflow::Error;

/// Result codes of the C interface.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ConfigInvalid = 3,
    Geometry = 4,
    Dynamics = 5,
    Solver = 6,
    Trajectory = 7,
    Transport = 8,
    Equilibrium = 9,
    Io = 10,
    /// `exf_run` completed but at least one verification check failed.
    ChecksFailed = 11,
    Panic = 12,
}

/// Pipelines runnable through [`exf_run`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExfCommand {
    SolveHjb = 0,
    Trajectories = 1,
    Equilibrium = 2,
    EpsilonStudy = 3,
    Verify = 4,
}

/// A validated experiment configuration.
pub struct ExfConfig {
    inner: ExperimentConfig,
}

/// A solved value function with the field and problem it belongs to.
pub struct ExfSolution {
    cfg: ExperimentConfig,
    problem: Problem,
    field: SpeedField,
    value: ValueGrid,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ExfStatus {
    match e {
        Error::NotOnBoundary { .. } | Error::OutsideTube { .. } | Error::InvalidDomain(_) => {
            ExfStatus::Geometry
        }
        Error::NegativeDensity { .. }
        | Error::DeltaTooLarge { .. }
        | Error::GridMismatch(_)
        | Error::InvalidKernel(_) => ExfStatus::Dynamics,
        Error::CostTooSteep { .. }
        | Error::CflViolation { .. }
        | Error::NonConvergence { .. }
        | Error::DegenerateGradient { .. } => ExfStatus::Solver,
        Error::DegenerateStart { .. }
        | Error::StallDetected { .. }
        | Error::NoExit { .. }
        | Error::ShootingFailed { .. }
        | Error::NotExited => ExfStatus::Trajectory,
        Error::EpsilonTooLarge { .. } | Error::JacobianBlowup { .. } | Error::BadExponent(_) => {
            ExfStatus::Transport
        }
        Error::UnnormalizedDensity { .. }
        | Error::MaxIterExceeded { .. }
        | Error::Particle { .. } => ExfStatus::Equilibrium,
        Error::BadZeta(_) | Error::ConfigInvalid { .. } => ExfStatus::ConfigInvalid,
        Error::Pipeline { source, .. } => status_of(source),
        Error::Io(_) | Error::Json(_) => ExfStatus::Io,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (ExfStatus, String)>) -> ExfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ExfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ExfStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (ExfStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (ExfStatus, String) {
    (ExfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ExfStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (ExfStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn exf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn exf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a TOML config.
///
/// # Safety
/// `toml` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn exf_config_parse(toml: *const c_char, out: *mut *mut ExfConfig) -> ExfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(toml, "toml")?;
        let inner = ExperimentConfig::from_toml(text).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ExfConfig { inner }));
        Ok(())
    })
}

/// Overrides the seed of a config; seeds above `INT64_MAX` are rejected.
///
/// # Safety
/// `cfg` must come from [`exf_config_parse`].
#[no_mangle]
pub unsafe extern "C" fn exf_config_set_seed(cfg: *mut ExfConfig, seed: u64) -> ExfStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let mut next = cfg.inner.clone();
        next.seed = seed;
        next.validate().map_err(lib_err)?;
        cfg.inner = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from [`exf_config_parse`] or be null.
#[no_mangle]
pub unsafe extern "C" fn exf_config_free(cfg: *mut ExfConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Solves the value function for the config's speed field.
///
/// # Safety
/// `cfg` must come from [`exf_config_parse`] and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn exf_solve(cfg: *const ExfConfig, out: *mut *mut ExfSolution) -> ExfStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let problem = cfg.inner.problem().map_err(lib_err)?;
        let field = pipeline::base_field(&cfg.inner, &problem).map_err(lib_err)?;
        let value = solve_value_function(&field, &problem.domain, &problem.cost, &cfg.inner.solver)
            .map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ExfSolution {
            cfg: cfg.inner.clone(),
            problem,
            field,
            value,
        }));
        Ok(())
    })
}

/// # Safety
/// `sol` must come from [`exf_solve`] or be null.
#[no_mangle]
pub unsafe extern "C" fn exf_solution_free(sol: *mut ExfSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Interpolated value `φ(t, (x, y))`; `y` is ignored in one dimension.
///
/// # Safety
/// `sol` must come from [`exf_solve`] and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn exf_solution_value(
    sol: *const ExfSolution,
    t: f64,
    x: f64,
    y: f64,
    out: *mut f64,
) -> ExfStatus {
    guard(|| {
        let sol = sol.as_ref().ok_or_else(|| null("sol"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = sol.value.value(t, [x, y]);
        Ok(())
    })
}

/// Grid shape: nodes along x and y (1 in one dimension) and the number of
/// time steps.
///
/// # Safety
/// `sol` must come from [`exf_solve`]; the outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn exf_solution_shape(
    sol: *const ExfSolution,
    nx: *mut usize,
    ny: *mut usize,
    nt: *mut usize,
) -> ExfStatus {
    guard(|| {
        let sol = sol.as_ref().ok_or_else(|| null("sol"))?;
        let g = sol.value.grid();
        *nx.as_mut().ok_or_else(|| null("nx"))? = g.n[0];
        *ny.as_mut().ok_or_else(|| null("ny"))? = if g.dim == 1 { 1 } else { g.n[1] };
        *nt.as_mut().ok_or_else(|| null("nt"))? = sol.value.time().n;
        Ok(())
    })
}

/// Optimal exit from `(x, y)` at time `t0`: exit time (from `t0`), exit
/// point and cost.
///
/// # Safety
/// `sol` must come from [`exf_solve`]; the outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn exf_solution_optimal_exit(
    sol: *const ExfSolution,
    t0: f64,
    x: f64,
    y: f64,
    tau: *mut f64,
    exit_x: *mut f64,
    exit_y: *mut f64,
    cost: *mut f64,
) -> ExfStatus {
    guard(|| {
        let sol = sol.as_ref().ok_or_else(|| null("sol"))?;
        let (tau, exit_x, exit_y, cost) = match (tau.as_mut(), exit_x.as_mut(), exit_y.as_mut(), cost.as_mut()) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => return Err(null("output")),
        };
        let dom = &sol.problem.domain;
        let tr = integrate_optimal_perturbed(
            &sol.value,
            &sol.field,
            dom,
            [x, y],
            t0,
            &sol.cfg.trajectories,
        )
        .map_err(lib_err)?;
        let e = tr.exit.ok_or_else(|| lib_err(Error::NotExited))?;
        *tau = e.tau;
        *exit_x = e.point[0];
        *exit_y = e.point[1];
        *cost = exitflow::trajectories::trajectory_cost(&tr, dom, &sol.problem.cost).map_err(lib_err)?;
        Ok(())
    })
}

/// Runs a pipeline writing into `out_dir`, like the command-line tool.
/// Returns [`ExfStatus::ChecksFailed`] when `verify` finds a failing check.
///
/// # Safety
/// `cfg` must come from [`exf_config_parse`]; `out_dir` must be a
/// nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn exf_run(
    cfg: *const ExfConfig,
    command: ExfCommand,
    out_dir: *const c_char,
) -> ExfStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let dir = str_arg(out_dir, "out_dir")?;
        let command = match command {
            ExfCommand::SolveHjb => Command::SolveHjb,
            ExfCommand::Trajectories => Command::Trajectories,
            ExfCommand::Equilibrium => Command::Equilibrium,
            ExfCommand::EpsilonStudy => Command::EpsilonStudy,
            ExfCommand::Verify => Command::Verify,
        };
        let outcome = pipeline::run(command, &cfg.inner, Path::new(dir)).map_err(lib_err)?;
        if outcome.pass {
            Ok(())
        } else {
            Err((ExfStatus::ChecksFailed, "verification checks failed".into()))
        }
    })
}
