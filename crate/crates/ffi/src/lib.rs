//! C ABI for the stochastic Rayleigh-Benard convection simulator.
//!
//! Simulations are opaque handles created from configuration text and freed
//! with `srbc_sim_free`. Every fallible call returns an `SrbcStatus`; on
//! failure `srbc_last_error_message` describes the error for the calling
//! thread until its next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

use stochastic_rbc::config::{ExperimentKind, ExperimentSpec};
use stochastic_rbc::experiment::{initial_theta, member_stream, Model, State};
use stochastic_rbc::params::{build_background_profile, nondimensionalize, NondimParams, PhysicalParams};
use stochastic_rbc::stats::background_bound;
use stochastic_rbc::{Error, Grid};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrbcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Bad parameters or configuration.
    Invalid = 3,
    /// CFL violation or non-finite values; the handle keeps its last good state.
    Numerical = 4,
    /// Output buffer too small.
    BufferTooSmall = 5,
    Other = 6,
}

/// Dimensional inputs.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrbcPhysical {
    pub nu: f64,
    pub kappa: f64,
    pub g: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub gamma_tilde: f64,
    pub h: f64,
    pub t1: f64,
    pub l_phys: f64,
    pub d: u32,
}

/// Nondimensional groups.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrbcNondim {
    pub pr: f64,
    pub ra: f64,
    pub ra_tilde: f64,
    pub aspect: f64,
}

/// Energy functionals of the current state.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SrbcDiagnostics {
    pub t: f64,
    pub norm_u_sq: f64,
    pub norm_theta_sq: f64,
    pub grad_u_sq: f64,
    pub grad_theta_sq: f64,
    pub theta_l4: f64,
    pub flux_term: f64,
}

/// Opaque simulation handle.
pub struct SrbcSim {
    model: Model,
    state: State,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: SrbcStatus, message: impl Into<String>) -> SrbcStatus {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
    status
}

fn from_error(e: Error) -> SrbcStatus {
    let status = if e.is_numerical() {
        SrbcStatus::Numerical
    } else if matches!(e, Error::Io(_) | Error::Json(_)) {
        SrbcStatus::Other
    } else {
        SrbcStatus::Invalid
    };
    fail(status, e.to_string())
}

static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
    Ok(s) => s,
    Err(_) => panic!("version string contains an interior nul"),
};

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn srbc_version() -> *const c_char {
    VERSION.as_ptr()
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn srbc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Nondimensional groups of a dimensional parameter set.
///
/// # Safety
/// `input` and `out` must be null or valid for reads and writes respectively.
#[no_mangle]
pub unsafe extern "C" fn srbc_nondimensionalize(input: *const SrbcPhysical, out: *mut SrbcNondim) -> SrbcStatus {
    let (Some(p), Some(out)) = (unsafe { input.as_ref() }, unsafe { out.as_mut() }) else {
        return fail(SrbcStatus::NullPointer, "null argument");
    };
    let phys = PhysicalParams {
        nu: p.nu,
        kappa: p.kappa,
        g: p.g,
        alpha: p.alpha,
        gamma: p.gamma,
        gamma_tilde: p.gamma_tilde,
        h: p.h,
        t1: p.t1,
        l_phys: p.l_phys,
        d: p.d,
    };
    match nondimensionalize(&phys) {
        Ok(n) => {
            *out = SrbcNondim {
                pr: n.pr,
                ra: n.ra,
                ra_tilde: n.ra_tilde,
                aspect: n.aspect,
            };
            SrbcStatus::Ok
        }
        Err(e) => from_error(e),
    }
}

/// Background-profile upper bound on the Nusselt number.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn srbc_background_bound(ra: f64, ra_tilde: f64, aspect: f64, out: *mut f64) -> SrbcStatus {
    let Some(out) = (unsafe { out.as_mut() }) else {
        return fail(SrbcStatus::NullPointer, "null argument");
    };
    let params = NondimParams {
        pr: 1.0,
        ra,
        ra_tilde,
        aspect,
        n1: 0,
        n2: 1,
        sigma_tilde_norm: 0.0,
    };
    if let Err(e) = params.validate() {
        return from_error(e);
    }
    let grid = match Grid::new(8, 9, aspect) {
        Ok(g) => g,
        Err(e) => return from_error(e),
    };
    *out = background_bound(&params, &build_background_profile(ra, ra_tilde, &grid));
    SrbcStatus::Ok
}

/// Creates a simulation from `run_finite_pr` or `run_infinite_pr`
/// configuration text; the trajectory is member 0 of the configured seed.
///
/// # Safety
/// `config` must be null or a nul-terminated string; `out` must be null or
/// valid for writes. On success `*out` owns a handle for `srbc_sim_free`.
#[no_mangle]
pub unsafe extern "C" fn srbc_sim_new(config: *const c_char, out: *mut *mut SrbcSim) -> SrbcStatus {
    if config.is_null() || out.is_null() {
        return fail(SrbcStatus::NullPointer, "null argument");
    }
    let Ok(text) = unsafe { CStr::from_ptr(config) }.to_str() else {
        return fail(SrbcStatus::InvalidUtf8, "configuration is not valid UTF-8");
    };
    let spec = match ExperimentSpec::parse(text) {
        Ok(s) => s,
        Err(e) => return from_error(e),
    };
    if !matches!(spec.kind, ExperimentKind::RunFinitePr | ExperimentKind::RunInfinitePr) {
        return fail(
            SrbcStatus::Invalid,
            format!("kind {} cannot be stepped through this interface", spec.kind.name()),
        );
    }
    let built = Model::new(spec.prandtl, spec.params, &spec).and_then(|model| {
        let state = model.initial(initial_theta(spec.grid, spec.init_amplitude), member_stream(spec.seed, 0))?;
        Ok(SrbcSim { model, state })
    });
    match built {
        Ok(sim) => {
            unsafe { *out = Box::into_raw(Box::new(sim)) };
            SrbcStatus::Ok
        }
        Err(e) => from_error(e),
    }
}

/// Advances the simulation by `steps` steps. On a numerical failure the
/// handle keeps the last state that stepped cleanly.
///
/// # Safety
/// `sim` must be null or a live handle from `srbc_sim_new`.
#[no_mangle]
pub unsafe extern "C" fn srbc_sim_step(sim: *mut SrbcSim, steps: u64) -> SrbcStatus {
    let Some(sim) = (unsafe { sim.as_mut() }) else {
        return fail(SrbcStatus::NullPointer, "null handle");
    };
    for _ in 0..steps {
        match sim.model.step(&sim.state) {
            Ok(s) => sim.state = s,
            Err(e) => return from_error(e),
        }
    }
    SrbcStatus::Ok
}

/// Current simulation time.
///
/// # Safety
/// `sim` must be null or a live handle; `out` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn srbc_sim_time(sim: *const SrbcSim, out: *mut f64) -> SrbcStatus {
    let (Some(sim), Some(out)) = (unsafe { sim.as_ref() }, unsafe { out.as_mut() }) else {
        return fail(SrbcStatus::NullPointer, "null argument");
    };
    *out = sim.state.t();
    SrbcStatus::Ok
}

/// Grid dimensions `(nx, nz)` of the simulation.
///
/// # Safety
/// `sim` must be null or a live handle; `nx`, `nz` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn srbc_sim_shape(sim: *const SrbcSim, nx: *mut usize, nz: *mut usize) -> SrbcStatus {
    let (Some(sim), Some(nx), Some(nz)) = (unsafe { sim.as_ref() }, unsafe { nx.as_mut() }, unsafe { nz.as_mut() })
    else {
        return fail(SrbcStatus::NullPointer, "null argument");
    };
    (*nx, *nz) = sim.state.theta().grid.shape();
    SrbcStatus::Ok
}

/// Energy functionals of the current state.
///
/// # Safety
/// `sim` must be null or a live handle; `out` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn srbc_sim_diagnostics(sim: *const SrbcSim, out: *mut SrbcDiagnostics) -> SrbcStatus {
    let (Some(sim), Some(out)) = (unsafe { sim.as_ref() }, unsafe { out.as_mut() }) else {
        return fail(SrbcStatus::NullPointer, "null argument");
    };
    let e = sim.state.energy();
    *out = SrbcDiagnostics {
        t: e.t,
        norm_u_sq: e.norm_u_sq,
        norm_theta_sq: e.norm_theta_sq,
        grad_u_sq: e.grad_u_sq,
        grad_theta_sq: e.grad_theta_sq,
        theta_l4: e.theta_l4,
        flux_term: e.flux_term,
    };
    SrbcStatus::Ok
}

/// Copies the temperature fluctuation, row-major `[i * nz + k]`, into `buf`
/// of length `len >= nx * nz`.
///
/// # Safety
/// `sim` must be null or a live handle; `buf` null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn srbc_sim_copy_theta(sim: *const SrbcSim, buf: *mut f64, len: usize) -> SrbcStatus {
    let Some(sim) = (unsafe { sim.as_ref() }) else {
        return fail(SrbcStatus::NullPointer, "null handle");
    };
    if buf.is_null() {
        return fail(SrbcStatus::NullPointer, "null buffer");
    }
    let theta = &sim.state.theta().values;
    if len < theta.len() {
        return fail(
            SrbcStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", theta.len()),
        );
    }
    let dst = unsafe { std::slice::from_raw_parts_mut(buf, theta.len()) };
    for (d, v) in dst.iter_mut().zip(theta.iter()) {
        *d = *v;
    }
    SrbcStatus::Ok
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sim` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn srbc_sim_free(sim: *mut SrbcSim) {
    if !sim.is_null() {
        drop(unsafe { Box::from_raw(sim) });
    }
}
