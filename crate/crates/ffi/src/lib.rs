//! C interface for loading model bundles and evaluating them.
//!
//! Every fallible function returns a [`DfsmStatus`]; on failure the message
//! is available from [`dfsm_last_error`] on the same thread. Handles come
//! from [`dfsm_bundle_load`] and are released with [`dfsm_bundle_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dfsm::dfsm::{load_bundle, simulate_dfsm, DfsmModel};
use dfsm::dynsys::{ControlSignal, Interpolation, ParamInput};
use dfsm::Error;
use nalgebra::DMatrix;

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfsmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Parse = 5,
    Diverged = 6,
    NoOutputs = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Opaque handle to a loaded model.
pub struct DfsmBundle {
    model: DfsmModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> DfsmStatus {
    match err {
        Error::Dimension { .. } => DfsmStatus::DimensionMismatch,
        Error::Io { .. } => DfsmStatus::Io,
        Error::Parse { .. } | Error::Config { .. } | Error::Json(_) => DfsmStatus::Parse,
        Error::Divergence { .. } => DfsmStatus::Diverged,
        Error::Stage { source, .. } => status_of(source),
        _ => DfsmStatus::InvalidArgument,
    }
}

fn fail(status: DfsmStatus, message: impl Into<String>) -> DfsmStatus {
    set_error(message.into());
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), DfsmStatus>) -> DfsmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DfsmStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => fail(DfsmStatus::Panic, "internal panic"),
    }
}

fn check(r: dfsm::Result<()>) -> Result<(), DfsmStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn bundle<'a>(b: *const DfsmBundle) -> Result<&'a DfsmBundle, DfsmStatus> {
    // SAFETY: the caller passes a handle from `dfsm_bundle_load` or null
    unsafe { b.as_ref() }.ok_or_else(|| fail(DfsmStatus::NullPointer, "null bundle handle"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], DfsmStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(DfsmStatus::NullPointer, format!("null `{what}` array")));
    }
    // SAFETY: the caller guarantees `len` readable doubles at `p`
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], DfsmStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(DfsmStatus::NullPointer, format!("null `{what}` array")));
    }
    // SAFETY: the caller guarantees `len` writable doubles at `p`
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn expect_len(what: &str, expected: usize, actual: usize) -> Result<(), DfsmStatus> {
    if expected == actual {
        Ok(())
    } else {
        Err(fail(
            DfsmStatus::DimensionMismatch,
            format!("{what}: expected {expected}, got {actual}"),
        ))
    }
}

fn sched(model: &DfsmModel, w: f64) -> Option<f64> {
    model.is_lpv().then_some(w)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dfsm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads the bundle directory `dir` into `*out`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dfsm_bundle_load(dir: *const c_char, out: *mut *mut DfsmBundle) -> DfsmStatus {
    guard(|| {
        if dir.is_null() || out.is_null() {
            return Err(fail(DfsmStatus::NullPointer, "null path or output pointer"));
        }
        // SAFETY: checked non-null; the caller guarantees NUL termination
        let path = unsafe { CStr::from_ptr(dir) }
            .to_str()
            .map_err(|_| fail(DfsmStatus::InvalidArgument, "path is not UTF-8"))?;
        let model = load_bundle(path).map_err(|e| fail(status_of(&e), e.to_string()))?;
        // SAFETY: checked non-null
        unsafe { *out = Box::into_raw(Box::new(DfsmBundle { model })) };
        Ok(())
    })
}

/// Releases a handle. Null is accepted.
///
/// # Safety
/// `bundle` must come from [`dfsm_bundle_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dfsm_bundle_free(bundle: *mut DfsmBundle) {
    if !bundle.is_null() {
        // SAFETY: ownership returns from the caller
        drop(unsafe { Box::from_raw(bundle) });
    }
}

/// Writes the state, control and output counts and whether the model is
/// scheduled on `w` (1) or not (0). Any output pointer may be null.
///
/// # Safety
/// Non-null pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dfsm_bundle_dims(
    bundle: *const DfsmBundle,
    n_states: *mut usize,
    n_controls: *mut usize,
    n_outputs: *mut usize,
    scheduled: *mut i32,
) -> DfsmStatus {
    guard(|| {
        // SAFETY: forwarded caller contract
        let m = &unsafe { self::bundle(bundle) }?.model;
        // SAFETY: each pointer is written only when non-null
        unsafe {
            if let Some(p) = n_states.as_mut() {
                *p = m.n_states();
            }
            if let Some(p) = n_controls.as_mut() {
                *p = m.n_controls();
            }
            if let Some(p) = n_outputs.as_mut() {
                *p = m.n_outputs();
            }
            if let Some(p) = scheduled.as_mut() {
                *p = i32::from(m.is_lpv());
            }
        }
        Ok(())
    })
}

/// State derivative `dx = f̂(u, x, w)`; `w` is ignored by unscheduled models.
///
/// # Safety
/// Each array must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn dfsm_eval(
    bundle: *const DfsmBundle,
    u: *const f64,
    n_u: usize,
    x: *const f64,
    n_x: usize,
    w: f64,
    dx: *mut f64,
    n_dx: usize,
) -> DfsmStatus {
    guard(|| {
        // SAFETY: forwarded caller contract
        let (m, u, x, dx) = unsafe {
            (
                &self::bundle(bundle)?.model,
                slice(u, n_u, "u")?,
                slice(x, n_x, "x")?,
                slice_mut(dx, n_dx, "dx")?,
            )
        };
        expect_len("derivative buffer", m.n_states(), dx.len())?;
        check(m.eval_into(u, x, sched(m, w), dx))
    })
}

/// Outputs `y = ĝ(u, x, w)`.
///
/// # Safety
/// Each array must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn dfsm_eval_outputs(
    bundle: *const DfsmBundle,
    u: *const f64,
    n_u: usize,
    x: *const f64,
    n_x: usize,
    w: f64,
    y: *mut f64,
    n_y: usize,
) -> DfsmStatus {
    guard(|| {
        // SAFETY: forwarded caller contract
        let (m, u, x, y) = unsafe {
            (
                &self::bundle(bundle)?.model,
                slice(u, n_u, "u")?,
                slice(x, n_x, "x")?,
                slice_mut(y, n_y, "y")?,
            )
        };
        if m.outputs.is_none() {
            return Err(fail(DfsmStatus::NoOutputs, "model has no output surrogate"));
        }
        expect_len("output buffer", m.n_outputs(), y.len())?;
        check(m.outputs_into(u, x, sched(m, w), y))
    })
}

/// RK4 simulation from `x0` on the grid `0, dt, …, t_final`.
///
/// Controls are given at `n_knots` increasing `knot_times`, row-major
/// (`n_knots × n_controls`), and interpolated linearly; `wind` holds one
/// value per knot and may be null for unscheduled models. States are
/// written row-major (`steps × n_states`) to `states`, which holds
/// `capacity` rows; `*n_steps` receives the grid length, also when the
/// buffer is too small.
///
/// # Safety
/// Each array must hold the stated number of doubles and `n_steps` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dfsm_simulate(
    bundle: *const DfsmBundle,
    x0: *const f64,
    n_x: usize,
    knot_times: *const f64,
    controls: *const f64,
    n_knots: usize,
    wind: *const f64,
    t_final: f64,
    dt: f64,
    states: *mut f64,
    capacity: usize,
    n_steps: *mut usize,
) -> DfsmStatus {
    guard(|| {
        if n_steps.is_null() {
            return Err(fail(DfsmStatus::NullPointer, "null step-count pointer"));
        }
        // SAFETY: forwarded caller contract
        let m = &unsafe { self::bundle(bundle) }?.model;
        let nu = m.n_controls();
        // SAFETY: forwarded caller contract
        let (x0, times, values) = unsafe {
            (
                slice(x0, n_x, "x0")?,
                slice(knot_times, n_knots, "knot_times")?,
                slice(controls, n_knots * nu, "controls")?,
            )
        };
        let to_status = |e: Error| fail(status_of(&e), e.to_string());
        let u = ControlSignal::new(
            times.to_vec(),
            DMatrix::from_row_slice(n_knots, nu, values).transpose(),
            Interpolation::PiecewiseLinear,
        )
        .map_err(to_status)?;
        let w = if m.is_lpv() {
            // SAFETY: forwarded caller contract
            let wind = unsafe { slice(wind, n_knots, "wind")? };
            if wind.is_empty() {
                return Err(fail(DfsmStatus::NullPointer, "scheduled model needs a wind array"));
            }
            let signal = ControlSignal::new(
                times.to_vec(),
                DMatrix::from_row_slice(1, n_knots, wind),
                Interpolation::PiecewiseLinear,
            )
            .map_err(to_status)?;
            ParamInput::Signal(signal)
        } else {
            ParamInput::None
        };
        let traj = simulate_dfsm(m, x0, &u, &w, t_final, dt).map_err(to_status)?;
        let rows = traj.len();
        // SAFETY: checked non-null
        unsafe { *n_steps = rows };
        if capacity < rows {
            return Err(fail(
                DfsmStatus::BufferTooSmall,
                format!("state buffer holds {capacity} rows, simulation has {rows}"),
            ));
        }
        let nx = m.n_states();
        // SAFETY: forwarded caller contract
        let out = unsafe { slice_mut(states, rows * nx, "states")? };
        for k in 0..rows {
            for i in 0..nx {
                out[k * nx + i] = traj.states()[(i, k)];
            }
        }
        Ok(())
    })
}
