//! C interface to `nes-core`.
//!
//! Every fallible function returns a [`NesStatus`]. On failure the message is
//! available from [`nes_last_error`] on the same thread until the next call.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nes_core::engine::{self, RunOutcome};
use nes_core::game;
use nes_core::output;
use nes_core::plant::{self, matrix_to_rows, PlantModel};
use nes_core::scenario::{self, Scenario};
use nes_core::NesError;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NesStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Schema = 3,
    AssumptionViolated = 4,
    Synthesis = 5,
    Divergence = 6,
    BufferTooSmall = 7,
    Io = 8,
    Internal = 9,
}

/// A validated scenario.
pub struct NesScenario {
    inner: Scenario,
}

/// A finished simulation.
pub struct NesRun {
    inner: RunOutcome,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &NesError) -> NesStatus {
    match e {
        NesError::InvalidArgument(_)
        | NesError::DimensionMismatch(_)
        | NesError::IndexOutOfRange { .. }
        | NesError::EmptyBox { .. }
        | NesError::ConventionMismatch { .. }
        | NesError::Plot(_) => NesStatus::InvalidArgument,
        NesError::Schema(_) | NesError::Json(_) => NesStatus::Schema,
        NesError::AssumptionViolated(_)
        | NesError::Disconnected
        | NesError::InitOutsideBox { .. } => NesStatus::AssumptionViolated,
        NesError::RegulatorRankDeficient { .. }
        | NesError::RegulatorResidual(_)
        | NesError::RiccatiDiverged(_)
        | NesError::NotStabilizing(_) => NesStatus::Synthesis,
        NesError::DivergenceDetected { .. } => NesStatus::Divergence,
        NesError::Io(_) | NesError::Csv(_) => NesStatus::Io,
        _ => NesStatus::Internal,
    }
}

/// Runs `f`, turning errors and panics into a status code.
fn guard<F>(f: F) -> NesStatus
where
    F: FnOnce() -> Result<(), (NesStatus, String)>,
{
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NesStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NesStatus::Internal
        }
    }
}

fn core<T>(r: nes_core::Result<T>) -> Result<T, (NesStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (NesStatus, String) {
    (NesStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (NesStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (NesStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_out<'a>(
    out: *mut f64,
    len: usize,
    needed: usize,
) -> Result<&'a mut [f64], (NesStatus, String)> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < needed {
        return Err((
            NesStatus::BufferTooSmall,
            format!("buffer holds {len} values, {needed} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(out, needed))
}

/// Message for the last failed call on this thread, or null. Owned by the
/// library; valid until the next call.
#[no_mangle]
pub extern "C" fn nes_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses and validates a scenario document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nes_scenario_from_json(
    json: *const c_char,
    out: *mut *mut NesScenario,
) -> NesStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(json, "json")?;
        let s = core(scenario::parse_scenario(text.as_bytes()))?;
        *out = Box::into_raw(Box::new(NesScenario { inner: s }));
        Ok(())
    })
}

/// Loads a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nes_scenario_from_file(
    path: *const c_char,
    out: *mut *mut NesScenario,
) -> NesStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let s = core(Scenario::load(path))?;
        *out = Box::into_raw(Box::new(NesScenario { inner: s }));
        Ok(())
    })
}

/// # Safety
/// `s` must come from a scenario constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nes_scenario_free(s: *mut NesScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Applies one `key`/`value` override, e.g. `"alpha"`, `"0.02"`. The
/// scenario is left unchanged on failure.
///
/// # Safety
/// `s` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn nes_scenario_set(
    s: *mut NesScenario,
    key: *const c_char,
    value: *const c_char,
) -> NesStatus {
    guard(|| {
        let s = s.as_mut().ok_or_else(|| null("scenario"))?;
        let key = str_arg(key, "key")?;
        let value = str_arg(value, "value")?;
        s.inner = core(s.inner.with_overrides(&[format!("{key}={value}")]))?;
        Ok(())
    })
}

/// Number of agents, or 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nes_scenario_agent_count(s: *const NesScenario) -> usize {
    s.as_ref().map_or(0, |s| s.inner.n_agents())
}

/// Decision dimension, or 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nes_scenario_dim(s: *const NesScenario) -> usize {
    s.as_ref().map_or(0, |s| s.inner.dim())
}

/// Writes the equilibrium row-major (`agents x dim`) into `out`.
///
/// # Safety
/// `s` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nes_oracle(s: *const NesScenario, out: *mut f64, len: usize) -> NesStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("scenario"))?;
        let ne = core(game::compute_oracle(&s.inner.game))?;
        let buf = write_out(out, len, s.inner.n_agents() * s.inner.dim())?;
        for (dst, v) in buf.iter_mut().zip(ne.y_star.iter().flat_map(|y| y.iter())) {
            *dst = *v;
        }
        Ok(())
    })
}

/// Simulates the scenario with its own run settings.
///
/// # Safety
/// `s` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nes_run(s: *const NesScenario, out: *mut *mut NesRun) -> NesStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("scenario"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let outcome = core(engine::run(&s.inner))?;
        *out = Box::into_raw(Box::new(NesRun { inner: outcome }));
        Ok(())
    })
}

/// # Safety
/// `r` must come from [`nes_run`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nes_run_free(r: *mut NesRun) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Rounds executed, or 0 for a null handle.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nes_run_iterations(r: *const NesRun) -> usize {
    r.as_ref().map_or(0, |r| r.inner.log.iterations)
}

/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nes_run_converged(r: *const NesRun) -> bool {
    r.as_ref().is_some_and(|r| r.inner.log.converged)
}

/// Final references, row-major (`agents x dim`).
///
/// # Safety
/// `r` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nes_run_final_xi(
    r: *const NesRun,
    out: *mut f64,
    len: usize,
) -> NesStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("run"))?;
        let xi = r.inner.state.xi();
        let needed = xi.iter().map(|v| v.len()).sum();
        let buf = write_out(out, len, needed)?;
        for (dst, v) in buf.iter_mut().zip(xi.iter().flat_map(|v| v.iter())) {
            *dst = *v;
        }
        Ok(())
    })
}

/// Writes the trajectory CSV to `path`.
///
/// # Safety
/// `r` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nes_run_write_csv(r: *const NesRun, path: *const c_char) -> NesStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("run"))?;
        let path = str_arg(path, "path")?;
        core(output::write_csv_file(&r.inner.log, path))
    })
}

/// Run summary as JSON. Release the string with [`nes_string_free`].
///
/// # Safety
/// `r` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nes_run_summary_json(
    r: *const NesRun,
    out: *mut *mut c_char,
) -> NesStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("run"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let log = &r.inner.log;
        let summary = core(output::write_summary(log, &log.oracle))?;
        let text = core(serde_json::to_string(&summary).map_err(NesError::from))?;
        *out = CString::new(text)
            .map_err(|_| (NesStatus::Internal, "summary contains NUL".to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nes_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn rows(
    p: *const f64,
    r: usize,
    c: usize,
    what: &str,
) -> Result<Vec<Vec<f64>>, (NesStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let flat = std::slice::from_raw_parts(p, r * c);
    Ok(flat.chunks(c).map(<[f64]>::to_vec).collect())
}

/// Synthesizes tracking gains for `x' = Ax + Bu, y = Cx` with `n` states,
/// `m` inputs and `p` outputs. All matrices are row-major: `A` is `n x n`,
/// `B` is `n x m`, `C` is `p x n`. Writes `K` (`m x n`), `Psi` (`n x p`)
/// and `G` (`m x p`).
///
/// # Safety
/// Every pointer must reference at least the stated number of doubles.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn nes_synthesize_gains(
    n: usize,
    m: usize,
    p: usize,
    a: *const f64,
    b: *const f64,
    c: *const f64,
    state_weight: f64,
    input_weight: f64,
    k_out: *mut f64,
    psi_out: *mut f64,
    g_out: *mut f64,
) -> NesStatus {
    guard(|| {
        if n == 0 || m == 0 || p == 0 {
            return Err((
                NesStatus::InvalidArgument,
                "dimensions must be positive".into(),
            ));
        }
        let model = core(PlantModel::from_rows(
            &rows(a, n, n, "A")?,
            &rows(b, n, m, "B")?,
            &rows(c, p, n, "C")?,
        ))?;
        let gains = core(plant::synthesize_gains(&model, state_weight, input_weight))?;
        for (mat, dst, len) in [
            (&gains.k, k_out, m * n),
            (&gains.psi, psi_out, n * p),
            (&gains.g, g_out, m * p),
        ] {
            let buf = write_out(dst, len, len)?;
            for (d, v) in buf
                .iter_mut()
                .zip(matrix_to_rows(mat).into_iter().flatten())
            {
                *d = v;
            }
        }
        Ok(())
    })
}
