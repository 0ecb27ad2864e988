//! C ABI over the `uavmec` solver.
//!
//! Objects cross the boundary as opaque handles created by a
//! `uavmec_*_new`/`_from_*`/`_generate`/`uavmec_solve` call and released with
//! the matching `_free`. Every fallible function returns a [`UavmecStatus`];
//! on failure [`uavmec_last_error`] describes what went wrong. Panics are
//! caught at the boundary and reported as [`UavmecStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use uavmec::joint::{run_policy, PolicyId, Solution};
use uavmec::scenario::{Scenario, TaskSchedule};

/// Result code of every fallible call; anything but `Ok` sets the last error.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UavmecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ConfigError = 3,
    InvalidArgument = 4,
    SolverError = 5,
    Panic = 6,
}

/// Optimization policy: the full joint optimizer or one of the baselines.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UavmecPolicy {
    Jtoratc = 0,
    Rojratc = 1,
    Nojratc = 2,
    Mojratc = 3,
    Erjotc = 4,
    Joract = 5,
    Jorapt = 6,
}

impl From<UavmecPolicy> for PolicyId {
    fn from(p: UavmecPolicy) -> Self {
        match p {
            UavmecPolicy::Jtoratc => PolicyId::Jtoratc,
            UavmecPolicy::Rojratc => PolicyId::Rojratc,
            UavmecPolicy::Nojratc => PolicyId::Nojratc,
            UavmecPolicy::Mojratc => PolicyId::Mojratc,
            UavmecPolicy::Erjotc => PolicyId::Erjotc,
            UavmecPolicy::Joract => PolicyId::Joract,
            UavmecPolicy::Jorapt => PolicyId::Jorapt,
        }
    }
}

/// Headline metrics of a solution.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UavmecMetrics {
    pub objective: f64,
    pub total_delay_s: f64,
    pub total_uav_energy_j: f64,
    pub total_offloaded_bits: f64,
    pub flight_energy_j: f64,
    pub compute_energy_j: f64,
    pub outer_iterations: u32,
    pub converged: bool,
}

/// Opaque scenario handle.
pub struct UavmecScenario(Scenario);

/// Opaque per-user per-slot task schedule.
pub struct UavmecTasks(TaskSchedule);

/// Opaque solver result.
pub struct UavmecSolution(Solution);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

struct Failure(UavmecStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(UavmecStatus::NullPointer, format!("`{what}` is null"))
    }
}

/// Runs `f`, mapping errors and panics to a status and recording the message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UavmecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            UavmecStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            UavmecStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn out_slot<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(UavmecStatus::InvalidUtf8, format!("`{what}`: {e}")))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|e| Failure(UavmecStatus::InvalidArgument, e.to_string()))
}

fn index_check(what: &str, i: usize, len: usize) -> Result<(), Failure> {
    if i < len {
        Ok(())
    } else {
        Err(Failure(UavmecStatus::InvalidArgument, format!("{what} index {i} out of range (< {len})")))
    }
}

/// Message for the most recent failure on this thread; empty after a
/// success. Valid until the next `uavmec_*` call on the same thread.
#[no_mangle]
pub extern "C" fn uavmec_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uavmec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from a `uavmec_*_to_json` call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn uavmec_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Scenario with every parameter at its default.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn uavmec_scenario_new_default(out: *mut *mut UavmecScenario) -> UavmecStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        *out = Box::into_raw(Box::new(UavmecScenario(Scenario::default_scenario())));
        Ok(())
    })
}

/// Parses and validates a TOML scenario.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uavmec_scenario_from_toml(toml: *const c_char, out: *mut *mut UavmecScenario) -> UavmecStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let text = read_str(toml, "toml")?;
        let s = Scenario::from_toml_str(text).map_err(|e| Failure(UavmecStatus::ConfigError, e.to_string()))?;
        *out = Box::into_raw(Box::new(UavmecScenario(s)));
        Ok(())
    })
}

/// Releases a scenario. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uavmec_scenario_free(s: *mut UavmecScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// User, UAV and slot counts. Any output pointer may be null.
///
/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn uavmec_scenario_dims(s: *const UavmecScenario, n_users: *mut usize, n_uavs: *mut usize, n_slots: *mut usize) -> UavmecStatus {
    guard(|| {
        let s = &deref(s, "scenario")?.0;
        for (p, v) in [(n_users, s.n_users()), (n_uavs, s.n_uavs()), (n_slots, s.n_slots())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Scenario as canonical JSON; free with [`uavmec_string_free`].
///
/// # Safety
/// `s` must be a live scenario handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uavmec_scenario_to_json(s: *const UavmecScenario, out: *mut *mut c_char) -> UavmecStatus {
    guard(|| {
        let s = &deref(s, "scenario")?.0;
        *out_slot(out, "out")? = into_c_string(s.to_json())?;
        Ok(())
    })
}

/// Draws the task schedule for `seed`.
///
/// # Safety
/// `s` must be a live scenario handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uavmec_tasks_generate(s: *const UavmecScenario, seed: u64, out: *mut *mut UavmecTasks) -> UavmecStatus {
    guard(|| {
        let s = &deref(s, "scenario")?.0;
        let out = out_slot(out, "out")?;
        *out = Box::into_raw(Box::new(UavmecTasks(s.generate_tasks(seed))));
        Ok(())
    })
}

/// Total bits over all tasks.
///
/// # Safety
/// `t` must be a live task handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uavmec_tasks_total_bits(t: *const UavmecTasks, out: *mut f64) -> UavmecStatus {
    guard(|| {
        let t = &deref(t, "tasks")?.0;
        *out_slot(out, "out")? = t.total_bits();
        Ok(())
    })
}

/// Releases a task schedule. Null is ignored.
///
/// # Safety
/// `t` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uavmec_tasks_free(t: *mut UavmecTasks) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Runs `policy` on the scenario and tasks. `seed` only affects the
/// random-offloading baseline.
///
/// # Safety
/// `s` and `t` must be live handles, `t` generated for `s`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uavmec_solve(
    s: *const UavmecScenario,
    t: *const UavmecTasks,
    policy: UavmecPolicy,
    seed: u64,
    out: *mut *mut UavmecSolution,
) -> UavmecStatus {
    guard(|| {
        let s = &deref(s, "scenario")?.0;
        let t = &deref(t, "tasks")?.0;
        let out = out_slot(out, "out")?;
        if t.n_users != s.n_users() || t.n_slots != s.n_slots() {
            return Err(Failure(UavmecStatus::InvalidArgument, "task schedule does not match the scenario".into()));
        }
        let sol = run_policy(policy.into(), s, t, seed).map_err(|e| Failure(UavmecStatus::SolverError, e.to_string()))?;
        *out = Box::into_raw(Box::new(UavmecSolution(sol)));
        Ok(())
    })
}

/// Releases a solution. Null is ignored.
///
/// # Safety
/// `sol` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uavmec_solution_free(sol: *mut UavmecSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// # Safety
/// `sol` must be a live solution handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uavmec_solution_metrics(sol: *const UavmecSolution, out: *mut UavmecMetrics) -> UavmecStatus {
    guard(|| {
        let sol = &deref(sol, "solution")?.0;
        let m = &sol.metrics;
        *out_slot(out, "out")? = UavmecMetrics {
            objective: m.objective,
            total_delay_s: m.total_delay_s,
            total_uav_energy_j: m.total_uav_energy_j,
            total_offloaded_bits: m.total_offloaded_bits,
            flight_energy_j: m.flight_energy_j,
            compute_energy_j: m.compute_energy_j,
            outer_iterations: u32::try_from(sol.iterations).unwrap_or(u32::MAX),
            converged: sol.converged,
        };
        Ok(())
    })
}

/// Position of UAV `m` in slot `n`, written as `xy[0], xy[1]`.
///
/// # Safety
/// `sol` must be a live solution handle; `xy` must point to two writable doubles.
#[no_mangle]
pub unsafe extern "C" fn uavmec_solution_position(sol: *const UavmecSolution, m: usize, n: usize, xy: *mut f64) -> UavmecStatus {
    guard(|| {
        let q = &deref(sol, "solution")?.0.q;
        if xy.is_null() {
            return Err(Failure::null("xy"));
        }
        index_check("uav", m, q.n_uavs)?;
        index_check("slot", n, q.n_slots)?;
        let p = q.pos(m, n);
        *xy = p[0];
        *xy.add(1) = p[1];
        Ok(())
    })
}

/// Whether user `u` offloads to UAV `m` in slot `n`.
///
/// # Safety
/// `sol` must be a live solution handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uavmec_solution_offloaded(sol: *const UavmecSolution, u: usize, m: usize, n: usize, out: *mut bool) -> UavmecStatus {
    guard(|| {
        let a = &deref(sol, "solution")?.0.a;
        index_check("user", u, a.n_users)?;
        index_check("uav", m, a.n_uavs)?;
        index_check("slot", n, a.n_slots)?;
        *out_slot(out, "out")? = a.get(u, m, n);
        Ok(())
    })
}

/// CPU frequency (Hz) UAV `m` gives user `u` in slot `n`.
///
/// # Safety
/// `sol` must be a live solution handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uavmec_solution_allocation(sol: *const UavmecSolution, m: usize, u: usize, n: usize, out: *mut f64) -> UavmecStatus {
    guard(|| {
        let sol = &deref(sol, "solution")?.0;
        index_check("uav", m, sol.a.n_uavs)?;
        index_check("user", u, sol.a.n_users)?;
        index_check("slot", n, sol.a.n_slots)?;
        *out_slot(out, "out")? = sol.f.get(m, u, n);
        Ok(())
    })
}

/// Full solution as JSON; free with [`uavmec_string_free`].
///
/// # Safety
/// `sol` must be a live solution handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uavmec_solution_to_json(sol: *const UavmecSolution, out: *mut *mut c_char) -> UavmecStatus {
    guard(|| {
        let sol = &deref(sol, "solution")?.0;
        *out_slot(out, "out")? = into_c_string(sol.to_json())?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_mapping_is_complete() {
        let all = [
            UavmecPolicy::Jtoratc,
            UavmecPolicy::Rojratc,
            UavmecPolicy::Nojratc,
            UavmecPolicy::Mojratc,
            UavmecPolicy::Erjotc,
            UavmecPolicy::Joract,
            UavmecPolicy::Jorapt,
        ];
        for (p, id) in all.into_iter().zip(PolicyId::ALL) {
            assert_eq!(PolicyId::from(p), id);
        }
    }

    #[test]
    fn panics_become_status() {
        let st = guard(|| panic!("boom"));
        assert_eq!(st, UavmecStatus::Panic);
        let msg = unsafe { CStr::from_ptr(uavmec_last_error()) }.to_str().unwrap();
        assert!(msg.contains("boom"));
    }
}
