//! C interface to `cascade_tune`.
//!
//! Configs and reports are opaque handles owned by the caller and released
//! with their `_free` function. Every fallible call returns a [`CtStatus`];
//! on failure `ct_last_error` holds a message for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cascade_tune::harness::{prepare_weights, run_method, CampaignConfig, Method};
use cascade_tune::metrics::evaluate_candidate;
use cascade_tune::sim::GainVector;
use cascade_tune::tuner::TuneReport;
use cascade_tune::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Rejected configuration or arguments; the message carries the code.
    Config = 3,
    /// Simulation, fitting or I/O failure.
    Runtime = 4,
    Panic = 5,
}

/// Campaign configuration.
pub struct CtConfig(CampaignConfig);

/// Finished tuning run.
pub struct CtReport(TuneReport);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CtEvaluation {
    pub cost: f64,
    pub constraint: f64,
    pub diverged: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CtSummary {
    pub kp: f64,
    pub kv: f64,
    /// ms
    pub ti: f64,
    pub final_cost: f64,
    pub constraint: f64,
    pub iterations: usize,
    pub violations: usize,
    pub feasible: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtMethod {
    Cbo = 0,
    Safeopt = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(e: Error) -> CtStatus {
    let status = match e {
        Error::Config { .. } | Error::Toml(_) | Error::MissingCriticalGains => CtStatus::Config,
        _ => CtStatus::Runtime,
    };
    set_error(e.to_string());
    status
}

fn guard(f: impl FnOnce() -> CtStatus) -> CtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            CtStatus::Panic
        }
    }
}

fn null() -> CtStatus {
    set_error("null pointer argument".into());
    CtStatus::NullPointer
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn ct_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn ct_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default campaign configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ct_config_default(out: *mut *mut CtConfig) -> CtStatus {
    guard(|| {
        if out.is_null() {
            return null();
        }
        *out = Box::into_raw(Box::new(CtConfig(CampaignConfig::default())));
        CtStatus::Ok
    })
}

/// Parses and validates a campaign file.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ct_config_from_toml(text: *const c_char, out: *mut *mut CtConfig) -> CtStatus {
    guard(|| {
        if text.is_null() || out.is_null() {
            return null();
        }
        let Ok(s) = CStr::from_ptr(text).to_str() else {
            set_error("config text is not UTF-8".into());
            return CtStatus::InvalidUtf8;
        };
        match CampaignConfig::from_toml(s) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(CtConfig(c)));
                CtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `cfg` must come from this library and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ct_config_free(cfg: *mut CtConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Scores one gain vector with the configured plant, profile, weights and noise.
///
/// # Safety
/// `cfg` must be a live config handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ct_evaluate(
    cfg: *const CtConfig,
    kp: f64,
    kv: f64,
    ti: f64,
    out: *mut CtEvaluation,
) -> CtStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return null();
        }
        let c = &(*cfg).0;
        let g = GainVector { kp, kv, ti };
        let run = || -> cascade_tune::Result<CtEvaluation> {
            g.validate()?;
            let (weights, _) = prepare_weights(c, None)?;
            let o = evaluate_candidate(&g, &c.plant, &c.profile, &weights, &c.noise.with_seed(c.base_seed))?;
            Ok(CtEvaluation {
                cost: o.y,
                constraint: o.z,
                diverged: o.diverged,
            })
        };
        match run() {
            Ok(e) => {
                *out = e;
                CtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Runs one tuning repetition. The critical-gain scan runs first when configured.
///
/// # Safety
/// `cfg` must be a live config handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ct_tune(
    cfg: *const CtConfig,
    method: CtMethod,
    seed: u64,
    out: *mut *mut CtReport,
) -> CtStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return null();
        }
        let c = &(*cfg).0;
        let m = match method {
            CtMethod::Cbo => Method::Cbo,
            CtMethod::Safeopt => Method::Safeopt,
        };
        let run = || {
            let (weights, _) = prepare_weights(c, None)?;
            run_method(c, &weights, m, seed)
        };
        match run() {
            Ok(r) => {
                *out = Box::into_raw(Box::new(CtReport(r)));
                CtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `report` must be a live report handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ct_report_summary(report: *const CtReport, out: *mut CtSummary) -> CtStatus {
    guard(|| {
        if report.is_null() || out.is_null() {
            return null();
        }
        let r = &(*report).0;
        let g = GainVector::from_slice(&r.best.x);
        *out = CtSummary {
            kp: g.kp,
            kv: g.kv,
            ti: g.ti,
            final_cost: r.final_cost,
            constraint: r.best.z,
            iterations: r.iterations,
            violations: r.violations,
            feasible: r.best.feasible,
        };
        CtStatus::Ok
    })
}

/// Report as JSON; release the string with `ct_string_free`.
///
/// # Safety
/// `report` must be a live report handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ct_report_to_json(report: *const CtReport, out: *mut *mut c_char) -> CtStatus {
    guard(|| {
        if report.is_null() || out.is_null() {
            return null();
        }
        match (*report).0.to_json() {
            Ok(s) => {
                *out = CString::new(s).unwrap_or_default().into_raw();
                CtStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `report` must come from this library and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ct_report_free(report: *mut CtReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `s` must come from this library and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ct_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cstr(p: *const c_char) -> String {
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    #[test]
    fn config_errors_carry_a_code() {
        let text = CString::new("repetitions = 0\n").unwrap();
        let mut cfg = ptr::null_mut();
        let s = unsafe { ct_config_from_toml(text.as_ptr(), &mut cfg) };
        assert_eq!(s, CtStatus::Config);
        assert!(cfg.is_null());
        assert!(cstr(ct_last_error()).contains("E_CAMPAIGN"));
    }

    #[test]
    fn null_and_utf8_arguments_are_rejected() {
        let mut cfg = ptr::null_mut();
        assert_eq!(unsafe { ct_config_from_toml(ptr::null(), &mut cfg) }, CtStatus::NullPointer);
        let bad = [0xffu8 as c_char, 0];
        assert_eq!(unsafe { ct_config_from_toml(bad.as_ptr(), &mut cfg) }, CtStatus::InvalidUtf8);
        let mut e = CtEvaluation::default();
        assert_eq!(unsafe { ct_evaluate(ptr::null(), 1.0, 1.0, 7.5, &mut e) }, CtStatus::NullPointer);
        unsafe {
            ct_config_free(ptr::null_mut());
            ct_report_free(ptr::null_mut());
            ct_string_free(ptr::null_mut());
        }
    }

    #[test]
    fn evaluate_matches_the_library() {
        let mut cfg = ptr::null_mut();
        assert_eq!(unsafe { ct_config_default(&mut cfg) }, CtStatus::Ok);
        let mut e = CtEvaluation::default();
        assert_eq!(unsafe { ct_evaluate(cfg, 20.0, 1.0, 7.5, &mut e) }, CtStatus::Ok);
        let c = CampaignConfig::default();
        let o = evaluate_candidate(
            &GainVector { kp: 20.0, kv: 1.0, ti: 7.5 },
            &c.plant,
            &c.profile,
            &c.weights,
            &c.noise.with_seed(c.base_seed),
        )
        .unwrap();
        assert_eq!((e.cost, e.constraint, e.diverged), (o.y, o.z, o.diverged));
        assert_eq!(unsafe { ct_evaluate(cfg, -1.0, 1.0, 7.5, &mut e) }, CtStatus::Config);
        unsafe { ct_config_free(cfg) };
    }

    #[test]
    fn tune_round_trip() {
        let text = CString::new("[tuner]\nmax_iterations = 3\n").unwrap();
        let mut cfg = ptr::null_mut();
        assert_eq!(unsafe { ct_config_from_toml(text.as_ptr(), &mut cfg) }, CtStatus::Ok);
        let mut rep = ptr::null_mut();
        assert_eq!(unsafe { ct_tune(cfg, CtMethod::Cbo, 4, &mut rep) }, CtStatus::Ok);
        let mut s = CtSummary::default();
        assert_eq!(unsafe { ct_report_summary(rep, &mut s) }, CtStatus::Ok);
        assert!(s.final_cost > 0.0 && s.iterations <= 3);
        let mut json = ptr::null_mut();
        assert_eq!(unsafe { ct_report_to_json(rep, &mut json) }, CtStatus::Ok);
        let back = TuneReport::from_json(&cstr(json)).unwrap();
        assert_eq!(back.final_cost, s.final_cost);
        assert_eq!(back.seed, 4);
        unsafe {
            ct_string_free(json);
            ct_report_free(rep);
            ct_config_free(cfg);
        }
        assert!(!cstr(ct_version()).is_empty());
    }
}
