//! C interface.
//!
//! Objects are opaque handles created by `tbt_*_new`/`tbt_*_from_*` and
//! released with the matching `tbt_*_free`. Every fallible call returns a
//! [`TbtStatus`]; on failure a description of the last error on the calling
//! thread is available from [`tbt_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use timebin_teleport::analysis::{fidelity_table, weighted_average, TomographyOptions};
use timebin_teleport::config::ExperimentConfig;
use timebin_teleport::counts::CountTable;
use timebin_teleport::error::Error;
use timebin_teleport::experiment;
use timebin_teleport::photon::hom_coincidence_rate;
use timebin_teleport::qubit::SettingLabel;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TbtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Schema = 5,
    NotFound = 6,
    Numerical = 7,
    Panic = 99,
}

/// Analyser settings / cardinal states.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TbtSetting {
    E = 0,
    L = 1,
    Plus = 2,
    Minus = 3,
    PlusI = 4,
    MinusI = 5,
}

impl From<TbtSetting> for SettingLabel {
    fn from(s: TbtSetting) -> Self {
        match s {
            TbtSetting::E => SettingLabel::E,
            TbtSetting::L => SettingLabel::L,
            TbtSetting::Plus => SettingLabel::Plus,
            TbtSetting::Minus => SettingLabel::Minus,
            TbtSetting::PlusI => SettingLabel::PlusI,
            TbtSetting::MinusI => SettingLabel::MinusI,
        }
    }
}

/// Experiment configuration.
pub struct TbtConfig(ExperimentConfig);

/// Triple-coincidence table.
pub struct TbtCountTable(CountTable);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TbtStatus {
    match e {
        Error::Config(_) | Error::Mismatch(_) => TbtStatus::Config,
        Error::Io(_) => TbtStatus::Io,
        Error::Schema { .. } | Error::Csv(_) => TbtStatus::Schema,
        Error::InvalidParameter { .. } | Error::Topology(_) => TbtStatus::InvalidArgument,
        Error::Tomography(_) | Error::MissingMode(_) => TbtStatus::NotFound,
        _ => TbtStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (TbtStatus, String)>) -> TbtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TbtStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TbtStatus::Panic
        }
    }
}

fn lift<T>(r: timebin_teleport::Result<T>) -> Result<T, (TbtStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (TbtStatus, String) {
    (TbtStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (TbtStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (TbtStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tbt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Bundled paper-default configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn tbt_config_paper_default(out: *mut *mut TbtConfig) -> TbtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(TbtConfig(ExperimentConfig::paper_default())));
        Ok(())
    })
}

/// Parses a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tbt_config_from_toml(toml: *const c_char, out: *mut *mut TbtConfig) -> TbtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(toml, "toml")?;
        let cfg = lift(ExperimentConfig::from_toml(text))?;
        *out = Box::into_raw(Box::new(TbtConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn tbt_config_set_seed(cfg: *mut TbtConfig, seed: u64) -> TbtStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        cfg.0.seed = seed;
        Ok(())
    })
}

/// Sets the integration time per (state, setting, μ_A) cell, in seconds.
///
/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn tbt_config_set_duration(cfg: *mut TbtConfig, seconds: f64) -> TbtStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let mut next = cfg.0.clone();
        next.duration_s = seconds;
        lift(next.validate())?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tbt_config_free(cfg: *mut TbtConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Expected HOM-monitor coincidences per 10 s window at arrival-time
/// difference `delta_t_ps`, for the configured signal level and scan state.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tbt_hom_rate(cfg: *const TbtConfig, delta_t_ps: f64, out: *mut f64) -> TbtStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let scenario = cfg.0.scenario();
        let setup = lift(scenario.bsm_setup(cfg.0.source.mu_a, 0.0, 0.0))?;
        let state = cfg.0.homscan.prepared.state();
        *out = lift(hom_coincidence_rate(&setup, &state, cfg.0.source.pulse_sigma, delta_t_ps))?;
        Ok(())
    })
}

/// Runs every configured cell and returns the resulting table.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tbt_simulate(cfg: *const TbtConfig, out: *mut *mut TbtCountTable) -> TbtStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let sim = lift(experiment::simulate(&cfg.0))?;
        *out = Box::into_raw(Box::new(TbtCountTable(sim.table)));
        Ok(())
    })
}

/// Reads a count table CSV.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tbt_count_table_read(path: *const c_char, out: *mut *mut TbtCountTable) -> TbtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let file = lift(std::fs::File::open(Path::new(path)).map_err(Error::from))?;
        let table = lift(CountTable::read_csv(file))?;
        *out = Box::into_raw(Box::new(TbtCountTable(table)));
        Ok(())
    })
}

/// Writes a count table CSV.
///
/// # Safety
/// `table` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tbt_count_table_write(table: *const TbtCountTable, path: *const c_char) -> TbtStatus {
    guard(|| {
        let table = table.as_ref().ok_or_else(|| null("table"))?;
        let path = str_arg(path, "path")?;
        let file = lift(std::fs::File::create(Path::new(path)).map_err(Error::from))?;
        lift(table.0.write_csv(file))
    })
}

/// Looks up one cell. Returns `TBT_STATUS_NOT_FOUND` if absent.
///
/// # Safety
/// `table` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn tbt_count_table_get(
    table: *const TbtCountTable,
    prepared: TbtSetting,
    setting: TbtSetting,
    mu_a: f64,
    triples: *mut u64,
    bsm_flags: *mut u64,
    elapsed_s: *mut f64,
) -> TbtStatus {
    guard(|| {
        let table = table.as_ref().ok_or_else(|| null("table"))?;
        if triples.is_null() || bsm_flags.is_null() || elapsed_s.is_null() {
            return Err(null("output"));
        }
        let cell = table
            .0
            .get(prepared.into(), setting.into(), mu_a)
            .ok_or_else(|| (TbtStatus::NotFound, format!("no cell ({prepared:?}, {setting:?}, {mu_a})")))?;
        *triples = cell.triples;
        *bsm_flags = cell.bsm_flags;
        *elapsed_s = cell.elapsed;
        Ok(())
    })
}

/// # Safety
/// `table` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tbt_count_table_len(table: *const TbtCountTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.len())
}

/// # Safety
/// `table` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tbt_count_table_free(table: *mut TbtCountTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Weighted average fidelity (1:1:2:2 over e, ℓ, +, +i) from tomography at `mu_a`.
///
/// # Safety
/// `table` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tbt_average_fidelity(table: *const TbtCountTable, mu_a: f64, out: *mut f64) -> TbtStatus {
    guard(|| {
        let table = table.as_ref().ok_or_else(|| null("table"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let rows = lift(fidelity_table(&table.0, mu_a, &TomographyOptions::default(), 100, 0))?;
        let by_target: Vec<_> = rows.iter().map(|r| (r.target, r.fidelity)).collect();
        *out = lift(weighted_average(&by_target))?;
        Ok(())
    })
}
