//! C ABI over the `ltfeas` library.
//!
//! Every call returns an [`LtfStatus`]; on failure the message is kept per
//! thread and read with [`ltf_last_error`]. Handles are opaque and must be
//! released with their `_free` function. Positions are in AU, velocities in
//! AU per canonical time unit (μ = 1), times in canonical time units unless
//! a name says otherwise.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ltfeas::astro::{kepler_propagate, lambert_solve, read_catalog, synth_catalog, Catalog, StateVector, SynthOptions, Vec3};
use ltfeas::error::ErrorKind;
use ltfeas::features::FEATURE_COUNT;
use ltfeas::metrics::f_measure;
use ltfeas::pipeline::Predictor;
use ltfeas::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LtfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    DataError = 3,
    NumericalFailure = 4,
    Undefined = 5,
    Panic = 6,
}

/// Loaded body catalog.
pub struct LtfCatalog(Catalog);

/// Loaded model plus scaler.
pub struct LtfPredictor(Predictor);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn fail(err: &Error) -> LtfStatus {
    set_error(err.to_string());
    match err.kind() {
        ErrorKind::Usage => LtfStatus::InvalidConfig,
        ErrorKind::Data => LtfStatus::DataError,
        ErrorKind::Numerical => LtfStatus::NumericalFailure,
    }
}

fn null_arg(name: &str) -> LtfStatus {
    set_error(format!("null pointer for {name}"));
    LtfStatus::NullPointer
}

fn guarded(f: impl FnOnce() -> LtfStatus) -> LtfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            LtfStatus::Panic
        }
    }
}

unsafe fn read3(p: *const f64) -> Vec3 {
    let s = std::slice::from_raw_parts(p, 3);
    Vec3::new(s[0], s[1], s[2])
}

unsafe fn write3(p: *mut f64, v: &Vec3) {
    let s = std::slice::from_raw_parts_mut(p, 3);
    s.copy_from_slice(v.as_slice());
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, LtfStatus> {
    if p.is_null() {
        return Err(null_arg("path"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(LtfStatus::DataError)
        }
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ltf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Number of columns of the full feature vector.
#[no_mangle]
pub extern "C" fn ltf_feature_count() -> usize {
    FEATURE_COUNT
}

/// Two-body propagation of `(r0, v0)` by `dt`. Arrays hold 3 values.
///
/// # Safety
/// All pointers must be valid for 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn ltf_kepler_propagate(
    r0: *const f64,
    v0: *const f64,
    dt: f64,
    r_out: *mut f64,
    v_out: *mut f64,
) -> LtfStatus {
    guarded(|| {
        if r0.is_null() || v0.is_null() || r_out.is_null() || v_out.is_null() {
            return null_arg("state array");
        }
        let s = StateVector::new(read3(r0), read3(v0), 1.0);
        match kepler_propagate(&s, dt) {
            Ok(out) => {
                write3(r_out, &out.position);
                write3(v_out, &out.velocity);
                LtfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Zero-revolution Lambert arc from `r1` to `r2` in `tof`; `prograde`
/// nonzero selects the prograde branch.
///
/// # Safety
/// All pointers must be valid for 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn ltf_lambert(
    r1: *const f64,
    r2: *const f64,
    tof: f64,
    prograde: i32,
    v1_out: *mut f64,
    v2_out: *mut f64,
) -> LtfStatus {
    guarded(|| {
        if r1.is_null() || r2.is_null() || v1_out.is_null() || v2_out.is_null() {
            return null_arg("position or velocity array");
        }
        match lambert_solve(&read3(r1), &read3(r2), tof, prograde != 0) {
            Ok((v1, v2)) => {
                write3(v1_out, &v1);
                write3(v2_out, &v2);
                LtfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Weighted F-measure; `Undefined` for negative or NaN inputs. Both inputs
/// zero give 0.
///
/// # Safety
/// `out` must be valid for one double.
#[no_mangle]
pub unsafe extern "C" fn ltf_f_measure(precision: f64, recall: f64, k: f64, out: *mut f64) -> LtfStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        match f_measure(precision, recall, k) {
            Some(v) => {
                *out = v;
                LtfStatus::Ok
            }
            None => {
                set_error("F-measure undefined for these inputs");
                LtfStatus::Undefined
            }
        }
    })
}

/// Loads a catalog CSV.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ltf_catalog_load(path: *const c_char, out: *mut *mut LtfCatalog) -> LtfStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match read_catalog(&path) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(LtfCatalog(c)));
                LtfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Builds the synthetic catalog of `n` bodies.
///
/// # Safety
/// `out` must be valid for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ltf_catalog_synth(n: usize, seed: u64, out: *mut *mut LtfCatalog) -> LtfStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        if n == 0 {
            set_error("catalog size must be positive");
            return LtfStatus::InvalidConfig;
        }
        *out = Box::into_raw(Box::new(LtfCatalog(synth_catalog(n, seed, &SynthOptions::default()))));
        LtfStatus::Ok
    })
}

/// # Safety
/// `catalog` must come from this library; `out` valid for one size_t.
#[no_mangle]
pub unsafe extern "C" fn ltf_catalog_len(catalog: *const LtfCatalog, out: *mut usize) -> LtfStatus {
    guarded(|| {
        if catalog.is_null() || out.is_null() {
            return null_arg("catalog or out");
        }
        *out = (*catalog).0.len();
        LtfStatus::Ok
    })
}

/// # Safety
/// `catalog` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ltf_catalog_free(catalog: *mut LtfCatalog) {
    if !catalog.is_null() {
        drop(Box::from_raw(catalog));
    }
}

/// Loads a model file and the scaler it references.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ltf_predictor_load(path: *const c_char, out: *mut *mut LtfPredictor) -> LtfStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Predictor::load(&path) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(LtfPredictor(p)));
                LtfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of feature columns the model consumes.
///
/// # Safety
/// `predictor` must come from this library; `out` valid for one size_t.
#[no_mangle]
pub unsafe extern "C" fn ltf_predictor_input_width(predictor: *const LtfPredictor, out: *mut usize) -> LtfStatus {
    guarded(|| {
        if predictor.is_null() || out.is_null() {
            return null_arg("predictor or out");
        }
        *out = (*predictor).0.feature_names().len();
        LtfStatus::Ok
    })
}

/// Feasibility probability from a full feature row of
/// `ltf_feature_count()` values.
///
/// # Safety
/// `row` must be valid for `len` doubles; `out` for one double.
#[no_mangle]
pub unsafe extern "C" fn ltf_predictor_predict_row(
    predictor: *const LtfPredictor,
    row: *const f64,
    len: usize,
    out: *mut f64,
) -> LtfStatus {
    guarded(|| {
        if predictor.is_null() || row.is_null() || out.is_null() {
            return null_arg("predictor, row or out");
        }
        let row = std::slice::from_raw_parts(row, len);
        match (*predictor).0.predict_full_row(row) {
            Ok(p) => {
                *out = p;
                LtfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Screens one transfer: Lambert reference search on a `grid_step_days`
/// grid, ephemerides at `epoch_mjd`, features, scaler and model.
///
/// # Safety
/// Handles must come from this library; `out` valid for one double.
#[no_mangle]
pub unsafe extern "C" fn ltf_predictor_predict_transfer(
    predictor: *const LtfPredictor,
    catalog: *const LtfCatalog,
    body1_id: i64,
    body2_id: i64,
    epoch_mjd: f64,
    m0_kg: f64,
    tof_days: f64,
    grid_step_days: f64,
    out: *mut f64,
) -> LtfStatus {
    guarded(|| {
        if predictor.is_null() || catalog.is_null() || out.is_null() {
            return null_arg("predictor, catalog or out");
        }
        match (*predictor).0.predict_transfer(
            &(*catalog).0,
            body1_id,
            body2_id,
            epoch_mjd,
            m0_kg,
            tof_days,
            grid_step_days,
        ) {
            Ok(p) => {
                *out = p;
                LtfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `predictor` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ltf_predictor_free(predictor: *mut LtfPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}
