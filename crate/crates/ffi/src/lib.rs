//! C ABI over the trivid toolkit.
//!
//! Objects cross the boundary as opaque handles created by `*_load`,
//! `*_synth` or an operation and released with the matching `*_free`.
//! Every fallible call returns a [`TrividStatus`]; on failure
//! [`trivid_last_error`] describes the most recent error on the calling
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use trivid::archive::{load_mask, load_weight_archive, save_mask, save_weight_archive, PruneMask, WeightArchive};
use trivid::pipeline::{efficiency_report, OursInput};
use trivid::pruning::{
    global_magnitude_mask, hardware_aware_prune, iterative_magnitude_prune, sparse_kernel_ratio, synthetic_archive,
    HardwarePruneConfig, IdentityRetrainer,
};
use trivid::rng::Rng;
use trivid::scenario::{synth_scenario, ScenarioSpec, ScenarioTruth};
use trivid::temporal::{evaluate_selection, reward, TrackerConfig};
use trivid::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrividStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    InvalidConfig = 5,
    Contract = 6,
    DegenerateSelection = 7,
    UndefinedMetric = 8,
    EmptyLibrary = 9,
    Panic = 10,
}

/// Weight archive handle.
pub struct TrividArchive {
    inner: WeightArchive,
}

/// Pruning mask handle.
pub struct TrividMask {
    inner: PruneMask,
}

/// Synthetic scenario handle.
pub struct TrividScenario {
    inner: ScenarioTruth,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrividMotScores {
    pub idsw: usize,
    pub fp: usize,
    pub fn_: usize,
    pub gt_total: usize,
    pub mota: f64,
    pub idf1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(TrividStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => TrividStatus::Io,
            Error::Format(_) => TrividStatus::Format,
            Error::InvalidSpec(_) | Error::InvalidConfig(_) | Error::Json(_) => TrividStatus::InvalidConfig,
            Error::Contract(_) => TrividStatus::Contract,
            Error::DegenerateSelection(_) => TrividStatus::DegenerateSelection,
            Error::UndefinedMetric(_) => TrividStatus::UndefinedMetric,
            Error::EmptyLibrary(_) => TrividStatus::EmptyLibrary,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TrividStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            TrividStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            TrividStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(TrividStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(TrividStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_value<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = value;
    Ok(())
}

unsafe fn selection<'a>(kept: *const bool, n: usize) -> Result<&'a [bool], Failure> {
    if kept.is_null() {
        return Err(null("kept"));
    }
    Ok(std::slice::from_raw_parts(kept, n))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn trivid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn trivid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn trivid_archive_load(path: *const c_char, out: *mut *mut TrividArchive) -> TrividStatus {
    guard(|| {
        let inner = load_weight_archive(str_arg(path, "path")?)?;
        put(out, TrividArchive { inner })
    })
}

/// Archive of `n_layers` conv tensors; `shapes` holds `(filters, channels,
/// k)` triples.
///
/// # Safety
/// `shapes` must point to `3 * n_layers` values.
#[no_mangle]
pub unsafe extern "C" fn trivid_archive_synthetic(
    shapes: *const usize,
    n_layers: usize,
    seed: u64,
    out: *mut *mut TrividArchive,
) -> TrividStatus {
    guard(|| {
        if shapes.is_null() {
            return Err(null("shapes"));
        }
        let flat = std::slice::from_raw_parts(shapes, 3 * n_layers);
        let dims: Vec<[usize; 3]> = flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        let inner = synthetic_archive(&dims, &mut Rng::new(seed, 0))?;
        put(out, TrividArchive { inner })
    })
}

/// # Safety
/// `archive` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn trivid_archive_save(archive: *const TrividArchive, path: *const c_char) -> TrividStatus {
    guard(|| {
        let a = handle(archive, "archive")?;
        save_weight_archive(&a.inner, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Total number of weights; 0 for a null handle.
///
/// # Safety
/// `archive` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn trivid_archive_total_weights(archive: *const TrividArchive) -> usize {
    archive.as_ref().map_or(0, |a| a.inner.total_weights())
}

/// # Safety
/// `archive` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn trivid_archive_free(archive: *mut TrividArchive) {
    if !archive.is_null() {
        drop(Box::from_raw(archive));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn trivid_mask_load(path: *const c_char, out: *mut *mut TrividMask) -> TrividStatus {
    guard(|| {
        let inner = load_mask(str_arg(path, "path")?)?;
        put(out, TrividMask { inner })
    })
}

/// # Safety
/// `mask` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn trivid_mask_save(mask: *const TrividMask, path: *const c_char) -> TrividStatus {
    guard(|| {
        let m = handle(mask, "mask")?;
        save_mask(&m.inner, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `mask` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn trivid_mask_pruning_ratio(mask: *const TrividMask, out: *mut f64) -> TrividStatus {
    guard(|| put_value(out, handle(mask, "mask")?.inner.pruning_ratio()))
}

/// # Safety
/// `mask` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn trivid_mask_sparse_kernel_ratio(mask: *const TrividMask, out: *mut f64) -> TrividStatus {
    guard(|| {
        let r = sparse_kernel_ratio(&handle(mask, "mask")?.inner)?;
        put_value(out, r)
    })
}

/// # Safety
/// `mask` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn trivid_mask_free(mask: *mut TrividMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// # Safety
/// `archive` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn trivid_global_magnitude_mask(
    archive: *const TrividArchive,
    ratio: f64,
    out: *mut *mut TrividMask,
) -> TrividStatus {
    guard(|| {
        let inner = global_magnitude_mask(&handle(archive, "archive")?.inner, ratio)?;
        put(out, TrividMask { inner })
    })
}

/// Iterative magnitude pruning without retraining.
///
/// # Safety
/// `archive` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn trivid_imp_mask(
    archive: *const TrividArchive,
    ratio: f64,
    rounds: usize,
    out: *mut *mut TrividMask,
) -> TrividStatus {
    guard(|| {
        let a = &handle(archive, "archive")?.inner;
        let imp = iterative_magnitude_prune(a, ratio, rounds, &mut IdentityRetrainer)?;
        put(out, TrividMask { inner: imp.mask })
    })
}

/// Hardware-aware pattern pruning; writes the final mask.
///
/// # Safety
/// `archive` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn trivid_hardware_prune(
    archive: *const TrividArchive,
    ratio: f64,
    rounds: usize,
    library_size: usize,
    target_nnz: usize,
    out: *mut *mut TrividMask,
) -> TrividStatus {
    guard(|| {
        let a = &handle(archive, "archive")?.inner;
        let cfg = HardwarePruneConfig {
            ratio,
            rounds,
            library_size,
            target_nnz,
        };
        let r = hardware_aware_prune(a, &cfg, None, &mut IdentityRetrainer)?;
        put(out, TrividMask { inner: r.mask })
    })
}

/// Synthesizes a scenario from a JSON spec (null for defaults).
///
/// # Safety
/// `spec_json` must be null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn trivid_scenario_synth(
    spec_json: *const c_char,
    seed: u64,
    out: *mut *mut TrividScenario,
) -> TrividStatus {
    guard(|| {
        let spec: ScenarioSpec = if spec_json.is_null() {
            ScenarioSpec::default()
        } else {
            serde_json::from_str(str_arg(spec_json, "spec_json")?).map_err(Error::from)?
        };
        let inner = synth_scenario(&spec, seed)?;
        put(out, TrividScenario { inner })
    })
}

/// # Safety
/// `scenario` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn trivid_scenario_n_frames(scenario: *const TrividScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.inner.n_frames)
}

/// `-IDSw / n'` of the tracker on the kept frames.
///
/// # Safety
/// `kept` must point to `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn trivid_scenario_reward(
    scenario: *const TrividScenario,
    kept: *const bool,
    n: usize,
    iou_threshold: f64,
    out: *mut f64,
) -> TrividStatus {
    guard(|| {
        let s = handle(scenario, "scenario")?;
        let r = reward(&s.inner, selection(kept, n)?, &TrackerConfig { iou_threshold })?;
        put_value(out, r)
    })
}

/// Tracking scores on the kept frames.
///
/// # Safety
/// `kept` must point to `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn trivid_scenario_evaluate(
    scenario: *const TrividScenario,
    kept: *const bool,
    n: usize,
    iou_threshold: f64,
    out: *mut TrividMotScores,
) -> TrividStatus {
    guard(|| {
        let s = handle(scenario, "scenario")?;
        let m = evaluate_selection(&s.inner, selection(kept, n)?, &TrackerConfig { iou_threshold })?;
        put_value(
            out,
            TrividMotScores {
                idsw: m.idsw,
                fp: m.fp,
                fn_: m.fn_,
                gt_total: m.gt_total,
                mota: m.mota,
                idf1: m.idf1,
            },
        )
    })
}

/// # Safety
/// `scenario` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn trivid_scenario_free(scenario: *mut TrividScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Latency lower bound in seconds.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn trivid_roofline_bound(total_gops: f64, peak_gops: f64, out: *mut f64) -> TrividStatus {
    guard(|| {
        if !(total_gops >= 0.0 && peak_gops > 0.0) {
            return Err(Failure(
                TrividStatus::InvalidConfig,
                "gops must be >= 0 and peak > 0".into(),
            ));
        }
        put_value(out, trivid::accel::roofline_bound(total_gops, peak_gops))
    })
}

/// Effective frame rate and energy per frame for one configuration.
///
/// # Safety
/// `out_efr` and `out_energy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn trivid_efficiency(
    latency_ms: f64,
    frame_drop_ratio: f64,
    power_w: f64,
    out_efr: *mut f64,
    out_energy: *mut f64,
) -> TrividStatus {
    guard(|| {
        if out_efr.is_null() || out_energy.is_null() {
            return Err(null("out"));
        }
        let ours = OursInput {
            method: String::new(),
            data_reduction: String::new(),
            pruning: String::new(),
            latency_ms,
            frame_drop_ratio,
            power_w,
        };
        let t = efficiency_report(&ours, &[])?;
        *out_efr = t.rows[0].efr_fps;
        *out_energy = t.rows[0].energy_j_per_frame;
        Ok(())
    })
}
