//! C ABI over `lagc-core`.
//!
//! Datasets and traces are opaque handles owned by the caller and released
//! with the matching `*_free`. Every fallible call returns a [`LagcStatus`];
//! on failure `lagc_last_error()` describes the error for the calling thread.
//! Enum-typed inputs travel as `uint32_t` so out-of-range values are rejected
//! instead of being undefined behaviour.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lagc_core::dataset::{build_assignment, generate_dataset, geometric_smoothness, Dataset};
use lagc_core::engine::{run_until, MetricsTrace, Preset, SchemeConfig, StopRule};
use lagc_core::timing::TimingModel;
use lagc_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LagcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Decode = 4,
    Divergence = 5,
    Io = 6,
    Numeric = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LagcPreset {
    Gd = 0,
    Gc = 1,
    Lag = 2,
    GroupedGd = 3,
    Lagc = 4,
    GroupedLag = 5,
    Custom = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LagcLaw {
    Exponential = 0,
    Pareto = 1,
}

/// Computing-time law. `shape` is ignored for the exponential law.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct LagcTiming {
    /// A `LagcLaw` value.
    pub law: u32,
    pub eta: f64,
    pub shape: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct LagcScheme {
    /// A `LagcPreset` value.
    pub preset: u32,
    pub workers: usize,
    pub group_size: usize,
    pub redundancy: usize,
    pub wait_for: usize,
    pub xi: f64,
    pub history_depth: usize,
    pub step_size: f64,
    pub timing: LagcTiming,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct LagcDatasetInfo {
    pub dimension: usize,
    pub partitions: usize,
    pub smoothness: f64,
    pub pl_constant: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct LagcRecord {
    pub iteration: usize,
    pub duration: f64,
    pub downloads: usize,
    pub uploads: usize,
    pub loss_gap: f64,
    pub selected_groups: usize,
}

/// Iterations, communication, computation and gap accumulated by a time.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct LagcSnapshot {
    pub iterations: usize,
    pub communication: usize,
    pub computation: f64,
    pub loss_gap: f64,
}

/// Opaque dataset handle.
pub struct LagcDataset(Dataset);

/// Opaque trace handle.
pub struct LagcTrace(MetricsTrace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> LagcStatus {
    match err {
        Error::Config(_) | Error::Parse(_) | Error::Dimension { .. } | Error::Domain(_) => LagcStatus::Config,
        Error::Decode { .. } | Error::CodeConstruction { .. } | Error::MissingGradient(_) => LagcStatus::Decode,
        Error::Divergence { .. } => LagcStatus::Divergence,
        Error::Io(_) | Error::Csv(_) => LagcStatus::Io,
        Error::NonFinite(_) | Error::UndefinedScale | Error::Regeneration { .. } => LagcStatus::Numeric,
    }
}

fn fail(status: LagcStatus, msg: impl Into<String>) -> LagcStatus {
    set_error(msg.into());
    status
}

/// Runs `body`, converting errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), LagcStatus>) -> LagcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => LagcStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(LagcStatus::Panic, "internal panic"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, LagcStatus>;
}

impl<T> OrStatus<T> for lagc_core::Result<T> {
    fn or_status(self) -> Result<T, LagcStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, LagcStatus> {
    p.as_ref().ok_or_else(|| fail(LagcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, LagcStatus> {
    p.as_mut().ok_or_else(|| fail(LagcStatus::NullPointer, format!("{what} is null")))
}

fn timing_model(t: &LagcTiming) -> Result<TimingModel, LagcStatus> {
    let model = match t.law {
        x if x == LagcLaw::Exponential as u32 => TimingModel::exponential(t.eta),
        x if x == LagcLaw::Pareto as u32 => TimingModel::pareto(t.eta, t.shape),
        other => return Err(fail(LagcStatus::InvalidArgument, format!("unknown timing law {other}"))),
    };
    model.or_status()
}

fn preset(code: u32) -> Result<Preset, LagcStatus> {
    Ok(match code {
        0 => Preset::Gd,
        1 => Preset::Gc,
        2 => Preset::Lag,
        3 => Preset::GroupedGd,
        4 => Preset::Lagc,
        5 => Preset::GroupedLag,
        6 => Preset::Custom,
        other => return Err(fail(LagcStatus::InvalidArgument, format!("unknown preset {other}"))),
    })
}

/// Message of the calling thread's most recent error, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lagc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Generates a dataset with `partitions` partitions of `rows` × `dimension`.
/// `smoothness` holds one target per partition, or is null for the
/// `(1.3^(s-1) + 1)²` law.
///
/// # Safety
/// `smoothness` must be null or point to `partitions` doubles; `out` must be
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lagc_dataset_generate(
    dimension: usize,
    rows: usize,
    partitions: usize,
    smoothness: *const f64,
    seed: u64,
    out: *mut *mut LagcDataset,
) -> LagcStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let targets = if smoothness.is_null() {
            geometric_smoothness(partitions)
        } else {
            std::slice::from_raw_parts(smoothness, partitions).to_vec()
        };
        let ds = generate_dataset(dimension, rows, &targets, seed).or_status()?;
        *out = Box::into_raw(Box::new(LagcDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle from `lagc_dataset_generate` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lagc_dataset_free(dataset: *mut LagcDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `dataset` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lagc_dataset_info(dataset: *const LagcDataset, out: *mut LagcDatasetInfo) -> LagcStatus {
    guard(|| {
        let ds = &deref(dataset, "dataset")?.0;
        *deref_mut(out, "out")? = LagcDatasetInfo {
            dimension: ds.dimension(),
            partitions: ds.partition_count(),
            smoothness: ds.smoothness,
            pl_constant: ds.pl_constant,
        };
        Ok(())
    })
}

/// Simulates one run from `θ⁰ = 0` until the gap is at most `epsilon` or
/// `max_iters` iterations have run.
///
/// # Safety
/// `dataset` must be a live handle; `scheme` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lagc_run(
    dataset: *const LagcDataset,
    scheme: *const LagcScheme,
    epsilon: f64,
    max_iters: usize,
    seed: u64,
    out: *mut *mut LagcTrace,
) -> LagcStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let ds = &deref(dataset, "dataset")?.0;
        let s = deref(scheme, "scheme")?;
        let cfg = SchemeConfig {
            preset: preset(s.preset)?,
            workers: s.workers,
            group_size: s.group_size,
            redundancy: s.redundancy,
            wait_for: s.wait_for,
            xi: s.xi,
            history_depth: s.history_depth,
            step_size: s.step_size,
            timing: timing_model(&s.timing)?,
        };
        cfg.validate().or_status()?;
        let assignment = build_assignment(cfg.workers, cfg.group_size, cfg.redundancy).or_status()?;
        let trace = run_until(ds, &assignment, &cfg, StopRule { epsilon, max_iters }, seed).or_status()?;
        *out = Box::into_raw(Box::new(LagcTrace(trace)));
        Ok(())
    })
}

/// # Safety
/// `trace` must be null or a handle from `lagc_run` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lagc_trace_free(trace: *mut LagcTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of iterations in the trace; 0 for a null handle.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lagc_trace_len(trace: *const LagcTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.records.len())
}

/// Writes the gap at `θ⁰` and whether the run reached epsilon.
///
/// # Safety
/// `trace` must be a live handle; `initial_gap` and `reached` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lagc_trace_summary(trace: *const LagcTrace, initial_gap: *mut f64, reached: *mut bool) -> LagcStatus {
    guard(|| {
        let t = &deref(trace, "trace")?.0;
        *deref_mut(initial_gap, "initial_gap")? = t.initial_gap;
        *deref_mut(reached, "reached")? = t.reached_epsilon();
        Ok(())
    })
}

/// Record of iteration `index + 1`.
///
/// # Safety
/// `trace` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lagc_trace_record(trace: *const LagcTrace, index: usize, out: *mut LagcRecord) -> LagcStatus {
    guard(|| {
        let t = &deref(trace, "trace")?.0;
        let out = deref_mut(out, "out")?;
        let r = t.records.get(index).ok_or_else(|| {
            fail(
                LagcStatus::InvalidArgument,
                format!("index {index} out of range for {} records", t.records.len()),
            )
        })?;
        *out = LagcRecord {
            iteration: r.iteration,
            duration: r.duration,
            downloads: r.downloads,
            uploads: r.uploads,
            loss_gap: r.loss_gap,
            selected_groups: r.selected.len(),
        };
        Ok(())
    })
}

/// Iterations, communication, computation and gap reached by time `time`.
///
/// # Safety
/// `trace` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lagc_trace_functions(trace: *const LagcTrace, time: f64, out: *mut LagcSnapshot) -> LagcStatus {
    guard(|| {
        let t = &deref(trace, "trace")?.0;
        let s = t.trace_functions(time);
        *deref_mut(out, "out")? = LagcSnapshot {
            iterations: s.iterations,
            communication: s.communication,
            computation: s.computation,
            loss_gap: s.loss_gap,
        };
        Ok(())
    })
}

/// # Safety
/// `trace` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn lagc_trace_write_csv(trace: *const LagcTrace, path: *const c_char) -> LagcStatus {
    guard(|| {
        let t = &deref(trace, "trace")?.0;
        if path.is_null() {
            return Err(fail(LagcStatus::NullPointer, "path is null"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(LagcStatus::InvalidArgument, "path is not UTF-8"))?;
        t.write_csv(Path::new(path)).or_status()
    })
}

/// `E[T_{a:b}]` for load `r`.
///
/// # Safety
/// `timing` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lagc_expected_order_stat(timing: *const LagcTiming, a: usize, b: usize, r: usize, out: *mut f64) -> LagcStatus {
    guard(|| {
        let model = timing_model(deref(timing, "timing")?)?;
        *deref_mut(out, "out")? = model.expected_order_stat(a, b, r).or_status()?;
        Ok(())
    })
}

/// Expected maximum over `groups` groups of each group's `wait_for`-th
/// fastest of `group_size` workers with load `r`.
///
/// # Safety
/// `timing` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lagc_expected_group_time(
    timing: *const LagcTiming,
    r: usize,
    group_size: usize,
    wait_for: usize,
    groups: usize,
    out: *mut f64,
) -> LagcStatus {
    guard(|| {
        let model = timing_model(deref(timing, "timing")?)?;
        *deref_mut(out, "out")? = model.expected_max_group_time(r, group_size, wait_for, groups).or_status()?;
        Ok(())
    })
}
