use std::ffi::{CStr, CString};
use std::ptr;

use lagc_ffi::*;

fn exponential(eta: f64) -> LagcTiming {
    LagcTiming {
        law: LagcLaw::Exponential as u32,
        eta,
        shape: 0.0,
    }
}

fn last_error() -> String {
    let p = lagc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn geometric_dataset() -> *mut LagcDataset {
    let mut ds = ptr::null_mut();
    let status = unsafe { lagc_dataset_generate(5, 12, 4, ptr::null(), 1, &mut ds) };
    assert_eq!(status, LagcStatus::Ok);
    assert!(!ds.is_null());
    ds
}

#[test]
fn gd_run_round_trip() {
    let ds = geometric_dataset();
    let mut info = LagcDatasetInfo::default();
    assert_eq!(unsafe { lagc_dataset_info(ds, &mut info) }, LagcStatus::Ok);
    assert_eq!((info.dimension, info.partitions), (5, 4));
    assert!(info.smoothness >= info.pl_constant && info.pl_constant > 0.0);

    let scheme = LagcScheme {
        preset: LagcPreset::Gd as u32,
        workers: 4,
        group_size: 1,
        redundancy: 1,
        wait_for: 1,
        xi: 0.0,
        history_depth: 1,
        step_size: 0.5 / info.smoothness,
        timing: exponential(0.05),
    };
    let mut trace = ptr::null_mut();
    assert_eq!(unsafe { lagc_run(ds, &scheme, 1e-6, 100_000, 3, &mut trace) }, LagcStatus::Ok);
    let n = unsafe { lagc_trace_len(trace) };
    assert!(n > 0);

    let (mut gap0, mut reached) = (0.0, false);
    assert_eq!(unsafe { lagc_trace_summary(trace, &mut gap0, &mut reached) }, LagcStatus::Ok);
    assert!(reached && gap0 > 1e-6);

    let mut rec = LagcRecord::default();
    assert_eq!(unsafe { lagc_trace_record(trace, n - 1, &mut rec) }, LagcStatus::Ok);
    assert_eq!((rec.iteration, rec.downloads, rec.uploads, rec.selected_groups), (n, 4, 4, 4));
    assert!(rec.loss_gap <= 1e-6);
    assert_eq!(unsafe { lagc_trace_record(trace, n, &mut rec) }, LagcStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));

    let mut snap = LagcSnapshot::default();
    assert_eq!(unsafe { lagc_trace_functions(trace, f64::INFINITY, &mut snap) }, LagcStatus::Ok);
    assert_eq!((snap.iterations, snap.communication), (n, 8 * n));
    assert!((snap.computation - n as f64).abs() < 1e-9);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { lagc_trace_write_csv(trace, path.as_ptr()) }, LagcStatus::Ok);
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(text.lines().count(), n + 2);

    unsafe {
        lagc_trace_free(trace);
        lagc_dataset_free(ds);
    }
}

#[test]
fn invalid_scheme_reports_config_error() {
    let ds = geometric_dataset();
    let scheme = LagcScheme {
        preset: LagcPreset::Gc as u32,
        workers: 4,
        group_size: 4,
        redundancy: 2,
        wait_for: 2,
        xi: 0.0,
        history_depth: 1,
        step_size: 1e-3,
        timing: exponential(0.05),
    };
    let mut trace = ptr::null_mut();
    assert_eq!(unsafe { lagc_run(ds, &scheme, 1e-6, 10, 0, &mut trace) }, LagcStatus::Config);
    assert!(trace.is_null());
    assert!(last_error().contains("F < M_G - r_G + 1"));

    let bad = LagcScheme { preset: 99, ..scheme };
    assert_eq!(unsafe { lagc_run(ds, &bad, 1e-6, 10, 0, &mut trace) }, LagcStatus::InvalidArgument);
    unsafe { lagc_dataset_free(ds) };
}

#[test]
fn divergence_status() {
    let ds = geometric_dataset();
    let mut info = LagcDatasetInfo::default();
    unsafe { lagc_dataset_info(ds, &mut info) };
    let scheme = LagcScheme {
        preset: LagcPreset::Gd as u32,
        workers: 4,
        group_size: 1,
        redundancy: 1,
        wait_for: 1,
        xi: 0.0,
        history_depth: 1,
        step_size: 3.0 / info.smoothness,
        timing: exponential(0.05),
    };
    let mut trace = ptr::null_mut();
    assert_eq!(
        unsafe { lagc_run(ds, &scheme, 1e-8, 100_000, 0, &mut trace) },
        LagcStatus::Divergence
    );
    unsafe { lagc_dataset_free(ds) };
}

#[test]
fn null_pointers_are_rejected() {
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { lagc_dataset_info(ptr::null(), ptr::null_mut()) }, LagcStatus::NullPointer);
    assert_eq!(
        unsafe { lagc_dataset_generate(2, 2, 1, ptr::null(), 0, ptr::null_mut()) },
        LagcStatus::NullPointer
    );
    assert_eq!(
        unsafe { lagc_dataset_generate(0, 2, 1, ptr::null(), 0, &mut ds) },
        LagcStatus::Config
    );
    assert!(ds.is_null());
    assert_eq!(unsafe { lagc_trace_len(ptr::null()) }, 0);
    unsafe {
        lagc_trace_free(ptr::null_mut());
        lagc_dataset_free(ptr::null_mut());
    }
}

#[test]
fn explicit_smoothness() {
    let targets = [1.0, 4.0, 9.0];
    let mut ds = ptr::null_mut();
    assert_eq!(
        unsafe { lagc_dataset_generate(3, 6, 3, targets.as_ptr(), 2, &mut ds) },
        LagcStatus::Ok
    );
    let mut info = LagcDatasetInfo::default();
    unsafe { lagc_dataset_info(ds, &mut info) };
    assert_eq!(info.partitions, 3);
    assert!(info.smoothness <= 14.0 * (1.0 + 1e-9) && info.smoothness >= 9.0 * (1.0 - 1e-9));
    unsafe { lagc_dataset_free(ds) };
}

#[test]
fn order_statistics() {
    let t = exponential(1.0);
    let mut v = 0.0;
    assert_eq!(unsafe { lagc_expected_order_stat(&t, 2, 3, 2, &mut v) }, LagcStatus::Ok);
    assert!((v - 2.0 * (1.0 + 0.5 + 1.0 / 3.0 - 1.0)).abs() < 1e-12);
    assert_eq!(unsafe { lagc_expected_order_stat(&t, 4, 3, 1, &mut v) }, LagcStatus::Config);

    let mut g = 0.0;
    assert_eq!(unsafe { lagc_expected_group_time(&t, 1, 1, 1, 3, &mut g) }, LagcStatus::Ok);
    assert!((g - (1.0 + 0.5 + 1.0 / 3.0)).abs() < 1e-6);

    let heavy = LagcTiming {
        law: LagcLaw::Pareto as u32,
        eta: 1.0,
        shape: 0.9,
    };
    assert_eq!(unsafe { lagc_expected_order_stat(&heavy, 1, 1, 1, &mut v) }, LagcStatus::Config);
    let unknown = LagcTiming { law: 7, ..t };
    assert_eq!(
        unsafe { lagc_expected_order_stat(&unknown, 1, 1, 1, &mut v) },
        LagcStatus::InvalidArgument
    );
}

#[test]
fn header_is_generated() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/lagc.h")).unwrap();
    for name in [
        "lagc_run",
        "lagc_trace_free",
        "LAGC_STATUS_DIVERGENCE",
        "typedef struct LagcTrace LagcTrace",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
