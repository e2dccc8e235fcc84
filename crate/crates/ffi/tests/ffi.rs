use std::ffi::{CStr, CString};
use std::ptr;

use jsdlfi::simulators::SoftmaxDecay;
use jsdlfi::surrogate::{bolfi_run, BoConfig, GpConfig};
use jsdlfi::{MixingWeight, RngStream, SimulatorModel};
use jsdlfi_ffi::*;

fn last_error() -> String {
    let p = jsdlfi_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn model_lifecycle_and_simulation() {
    let json = CString::new(r#"{"model": "nfds_lite", "params": {}}"#).unwrap();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(jsdlfi_model_from_json(json.as_ptr(), &mut model), JsdlfiStatus::Ok);
        let (mut dim, mut k, mut epochs) = (0, 0, 0);
        assert_eq!(jsdlfi_model_shape(model, &mut dim, &mut k, &mut epochs), JsdlfiStatus::Ok);
        assert_eq!((dim, k, epochs), (3, 4, 2));

        let theta = [-5.3, -2.5, -5.3];
        let mut a = [0u64; 8];
        let mut b = [0u64; 8];
        assert_eq!(jsdlfi_simulate(model, theta.as_ptr(), 3, 250, 9, 1, a.as_mut_ptr(), 8), JsdlfiStatus::Ok);
        assert_eq!(jsdlfi_simulate(model, theta.as_ptr(), 3, 250, 9, 1, b.as_mut_ptr(), 8), JsdlfiStatus::Ok);
        assert_eq!(a, b);
        assert_eq!(a[..4].iter().sum::<u64>(), 250);
        assert_eq!(a[4..].iter().sum::<u64>(), 250);

        let mut small = [0u64; 4];
        assert_eq!(jsdlfi_simulate(model, theta.as_ptr(), 3, 250, 9, 1, small.as_mut_ptr(), 4), JsdlfiStatus::BufferTooSmall);
        let bad = [0.0, 0.0, 0.0];
        assert_eq!(jsdlfi_simulate(model, bad.as_ptr(), 3, 250, 9, 1, a.as_mut_ptr(), 8), JsdlfiStatus::InvalidArgument);
        assert!(last_error().contains("outside"));
        jsdlfi_model_free(model);
        jsdlfi_model_free(ptr::null_mut());
    }
}

#[test]
fn bad_inputs_report_codes() {
    let mut model = ptr::null_mut();
    let junk = CString::new("{not json").unwrap();
    unsafe {
        assert_eq!(jsdlfi_model_from_json(junk.as_ptr(), &mut model), JsdlfiStatus::Config);
        assert!(model.is_null());
        assert_eq!(jsdlfi_model_from_json(ptr::null(), &mut model), JsdlfiStatus::NullPointer);
        let mut out = 0.0;
        let p = [0.5, 0.6];
        assert_eq!(jsdlfi_jsd(p.as_ptr(), p.as_ptr(), 2, 0.5, &mut out), JsdlfiStatus::InvalidArgument);
        assert_eq!(jsdlfi_chi2_quantile(1.5, 4, &mut out), JsdlfiStatus::InvalidArgument);
        assert_eq!(jsdlfi_chi2_quantile(0.95, 4, ptr::null_mut()), JsdlfiStatus::NullPointer);
        assert_eq!(jsdlfi_model_shape(ptr::null(), &mut 0, &mut 0, &mut 0), JsdlfiStatus::NullPointer);
    }
}

#[test]
fn numeric_functions() {
    let mut out = 0.0;
    unsafe {
        let p = [1.0, 0.0];
        let q = [0.5, 0.5];
        assert_eq!(jsdlfi_jsd(p.as_ptr(), q.as_ptr(), 2, 0.5, &mut out), JsdlfiStatus::Ok);
        assert!((out - 0.215762).abs() < 1e-6);

        let h = [0.5, 0.5];
        assert_eq!(jsdlfi_exact_expected_jsd(h.as_ptr(), h.as_ptr(), 2, 1, 0.5, &mut out), JsdlfiStatus::Ok);
        assert!((out - 0.215762).abs() < 1e-6);

        assert_eq!(jsdlfi_test_statistic(0.0, 1000.0, 1000.0, 5, 0.5, &mut out), JsdlfiStatus::Ok);
        assert!((out + 4.0).abs() < 1e-12);

        assert_eq!(jsdlfi_chi2_quantile(0.95, 4, &mut out), JsdlfiStatus::Ok);
        assert!((out - 9.4877).abs() < 1e-3);
    }
}

#[test]
fn surrogate_round_trip() {
    let model = SoftmaxDecay::new(5).unwrap();
    let observed = model.simulate(&[0.2], 500, &mut RngStream::new(1, 0).rng()).unwrap();
    let bo = BoConfig { init_count: 10, budget: 30, ..Default::default() };
    let s = bolfi_run(&model, &observed, &bo, &GpConfig::default(), MixingWeight::HALF, RngStream::new(2, 0)).unwrap();
    let json = CString::new(s.to_json().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(jsdlfi_surrogate_from_json(json.as_ptr(), &mut handle), JsdlfiStatus::Ok);
        let theta = [0.2];
        let (mut m, mut v, mut e) = (0.0, 0.0, 0.0);
        assert_eq!(jsdlfi_surrogate_predict(handle, theta.as_ptr(), 1, &mut m, &mut v, &mut e), JsdlfiStatus::Ok);
        let (m0, v0) = s.predict(&theta);
        assert!((m - m0).abs() < 1e-9 && (v - v0).abs() < 1e-9);
        assert!((0.0..=std::f64::consts::LN_2).contains(&e));
        assert_eq!(
            jsdlfi_surrogate_predict(handle, theta.as_ptr(), 1, ptr::null_mut(), ptr::null_mut(), &mut e),
            JsdlfiStatus::Ok
        );
        let two = [0.1, 0.2];
        assert_eq!(
            jsdlfi_surrogate_predict(handle, two.as_ptr(), 2, &mut m, &mut v, &mut e),
            JsdlfiStatus::InvalidArgument
        );
        jsdlfi_surrogate_free(handle);
    }
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/jsdlfi.h")).unwrap();
    for name in [
        "typedef struct JsdlfiModel JsdlfiModel",
        "JSDLFI_STATUS_OK = 0",
        "jsdlfi_model_from_json",
        "jsdlfi_simulate",
        "jsdlfi_surrogate_predict",
        "jsdlfi_last_error_message",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
