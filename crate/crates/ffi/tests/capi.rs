use std::ffi::{CStr, CString};
use std::ptr;

use spread_hawkes_ffi::*;

const ROW1: [f64; 9] = [0.08, 0.1, 4.0, 26.0, 5.0, 11.0, 7.0, 50.0, 2.7];

fn last_error() -> String {
    let p = sh_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn proposed() -> *mut ShParams {
    let name = CString::new("proposed").unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { sh_params_new(name.as_ptr(), ROW1.as_ptr(), ROW1.len(), &mut p) }, ShStatus::Ok);
    p
}

#[test]
fn simulate_fit_and_diagnose_round_trip() {
    unsafe {
        let p = proposed();
        let mut s = ptr::null_mut();
        assert_eq!(sh_simulate(p, 0.0, 3000, 7, &mut s), ShStatus::Ok);
        let mut n = 0;
        assert_eq!(sh_stream_len(s, &mut n), ShStatus::Ok);
        assert_eq!(n, 3000);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("ev.csv").to_str().unwrap()).unwrap();
        assert_eq!(sh_stream_write(s, path.as_ptr()), ShStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(sh_stream_read(path.as_ptr(), &mut back), ShStatus::Ok);

        let (mut ll1, mut ll2) = (0.0, 0.0);
        assert_eq!(sh_log_likelihood(s, p, &mut ll1), ShStatus::Ok);
        assert_eq!(sh_log_likelihood(back, p, &mut ll2), ShStatus::Ok);
        assert!(ll1.is_finite());
        assert_eq!(ll1, ll2);

        let mut len = 0;
        assert_eq!(sh_residuals(s, p, ptr::null_mut(), 0, &mut len), ShStatus::BufferTooSmall);
        assert_eq!(len, 3000);
        let mut buf = vec![0.0; len];
        assert_eq!(sh_residuals(s, p, buf.as_mut_ptr(), buf.len(), &mut len), ShStatus::Ok);
        assert!(buf.iter().all(|r| *r > 0.0));
        let mut ks = 0.0;
        assert_eq!(sh_ks_statistic(s, p, &mut ks), ShStatus::Ok);
        assert!(ks < 1.63 / (len as f64).sqrt());

        let name = CString::new("proposed").unwrap();
        let mut rep = ptr::null_mut();
        assert_eq!(sh_fit(s, name.as_ptr(), 100.0, 2, 1, &mut rep), ShStatus::Ok);
        let mut fitted = ptr::null_mut();
        assert_eq!(sh_fit_report_params(rep, &mut fitted), ShStatus::Ok);
        let mut vals = [0.0; 9];
        assert_eq!(sh_params_values(fitted, vals.as_mut_ptr(), 9), ShStatus::Ok);
        assert!((vals[7] - 50.0).abs() < 10.0, "beta {}", vals[7]);
        let mut llf = 0.0;
        assert_eq!(sh_fit_report_log_likelihood(rep, &mut llf), ShStatus::Ok);
        assert!(llf >= ll1 - 1e-6);
        let mut json = ptr::null_mut();
        assert_eq!(sh_fit_report_json(rep, &mut json), ShStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        sh_string_free(json);
        let cjson = CString::new(text).unwrap();
        let mut reparsed = ptr::null_mut();
        assert_eq!(sh_params_from_json(cjson.as_ptr(), &mut reparsed), ShStatus::Ok);
        let mut again = [0.0; 9];
        assert_eq!(sh_params_values(reparsed, again.as_mut_ptr(), 9), ShStatus::Ok);
        assert_eq!(vals, again);

        sh_params_free(reparsed);
        sh_params_free(fitted);
        sh_fit_report_free(rep);
        sh_stream_free(back);
        sh_stream_free(s);
        sh_params_free(p);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut n = 0;
        assert_eq!(sh_stream_len(ptr::null(), &mut n), ShStatus::NullPointer);
        assert!(last_error().contains("stream"));

        let bad = CString::new("nope").unwrap();
        let mut p = ptr::null_mut();
        assert_eq!(sh_params_new(bad.as_ptr(), ROW1.as_ptr(), 9, &mut p), ShStatus::InvalidArgument);
        assert!(p.is_null());

        let name = CString::new("proposed").unwrap();
        let neg = [-1.0; 9];
        assert_eq!(sh_params_new(name.as_ptr(), neg.as_ptr(), 9, &mut p), ShStatus::InvalidArgument);
        assert_eq!(sh_params_new(name.as_ptr(), ROW1.as_ptr(), 3, &mut p), ShStatus::InvalidArgument);

        let missing = CString::new("/definitely/not/here.csv").unwrap();
        let mut s = ptr::null_mut();
        assert_eq!(sh_stream_read(missing.as_ptr(), &mut s), ShStatus::Io);
        assert!(last_error().contains("not/here"));

        let ok = proposed();
        assert!(sh_last_error().is_null());
        let mut small = [0.0; 2];
        assert_eq!(sh_params_values(ok, small.as_mut_ptr(), 2), ShStatus::BufferTooSmall);
        assert_eq!(sh_simulate(ok, 0.0, 0, 1, &mut s), ShStatus::InvalidArgument);
        sh_params_free(ok);
        sh_params_free(ptr::null_mut());
        sh_stream_free(ptr::null_mut());

        let v = CStr::from_ptr(sh_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = include_str!("../include/spread_hawkes.h");
    for f in [
        "sh_last_error",
        "sh_version",
        "sh_string_free",
        "sh_stream_read",
        "sh_stream_write",
        "sh_stream_len",
        "sh_stream_duration",
        "sh_stream_free",
        "sh_params_new",
        "sh_params_from_json",
        "sh_params_count",
        "sh_params_values",
        "sh_params_to_json",
        "sh_params_free",
        "sh_log_likelihood",
        "sh_simulate",
        "sh_fit",
        "sh_fit_report_params",
        "sh_fit_report_log_likelihood",
        "sh_fit_report_json",
        "sh_fit_report_free",
        "sh_residuals",
        "sh_ks_statistic",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("SH_STATUS_BUFFER_TOO_SMALL"));
    assert!(header.contains("typedef struct ShStream ShStream"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/spread_hawkes.h");
    for (cc, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) =
            std::process::Command::new(cc).args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, header]).output()
        else {
            eprintln!("{cc} not available, skipping");
            continue;
        };
        assert!(out.status.success(), "{cc}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
