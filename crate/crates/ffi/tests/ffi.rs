use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use migrate_fuse_ffi::*;

fn last_error() -> String {
    let p = mf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn world() -> *mut MfHierarchy {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { mf_hierarchy_synthetic(2, 2, 2, 2, 1, &mut h) }, MfStatus::Ok);
    h
}

#[test]
fn matrix_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let h = world();
    assert_eq!(unsafe { mf_hierarchy_len(h) }, 16);
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { mf_matrix_synthetic_truth(h, 2015, 1e4, 0.9, 3, &mut m) }, MfStatus::Ok);
    assert_eq!(unsafe { mf_matrix_nnz(m) }, 256);
    assert!((unsafe { mf_matrix_total(m) } - 1e4).abs() < 1e-6);

    let path = CString::new(dir.path().join("m.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { mf_matrix_write(m, h, path.as_ptr()) }, MfStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { mf_matrix_read(path.as_ptr(), h, &mut back) }, MfStatus::Ok);
    for r in 0..16 {
        for c in 0..16 {
            let (mut a, mut b) = (0.0, 0.0);
            unsafe {
                mf_matrix_get(m, r, c, &mut a);
                mf_matrix_get(back, r, c, &mut b);
            }
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
    unsafe {
        mf_matrix_free(back);
        mf_matrix_free(m);
        mf_hierarchy_free(h);
    }
}

#[test]
fn errors_are_reported() {
    let mut m = ptr::null_mut();
    let rows = [0usize, 5];
    let cols = [0usize, 0];
    let vals = [1.0, 2.0];
    let s = unsafe { mf_matrix_from_triplets(2, 2015, rows.as_ptr(), cols.as_ptr(), vals.as_ptr(), 2, &mut m) };
    assert_eq!(s, MfStatus::InvalidInput);
    assert!(m.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { mf_matrix_get(ptr::null(), 0, 0, ptr::null_mut()) }, MfStatus::NullPointer);
    assert!(last_error().contains("null"));

    let missing = CString::new("/nonexistent/h.csv").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { mf_hierarchy_read(missing.as_ptr(), &mut h) }, MfStatus::InvalidInput);

    // success clears the message
    let h = world();
    assert!(mf_last_error().is_null());
    unsafe { mf_hierarchy_free(h) };
}

#[test]
fn ipf_hits_county_marginals() {
    let h = world();
    let mut m = ptr::null_mut();
    unsafe { mf_matrix_synthetic_truth(h, 2015, 1e4, 0.85, 4, &mut m) };
    let nc = unsafe { mf_hierarchy_county_count(h) };
    assert_eq!(nc, 4);
    let prev = [2600.0, 2400.0, 2500.0, 2500.0];
    let curr = [2450.0, 2550.0, 2700.0, 2300.0];
    let mut out = ptr::null_mut();
    let mut iters = 0usize;
    let s = unsafe { mf_ipf_county(m, h, prev.as_ptr(), curr.as_ptr(), nc, 1000, 1e-9, &mut out, &mut iters) };
    assert_eq!(s, MfStatus::Ok);
    assert!(iters > 0);
    let mut rows = vec![0.0; 16];
    unsafe { mf_matrix_row_sums(out, rows.as_mut_ptr(), 16) };
    // counties hold 4 consecutive block groups
    for k in 0..4 {
        let s: f64 = rows[4 * k..4 * k + 4].iter().sum();
        assert!((s - prev[k]).abs() < 1e-6 * prev[k], "{s} vs {}", prev[k]);
    }

    let bad = [1.0, 1.0, 1.0, 1.0];
    let mut out2 = ptr::null_mut();
    let s = unsafe { mf_ipf_county(m, h, prev.as_ptr(), bad.as_ptr(), nc, 10, 1e-9, &mut out2, ptr::null_mut()) };
    assert_eq!(s, MfStatus::Numerical);
    unsafe {
        mf_matrix_free(out);
        mf_matrix_free(m);
        mf_hierarchy_free(h);
    }
}

#[test]
fn population_path_of_constant_observations() {
    let b = [120.0; 11];
    let mut x = [0.0; 11];
    let mut res = -1.0;
    assert_eq!(unsafe { mf_population_path(b.as_ptr(), x.as_mut_ptr(), &mut res) }, MfStatus::Ok);
    for v in x {
        assert!((v - 120.0).abs() < 1e-9);
    }
    assert!(res.abs() < 1e-9);
}

#[test]
fn harmonize_to_reference_recovers_truth() {
    let h = world();
    let mut t = ptr::null_mut();
    let mut raw = ptr::null_mut();
    unsafe {
        mf_matrix_synthetic_truth(h, 2015, 1e4, 0.85, 4, &mut t);
        mf_matrix_synthetic_truth(h, 2015, 2e4, 0.6, 9, &mut raw);
    }
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { mf_harmonize_to_reference(raw, t, h, &mut e) }, MfStatus::Ok);
    assert!((unsafe { mf_matrix_total(e) } - 1e4).abs() < 1e-3);
    unsafe {
        mf_matrix_free(e);
        mf_matrix_free(raw);
        mf_matrix_free(t);
        mf_hierarchy_free(h);
    }
}

#[test]
fn run_command_through_the_c_interface() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"years":{"start":2015,"end":2015},"output_dir":"fx","seed":2,
        "synth":{"world":{"states":2,"counties_per_state":2,"tracts_per_county":2,"cbgs_per_tract":2}}}"#)
        .unwrap();
    let cmd = CString::new("gen-fixture").unwrap();
    let c = CString::new(cfg.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { mf_run_command(cmd.as_ptr(), c.as_ptr(), ptr::null(), 0) }, MfStatus::Ok);
    let fx = CString::new(dir.path().join("fx/config.json").to_str().unwrap()).unwrap();
    let h = CString::new("harmonize").unwrap();
    let set = CString::new("harmonize.max_iter=50").unwrap();
    let sets = [set.as_ptr()];
    assert_eq!(unsafe { mf_run_command(h.as_ptr(), fx.as_ptr(), sets.as_ptr(), 1) }, MfStatus::Ok);
    assert!(dir.path().join("fx/run/migrate/2015.csv").exists());
    let bogus = CString::new("frobnicate").unwrap();
    assert_eq!(unsafe { mf_run_command(bogus.as_ptr(), fx.as_ptr(), ptr::null(), 0) }, MfStatus::InvalidInput);
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let lib = target_dir().join("libmigrate_fuse_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "migrate_fuse.h"
int main(void) {
    MfHierarchy *h = NULL;
    MfMatrix *m = NULL;
    if (mf_hierarchy_synthetic(2, 2, 2, 2, 1, &h) != MF_STATUS_OK) return 1;
    if (mf_matrix_synthetic_truth(h, 2015, 1000.0, 0.9, 1, &m) != MF_STATUS_OK) return 2;
    double v = 0.0;
    if (mf_matrix_get(m, 99, 0, &v) != MF_STATUS_INVALID_INPUT) return 3;
    if (mf_last_error() == NULL) return 4;
    printf("%zu %.3f\n", mf_matrix_dim(m), mf_matrix_total(m));
    mf_matrix_free(m);
    mf_hierarchy_free(h);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("t");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "16 1000.000");
}
