use std::ffi::c_char;
use std::process::Command;
use std::ptr;

use dsm_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    let n = unsafe { dsm_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn dct_round_trip_through_handles() {
    let mut plan = ptr::null_mut();
    assert_eq!(unsafe { dsm_dct_plan_new(3, 5, &mut plan) }, DsmStatus::Ok);
    let x: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut y = vec![0.0; 15];
    let mut back = vec![0.0; 15];
    unsafe {
        assert_eq!(dsm_dct2(plan, x.as_ptr(), y.as_mut_ptr(), 15), DsmStatus::Ok);
        assert_eq!(dsm_idct2(plan, y.as_ptr(), back.as_mut_ptr(), 15), DsmStatus::Ok);
    }
    let energy = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    assert!((energy(&x) - energy(&y)).abs() < 1e-12);
    for (a, b) in x.iter().zip(&back) {
        assert!((a - b).abs() < 1e-12);
    }
    // in place
    let mut z = x.clone();
    unsafe {
        assert_eq!(dsm_dct2(plan, z.as_ptr(), z.as_mut_ptr(), 15), DsmStatus::Ok);
        dsm_dct_plan_free(plan);
    }
    assert_eq!(z, y);
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut plan = ptr::null_mut();
    assert_eq!(unsafe { dsm_dct_plan_new(0, 4, &mut plan) }, DsmStatus::InvalidArgument);
    assert!(plan.is_null());
    assert!(last_error().contains("positive"));

    assert_eq!(unsafe { dsm_dct_plan_new(2, 2, &mut plan) }, DsmStatus::Ok);
    let mut buf = [0.0; 4];
    assert_eq!(unsafe { dsm_dct2(plan, buf.as_ptr(), buf.as_mut_ptr(), 3) }, DsmStatus::Shape);
    assert_eq!(unsafe { dsm_dct2(plan, ptr::null(), buf.as_mut_ptr(), 4) }, DsmStatus::NullPointer);
    assert!(last_error().contains("input"));
    buf[1] = f64::NAN;
    assert_eq!(unsafe { dsm_dct2(plan, buf.as_ptr(), buf.as_mut_ptr(), 4) }, DsmStatus::NonFinite);
    buf[1] = 0.0;
    assert_eq!(unsafe { dsm_dct2(plan, buf.as_ptr(), buf.as_mut_ptr(), 4) }, DsmStatus::Ok);
    assert_eq!(unsafe { dsm_last_error_message(ptr::null_mut(), 0) }, 0);
    unsafe {
        dsm_dct_plan_free(plan);
        dsm_dct_plan_free(ptr::null_mut());
    }
}

#[test]
fn codes_match_the_library() {
    use dsm_core::DsmError;
    let cases = [
        (DsmError::InvalidArgument(String::new()), DsmStatus::InvalidArgument),
        (DsmError::Shape(String::new()), DsmStatus::Shape),
        (DsmError::Version { found: 2, expected: 1 }, DsmStatus::Version),
        (DsmError::Corruption, DsmStatus::Corruption),
    ];
    for (e, s) in cases {
        assert_eq!(e.code(), s as i32);
    }
}

#[test]
fn zigzag_starts_at_dc_and_walks_antidiagonals() {
    let mut idx = vec![0usize; 9];
    assert_eq!(unsafe { dsm_zigzag_indices(3, 3, idx.as_mut_ptr(), 9) }, DsmStatus::Ok);
    assert_eq!(idx[0], 0);
    let mut sorted = idx.clone();
    sorted.sort();
    assert_eq!(sorted, (0..9).collect::<Vec<_>>());
    let diag: Vec<usize> = idx.iter().map(|&i| i / 3 + i % 3).collect();
    assert!(diag.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(unsafe { dsm_zigzag_indices(3, 3, idx.as_mut_ptr(), 8) }, DsmStatus::Shape);
}

#[test]
fn mask_generator_is_deterministic_and_bounded() {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { dsm_mask_generator_new(6, 6, 8, 16, 1.0, 7, &mut g) }, DsmStatus::Ok);
    let spectrum: Vec<f64> = (0..36).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
    let mut mask = vec![0.0; 36];
    assert_eq!(unsafe { dsm_generate_mask(g, spectrum.as_ptr(), mask.as_mut_ptr(), 36) }, DsmStatus::Ok);
    assert!(mask.iter().all(|&m| m > 0.0 && m < 1.0));
    let mut again = vec![0.0; 36];
    unsafe {
        dsm_generate_mask(g, spectrum.as_ptr(), again.as_mut_ptr(), 36);
        dsm_mask_generator_free(g);
    }
    assert_eq!(mask, again);
    assert_eq!(
        unsafe { dsm_mask_generator_new(2, 2, 8, 16, 1.0, 7, &mut g) },
        DsmStatus::InvalidArgument
    );
    assert!(g.is_null());
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "dsm.h"

int main(void) {
    DsmDctPlan *plan = NULL;
    double x[4] = {1.0, 1.0, 1.0, 1.0}, y[4];
    if (dsm_dct_plan_new(2, 2, &plan) != DSM_STATUS_OK) return 1;
    if (dsm_dct2(plan, x, y, 4) != DSM_STATUS_OK) return 2;
    dsm_dct_plan_free(plan);
    if (fabs(y[0] - 2.0) > 1e-12 || fabs(y[3]) > 1e-12) return 3;
    if (dsm_dct_plan_new(0, 2, &plan) != DSM_STATUS_INVALID_ARGUMENT) return 4;
    char msg[128];
    if (dsm_last_error_message(msg, sizeof msg) == 0) return 5;
    printf("ok\n");
    return 0;
}
"#;

#[test]
fn header_compiles_and_links_from_c() {
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let include = manifest.join("include");
    assert!(include.join("dsm.h").exists(), "header is generated by the build script");
    // the test binary lives in <target>/<profile>/deps
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libdsm_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .status()
        .unwrap();
    assert!(status.success(), "C program failed to build against {}", lib.display());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "ok\n");
}
