use std::ffi::{CStr, CString};
use std::ptr;

use probdr_ffi::*;

fn matrix(rows: usize, cols: usize, data: &[f64]) -> *mut ProbdrMatrix {
    let mut out = ptr::null_mut();
    let status = unsafe { probdr_matrix_new(rows, cols, data.as_ptr(), &mut out) };
    assert_eq!(status, ProbdrStatus::Ok);
    out
}

fn values(m: *const ProbdrMatrix) -> Vec<f64> {
    let len = unsafe { probdr_matrix_rows(m) * probdr_matrix_cols(m) };
    let mut buf = vec![0.0; len];
    assert_eq!(unsafe { probdr_matrix_copy_to(m, buf.as_mut_ptr(), len) }, ProbdrStatus::Ok);
    buf
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(probdr_last_error_message()) }.to_string_lossy().into_owned()
}

fn random(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = probdr::SeededRng::new(seed);
    (0..rows * cols).map(|_| rng.normal()).collect()
}

#[test]
fn matrix_round_trip_is_row_major() {
    let data = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let m = matrix(2, 3, &data);
    unsafe {
        assert_eq!(probdr_matrix_rows(m), 2);
        assert_eq!(probdr_matrix_cols(m), 3);
    }
    assert_eq!(values(m), data);
    let mut small = [0.0; 2];
    assert_eq!(unsafe { probdr_matrix_copy_to(m, small.as_mut_ptr(), 2) }, ProbdrStatus::ConfigError);
    assert!(last_error().contains("need 6"));
    unsafe { probdr_matrix_free(m) };
    unsafe { probdr_matrix_free(ptr::null_mut()) };
}

#[test]
fn null_arguments_are_reported() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { probdr_matrix_new(2, 2, ptr::null(), &mut out) }, ProbdrStatus::NullPointer);
    assert!(last_error().contains("data is null"));
    let mut residual = 0.0;
    assert_eq!(unsafe { probdr_procrustes(ptr::null(), ptr::null(), 1, &mut residual) }, ProbdrStatus::NullPointer);
    assert_eq!(unsafe { probdr_matrix_rows(ptr::null()) }, 0);
}

#[test]
fn embed_pca_matches_cmds_and_reports_noise() {
    let data = random(20, 5, 1);
    let y = matrix(20, 5, &data);
    let embed = |algo: &str| {
        let algo = CString::new(algo).unwrap();
        let mut out = ptr::null_mut();
        let mut noise = 0.0;
        let status = unsafe { probdr_embed_json(y, algo.as_ptr(), 2, 0, ptr::null(), &mut out, &mut noise) };
        assert_eq!(status, ProbdrStatus::Ok, "{}", last_error());
        (out, noise)
    };
    let (pca, noise) = embed(r#"{"name":"pca"}"#);
    let (cmds, _) = embed(r#"{"name":"cmds"}"#);
    assert!(noise > 0.0);
    let mut residual = 1.0;
    assert_eq!(unsafe { probdr_procrustes(pca, cmds, 1, &mut residual) }, ProbdrStatus::Ok);
    assert!(residual < 1e-6);
    assert_eq!(last_error(), "");
    unsafe {
        probdr_matrix_free(pca);
        probdr_matrix_free(cmds);
        probdr_matrix_free(y);
    }
}

#[test]
fn iterative_embedding_has_nan_noise_and_honours_optimizer_json() {
    let y = matrix(15, 3, &random(15, 3, 2));
    let algo = CString::new(r#"{"name":"umap","n_neighbors":4}"#).unwrap();
    let opt = CString::new(r#"{"max_iters":20}"#).unwrap();
    let mut out = ptr::null_mut();
    let mut noise = 0.0;
    let status = unsafe { probdr_embed_json(y, algo.as_ptr(), 2, 3, opt.as_ptr(), &mut out, &mut noise) };
    assert_eq!(status, ProbdrStatus::Ok, "{}", last_error());
    assert!(noise.is_nan());
    assert_eq!(unsafe { probdr_matrix_rows(out) }, 15);
    unsafe {
        probdr_matrix_free(out);
        probdr_matrix_free(y);
    }
}

#[test]
fn errors_map_to_status_classes() {
    let y = matrix(6, 2, &random(6, 2, 3));
    let mut out = ptr::null_mut();
    let bad = CString::new(r#"{"name":"pca","bogus":1}"#).unwrap();
    assert_eq!(unsafe { probdr_embed_json(y, bad.as_ptr(), 2, 0, ptr::null(), &mut out, ptr::null_mut()) }, ProbdrStatus::ConfigError);
    assert!(last_error().contains("bogus"));
    let nan = matrix(3, 1, &[1.0, f64::NAN, 2.0]);
    let pca = CString::new(r#"{"name":"pca"}"#).unwrap();
    assert_eq!(unsafe { probdr_embed_json(nan, pca.as_ptr(), 1, 0, ptr::null(), &mut out, ptr::null_mut()) }, ProbdrStatus::DataError);
    let blobs = matrix(6, 2, &[0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 10.0, 10.0, 10.1, 10.0, 10.0, 10.1]);
    let iso = CString::new(r#"{"name":"isomap","k":2}"#).unwrap();
    assert_eq!(unsafe { probdr_embed_json(blobs, iso.as_ptr(), 1, 0, ptr::null(), &mut out, ptr::null_mut()) }, ProbdrStatus::NumericalError);
    assert!(last_error().contains("disconnected"));
    assert!(out.is_null());
    unsafe {
        probdr_matrix_free(y);
        probdr_matrix_free(nan);
        probdr_matrix_free(blobs);
    }
}

#[test]
fn graph_covariance_inverts_the_shifted_laplacian() {
    let a = matrix(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    let mut c = ptr::null_mut();
    let status = unsafe {
        probdr_graph_covariance(a, ProbdrLaplacian::Ordinary, ProbdrSmoothness::MaternOne, 0.5, 0.0, &mut c)
    };
    assert_eq!(status, ProbdrStatus::Ok, "{}", last_error());
    let c = nalgebra::DMatrix::from_row_slice(3, 3, &values(c));
    let shifted = nalgebra::DMatrix::from_row_slice(3, 3, &[1.5, -1.0, 0.0, -1.0, 2.5, -1.0, 0.0, -1.0, 1.5]);
    assert!((c * shifted - nalgebra::DMatrix::identity(3, 3)).norm() < 1e-12);
    let mut heat = ptr::null_mut();
    let status = unsafe {
        probdr_graph_covariance(a, ProbdrLaplacian::Normalized, ProbdrSmoothness::MaternInf, 1.0, 0.0, &mut heat)
    };
    assert_eq!(status, ProbdrStatus::Ok);
    let h = values(heat);
    assert!((h[0] - 1.0).abs() < 1e-12 && h[1].abs() < 1e-12);
    unsafe {
        probdr_matrix_free(a);
        probdr_matrix_free(heat);
    }
}

#[test]
fn predict_returns_means_and_variances() {
    let train = matrix(25, 3, &random(25, 3, 4));
    let test = matrix(8, 3, &random(8, 3, 5));
    let settings = CString::new(r#"{"n_neighbors":5,"optimizer":{"max_iters":30}}"#).unwrap();
    let (mut mean, mut var) = (ptr::null_mut(), ptr::null_mut());
    let status = unsafe { probdr_predict(train, test, settings.as_ptr(), 1, &mut mean, &mut var) };
    assert_eq!(status, ProbdrStatus::Ok, "{}", last_error());
    unsafe {
        assert_eq!((probdr_matrix_rows(mean), probdr_matrix_cols(mean)), (8, 3));
        assert_eq!((probdr_matrix_rows(var), probdr_matrix_cols(var)), (8, 1));
    }
    assert!(values(var).iter().all(|v| *v > 0.0));
    unsafe {
        for m in [train, test, mean, var] {
            probdr_matrix_free(m);
        }
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(probdr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile_dir();
    let source = dir.join("use_header.c");
    std::fs::write(
        &source,
        r#"#include "probdr.h"
int use_api(void) {
    double data[4] = {1, 2, 3, 4};
    ProbdrMatrix *m = 0;
    ProbdrStatus s = probdr_matrix_new(2, 2, data, &m);
    probdr_matrix_free(m);
    return s == PROBDR_STATUS_OK ? 0 : (int)probdr_matrix_rows(m);
}
"#,
    )
    .unwrap();
    let compiler = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match std::process::Command::new(&compiler)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&header)
        .arg(&source)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(e) => eprintln!("skipping: no C compiler ({compiler}): {e}"),
    }
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("probdr-ffi-header");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn c_program_links_and_runs() {
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libprobdr_ffi.a");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let dir = tempfile_dir();
    let source = dir.join("main.c");
    std::fs::write(
        &source,
        r#"#include <math.h>
#include <stdio.h>
#include <string.h>
#include "probdr.h"

int main(void) {
    double data[12] = {0, 1, 2, 1, 3, 5, 2, 2, 2, 4, 0, 1};
    ProbdrMatrix *y = 0, *x = 0;
    if (probdr_matrix_new(4, 3, data, &y) != PROBDR_STATUS_OK) return 1;
    double noise = 0;
    if (probdr_embed_json(y, "{\"name\":\"pca\"}", 1, 0, NULL, &x, &noise) != PROBDR_STATUS_OK) {
        fprintf(stderr, "%s\n", probdr_last_error_message());
        return 2;
    }
    double out[4];
    if (probdr_matrix_copy_to(x, out, 4) != PROBDR_STATUS_OK) return 3;
    if (probdr_embed_json(y, "{\"name\":\"nope\"}", 1, 0, NULL, &x, NULL) != PROBDR_STATUS_CONFIG_ERROR) return 4;
    if (strlen(probdr_last_error_message()) == 0) return 5;
    printf("%zu %.6f\n", probdr_matrix_rows(x), noise);
    probdr_matrix_free(x);
    probdr_matrix_free(y);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.join("main");
    let compiler = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let build = match std::process::Command::new(&compiler)
        .arg("-I")
        .arg(std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include"))
        .arg(&source)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .output()
    {
        Ok(out) => out,
        Err(e) => {
            eprintln!("skipping: no C compiler ({compiler}): {e}");
            return;
        }
    };
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));
    let run = std::process::Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stderr));
    let text = String::from_utf8_lossy(&run.stdout);
    assert!(text.starts_with("4 "), "{text}");
}
