use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use mvfuse::gaussians::{poe_fuse, DiagGaussian};
use mvfuse::genetics::{hwe_exact_test, score_test};
use mvfuse::mvvae::{MvvaeConfig, MvvaeModel};
use mvfuse_ffi::*;

fn last_error() -> String {
    let p = mvf_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn fusion_matches_library() {
    let means = [0.0, 1.0, 2.0, -1.0, 0.5, 0.25];
    let log_vars = [0.0, 0.3, -0.2, 1.0, -1.5, 0.0];
    let mut mu = [0.0; 2];
    let mut lv = [0.0; 2];
    let st = unsafe { mvf_poe_fuse(3, 2, means.as_ptr(), log_vars.as_ptr(), mu.as_mut_ptr(), lv.as_mut_ptr()) };
    assert_eq!(st, MvfStatus::Ok);
    assert!(mvf_last_error().is_null());

    let experts: Vec<DiagGaussian> = (0..3)
        .map(|e| DiagGaussian::new(means[2 * e..2 * e + 2].to_vec(), log_vars[2 * e..2 * e + 2].to_vec()).unwrap())
        .collect();
    let want = poe_fuse(&experts).unwrap();
    assert_eq!(mu.as_slice(), want.mean());
    assert_eq!(lv.as_slice(), want.log_var());
}

#[test]
fn two_unit_experts_fuse_to_their_average() {
    let (means, log_vars) = ([0.0, 2.0], [0.0, 0.0]);
    let (mut mu, mut lv) = (0.0, 0.0);
    let st = unsafe { mvf_poe_fuse(2, 1, means.as_ptr(), log_vars.as_ptr(), &mut mu, &mut lv) };
    assert_eq!(st, MvfStatus::Ok);
    assert_eq!(mu, 1.0);
    assert!((lv.exp() - 0.5).abs() < 1e-15);
}

#[test]
fn zero_experts_is_invalid_input() {
    let (mut mu, mut lv) = (0.0, 0.0);
    let st = unsafe { mvf_poe_fuse(0, 1, ptr::null(), ptr::null(), &mut mu, &mut lv) };
    assert_eq!(st, MvfStatus::InvalidInput);
    assert!(last_error().contains("at least one expert"));
}

#[test]
fn null_inputs_are_reported() {
    let mut out = 0.0;
    let st = unsafe { mvf_kl_standard_normal(2, ptr::null(), [0.0, 0.0].as_ptr(), &mut out) };
    assert_eq!(st, MvfStatus::NullPointer);
    assert!(last_error().contains("mean"));
    let st = unsafe { mvf_hwe_exact(1, 2, 3, ptr::null_mut()) };
    assert_eq!(st, MvfStatus::NullPointer);
}

#[test]
fn kl_of_unit_shift() {
    let mut out = f64::NAN;
    let st = unsafe { mvf_kl_standard_normal(1, [1.0].as_ptr(), [0.0].as_ptr(), &mut out) };
    assert_eq!(st, MvfStatus::Ok);
    assert_eq!(out, 0.5);
}

#[test]
fn hwe_and_score_test_match_library() {
    let mut p = 0.0;
    assert_eq!(unsafe { mvf_hwe_exact(10, 57, 33, &mut p) }, MvfStatus::Ok);
    assert_eq!(p, hwe_exact_test(10, 57, 33));

    let y = [0.5, -1.0, 0.25, 0.75, -0.5];
    let g = [1.0, -0.5, 0.0, 0.5, -1.0];
    let mut t = MvfScoreTest::default();
    assert_eq!(unsafe { mvf_score_test(5, y.as_ptr(), g.as_ptr(), &mut t) }, MvfStatus::Ok);
    let want = score_test(&y, &g).unwrap();
    assert_eq!((t.u, t.v, t.t_score, t.p_value), (want.u, want.v, want.t_score, want.p_value));
}

#[test]
fn degenerate_snp_is_a_data_error() {
    let y = [1.0, -1.0];
    let g = [0.0, 0.0];
    let mut t = MvfScoreTest::default();
    assert_eq!(unsafe { mvf_score_test(2, y.as_ptr(), g.as_ptr(), &mut t) }, MvfStatus::Data);
}

#[test]
fn metrics_worked_example() {
    let mut m = MvfMetrics::default();
    let st = unsafe { mvf_compute_metrics(2, [1.0, 2.0].as_ptr(), [2.0, 2.0].as_ptr(), &mut m) };
    assert_eq!(st, MvfStatus::Ok);
    assert_eq!((m.mae, m.mape, m.r2), (0.5, 0.5, -1.0));
    assert!((m.rmse - 0.5f64.sqrt()).abs() < 1e-15);

    let st = unsafe { mvf_compute_metrics(0, ptr::null(), ptr::null(), &mut m) };
    assert_eq!(st, MvfStatus::InvalidInput);
}

fn saved_model(dir: &Path) -> (MvvaeModel, CString) {
    let cfg = MvvaeConfig::uniform(vec!["a".into(), "b".into()], vec![3, 2], 4, 2, 5);
    let model = MvvaeModel::new(cfg, 11).unwrap();
    let path = dir.join("model.ckpt");
    model.save(&path).unwrap();
    (model, CString::new(path.to_str().unwrap()).unwrap())
}

#[test]
fn model_handle_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (model, path) = saved_model(dir.path());
    let mut handle: *mut MvfModel = ptr::null_mut();
    assert_eq!(unsafe { mvf_model_load(path.as_ptr(), &mut handle) }, MvfStatus::Ok);
    assert!(!handle.is_null());
    unsafe {
        assert_eq!(mvf_model_n_views(handle), 2);
        assert_eq!(mvf_model_latent_dim(handle), 4);
        assert_eq!(mvf_model_view_dim(handle, 0), 3);
        assert_eq!(mvf_model_view_dim(handle, 1), 2);
        assert_eq!(mvf_model_view_dim(handle, 2), 0);
    }

    let a = [0.1, 0.5, 0.9];
    let b = [0.3, 0.7];
    let mut z = [0.0; 4];
    let views = [a.as_ptr(), b.as_ptr()];
    let st = unsafe { mvf_model_extract_latent(handle, views.as_ptr(), 2, z.as_mut_ptr(), 4) };
    assert_eq!(st, MvfStatus::Ok);
    assert_eq!(z.to_vec(), model.extract_latent(&[Some(&a), Some(&b)]).unwrap());

    // second view missing
    let views = [a.as_ptr(), ptr::null()];
    let st = unsafe { mvf_model_extract_latent(handle, views.as_ptr(), 2, z.as_mut_ptr(), 4) };
    assert_eq!(st, MvfStatus::Ok);
    assert_eq!(z.to_vec(), model.extract_latent(&[Some(&a), None]).unwrap());

    let st = unsafe { mvf_model_extract_latent(handle, views.as_ptr(), 2, z.as_mut_ptr(), 3) };
    assert_eq!(st, MvfStatus::InvalidInput);
    assert!(last_error().contains("latent dimension"));

    let none = [ptr::null(), ptr::null()];
    let st = unsafe { mvf_model_extract_latent(handle, none.as_ptr(), 2, z.as_mut_ptr(), 4) };
    assert_ne!(st, MvfStatus::Ok);

    unsafe { mvf_model_free(handle) };
}

#[test]
fn missing_checkpoint_is_io_error_and_nulls_handle() {
    let path = CString::new("/nonexistent/model.ckpt").unwrap();
    let mut handle = ptr::NonNull::<MvfModel>::dangling().as_ptr();
    assert_eq!(unsafe { mvf_model_load(path.as_ptr(), &mut handle) }, MvfStatus::Io);
    assert!(handle.is_null());
    unsafe { mvf_model_free(handle) };
}

#[test]
fn null_handle_queries_are_zero() {
    unsafe {
        assert_eq!(mvf_model_n_views(ptr::null()), 0);
        assert_eq!(mvf_model_latent_dim(ptr::null()), 0);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(mvf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mvfuse.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["mvf_poe_fuse", "mvf_model_load", "mvf_model_extract_latent", "MVF_STATUS_OK"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler on PATH; header syntax check not run");
        return;
    };
    assert!(status.success());
}
