use std::ffi::{c_char, CStr, CString};
use std::ptr;

use hystereq_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { hq_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned();
    assert_eq!(n.min(511), s.len());
    s
}

const BENCHMARK: HqBoucWen = HqBoucWen {
    m: 2.0,
    c: 10.0,
    k: 5e4,
    alpha: 1.0,
    a: 5e4,
    beta: 800.0,
    gamma: -1100.0,
    n: 1.0,
    stiffness_power: 1,
};

const BENCHMARK_MODEL: &str = r#"{
  "version": 1,
  "motion": {"kind": "physical", "m": 2.0, "c": 10.0, "k": 50000.0, "alpha": 1.0, "stiffness_power": 1},
  "link": "(- (- (* 50000.0 xdot) (* 800.0 (* (abs xdot) z))) (* -1100.0 (* xdot (abs z))))"
}"#;

fn forcing(n: usize) -> (Vec<f64>, Vec<f64>) {
    let dt = 1.0 / 3000.0;
    let t: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
    let u = t.iter().map(|t| 20.0 * (2.0 * std::f64::consts::PI * 15.0 * t).sin()).collect();
    (t, u)
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(hq_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn model_prediction_matches_simulation() {
    let n = 600;
    let (t, u) = forcing(n);
    let (mut x, mut v, mut z) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let s = unsafe { hq_simulate(&BENCHMARK, t.as_ptr(), u.as_ptr(), n, 0.0, 0.0, 0.0, x.as_mut_ptr(), v.as_mut_ptr(), z.as_mut_ptr()) };
    assert_eq!(s, HqStatus::Ok, "{}", last_error());
    assert!(x.iter().any(|&xi| xi != 0.0));

    let json = CString::new(BENCHMARK_MODEL).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { hq_model_from_json(json.as_ptr(), &mut model) }, HqStatus::Ok);
    let (mut xp, mut vp, mut zp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let s = unsafe { hq_model_predict(model, t.as_ptr(), u.as_ptr(), n, 0.0, 0.0, 0.0, xp.as_mut_ptr(), vp.as_mut_ptr(), zp.as_mut_ptr()) };
    assert_eq!(s, HqStatus::Ok, "{}", last_error());
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in x.iter().zip(&xp) {
        assert!((a - b).abs() <= 1e-9 * scale);
    }

    let mut text = ptr::null_mut();
    assert_eq!(unsafe { hq_model_to_json(model, &mut text) }, HqStatus::Ok);
    let mut again = ptr::null_mut();
    assert_eq!(unsafe { hq_model_from_json(text, &mut again) }, HqStatus::Ok);
    unsafe {
        hq_string_free(text);
        hq_model_free(again);
        hq_model_free(model);
    }
}

#[test]
fn model_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    let json = CString::new(BENCHMARK_MODEL).unwrap();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(hq_model_from_json(json.as_ptr(), &mut model), HqStatus::Ok);
        assert_eq!(hq_model_save(model, path.as_ptr()), HqStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(hq_model_load(path.as_ptr(), &mut loaded), HqStatus::Ok);
        hq_model_free(loaded);
        hq_model_free(model);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut model = ptr::null_mut();
    let bad = CString::new(BENCHMARK_MODEL.replace("\"version\": 1", "\"version\": 7")).unwrap();
    assert_eq!(unsafe { hq_model_from_json(bad.as_ptr(), &mut model) }, HqStatus::Config);
    assert!(model.is_null());
    assert!(last_error().contains('7'), "{}", last_error());

    let missing = CString::new("/nonexistent/dir/model.json").unwrap();
    assert_eq!(unsafe { hq_model_load(missing.as_ptr(), &mut model) }, HqStatus::Io);

    assert_eq!(unsafe { hq_model_from_json(ptr::null(), &mut model) }, HqStatus::NullPointer);
    assert!(last_error().contains("json"));

    let mut cfg = ptr::null_mut();
    let name = CString::new("no_such_experiment").unwrap();
    assert_eq!(unsafe { hq_config_preset(name.as_ptr(), &mut cfg) }, HqStatus::InvalidArgument);

    // a successful call clears the message
    let name = CString::new("benchmark").unwrap();
    assert_eq!(unsafe { hq_config_preset(name.as_ptr(), &mut cfg) }, HqStatus::Ok);
    assert_eq!(unsafe { hq_last_error_message(ptr::null_mut(), 0) }, 0);
    unsafe { hq_config_free(cfg) };
}

#[test]
fn divergence_is_numerical() {
    let json = CString::new(
        r#"{"version": 1, "motion": {"kind": "physical", "m": 1.0, "c": 0.0, "k": 1.0, "alpha": 1.0, "stiffness_power": 1}, "link": "(* 1000.0 z)"}"#,
    )
    .unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { hq_model_from_json(json.as_ptr(), &mut model) }, HqStatus::Ok);
    let n = 3000;
    let (t, u) = forcing(n);
    let mut out = vec![0.0; 3 * n];
    let (x, rest) = out.split_at_mut(n);
    let (v, z) = rest.split_at_mut(n);
    let s = unsafe { hq_model_predict(model, t.as_ptr(), u.as_ptr(), n, 0.0, 0.0, 1.0, x.as_mut_ptr(), v.as_mut_ptr(), z.as_mut_ptr()) };
    assert_eq!(s, HqStatus::Numerical);
    assert!(last_error().contains("diverged"));
    unsafe { hq_model_free(model) };
}

#[test]
fn invalid_inputs_are_rejected() {
    let (t, u) = forcing(10);
    let mut buf = vec![0.0; 10];
    let p = buf.as_mut_ptr();
    let mut bad = BENCHMARK;
    bad.m = -1.0;
    assert_eq!(unsafe { hq_simulate(&bad, t.as_ptr(), u.as_ptr(), 10, 0.0, 0.0, 0.0, p, p, p) }, HqStatus::Config);
    assert_eq!(unsafe { hq_simulate(&BENCHMARK, t.as_ptr(), u.as_ptr(), 1, 0.0, 0.0, 0.0, p, p, p) }, HqStatus::InvalidArgument);
    assert_eq!(unsafe { hq_simulate(&BENCHMARK, t.as_ptr(), u.as_ptr(), 10, 0.0, 0.0, 0.0, p, ptr::null_mut(), p) }, HqStatus::NullPointer);
}

#[test]
fn config_json_and_setters() {
    let mut cfg = ptr::null_mut();
    let json = CString::new(r#"{"experiment": "complex", "seed": 9}"#).unwrap();
    unsafe {
        assert_eq!(hq_config_from_json(json.as_ptr(), &mut cfg), HqStatus::Ok);
        assert_eq!(hq_config_set_seed(cfg, 11), HqStatus::Ok);
        assert_eq!(hq_config_set_noise(cfg, 20.0), HqStatus::Ok);
        let mut text = ptr::null_mut();
        assert_eq!(hq_config_to_json(cfg, &mut text), HqStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(text).to_str().unwrap()).unwrap();
        assert_eq!(v["seed"], 11);
        assert_eq!(v["noise_snr_db"], 20.0);
        hq_string_free(text);
        assert_eq!(hq_config_set_noise(cfg, f64::INFINITY), HqStatus::Ok);
        let mut text = ptr::null_mut();
        assert_eq!(hq_config_to_json(cfg, &mut text), HqStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(text).to_str().unwrap()).unwrap();
        assert!(v["noise_snr_db"].is_null());
        hq_string_free(text);
        hq_config_free(cfg);
    }
}
