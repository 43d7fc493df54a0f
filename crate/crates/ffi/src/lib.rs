//! C interface to `hystereq`.
//!
//! Every function returns an [`HqStatus`]; on failure the message is kept per
//! thread and can be read with [`hq_last_error_message`]. Objects are opaque
//! handles created by the `*_preset`, `*_load` and `*_from_json` calls and
//! released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hystereq::config::{Experiment, RunConfig};
use hystereq::dataset::{Dataset, DatasetMeta};
use hystereq::eval::{resimulate_on, DiscoveredModel};
use hystereq::io::{load_model, model_from_json, model_to_json, save_model};
use hystereq::pipeline::{self, RunOutcome};
use hystereq::simulate::{simulate_system, BoucWenParams, IntegrateOptions};
use hystereq::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
    Other = 7,
}

/// Parameters of a Bouc-Wen oscillator, `stiffness_power` 1 or 3.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HqBoucWen {
    pub m: f64,
    pub c: f64,
    pub k: f64,
    pub alpha: f64,
    pub a: f64,
    pub beta: f64,
    pub gamma: f64,
    pub n: f64,
    pub stiffness_power: u8,
}

/// Run configuration handle.
pub struct HqConfig(RunConfig);

/// Discovered model handle.
pub struct HqModel(DiscoveredModel);

/// Result of a full run.
pub struct HqRun(RunOutcome);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn classify(e: &Error) -> HqStatus {
    if e.is_numerical() {
        return HqStatus::Numerical;
    }
    match e.root() {
        Error::Io { .. } => HqStatus::Io,
        Error::Config(_) | Error::Parse { .. } | Error::UnknownVersion(_) | Error::Json(_) | Error::Dataset(_) => HqStatus::Config,
        _ => HqStatus::Other,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (HqStatus, String)>) -> HqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HqStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            HqStatus::Panic
        }
    }
}

fn lib(e: Error) -> (HqStatus, String) {
    (classify(&e), e.to_string())
}

fn null(what: &str) -> (HqStatus, String) {
    (HqStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (HqStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (HqStatus::InvalidArgument, format!("`{what}` is not valid UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (HqStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (HqStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL, or 0
/// if the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hq_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be null or come from this library and not be freed already.
#[no_mangle]
pub unsafe extern "C" fn hq_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates the preset configuration `benchmark`, `complex` or `complex_full`.
///
/// # Safety
/// `name` must be a NUL-terminated string, `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hq_config_preset(name: *const c_char, out: *mut *mut HqConfig) -> HqStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let name = str_arg(name, "name")?;
        let exp = Experiment::parse(name).ok_or_else(|| (HqStatus::InvalidArgument, format!("unknown experiment `{name}`")))?;
        *out = Box::into_raw(Box::new(HqConfig(RunConfig::preset(exp))));
        Ok(())
    })
}

/// Parses a JSON configuration; absent fields keep the preset's values.
///
/// # Safety
/// `json` must be a NUL-terminated string, `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hq_config_from_json(json: *const c_char, out: *mut *mut HqConfig) -> HqStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg = RunConfig::from_json(str_arg(json, "json")?).map_err(lib)?;
        *out = Box::into_raw(Box::new(HqConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hq_config_set_seed(cfg: *mut HqConfig, seed: u64) -> HqStatus {
    guard(|| {
        out_ptr(cfg, "cfg")?.0.seed = seed;
        Ok(())
    })
}

/// Sets the measurement SNR in dB; a non-finite value means noise-free.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hq_config_set_noise(cfg: *mut HqConfig, snr_db: f64) -> HqStatus {
    guard(|| {
        let c = out_ptr(cfg, "cfg")?;
        let next = c.0.clone().with_noise(snr_db.is_finite().then_some(snr_db));
        next.validate().map_err(lib)?;
        c.0 = next;
        Ok(())
    })
}

/// Serializes a configuration; free the string with [`hq_string_free`].
///
/// # Safety
/// `cfg` must be a live handle, `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hq_config_to_json(cfg: *const HqConfig, out: *mut *mut c_char) -> HqStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let text = serde_json::to_string_pretty(&cfg.0).map_err(|e| lib(e.into()))?;
        *out = CString::new(text).map_err(|e| (HqStatus::Other, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hq_config_free(cfg: *mut HqConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Simulates a Bouc-Wen oscillator on the uniform grid `t` with forcing `u`,
/// writing `n` samples each of x, ẋ and z.
///
/// # Safety
/// All arrays must hold `n` elements; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hq_simulate(
    params: *const HqBoucWen,
    t: *const f64,
    u: *const f64,
    n: usize,
    x0: f64,
    xdot0: f64,
    z0: f64,
    x_out: *mut f64,
    xdot_out: *mut f64,
    z_out: *mut f64,
) -> HqStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        check_outputs(x_out, xdot_out, z_out)?;
        let p = BoucWenParams {
            m: p.m,
            c: p.c,
            k: p.k,
            alpha: p.alpha,
            a: p.a,
            beta: p.beta,
            gamma: p.gamma,
            n: p.n,
            stiffness_power: p.stiffness_power,
        };
        p.validate().map_err(lib)?;
        let ds = input_dataset(t, u, n)?;
        let out = simulate_system(&p, &ds.forcing(), [x0, xdot0, z0], IntegrateOptions::default()).map_err(lib)?;
        write_states(&out, x_out, xdot_out, z_out)
    })
}

unsafe fn input_dataset(t: *const f64, u: *const f64, n: usize) -> Result<Dataset, (HqStatus, String)> {
    if n < 2 {
        return Err((HqStatus::InvalidArgument, "at least two samples are required".into()));
    }
    let ds = Dataset {
        t: slice_arg(t, n, "t")?.to_vec(),
        u: slice_arg(u, n, "u")?.to_vec(),
        x: None,
        xdot: None,
        xddot: None,
        z: None,
        meta: DatasetMeta::default(),
    };
    hystereq::dataset::uniform_step(&ds.t).map_err(lib)?;
    Ok(ds)
}

fn check_outputs(x: *mut f64, xdot: *mut f64, z: *mut f64) -> Result<(), (HqStatus, String)> {
    for (p, what) in [(x, "x_out"), (xdot, "xdot_out"), (z, "z_out")] {
        if p.is_null() {
            return Err(null(what));
        }
    }
    Ok(())
}

unsafe fn write_states(ds: &Dataset, x: *mut f64, xdot: *mut f64, z: *mut f64) -> Result<(), (HqStatus, String)> {
    let n = ds.len();
    for (src, dst) in [(&ds.x, x), (&ds.xdot, xdot), (&ds.z, z)] {
        let src = src.as_ref().expect("simulated dataset has every state");
        ptr::copy_nonoverlapping(src.as_ptr(), dst, n);
    }
    Ok(())
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hq_model_load(path: *const c_char, out: *mut *mut HqModel) -> HqStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = load_model(&PathBuf::from(str_arg(path, "path")?)).map_err(lib)?;
        *out = Box::into_raw(Box::new(HqModel(m)));
        Ok(())
    })
}

/// Parses a model from its JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string, `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hq_model_from_json(json: *const c_char, out: *mut *mut HqModel) -> HqStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = model_from_json(str_arg(json, "json")?).map_err(lib)?;
        *out = Box::into_raw(Box::new(HqModel(m)));
        Ok(())
    })
}

/// Serializes a model; free the string with [`hq_string_free`].
///
/// # Safety
/// `model` must be a live handle, `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hq_model_to_json(model: *const HqModel, out: *mut *mut c_char) -> HqStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out = CString::new(model_to_json(&m.0)).map_err(|e| (HqStatus::Other, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hq_model_save(model: *const HqModel, path: *const c_char) -> HqStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        save_model(&PathBuf::from(str_arg(path, "path")?), &m.0).map_err(lib)
    })
}

/// Re-simulates a model on the grid `t` with forcing `u`.
///
/// # Safety
/// All arrays must hold `n` elements; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hq_model_predict(
    model: *const HqModel,
    t: *const f64,
    u: *const f64,
    n: usize,
    x0: f64,
    xdot0: f64,
    z0: f64,
    x_out: *mut f64,
    xdot_out: *mut f64,
    z_out: *mut f64,
) -> HqStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        check_outputs(x_out, xdot_out, z_out)?;
        let ds = input_dataset(t, u, n)?;
        let out = resimulate_on(&m.0, &ds, [x0, xdot0, z0], IntegrateOptions::default()).map_err(lib)?;
        write_states(&out, x_out, xdot_out, z_out)
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hq_model_free(model: *mut HqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs generation, learning, discovery, the baseline and evaluation.
///
/// # Safety
/// `cfg` must be a live handle, `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hq_run(cfg: *const HqConfig, out: *mut *mut HqRun) -> HqStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let outcome = pipeline::run(&cfg.0).map_err(lib)?;
        *out = Box::into_raw(Box::new(HqRun(outcome)));
        Ok(())
    })
}

/// Copies the discovered model out of a run.
///
/// # Safety
/// `run` must be a live handle, `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hq_run_model(run: *const HqRun, out: *mut *mut HqModel) -> HqStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        *out = Box::into_raw(Box::new(HqModel(r.0.discovery.model.clone())));
        Ok(())
    })
}

/// Writes the run's report files into `dir`.
///
/// # Safety
/// `run` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hq_run_write(run: *const HqRun, dir: *const c_char) -> HqStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        std::fs::create_dir_all(&dir).map_err(|e| lib(Error::io(&dir, e)))?;
        hystereq::report::write_run(&dir, &r.0).map(drop).map_err(lib)
    })
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hq_run_free(run: *mut HqRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
