//! C ABI over the zonecast library.
//!
//! Every function returns a [`ZcStatus`]; on failure the message is kept per
//! thread and read with [`zc_last_error`]. Handles are opaque and must be
//! released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use zonecast::evalkit::Protocol;
use zonecast::pipeline::{build_samples, evaluate, init_checkpoint, Checkpoint, EvalOptions, RunConfig, Split};
use zonecast::predictor::{single_modal_predict, Observation};
use zonecast::relnet::encode_scene;
use zonecast::sample::build_scene_sample;
use zonecast::scenegen::{generate_dataset, load_dataset, write_dataset, DatasetManifest, GeneratorConfig, Scenario};
use zonecast::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZcStatus {
    Ok = 0,
    NullArgument = 1,
    Config = 2,
    Io = 3,
    Format = 4,
    Range = 5,
    NonFinite = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// Trained or freshly initialized model with its optimizer state.
pub struct ZcModel {
    ck: Checkpoint,
}

/// Scenarios plus the manifest they were generated under.
pub struct ZcDataset {
    manifest: DatasetManifest,
    scenarios: Vec<Scenario>,
}

/// Held-out metrics at horizons 1, 2, 3 and 4 s. Fields that do not apply
/// are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZcMetrics {
    pub agents: usize,
    pub ade: [f64; 4],
    pub fde: [f64; 4],
    pub intention_accuracy: f64,
    pub intention_map: f64,
    pub penetration_rate: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> ZcStatus {
    match e {
        Error::Config(_) | Error::Shape(_) => ZcStatus::Config,
        Error::Io(_) => ZcStatus::Io,
        Error::Format { .. } => ZcStatus::Format,
        Error::Range(_) | Error::Degenerate(_) => ZcStatus::Range,
        Error::NonFinite { .. } => ZcStatus::NonFinite,
        _ => ZcStatus::Internal,
    }
}

struct Fail(ZcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ZcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ZcStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(&m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            ZcStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(ZcStatus::NullArgument, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ZcStatus::Config, format!("{what} is not UTF-8")))
}

/// Config text, or the defaults when `p` is null.
unsafe fn config(p: *const c_char) -> Result<RunConfig, Fail> {
    if p.is_null() {
        return Ok(RunConfig::default());
    }
    Ok(RunConfig::from_text(text(p, "config")?)?)
}

unsafe fn out_ptr<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn zc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns its full length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn zc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Fresh model from `key = value` config text (null for defaults).
///
/// # Safety
/// `config_text` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zc_model_init(config_text: *const c_char, out: *mut *mut ZcModel) -> ZcStatus {
    guard(|| {
        let cfg = config(config_text)?;
        out_ptr(out, ZcModel { ck: init_checkpoint(&cfg)? })
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zc_model_load(path: *const c_char, out: *mut *mut ZcModel) -> ZcStatus {
    guard(|| {
        let ck = Checkpoint::load(&PathBuf::from(text(path, "path")?))?;
        out_ptr(out, ZcModel { ck })
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn zc_model_save(model: *const ZcModel, path: *const c_char) -> ZcStatus {
    guard(|| {
        let m = get(model, "model")?;
        m.ck.save(&PathBuf::from(text(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn zc_model_free(model: *mut ZcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of scalar parameters and completed optimizer steps.
///
/// # Safety
/// `model` must be a live handle; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn zc_model_info(model: *const ZcModel, params: *mut usize, steps: *mut u64) -> ZcStatus {
    guard(|| {
        let m = get(model, "model")?;
        if let Some(p) = params.as_mut() {
            *p = m.ck.model.num_params();
        }
        if let Some(s) = steps.as_mut() {
            *s = m.ck.step();
        }
        Ok(())
    })
}

/// Generates `count` scenarios under `config_text` (null for defaults).
///
/// # Safety
/// `config_text` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zc_dataset_generate(
    count: usize,
    seed: u64,
    config_text: *const c_char,
    out: *mut *mut ZcDataset,
) -> ZcStatus {
    guard(|| {
        let cfg = config(config_text)?;
        let gen = GeneratorConfig {
            frames: cfg.tau + cfg.delta,
            ..GeneratorConfig::default()
        };
        let scenarios = generate_dataset(count, seed, &gen)?;
        out_ptr(
            out,
            ZcDataset {
                manifest: cfg.manifest(),
                scenarios,
            },
        )
    })
}

/// # Safety
/// `dir` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zc_dataset_load(dir: *const c_char, out: *mut *mut ZcDataset) -> ZcStatus {
    guard(|| {
        let (manifest, scenarios) = load_dataset(&PathBuf::from(text(dir, "dir")?))?;
        out_ptr(out, ZcDataset { manifest, scenarios })
    })
}

/// # Safety
/// `ds` must be a live handle; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn zc_dataset_save(ds: *const ZcDataset, dir: *const c_char) -> ZcStatus {
    guard(|| {
        let d = get(ds, "dataset")?;
        write_dataset(&PathBuf::from(text(dir, "dir")?), &d.manifest, &d.scenarios)?;
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn zc_dataset_len(ds: *const ZcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.scenarios.len())
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn zc_dataset_free(ds: *mut ZcDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains `epochs` more epochs on the training split, in place. `log_path`
/// may be null to discard the log.
///
/// # Safety
/// Handles must be live; `log_path` must be null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn zc_train(model: *mut ZcModel, ds: *const ZcDataset, epochs: usize, log_path: *const c_char) -> ZcStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let d = get(ds, "dataset")?;
        let cfg = m.ck.config;
        cfg.check_manifest(&d.manifest)?;
        let scenes = build_samples(&d.scenarios, &cfg, Split::Train)?;
        let mut sink: Box<dyn std::io::Write> = if log_path.is_null() {
            Box::new(std::io::sink())
        } else {
            let p = PathBuf::from(text(log_path, "log path")?);
            Box::new(std::fs::OpenOptions::new().create(true).append(true).open(p).map_err(Error::from)?)
        };
        let ck = m.ck.clone();
        m.ck = zonecast::pipeline::train::continue_training(ck, &scenes, epochs, &mut sink)?;
        Ok(())
    })
}

/// Single-modal prediction for target `target` of scenario `scenario`:
/// writes δ (x, y) pairs in the local raster frame to `xy` (capacity in
/// doubles) and the pair count to `len`.
///
/// # Safety
/// Handles must be live; `xy` must hold `capacity` doubles; `len` writable.
#[no_mangle]
pub unsafe extern "C" fn zc_predict(
    model: *const ZcModel,
    ds: *const ZcDataset,
    scenario: usize,
    target: usize,
    xy: *mut f64,
    capacity: usize,
    len: *mut usize,
) -> ZcStatus {
    guard(|| {
        let m = get(model, "model")?;
        let d = get(ds, "dataset")?;
        if len.is_null() {
            return Err(null("len"));
        }
        let cfg = m.ck.config;
        cfg.check_manifest(&d.manifest)?;
        let sc = d
            .scenarios
            .get(scenario)
            .ok_or_else(|| Fail(ZcStatus::Range, format!("scenario {scenario} of {}", d.scenarios.len())))?;
        let sample = build_scene_sample(sc, &cfg.model(), cfg.mode)?;
        let t = sample
            .targets
            .get(target)
            .ok_or_else(|| Fail(ZcStatus::Range, format!("target {target} of {}", sample.targets.len())))?;
        let enc = encode_scene(&m.ck.model, &sample.pooled)?;
        let obs = Observation::new(&m.ck.model, &enc, &t.past)?;
        let pts = single_modal_predict(&m.ck.model, &obs, &sample.map)?.points(&sample.spec);
        *len = pts.len();
        if xy.is_null() || capacity < 2 * pts.len() {
            return Err(Fail(ZcStatus::BufferTooSmall, format!("need {} doubles", 2 * pts.len())));
        }
        for (i, p) in pts.iter().enumerate() {
            *xy.add(2 * i) = p.x;
            *xy.add(2 * i + 1) = p.y;
        }
        Ok(())
    })
}

/// Evaluates on the held-out split. A null `model` evaluates the
/// constant-velocity baseline under the dataset's manifest. `samples == 0`
/// selects the single-modal protocol, otherwise min-over-`samples`.
///
/// # Safety
/// `ds` must be live, `model` live or null, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn zc_evaluate(
    model: *const ZcModel,
    ds: *const ZcDataset,
    samples: usize,
    seed: u64,
    out: *mut ZcMetrics,
) -> ZcStatus {
    guard(|| {
        let d = get(ds, "dataset")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = model.as_ref();
        let cfg = match m {
            Some(m) => m.ck.config,
            None => {
                let mf = &d.manifest;
                let mut c = RunConfig::default();
                c.tau = mf.tau;
                c.delta = mf.delta;
                c.h = mf.h;
                c.w = mf.w;
                c.res = mf.res;
                c.set("G", &mf.g.to_string())?;
                c
            }
        };
        cfg.check_manifest(&d.manifest)?;
        let scenes = build_samples(&d.scenarios, &cfg, Split::Test)?;
        let opts = EvalOptions {
            protocol: if samples == 0 { Protocol::Single } else { Protocol::Multi },
            samples: samples.max(1),
            strategy: cfg.strategy,
            seed,
        };
        let ev = evaluate(m.map(|m| &m.ck.model), &scenes, cfg.delta, &opts)?;
        let r = &ev.report;
        let mut metrics = ZcMetrics {
            agents: r.agents,
            ade: [f64::NAN; 4],
            fde: [f64::NAN; 4],
            intention_accuracy: r.intention_accuracy.unwrap_or(f64::NAN),
            intention_map: r.intention_map.unwrap_or(f64::NAN),
            penetration_rate: r.penetration_rate,
        };
        for (k, h) in r.horizons.iter().take(4).enumerate() {
            metrics.ade[k] = h.ade;
            metrics.fde[k] = h.fde;
        }
        *out = metrics;
        Ok(())
    })
}
