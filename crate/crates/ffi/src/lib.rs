//! C ABI over `dfalign`.
//!
//! Handles are opaque and owned by the caller until passed to the matching
//! `*_free`. Every fallible call returns a [`DfaStatus`]; on failure the
//! message is available from [`dfa_last_error`] on the same thread. Output
//! pointers are written only on success. Panics are caught at the boundary
//! and reported as [`DfaStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dfalign::config::RunConfig;
use dfalign::data::{generate_dataset, load_dataset, save_dataset, Dataset};
use dfalign::detect::{self, DfAlign, Proposal};
use dfalign::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DfaStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Parse = 3,
    Io = 4,
    Shape = 5,
    Validation = 6,
    Runtime = 7,
    InvalidUtf8 = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

impl From<&Error> for DfaStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::Param(_) => DfaStatus::Config,
            Error::Parse { .. } => DfaStatus::Parse,
            Error::Io { .. } => DfaStatus::Io,
            Error::Shape(_) | Error::Index { .. } => DfaStatus::Shape,
            Error::Validation(_) => DfaStatus::Validation,
            _ => DfaStatus::Runtime,
        }
    }
}

/// Which split of a dataset.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DfaSplit {
    Train = 0,
    Test = 1,
}

/// One scored temporal interval.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DfaProposal {
    pub video: usize,
    pub start: f64,
    pub end: f64,
    pub category: usize,
    pub score: f64,
}

impl From<DfaProposal> for Proposal {
    fn from(p: DfaProposal) -> Self {
        Proposal {
            video: p.video,
            start: p.start,
            end: p.end,
            category: p.category,
            score: p.score,
        }
    }
}

impl From<Proposal> for DfaProposal {
    fn from(p: Proposal) -> Self {
        DfaProposal {
            video: p.video,
            start: p.start,
            end: p.end,
            category: p.category,
            score: p.score,
        }
    }
}

/// Run configuration.
pub struct DfaConfig(RunConfig);

/// Synthetic dataset with its category split.
pub struct DfaDataset(Dataset);

/// Model parameters plus the seed they were built from.
pub struct DfaModel {
    model: DfAlign,
    seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DfaStatus, msg: impl Into<String>) -> DfaStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), DfaStatus>) -> DfaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DfaStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(DfaStatus::Panic, msg)
        }
    }
}

fn lift<T>(r: dfalign::Result<T>) -> Result<T, DfaStatus> {
    r.map_err(|e| fail(DfaStatus::from(&e), e.to_string()))
}

unsafe fn as_ref<'a, T>(p: *const T) -> Result<&'a T, DfaStatus> {
    p.as_ref().ok_or_else(|| fail(DfaStatus::NullPointer, "null pointer argument"))
}

unsafe fn as_str<'a>(p: *const c_char) -> Result<&'a str, DfaStatus> {
    if p.is_null() {
        return Err(fail(DfaStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(DfaStatus::InvalidUtf8, e.to_string()))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), DfaStatus> {
    if out.is_null() {
        return Err(fail(DfaStatus::NullPointer, "null output pointer"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), DfaStatus> {
    if out.is_null() {
        return Err(fail(DfaStatus::NullPointer, "null output pointer"));
    }
    *out = CString::new(s).expect("JSON has no NUL").into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call on this thread.
#[no_mangle]
pub extern "C" fn dfa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn dfa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default configuration.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dfa_config_default(out: *mut *mut DfaConfig) -> DfaStatus {
    guard(|| put(out, DfaConfig(RunConfig::default())))
}

/// Parses and validates a JSON config; unknown keys are rejected.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dfa_config_from_json(json: *const c_char, out: *mut *mut DfaConfig) -> DfaStatus {
    guard(|| {
        let text = as_str(json)?;
        put(out, DfaConfig(lift(RunConfig::from_json(text))?))
    })
}

/// Canonical JSON of the config as a new string (free with
/// [`dfa_string_free`]).
///
/// # Safety
/// `cfg` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dfa_config_to_json(cfg: *const DfaConfig, out: *mut *mut c_char) -> DfaStatus {
    guard(|| put_string(out, as_ref(cfg)?.0.canonical_json()))
}

/// Writes the 64-character hex config hash plus a NUL into `buf`, which
/// must hold at least 65 bytes.
///
/// # Safety
/// `cfg` must be a live handle; `buf` must be valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn dfa_config_hash(cfg: *const DfaConfig, buf: *mut c_char, len: usize) -> DfaStatus {
    guard(|| {
        let h = as_ref(cfg)?.0.hash();
        if buf.is_null() {
            return Err(fail(DfaStatus::NullPointer, "null buffer"));
        }
        if len < h.len() + 1 {
            return Err(fail(DfaStatus::BufferTooSmall, format!("need {} bytes", h.len() + 1)));
        }
        ptr::copy_nonoverlapping(h.as_ptr() as *const c_char, buf, h.len());
        *buf.add(h.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dfa_config_free(cfg: *mut DfaConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Generates the synthetic dataset described by the config's `data` section.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dfa_dataset_generate(cfg: *const DfaConfig, out: *mut *mut DfaDataset) -> DfaStatus {
    guard(|| {
        let cfg = &as_ref(cfg)?.0;
        put(out, DfaDataset(lift(generate_dataset(&cfg.data))?))
    })
}

/// Writes a dataset directory.
///
/// # Safety
/// Handles must be live; `dir` must be a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn dfa_dataset_save(ds: *const DfaDataset, cfg: *const DfaConfig, dir: *const c_char) -> DfaStatus {
    guard(|| {
        let (ds, cfg) = (&as_ref(ds)?.0, &as_ref(cfg)?.0);
        let dir = PathBuf::from(as_str(dir)?);
        lift(save_dataset(&dir, ds, &cfg.data, &cfg.hash()))
    })
}

/// Reads a dataset directory.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dfa_dataset_load(dir: *const c_char, out: *mut *mut DfaDataset) -> DfaStatus {
    guard(|| {
        let dir = PathBuf::from(as_str(dir)?);
        let (ds, _) = lift(load_dataset(&dir))?;
        put(out, DfaDataset(ds))
    })
}

/// Number of videos in one split.
///
/// # Safety
/// `ds` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dfa_dataset_num_videos(ds: *const DfaDataset, split: DfaSplit, out: *mut usize) -> DfaStatus {
    guard(|| {
        let ds = &as_ref(ds)?.0;
        if out.is_null() {
            return Err(fail(DfaStatus::NullPointer, "null output pointer"));
        }
        *out = match split {
            DfaSplit::Train => ds.train.len(),
            DfaSplit::Test => ds.test.len(),
        };
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dfa_dataset_free(ds: *mut DfaDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Untrained model built from `seed`.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dfa_model_new(cfg: *const DfaConfig, seed: u64, out: *mut *mut DfaModel) -> DfaStatus {
    guard(|| {
        let model = lift(DfAlign::new(&as_ref(cfg)?.0, seed))?;
        put(out, DfaModel { model, seed })
    })
}

/// Trains a fresh model from `seed` on the seen split of `ds`.
///
/// # Safety
/// Handles must be live; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dfa_model_train(
    cfg: *const DfaConfig,
    ds: *const DfaDataset,
    seed: u64,
    out: *mut *mut DfaModel,
) -> DfaStatus {
    guard(|| {
        let (cfg, ds) = (&as_ref(cfg)?.0, &as_ref(ds)?.0);
        let model = lift(detect::fit(cfg, ds, seed, |_, _| {}))?;
        put(out, DfaModel { model, seed })
    })
}

/// Writes a checkpoint.
///
/// # Safety
/// `model` must be a live handle; `path` must be a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn dfa_model_save(model: *const DfaModel, path: *const c_char) -> DfaStatus {
    guard(|| {
        let m = as_ref(model)?;
        lift(detect::save_checkpoint(&PathBuf::from(as_str(path)?), &m.model, m.seed))
    })
}

/// Reads a checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated path; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dfa_model_load(path: *const c_char, out: *mut *mut DfaModel) -> DfaStatus {
    guard(|| {
        let (model, manifest) = lift(detect::load_checkpoint(&PathBuf::from(as_str(path)?)))?;
        put(
            out,
            DfaModel {
                model,
                seed: manifest.seed,
            },
        )
    })
}

/// Evaluates on the unseen split of `ds`; `out` receives the metrics JSON
/// (free with [`dfa_string_free`]).
///
/// # Safety
/// Handles must be live; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dfa_model_evaluate(model: *const DfaModel, ds: *const DfaDataset, out: *mut *mut c_char) -> DfaStatus {
    guard(|| {
        let (m, ds) = (as_ref(model)?, &as_ref(ds)?.0);
        let report = lift(detect::evaluate(&m.model, ds, m.seed))?;
        put_string(out, serde_json::to_string(&report).expect("report serialises"))
    })
}

/// # Safety
/// `model` must be NULL or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dfa_model_free(model: *mut DfaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Temporal IoU of `[a_start, a_end]` and `[b_start, b_end]`.
#[no_mangle]
pub extern "C" fn dfa_tiou(a_start: f64, a_end: f64, b_start: f64, b_end: f64) -> f64 {
    detect::tiou((a_start, a_end), (b_start, b_end))
}

/// Gaussian Soft-NMS. `out` must hold `n` entries; `*out_len` receives the
/// number kept, in descending score order.
///
/// # Safety
/// `props` must be valid for `n` reads and `out` for `n` writes (either may
/// be NULL when `n == 0`); `out_len` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dfa_soft_nms(
    props: *const DfaProposal,
    n: usize,
    sigma: f64,
    floor: f64,
    out: *mut DfaProposal,
    out_len: *mut usize,
) -> DfaStatus {
    guard(|| {
        if out_len.is_null() || (n > 0 && (props.is_null() || out.is_null())) {
            return Err(fail(DfaStatus::NullPointer, "null pointer argument"));
        }
        if !(sigma > 0.0) {
            return Err(fail(DfaStatus::Config, format!("sigma must be > 0, got {sigma}")));
        }
        let input: Vec<Proposal> = if n == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(props, n).iter().map(|&p| p.into()).collect()
        };
        let kept = detect::soft_nms(&input, sigma, floor);
        for (i, p) in kept.iter().enumerate() {
            *out.add(i) = (*p).clone().into();
        }
        *out_len = kept.len();
        Ok(())
    })
}

/// Monte-Carlo check of the config's diffusion schedule on random vectors;
/// `all_pass` receives 1 or 0.
///
/// # Safety
/// `cfg` must be a live handle; `all_pass` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dfa_mc_verify(cfg: *const DfaConfig, samples: usize, seed: u64, all_pass: *mut i32) -> DfaStatus {
    use rand::SeedableRng;
    guard(|| {
        let cfg = &as_ref(cfg)?.0;
        if all_pass.is_null() {
            return Err(fail(DfaStatus::NullPointer, "null output pointer"));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.model.dim;
        let h_v = dfalign::numerics::DenseArray::randn(&[1, d], 1.0, &mut rng);
        let h_f = dfalign::numerics::DenseArray::randn(&[1, d], 1.0, &mut rng);
        let schedule = lift(cfg.diffusion.schedule())?;
        let report = lift(dfalign::bsd::mc_verify(&schedule, &h_v, &h_f, samples, seed))?;
        *all_pass = report.all_pass as i32;
        Ok(())
    })
}
