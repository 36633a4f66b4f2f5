//! C interface: opaque model handles, status codes, and a thread-local
//! error message.
//!
//! Conventions: functions returning [`SimsbmStatus`] never panic across the
//! boundary; any non-`Ok` status leaves a description retrievable with
//! [`simsbm_last_error_message`] on the same thread. Returned strings are
//! borrowed: model token strings live as long as the model handle, the
//! error message until the next failing call on that thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use simsbm_core::{
    evaluate_scorer, fit, load_dataset, load_model, save_model, ErrorClass, FitConfig, Keep,
    SpecMode, TrainedModel,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimsbmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Invalid model structure or options.
    Config = 3,
    /// Unreadable, malformed, or mismatched data or model files.
    Data = 4,
    /// Fitting failed to produce a usable model.
    Fit = 5,
    /// Unexpected internal failure.
    Internal = 6,
}

/// Opaque handle to a trained model plus its vocabulary.
pub struct SimsbmModel {
    trained: TrainedModel,
    /// Output tokens as C strings, index-aligned with the model's outputs.
    output_tokens: Vec<CString>,
}

/// Options for [`simsbm_train`]; pass null for the defaults
/// (seed 0, 100 restarts, 1000 max iterations, patience 30, tolerance 1e-4,
/// all cores).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SimsbmFitOptions {
    pub seed: u64,
    pub restarts: u32,
    pub max_iters: u32,
    /// Consecutive small-change iterations required for convergence.
    pub patience: u32,
    /// Relative log-likelihood change counted as small.
    pub rel_tol: f64,
    /// Worker threads; 0 means all cores.
    pub jobs: u32,
}

/// Ranking metrics plus log-likelihood from [`simsbm_evaluate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SimsbmMetrics {
    pub f1_max: f64,
    pub p_at_1: f64,
    pub auc_roc_weighted: f64,
    pub auc_pr_weighted: f64,
    pub rank_avg_precision: f64,
    pub coverage_error_normalized: f64,
    pub log_likelihood: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("NUL bytes removed");
    });
}

fn status_of(err: &simsbm_core::Error) -> SimsbmStatus {
    match err.class() {
        ErrorClass::Config => SimsbmStatus::Config,
        ErrorClass::Data => SimsbmStatus::Data,
        ErrorClass::Fit => SimsbmStatus::Fit,
    }
}

fn fail(err: &simsbm_core::Error) -> SimsbmStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Runs a fallible body, translating panics into `Internal`.
fn guarded(body: impl FnOnce() -> SimsbmStatus) -> SimsbmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| (*s).to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            SimsbmStatus::Internal
        }
    }
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, SimsbmStatus> {
    if ptr.is_null() {
        set_error(&format!("{name} is null"));
        return Err(SimsbmStatus::NullArgument);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error(&format!("{name} is not valid UTF-8"));
        SimsbmStatus::InvalidUtf8
    })
}

fn wrap_model(trained: TrainedModel) -> Result<*mut SimsbmModel, SimsbmStatus> {
    let mut output_tokens = Vec::with_capacity(trained.vocab.outputs().len());
    for token in trained.vocab.outputs().tokens() {
        let c = CString::new(token.as_str()).map_err(|_| {
            set_error("output token contains a NUL byte");
            SimsbmStatus::Data
        })?;
        output_tokens.push(c);
    }
    Ok(Box::into_raw(Box::new(SimsbmModel { trained, output_tokens })))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn simsbm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Description of the most recent failure on this thread; empty string if
/// none. Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn simsbm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a model file into a new handle. On success writes the handle to
/// `out`; free it with [`simsbm_model_free`].
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn simsbm_model_load(
    path: *const c_char,
    out: *mut *mut SimsbmModel,
) -> SimsbmStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out is null");
            return SimsbmStatus::NullArgument;
        }
        let path = match unsafe { utf8_arg(path, "path") } {
            Ok(p) => PathBuf::from(p),
            Err(status) => return status,
        };
        match load_model(&path) {
            Ok(trained) => match wrap_model(trained) {
                Ok(handle) => {
                    unsafe { *out = handle };
                    SimsbmStatus::Ok
                }
                Err(status) => status,
            },
            Err(e) => fail(&e),
        }
    })
}

/// Writes the model to a file.
///
/// # Safety
/// `model` must come from this library; `path` must be a valid string.
#[no_mangle]
pub unsafe extern "C" fn simsbm_model_save(
    model: *const SimsbmModel,
    path: *const c_char,
) -> SimsbmStatus {
    guarded(|| {
        let Some(model) = (unsafe { model.as_ref() }) else {
            set_error("model is null");
            return SimsbmStatus::NullArgument;
        };
        let path = match unsafe { utf8_arg(path, "path") } {
            Ok(p) => PathBuf::from(p),
            Err(status) => return status,
        };
        match save_model(&model.trained, &path) {
            Ok(()) => SimsbmStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Releases a handle. Null is a no-op.
///
/// # Safety
/// `model` must be null or an owned handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn simsbm_model_free(model: *mut SimsbmModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of distinct outputs; 0 on a null handle.
///
/// # Safety
/// `model` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn simsbm_model_output_count(model: *const SimsbmModel) -> usize {
    unsafe { model.as_ref() }
        .map_or(0, |m| m.trained.model.spec().output_count)
}

/// Number of context layers; 0 on a null handle.
///
/// # Safety
/// `model` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn simsbm_model_layer_count(model: *const SimsbmModel) -> usize {
    unsafe { model.as_ref() }
        .map_or(0, |m| m.trained.model.spec().layer_count())
}

/// Token string for output `index`, borrowed from the handle; null when the
/// handle is null or the index is out of range.
///
/// # Safety
/// `model` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn simsbm_model_output_token(
    model: *const SimsbmModel,
    index: usize,
) -> *const c_char {
    unsafe { model.as_ref() }
        .and_then(|m| m.output_tokens.get(index))
        .map_or(std::ptr::null(), |c| c.as_ptr())
}

/// Trains a model on a TSV dataset with the spec shorthand
/// (`"type:multiplicity@clusters,..."`) and writes the handle to `out`.
///
/// # Safety
/// `data_path` and `spec` must be valid strings; `options` null or valid;
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn simsbm_train(
    data_path: *const c_char,
    spec: *const c_char,
    options: *const SimsbmFitOptions,
    out: *mut *mut SimsbmModel,
) -> SimsbmStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out is null");
            return SimsbmStatus::NullArgument;
        }
        let data_path = match unsafe { utf8_arg(data_path, "data_path") } {
            Ok(p) => PathBuf::from(p),
            Err(status) => return status,
        };
        let spec_str = match unsafe { utf8_arg(spec, "spec") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let defaults = FitConfig::default();
        let (cfg, jobs) = match unsafe { options.as_ref() } {
            None => (defaults, 0usize),
            Some(opt) => (
                FitConfig {
                    rel_tol: opt.rel_tol,
                    patience: opt.patience as usize,
                    max_iters: opt.max_iters as usize,
                    restarts: opt.restarts as usize,
                    seed: opt.seed,
                    keep: Keep::BestLikelihood,
                    deterministic: true,
                },
                opt.jobs as usize,
            ),
        };
        match train_impl(&data_path, spec_str, &cfg, jobs) {
            Ok(trained) => match wrap_model(trained) {
                Ok(handle) => {
                    unsafe { *out = handle };
                    SimsbmStatus::Ok
                }
                Err(status) => status,
            },
            Err(e) => fail(&e),
        }
    })
}

fn train_impl(
    data_path: &std::path::Path,
    spec_str: &str,
    cfg: &FitConfig,
    jobs: usize,
) -> simsbm_core::Result<TrainedModel> {
    let shorthand = simsbm_core::parse_spec_shorthand(spec_str)?;
    for s in &shorthand {
        if s.clusters.is_none() {
            return Err(simsbm_core::Error::Config(format!(
                "spec shorthand {spec_str:?}: type {:?} needs a cluster count",
                s.name
            )));
        }
    }
    let cluster_counts: Vec<(String, usize)> = shorthand
        .iter()
        .map(|s| (s.name.clone(), s.clusters.unwrap_or(1)))
        .collect();
    let (data, vocab) =
        load_dataset(data_path, SpecMode::Infer { cluster_counts: &cluster_counts })?;
    let blocks = data.spec().type_blocks();
    for (t, ty) in data.spec().types.iter().enumerate() {
        let declared = shorthand.iter().find(|s| s.name == ty.name).ok_or_else(|| {
            simsbm_core::Error::Config(format!(
                "type {:?} appears in the data header but not in the spec",
                ty.name
            ))
        })?;
        if declared.multiplicity != blocks[t].len() {
            return Err(simsbm_core::Error::Config(format!(
                "spec gives type {:?} multiplicity {}, but the data header has {} layers of it",
                ty.name,
                declared.multiplicity,
                blocks[t].len()
            )));
        }
    }
    let spec = data.spec().clone();
    let run = || fit(&spec, &data, cfg);
    let report = if jobs == 0 {
        run()?
    } else {
        // a scoped pool so the caller's process-global state is untouched
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| simsbm_core::Error::Config(format!("thread pool: {e}")))?;
        pool.install(run)?
    };
    TrainedModel::new(report.best_model().clone(), vocab)
}

/// Scores one context: `tokens` holds one entity token per layer, in layer
/// order; `out_probs` receives `out_len` probabilities (one per output, in
/// the model's output order, summing to 1). `out_len` must equal
/// [`simsbm_model_output_count`].
///
/// # Safety
/// All pointers must be valid; `tokens` must hold `token_count` valid
/// strings; `out_probs` must have room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn simsbm_predict(
    model: *const SimsbmModel,
    tokens: *const *const c_char,
    token_count: usize,
    out_probs: *mut f64,
    out_len: usize,
) -> SimsbmStatus {
    guarded(|| {
        let Some(model) = (unsafe { model.as_ref() }) else {
            set_error("model is null");
            return SimsbmStatus::NullArgument;
        };
        if tokens.is_null() || out_probs.is_null() {
            set_error("tokens or out_probs is null");
            return SimsbmStatus::NullArgument;
        }
        let expected = model.trained.model.spec().output_count;
        if out_len != expected {
            set_error(&format!("out_len is {out_len}, model has {expected} outputs"));
            return SimsbmStatus::Config;
        }
        let raw = unsafe { std::slice::from_raw_parts(tokens, token_count) };
        let mut strs = Vec::with_capacity(token_count);
        for (i, &ptr) in raw.iter().enumerate() {
            match unsafe { utf8_arg(ptr, &format!("tokens[{i}]")) } {
                Ok(s) => strs.push(s),
                Err(status) => return status,
            }
        }
        match model.trained.predict_tokens(&strs) {
            Ok(probs) => {
                let out = unsafe { std::slice::from_raw_parts_mut(out_probs, out_len) };
                out.copy_from_slice(&probs);
                SimsbmStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Scores a TSV dataset with the model and fills `out` with ranking metrics
/// and the log-likelihood. Tokens in the file must be known to the model.
///
/// # Safety
/// `model` must be a valid handle, `data_path` a valid string, `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn simsbm_evaluate(
    model: *const SimsbmModel,
    data_path: *const c_char,
    out: *mut SimsbmMetrics,
) -> SimsbmStatus {
    guarded(|| {
        let Some(model) = (unsafe { model.as_ref() }) else {
            set_error("model is null");
            return SimsbmStatus::NullArgument;
        };
        if out.is_null() {
            set_error("out is null");
            return SimsbmStatus::NullArgument;
        }
        let path = match unsafe { utf8_arg(data_path, "data_path") } {
            Ok(p) => PathBuf::from(p),
            Err(status) => return status,
        };
        let spec = model.trained.model.spec();
        let loaded = load_dataset(&path, SpecMode::Explicit { spec, vocab: &model.trained.vocab })
            .and_then(|(test, _)| {
                let metrics = evaluate_scorer(&model.trained.model, &test)?;
                let ll = model.trained.model.log_likelihood(&test)?;
                Ok((metrics, ll))
            });
        match loaded {
            Ok((m, ll)) => {
                unsafe {
                    *out = SimsbmMetrics {
                        f1_max: m.f1_max,
                        p_at_1: m.p_at_1,
                        auc_roc_weighted: m.auc_roc_weighted,
                        auc_pr_weighted: m.auc_pr_weighted,
                        rank_avg_precision: m.rank_avg_precision,
                        coverage_error_normalized: m.coverage_error_normalized,
                        log_likelihood: ll,
                    };
                }
                SimsbmStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
