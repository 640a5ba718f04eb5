//! C ABI for the frtts engine.
//!
//! Every function returns an [`FrttsStatus`]; results come back through out
//! pointers. On failure the thread-local message from
//! [`frtts_last_error_message`] describes what went wrong. Handles are
//! opaque and must be released with their matching `_free` function.
//! Strings returned by the library are released with [`frtts_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use frtts::analysis::{attention_entropy, spearman, AttentionMap};
use frtts::config::RunConfigFile;
use frtts::engine::{run_bon, run_fr_tts, RunResult};
use frtts::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrttsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Alignment = 4,
    Parameter = 5,
    Shape = 6,
    Numeric = 7,
    Undefined = 8,
    Transport = 9,
    Protocol = 10,
    Io = 11,
    /// Any other engine error.
    Engine = 12,
    BufferTooSmall = 13,
    Panic = 14,
}

/// Which generation method [`frtts_run`] executes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrttsMethod {
    Scaled = 0,
    BestOfN = 1,
}

/// A resolved run configuration.
pub struct FrttsConfig {
    inner: RunConfigFile,
}

/// The outcome of one prompt.
pub struct FrttsRun {
    inner: RunResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> FrttsStatus {
    match e {
        Error::Config(_) => FrttsStatus::Config,
        Error::Alignment(_) => FrttsStatus::Alignment,
        Error::Parameter(_) => FrttsStatus::Parameter,
        Error::Shape(_) => FrttsStatus::Shape,
        Error::Numeric(_) => FrttsStatus::Numeric,
        Error::Undefined(_) => FrttsStatus::Undefined,
        Error::Transport(_) => FrttsStatus::Transport,
        Error::Protocol(_) => FrttsStatus::Protocol,
        Error::Io(_) => FrttsStatus::Io,
        _ => FrttsStatus::Engine,
    }
}

struct Failure(FrttsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FrttsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FrttsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FrttsStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(FrttsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(FrttsStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Message for the most recent failed call on this thread, or null. The
/// pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn frtts_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn frtts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn frtts_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default configuration.
///
/// # Safety
/// `out_config` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frtts_config_default(out_config: *mut *mut FrttsConfig) -> FrttsStatus {
    guard(|| {
        let slot = out(out_config, "out_config")?;
        *slot = Box::into_raw(Box::new(FrttsConfig { inner: RunConfigFile::default() }));
        Ok(())
    })
}

/// Parses and validates configuration text (`key = value` lines).
///
/// # Safety
/// `text_utf8` must be a nul-terminated string; `out_config` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frtts_config_parse(text_utf8: *const c_char, out_config: *mut *mut FrttsConfig) -> FrttsStatus {
    guard(|| {
        let slot = out(out_config, "out_config")?;
        let cfg = RunConfigFile::parse(text(text_utf8, "text")?)?.with_env();
        cfg.validate()?;
        *slot = Box::into_raw(Box::new(FrttsConfig { inner: cfg }));
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn frtts_config_free(config: *mut FrttsConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Overrides the master seed.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn frtts_config_set_seed(config: *mut FrttsConfig, seed: u64) -> FrttsStatus {
    guard(|| {
        out(config, "config")?.inner.master_seed = seed;
        Ok(())
    })
}

/// Canonical text of the configuration; release with [`frtts_string_free`].
///
/// # Safety
/// `config` must be a live handle; `out_text` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frtts_config_canonical(config: *const FrttsConfig, out_text: *mut *mut c_char) -> FrttsStatus {
    guard(|| {
        let cfg = borrow(config, "config")?;
        *out(out_text, "out_text")? = owned_string(cfg.inner.canonical());
        Ok(())
    })
}

/// Hex SHA-256 of the configuration; release with [`frtts_string_free`].
///
/// # Safety
/// `config` must be a live handle; `out_text` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frtts_config_hash(config: *const FrttsConfig, out_text: *mut *mut c_char) -> FrttsStatus {
    guard(|| {
        let cfg = borrow(config, "config")?;
        *out(out_text, "out_text")? = owned_string(cfg.inner.hash());
        Ok(())
    })
}

/// Runs one prompt with the configured oracle.
///
/// # Safety
/// `config` must be a live handle; `out_run` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frtts_run(
    config: *const FrttsConfig,
    prompt_id: u64,
    method: FrttsMethod,
    out_run: *mut *mut FrttsRun,
) -> FrttsStatus {
    guard(|| {
        let cfg = &borrow(config, "config")?.inner;
        let slot = out(out_run, "out_run")?;
        let one = RunConfigFile { prompt_start: prompt_id, prompt_count: 1, ..cfg.clone() };
        one.validate()?;
        let prompt = one.prompts()?.remove(0);
        let oracle = one.oracle()?;
        let scaling = one.scaling();
        let result = match method {
            FrttsMethod::Scaled => run_fr_tts(&scaling, &prompt, oracle.as_ref())?,
            FrttsMethod::BestOfN => run_bon(&scaling, &prompt, oracle.as_ref())?,
        };
        *slot = Box::into_raw(Box::new(FrttsRun { inner: result }));
        Ok(())
    })
}

/// # Safety
/// `run` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn frtts_run_free(run: *mut FrttsRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be a live handle; `out_value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frtts_run_best_score(run: *const FrttsRun, out_value: *mut f64) -> FrttsStatus {
    guard(|| {
        *out(out_value, "out_value")? = borrow(run, "run")?.inner.best_score;
        Ok(())
    })
}

/// # Safety
/// `run` must be a live handle; `out_value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frtts_run_mean_score(run: *const FrttsRun, out_value: *mut f64) -> FrttsStatus {
    guard(|| {
        *out(out_value, "out_value")? = borrow(run, "run")?.inner.mean_score;
        Ok(())
    })
}

/// Oracle calls the run made and the calls the budget formula predicts.
///
/// # Safety
/// `run` must be a live handle; both out pointers valid.
#[no_mangle]
pub unsafe extern "C" fn frtts_run_oracle_calls(
    run: *const FrttsRun,
    out_calls: *mut u64,
    out_expected: *mut u64,
) -> FrttsStatus {
    guard(|| {
        let r = &borrow(run, "run")?.inner;
        *out(out_calls, "out_calls")? = r.oracle_calls;
        *out(out_expected, "out_expected")? = r.expected_oracle_calls;
        Ok(())
    })
}

/// Copies the final per-sample rewards into `buffer`. `out_len` receives
/// the number of samples; with a short buffer nothing is copied and
/// `BufferTooSmall` is returned.
///
/// # Safety
/// `run` must be a live handle; `buffer` valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn frtts_run_final_scores(
    run: *const FrttsRun,
    buffer: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> FrttsStatus {
    guard(|| {
        let scores = &borrow(run, "run")?.inner.final_scores;
        copy_out(scores, buffer, capacity, out_len)
    })
}

/// Copies the best final grid, row-major, into `buffer`; `out_len`
/// receives `width * height`.
///
/// # Safety
/// `run` must be a live handle; `buffer` valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn frtts_run_best_grid(
    run: *const FrttsRun,
    buffer: *mut u32,
    capacity: usize,
    out_len: *mut usize,
) -> FrttsStatus {
    guard(|| {
        let grid = borrow(run, "run")?.inner.best_grid();
        let tokens = grid.complete_tokens()?;
        copy_out(tokens, buffer, capacity, out_len)
    })
}

unsafe fn copy_out<T: Copy>(values: &[T], buffer: *mut T, capacity: usize, out_len: *mut usize) -> Result<(), Failure> {
    *out(out_len, "out_len")? = values.len();
    if capacity < values.len() {
        return Err(Failure(
            FrttsStatus::BufferTooSmall,
            format!("buffer holds {capacity}, need {}", values.len()),
        ));
    }
    if !values.is_empty() {
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buffer, values.len());
    }
    Ok(())
}

/// The run as JSON; release with [`frtts_string_free`].
///
/// # Safety
/// `run` must be a live handle; `out_text` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frtts_run_to_json(run: *const FrttsRun, out_text: *mut *mut c_char) -> FrttsStatus {
    guard(|| {
        let r = &borrow(run, "run")?.inner;
        let json = serde_json::to_string(r).map_err(|e| Failure(FrttsStatus::Engine, e.to_string()))?;
        *out(out_text, "out_text")? = owned_string(json);
        Ok(())
    })
}

/// Spearman rank correlation of two length-`len` arrays.
///
/// # Safety
/// `xs` and `ys` valid for `len` reads; `out_rho` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frtts_spearman(xs: *const f64, ys: *const f64, len: usize, out_rho: *mut f64) -> FrttsStatus {
    guard(|| {
        let rho = spearman(slice(xs, len, "xs")?, slice(ys, len, "ys")?)?;
        *out(out_rho, "out_rho")? = rho;
        Ok(())
    })
}

/// Mean row entropy, in bits, of a row-stochastic `size x size` matrix.
///
/// # Safety
/// `weights` valid for `size * size` reads; `out_bits` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn frtts_attention_entropy(weights: *const f64, size: usize, out_bits: *mut f64) -> FrttsStatus {
    guard(|| {
        let n = size
            .checked_mul(size)
            .ok_or_else(|| Failure(FrttsStatus::Shape, format!("size {size} overflows")))?;
        let map = AttentionMap::new(0, size, slice(weights, n, "weights")?.to_vec())?;
        *out(out_bits, "out_bits")? = attention_entropy(&map);
        Ok(())
    })
}
