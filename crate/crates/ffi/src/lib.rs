//! C interface to the `stickydiff` sampler.
//!
//! Objects are opaque handles created by `sd_*_new`/`sd_*_load`/`sd_*_run`
//! and released with the matching `sd_*_free`. Every fallible call returns an
//! [`SdStatus`]; on failure the message is available from
//! [`sd_last_error_message`] on the same thread. Panics never cross the
//! boundary: they are reported as [`SdStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use stickydiff::baselines::probe_tests;
use stickydiff::data::{logit_transform, Dataset};
use stickydiff::detection::PosteriorSummary;
use stickydiff::evidence::{bf_lower_bound, BoundEstimate, Direction};
use stickydiff::mcmc::{run_chain, McmcConfig};
use stickydiff::simgen::{generate_dataset_seeded, SimConfig};
use stickydiff::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Bad input: malformed config or data, wrong buffer length, invalid UTF-8.
    Invalid = 2,
    /// The computation failed at runtime.
    Runtime = 3,
    /// A panic was caught inside the library.
    Panic = 4,
}

/// Which frequentist test [`sd_dataset_pvalues`] runs.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdTest {
    Anova = 0,
    KruskalWallis = 1,
}

/// Proportions, treatment labels and probe coordinates.
pub struct SdDataset {
    inner: Dataset,
}

/// Posterior summaries of one sampler run.
pub struct SdFit {
    summary: PosteriorSummary,
    bound: BoundEstimate,
    stored_draws: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(SdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = if e.is_validation() {
            SdStatus::Invalid
        } else {
            SdStatus::Runtime
        };
        Failure(status, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(SdStatus::Invalid, message.into())
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> SdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            SdStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(SdStatus::NullPointer, format!("{name} is null")))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SdStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(SdStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, expected: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len != expected {
        return Err(invalid(format!("{name} has length {len}, expected {expected}")));
    }
    if p.is_null() {
        return Err(Failure(SdStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(SdStatus::NullPointer, "output handle pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dataset from a row-major `n x p` matrix of proportions,
/// `n` treatment labels (starting at 1) and `p` increasing coordinates.
///
/// # Safety
/// `values` must point to `n * p` doubles, `treatments` to `n` values and
/// `positions` to `p` values. `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_dataset_new(
    values: *const f64,
    n: usize,
    p: usize,
    treatments: *const u32,
    positions: *const u64,
    out: *mut *mut SdDataset,
) -> SdStatus {
    guard(|| {
        let size = n.checked_mul(p).ok_or_else(|| invalid("n * p overflows"))?;
        let values = slice(values, size, "values")?.to_vec();
        let treatments = slice(treatments, n, "treatments")?.iter().map(|&t| t as usize).collect();
        let positions = slice(positions, p, "positions")?.to_vec();
        let inner = Dataset::new(values, n, p, treatments, positions)?;
        emit(out, SdDataset { inner })
    })
}

/// Reads `dataset.tsv` and `positions.tsv`.
///
/// # Safety
/// Both paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_dataset_load(
    dataset_path: *const c_char,
    positions_path: *const c_char,
    out: *mut *mut SdDataset,
) -> SdStatus {
    guard(|| {
        let d = text(dataset_path, "dataset_path")?;
        let p = text(positions_path, "positions_path")?;
        let inner = stickydiff::io::read_dataset(Path::new(d), Path::new(p))?;
        emit(out, SdDataset { inner })
    })
}

/// Simulates a dataset from a JSON simulation config.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_dataset_simulate(config_json: *const c_char, seed: u64, out: *mut *mut SdDataset) -> SdStatus {
    guard(|| {
        let cfg: SimConfig = serde_json::from_str(text(config_json, "config_json")?)
            .map_err(|e| invalid(format!("simulation config: {e}")))?;
        let (inner, _) = generate_dataset_seeded(&cfg, seed)?;
        emit(out, SdDataset { inner })
    })
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sd_dataset_n_samples(ds: *const SdDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n)
}

/// Number of probes, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sd_dataset_n_probes(ds: *const SdDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.p)
}

/// Per-probe p-values of a one-way test on the proportions.
///
/// # Safety
/// `ds` must be a live handle and `out` must hold `len` doubles, with `len`
/// equal to the number of probes.
#[no_mangle]
pub unsafe extern "C" fn sd_dataset_pvalues(ds: *const SdDataset, test: SdTest, out: *mut f64, len: usize) -> SdStatus {
    guard(|| {
        let ds = non_null(ds, "dataset")?;
        let buf = out_slice(out, len, ds.inner.p, "output buffer")?;
        let (anova, kw) = probe_tests(&ds.inner)?;
        let chosen = match test {
            SdTest::Anova => anova,
            SdTest::KruskalWallis => kw,
        };
        for (b, t) in buf.iter_mut().zip(chosen) {
            *b = t.p_value;
        }
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sd_dataset_free(ds: *mut SdDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Runs the sampler. `config_json` may be null for the default settings;
/// `seed` replaces any seed in the config.
///
/// # Safety
/// `ds` must be a live handle, `config_json` null or NUL-terminated, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sd_fit_run(
    ds: *const SdDataset,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut SdFit,
) -> SdStatus {
    guard(|| {
        let ds = non_null(ds, "dataset")?;
        let cfg: McmcConfig = if config_json.is_null() {
            McmcConfig::default()
        } else {
            serde_json::from_str(text(config_json, "config_json")?).map_err(|e| invalid(format!("sampler config: {e}")))?
        };
        cfg.validate()?;
        let data = logit_transform(&ds.inner, cfg.clamp_eps)?;
        let chain = run_chain(&data, &cfg, &mut ChaCha12Rng::seed_from_u64(seed))?;
        let fit = SdFit {
            summary: PosteriorSummary::from_accumulator(&chain.accumulator, cfg.q0)?,
            bound: bf_lower_bound(&chain.log_odds(), Direction::Order1VsOrder0)?,
            stored_draws: chain.trace.len(),
        };
        emit(out, fit)
    })
}

/// Number of probes in the fit, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sd_fit_n_probes(fit: *const SdFit) -> usize {
    fit.as_ref().map_or(0, |f| f.summary.omega_hat.len())
}

/// Number of stored posterior draws, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sd_fit_stored_draws(fit: *const SdFit) -> usize {
    fit.as_ref().map_or(0, |f| f.stored_draws)
}

/// Posterior probability that each probe is differential.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sd_fit_diff_prob(fit: *const SdFit, out: *mut f64, len: usize) -> SdStatus {
    guard(|| {
        let fit = non_null(fit, "fit")?;
        out_slice(out, len, fit.summary.omega_hat.len(), "output buffer")?.copy_from_slice(&fit.summary.omega_hat);
        Ok(())
    })
}

/// FDR-controlled calls (1 = differential) and their count.
///
/// # Safety
/// `fit` must be a live handle, `out` must hold `len` bytes and `n_called`
/// must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn sd_fit_calls(fit: *const SdFit, out: *mut u8, len: usize, n_called: *mut usize) -> SdStatus {
    guard(|| {
        let fit = non_null(fit, "fit")?;
        let buf = out_slice(out, len, fit.summary.called.len(), "output buffer")?;
        for (b, &c) in buf.iter_mut().zip(&fit.summary.called) {
            *b = c as u8;
        }
        if let Some(n) = n_called.as_mut() {
            *n = fit.summary.b_star;
        }
        Ok(())
    })
}

/// Lower bound on the log Bayes factor of `eta > 0` against `eta = 0` and
/// its Monte Carlo standard error.
///
/// # Safety
/// `fit` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sd_fit_order_evidence(fit: *const SdFit, estimate: *mut f64, std_error: *mut f64) -> SdStatus {
    guard(|| {
        let fit = non_null(fit, "fit")?;
        if estimate.is_null() || std_error.is_null() {
            return Err(Failure(SdStatus::NullPointer, "output pointer is null".into()));
        }
        *estimate = fit.bound.estimate;
        *std_error = fit.bound.std_error;
        Ok(())
    })
}

/// Releases a fit. Null is ignored.
///
/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sd_fit_free(fit: *mut SdFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
