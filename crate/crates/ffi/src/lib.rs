//! C ABI for `fadegrow`.
//!
//! Objects are opaque handles created by `*_new`/`*_load` and released by the
//! matching `*_free`. Every fallible call returns an [`FgStatus`]; on failure
//! a message is kept per thread and can be copied out with
//! [`fg_last_error_message`]. Panics never cross the boundary.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use fadegrow::sampler::{self, SamplerConfig};
use fadegrow::scorenet::{load_checkpoint, ScoreField, UserContext};
use fadegrow::{Error, FadingMatrix, NonPreferenceState, Schedule};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidTarget = 2,
    DimensionError = 3,
    DomainError = 4,
    ConfigError = 5,
    NumericalError = 6,
    IoError = 7,
    ParseError = 8,
    Panic = 9,
    Other = 10,
}

impl From<&Error> for FgStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidTarget(_)
            | Error::OverlappingSupports(_)
            | Error::SupportMismatch { .. } => FgStatus::InvalidTarget,
            Error::DimensionError(_) | Error::EmptyHistory => FgStatus::DimensionError,
            Error::DomainError(_)
            | Error::OrderingError { .. }
            | Error::UnreachableState { .. } => FgStatus::DomainError,
            Error::ConfigError(_) => FgStatus::ConfigError,
            Error::NumericalError(_) | Error::MagnitudeError(_) | Error::DegenerateReverse => {
                FgStatus::NumericalError
            }
            Error::Io(_) => FgStatus::IoError,
            Error::ParseError { .. } | Error::RangeError { .. } => FgStatus::ParseError,
            Error::DataError(_) => FgStatus::Other,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard<F: FnOnce() -> Result<(), (FgStatus, String)>>(f: F) -> FgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FgStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FgStatus::Panic
        }
    }
}

fn lift(e: Error) -> (FgStatus, String) {
    ((&e).into(), e.to_string())
}

fn null(what: &str) -> (FgStatus, String) {
    (FgStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice_in<'a, T>(
    p: *const T,
    len: usize,
    what: &str,
) -> Result<&'a [T], (FgStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(
    p: *mut T,
    len: usize,
    what: &str,
) -> Result<&'a mut [T], (FgStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

/// Copies the calling thread's last error message (NUL-terminated, truncated
/// to `cap`) into `buf`. Returns the full message length in bytes,
/// excluding the terminator.
#[no_mangle]
pub unsafe extern "C" fn fg_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

// ---------------------------------------------------------------------------
// fading matrices

/// Opaque structured fading matrix.
pub struct FgFadingMatrix {
    inner: FadingMatrix,
}

/// Rank-1 fading matrix toward the nonnegative `weights`. When
/// `has_virtual_item` is nonzero the last index is the virtual item.
#[no_mangle]
pub unsafe extern "C" fn fg_fading_rank1_new(
    weights: *const f64,
    len: usize,
    has_virtual_item: bool,
    out: *mut *mut FgFadingMatrix,
) -> FgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let w = slice_in(weights, len, "weights")?;
        let target = NonPreferenceState::new(w.to_vec(), has_virtual_item).map_err(lift)?;
        let boxed = Box::new(FgFadingMatrix {
            inner: FadingMatrix::rank1(target),
        });
        *out = Box::into_raw(boxed);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fg_fading_corpus_size(fading: *const FgFadingMatrix) -> usize {
    fading.as_ref().map_or(0, |f| f.inner.corpus_size())
}

/// `out = E v`; both buffers have `len` entries.
#[no_mangle]
pub unsafe extern "C" fn fg_fading_apply(
    fading: *const FgFadingMatrix,
    v: *const f64,
    out: *mut f64,
    len: usize,
) -> FgStatus {
    guard(|| {
        let f = fading.as_ref().ok_or_else(|| null("fading"))?;
        let v = slice_in(v, len, "v")?;
        let res = f.inner.apply(v).map_err(lift)?;
        slice_out(out, len, "out")?.copy_from_slice(&res);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fg_fading_free(fading: *mut FgFadingMatrix) {
    if !fading.is_null() {
        drop(Box::from_raw(fading));
    }
}

// ---------------------------------------------------------------------------
// schedules

/// Opaque retention schedule.
pub struct FgSchedule {
    inner: Schedule,
}

fn new_schedule(s: fadegrow::Result<Schedule>, out: *mut *mut FgSchedule) -> FgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = s.map_err(lift)?;
        unsafe { *out = Box::into_raw(Box::new(FgSchedule { inner })) };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fg_schedule_geometric_new(
    beta_min: f64,
    beta_max: f64,
    steps: usize,
    out: *mut *mut FgSchedule,
) -> FgStatus {
    new_schedule(Schedule::geometric(beta_min, beta_max, steps), out)
}

#[no_mangle]
pub unsafe extern "C" fn fg_schedule_linear_new(
    beta_scale: f64,
    steps: usize,
    out: *mut *mut FgSchedule,
) -> FgStatus {
    new_schedule(Schedule::linear(beta_scale, steps), out)
}

/// Retention probability `α(t)` for `t ∈ [0, 1]`.
#[no_mangle]
pub unsafe extern "C" fn fg_schedule_alpha(
    s: *const FgSchedule,
    t: f64,
    out: *mut f64,
) -> FgStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("schedule"))?;
        let v = s.inner.alpha(t).map_err(lift)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Rate `β(t)` for `t ∈ [0, 1]`.
#[no_mangle]
pub unsafe extern "C" fn fg_schedule_beta(s: *const FgSchedule, t: f64, out: *mut f64) -> FgStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("schedule"))?;
        let v = s.inner.beta(t).map_err(lift)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fg_schedule_free(s: *mut FgSchedule) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

// ---------------------------------------------------------------------------
// trained models

/// Opaque trained score network.
pub struct FgModel {
    inner: ScoreField,
}

/// Loads a checkpoint written by `fadegrow train`. `path` is UTF-8.
#[no_mangle]
pub unsafe extern "C" fn fg_model_load(path: *const c_char, out: *mut *mut FgModel) -> FgStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (FgStatus::ConfigError, "path is not UTF-8".to_string()))?;
        let inner = load_checkpoint(Path::new(p)).map_err(lift)?;
        *out = Box::into_raw(Box::new(FgModel { inner }));
        Ok(())
    })
}

/// Number of real items `N` (the virtual item, if any, is not counted).
#[no_mangle]
pub unsafe extern "C" fn fg_model_num_items(model: *const FgModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config().n_items)
}

/// Number of timestep intervals the model was trained with.
#[no_mangle]
pub unsafe extern "C" fn fg_model_steps(model: *const FgModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config().steps)
}

/// Recommends up to `top_k` items for a history (oldest first) by running
/// the reverse sampler with guidance `w`. Writes item ids and their final
/// probabilities, and the number written to `written`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fg_model_recommend(
    model: *const FgModel,
    schedule: *const FgSchedule,
    history: *const usize,
    history_len: usize,
    w: f64,
    seed: u64,
    top_k: usize,
    items_out: *mut usize,
    scores_out: *mut f64,
    written: *mut usize,
) -> FgStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let s = schedule.as_ref().ok_or_else(|| null("schedule"))?;
        let hist = slice_in(history, history_len, "history")?;
        let written = written.as_mut().ok_or_else(|| null("written"))?;
        if s.inner.steps() != m.inner.config().steps {
            return Err((
                FgStatus::ConfigError,
                format!(
                    "schedule has {} steps, model expects {}",
                    s.inner.steps(),
                    m.inner.config().steps
                ),
            ));
        }
        let cfg = SamplerConfig {
            w,
            seed,
            ..SamplerConfig::default()
        };
        let g = sampler::generate(
            &m.inner,
            &UserContext::new(hist.to_vec()),
            &cfg,
            &s.inner,
            &mut cfg.user_rng(0),
        )
        .map_err(lift)?;
        let k = top_k.min(g.ranking.len());
        let items = slice_out(items_out, k, "items_out")?;
        let scores = slice_out(scores_out, k, "scores_out")?;
        for (i, &item) in g.ranking.iter().take(k).enumerate() {
            items[i] = item;
            scores[i] = g.probs[item];
        }
        *written = k;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fg_model_free(model: *mut FgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
