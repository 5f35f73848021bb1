//! C ABI over the rvrecon library.
//!
//! Every fallible call returns an [`RvStatus`]; on failure a message is kept
//! per thread and can be read with [`rv_last_error`]. Filters and models are
//! opaque handles released with their `_free` function. Arrays are passed as
//! pointer plus length and are never retained.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rvrecon::filters::{design_bandpass, filtfilt, BandSpec, FilterRealization};
use rvrecon::metrics::score_scan;
use rvrecon::nn::{load_checkpoint, predict_block, CnnModel};
use rvrecon::signals::{compute_rv, FrameClock, RespiratoryTrace, RvSeries};
use rvrecon::windows::{zscore_per_channel, ChannelBlock, WindowSpec};
use rvrecon::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Shape = 5,
    Numeric = 6,
    Panic = 7,
}

/// Metrics of one prediction against its ground truth.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RvMetrics {
    pub mae: f64,
    pub mse: f64,
    /// NaN when `pearson_defined` is false.
    pub pearson_r: f64,
    pub pearson_defined: bool,
    pub dtw: f64,
}

/// Zero-phase band-pass filter designed for one sampling rate.
pub struct RvFilter {
    inner: FilterRealization,
}

/// Trained reconstruction model.
pub struct RvModel {
    inner: CnnModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> RvStatus {
    match err {
        Error::InvalidArgument(_) | Error::ScanMismatch { .. } => RvStatus::InvalidArgument,
        Error::Parse { .. } => RvStatus::Parse,
        Error::Io { .. } => RvStatus::Io,
        Error::Shape(_) | Error::EmptyWindow { .. } => RvStatus::Shape,
        Error::NonFinite(_)
        | Error::ZeroVariance(_)
        | Error::NonFiniteActivation { .. }
        | Error::Diverged { .. } => RvStatus::Numeric,
    }
}

/// Run `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (RvStatus, String)>) -> RvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RvStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RvStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, (RvStatus, String)>;
}

impl<T> OrStatus<T> for rvrecon::Result<T> {
    fn or_status(self) -> Result<T, (RvStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (RvStatus, String) {
    (RvStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or point to `n` readable values.
unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (RvStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// # Safety
/// `p` must be null or point to `n` writable values.
unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], (RvStatus, String)> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn rv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// RV at `n_frames` frame times `k * tr_s` from a respiratory trace whose
/// first sample is at `start_s`.
///
/// # Safety
/// `samples` must hold `n_samples` values and `out` room for `n_frames`.
#[no_mangle]
pub unsafe extern "C" fn rv_compute(
    samples: *const f64,
    n_samples: usize,
    rate_hz: f64,
    start_s: f64,
    tr_s: f64,
    n_frames: usize,
    window_s: f64,
    out: *mut f64,
) -> RvStatus {
    guard(|| {
        let samples = slice(samples, n_samples, "samples")?;
        let out = slice_mut(out, n_frames, "out")?;
        let trace = RespiratoryTrace::new(samples.to_vec(), rate_hz, start_s).or_status()?;
        let clock = FrameClock::new(tr_s, n_frames).or_status()?;
        let rv = compute_rv(&trace, &clock, window_s).or_status()?;
        out.copy_from_slice(rv.values());
        Ok(())
    })
}

/// Design a band-pass of total order `order` for `sample_rate_hz`.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a handle owned by
/// the caller.
#[no_mangle]
pub unsafe extern "C" fn rv_filter_new(
    low_hz: f64,
    high_hz: f64,
    order: usize,
    sample_rate_hz: f64,
    out: *mut *mut RvFilter,
) -> RvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let mut spec = BandSpec::bandpass(low_hz, high_hz);
        spec.order = order;
        let inner = design_bandpass(&spec, sample_rate_hz).or_status()?;
        *out = Box::into_raw(Box::new(RvFilter { inner }));
        Ok(())
    })
}

/// Forward-backward filtering of `input` into `output` (both length `n`).
///
/// # Safety
/// `filter` must come from [`rv_filter_new`]; `input` and `output` must
/// hold `n` values and may not overlap.
#[no_mangle]
pub unsafe extern "C" fn rv_filter_apply(filter: *const RvFilter, input: *const f64, n: usize, output: *mut f64) -> RvStatus {
    guard(|| {
        let filter = filter.as_ref().ok_or_else(|| null("filter"))?;
        let input = slice(input, n, "input")?;
        let output = slice_mut(output, n, "output")?;
        let y = filtfilt(&filter.inner, input).or_status()?;
        output.copy_from_slice(&y);
        Ok(())
    })
}

/// # Safety
/// `filter` must be null or come from [`rv_filter_new`], and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn rv_filter_free(filter: *mut RvFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

/// MAE, MSE, Pearson correlation and DTW distance of `pred` against `truth`.
///
/// # Safety
/// `pred` and `truth` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rv_metrics(pred: *const f64, truth: *const f64, n: usize, out: *mut RvMetrics) -> RvStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let pred = slice(pred, n, "pred")?;
        let truth = slice(truth, n, "truth")?;
        // Metrics only look at values; any clock shared by both will do.
        let clock = FrameClock::new(1.0, n).or_status()?;
        let p = RvSeries::new(pred.to_vec(), clock, 1.0).or_status()?;
        let t = RvSeries::new(truth.to_vec(), clock, 1.0).or_status()?;
        let s = score_scan("ffi", &p, &t, None).or_status()?;
        *out = RvMetrics {
            mae: s.mae,
            mse: s.mse,
            pearson_r: s.pearson_r.unwrap_or(f64::NAN),
            pearson_defined: s.pearson_r.is_some(),
            dtw: s.dtw,
        };
        Ok(())
    })
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rv_model_load(path: *const c_char, out: *mut *mut RvModel) -> RvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (RvStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let inner = load_checkpoint(Path::new(path)).or_status()?;
        *out = Box::into_raw(Box::new(RvModel { inner }));
        Ok(())
    })
}

/// Input channels the model expects; 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from [`rv_model_load`].
#[no_mangle]
pub unsafe extern "C" fn rv_model_in_channels(model: *const RvModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.arch().in_channels)
}

/// Window length in frames; 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from [`rv_model_load`].
#[no_mangle]
pub unsafe extern "C" fn rv_model_window_len(model: *const RvModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.arch().window_len)
}

/// Reconstruct RV for one scan. `channels` is channel-major
/// (`n_channels * n_frames`, ROIs first, then motion parameters) and is
/// z-scored per channel before prediction. `extrapolated` may be null;
/// otherwise it receives 1 for frames without a direct window estimate.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `model` must come from
/// [`rv_model_load`].
#[no_mangle]
pub unsafe extern "C" fn rv_model_predict(
    model: *const RvModel,
    channels: *const f64,
    n_channels: usize,
    n_frames: usize,
    tr_s: f64,
    stride: usize,
    out_rv: *mut f64,
    extrapolated: *mut u8,
) -> RvStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let total = n_channels
            .checked_mul(n_frames)
            .ok_or_else(|| (RvStatus::InvalidArgument, "input size overflows".to_string()))?;
        let data = slice(channels, total, "channels")?;
        let out_rv = slice_mut(out_rv, n_frames, "out_rv")?;
        let block = ChannelBlock::new(data.to_vec(), n_channels, n_frames).or_status()?;
        let (block, _) = zscore_per_channel(&block);
        let spec = WindowSpec::new(model.inner.arch().window_len, stride).or_status()?;
        let clock = FrameClock::new(tr_s, n_frames).or_status()?;
        let p = predict_block(&model.inner, &block, &spec, &clock, 6.0).or_status()?;
        out_rv.copy_from_slice(p.series.values());
        if !extrapolated.is_null() {
            let flags = slice_mut(extrapolated, n_frames, "extrapolated")?;
            for (f, e) in flags.iter_mut().zip(&p.extrapolated) {
                *f = u8::from(*e);
            }
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from [`rv_model_load`], and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn rv_model_free(model: *mut RvModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
