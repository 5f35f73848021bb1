//! Time-series primitives and respiratory variation (RV) ground truth.
//!
//! RV at a frame is the standard deviation of the respiratory belt
//! waveform inside a window centered on the frame time. Windows that reach
//! past either end of the recording are truncated to the recorded extent.

use crate::error::{Error, Result};
use crate::io::MotionSeries;

/// Default physiological sampling rate (Hz).
pub const DEFAULT_PHYSIO_RATE_HZ: f64 = 400.0;
/// Default repetition time (s).
pub const DEFAULT_TR_S: f64 = 0.72;
/// Default RV window width (s).
pub const DEFAULT_RV_WINDOW_S: f64 = 6.0;

/// Uniformly sampled respiratory belt waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct RespiratoryTrace {
    samples: Vec<f64>,
    sample_rate_hz: f64,
    start_time_s: f64,
}

impl RespiratoryTrace {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64, start_time_s: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument("respiratory trace is empty".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("respiratory sample {i}")));
        }
        if !start_time_s.is_finite() {
            return Err(Error::NonFinite("trace start time".into()));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            start_time_s,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn start_time_s(&self) -> f64 {
        self.start_time_s
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Timestamp of sample `i`.
    pub fn time_of(&self, i: usize) -> f64 {
        self.start_time_s + i as f64 / self.sample_rate_hz
    }

    /// Timestamp of the last sample.
    pub fn end_time_s(&self) -> f64 {
        self.time_of(self.samples.len() - 1)
    }

    /// Linear interpolation at time `t`; clamps outside the recorded span.
    pub fn value_at(&self, t: f64) -> f64 {
        let pos = (t - self.start_time_s) * self.sample_rate_hz;
        let last = self.samples.len() - 1;
        if pos <= 0.0 {
            return self.samples[0];
        }
        if pos >= last as f64 {
            return self.samples[last];
        }
        let i0 = pos.floor() as usize;
        let frac = pos - i0 as f64;
        self.samples[i0] + frac * (self.samples[i0 + 1] - self.samples[i0])
    }
}

/// Frame timing of an fMRI run: frame `k` is acquired at `start + k * tr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameClock {
    tr_s: f64,
    n_frames: usize,
    start_time_s: f64,
}

impl FrameClock {
    pub fn new(tr_s: f64, n_frames: usize) -> Result<Self> {
        Self::with_start(tr_s, n_frames, 0.0)
    }

    pub fn with_start(tr_s: f64, n_frames: usize, start_time_s: f64) -> Result<Self> {
        if !(tr_s > 0.0) || !tr_s.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "repetition time must be positive, got {tr_s}"
            )));
        }
        if n_frames == 0 {
            return Err(Error::InvalidArgument("frame clock needs at least one frame".into()));
        }
        if !start_time_s.is_finite() {
            return Err(Error::NonFinite("frame clock start time".into()));
        }
        Ok(Self {
            tr_s,
            n_frames,
            start_time_s,
        })
    }

    pub fn tr_s(&self) -> f64 {
        self.tr_s
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn start_time_s(&self) -> f64 {
        self.start_time_s
    }

    pub fn frame_rate_hz(&self) -> f64 {
        1.0 / self.tr_s
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start_time_s + k as f64 * self.tr_s
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_frames).map(move |k| self.time(k))
    }

    /// Two clocks describe the same frames (identical frame count, TR within
    /// 1e-9 s, start within 1e-9 s).
    pub fn same_frames(&self, other: &FrameClock) -> bool {
        self.n_frames == other.n_frames
            && (self.tr_s - other.tr_s).abs() < 1e-9
            && (self.start_time_s - other.start_time_s).abs() < 1e-9
    }

    pub(crate) fn ensure_same(&self, other: &FrameClock, what: &str) -> Result<()> {
        if self.same_frames(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: clock mismatch ({} frames @ {} s vs {} frames @ {} s)",
                self.n_frames, self.tr_s, other.n_frames, other.tr_s
            )))
        }
    }
}

/// Per-frame respiratory variation.
#[derive(Debug, Clone, PartialEq)]
pub struct RvSeries {
    values: Vec<f64>,
    clock: FrameClock,
    rv_window_s: f64,
}

impl RvSeries {
    pub fn new(values: Vec<f64>, clock: FrameClock, rv_window_s: f64) -> Result<Self> {
        if values.len() != clock.n_frames() {
            return Err(Error::Shape(format!(
                "RV series has {} values for {} frames",
                values.len(),
                clock.n_frames()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "RV value at frame {k} is negative or non-finite ({})",
                values[k]
            )));
        }
        if !(rv_window_s > 0.0) {
            return Err(Error::InvalidArgument("RV window must be positive".into()));
        }
        Ok(Self {
            values,
            clock,
            rv_window_s,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn clock(&self) -> &FrameClock {
        &self.clock
    }

    pub fn rv_window_s(&self) -> f64 {
        self.rv_window_s
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Normalization used for the windowed standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdKind {
    /// Divide by N.
    #[default]
    Population,
    /// Divide by N - 1 (falls back to 0 for a single sample).
    Sample,
}

/// RV with the default population standard deviation.
pub fn compute_rv(trace: &RespiratoryTrace, clock: &FrameClock, rv_window_s: f64) -> Result<RvSeries> {
    compute_rv_with(trace, clock, rv_window_s, StdKind::Population)
}

pub fn compute_rv_with(
    trace: &RespiratoryTrace,
    clock: &FrameClock,
    rv_window_s: f64,
    kind: StdKind,
) -> Result<RvSeries> {
    if !(rv_window_s > 0.0) || !rv_window_s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "RV window must be positive, got {rv_window_s}"
        )));
    }
    let samples = trace.samples();
    let fs = trace.sample_rate_hz();
    let last = samples.len() as f64 - 1.0;
    let half = rv_window_s / 2.0;
    // Sample timestamps on the window edges count as inside.
    const EDGE_TOL: f64 = 1e-9;

    let mut values = Vec::with_capacity(clock.n_frames());
    for k in 0..clock.n_frames() {
        let t = clock.time(k);
        let lo_s = t - half;
        let hi_s = t + half;
        let lo = ((lo_s - trace.start_time_s()) * fs - EDGE_TOL).ceil().max(0.0);
        let hi = ((hi_s - trace.start_time_s()) * fs + EDGE_TOL).floor().min(last);
        if hi < lo {
            return Err(Error::EmptyWindow { frame: k, lo_s, hi_s });
        }
        let window = &samples[lo as usize..=hi as usize];
        values.push(windowed_std(window, kind));
    }
    RvSeries::new(values, *clock, rv_window_s)
}

fn windowed_std(window: &[f64], kind: StdKind) -> f64 {
    let n = window.len() as f64;
    // Shifting by the first sample keeps a constant window at exactly zero.
    let shift = window[0];
    let mean = window.iter().map(|v| v - shift).sum::<f64>() / n;
    let ss: f64 = window.iter().map(|v| (v - shift - mean).powi(2)).sum();
    let denom = match kind {
        StdKind::Population => n,
        StdKind::Sample if window.len() > 1 => n - 1.0,
        StdKind::Sample => return 0.0,
    };
    (ss / denom).sqrt()
}

/// Resample onto a new uniform grid covering the same interval by linear
/// interpolation. The first sample is always kept; the last one is kept
/// whenever the duration is a whole number of new sample periods.
pub fn resample_linear(trace: &RespiratoryTrace, new_rate_hz: f64) -> Result<RespiratoryTrace> {
    if !(new_rate_hz > 0.0) || !new_rate_hz.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "new sample rate must be positive, got {new_rate_hz}"
        )));
    }
    let src = trace.samples();
    if src.len() < 2 {
        return Err(Error::InvalidArgument(
            "resampling needs at least 2 samples".into(),
        ));
    }
    let fs = trace.sample_rate_hz();
    let last = src.len() - 1;
    // Grid positions in source-index units; positions within 1e-9 of a
    // source sample snap onto it.
    let step = fs / new_rate_hz;
    let n_new = (last as f64 / step + 1e-9).floor() as usize + 1;
    let out = (0..n_new)
        .map(|j| {
            let mut pos = j as f64 * step;
            if (pos - pos.round()).abs() < 1e-9 {
                pos = pos.round();
            }
            let i0 = pos.floor() as usize;
            if i0 >= last {
                return src[last];
            }
            let frac = pos - i0 as f64;
            if frac == 0.0 {
                src[i0]
            } else {
                src[i0] + frac * (src[i0 + 1] - src[i0])
            }
        })
        .collect();
    RespiratoryTrace::new(out, new_rate_hz, trace.start_time_s())
}

/// Split a motion series into its six per-frame channels, ordered
/// `[rot_x, rot_y, rot_z, trans_x, trans_y, trans_z]`.
pub fn motion_to_channels(motion: &MotionSeries, clock: &FrameClock) -> Result<[Vec<f64>; 6]> {
    if motion.n_frames() != clock.n_frames() {
        return Err(Error::Shape(format!(
            "motion has {} frames, clock has {}",
            motion.n_frames(),
            clock.n_frames()
        )));
    }
    Ok(std::array::from_fn(|c| motion.rows().iter().map(|r| r[c]).collect()))
}
