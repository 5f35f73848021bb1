//! Respiratory-band IIR filters for head-motion channels.
//!
//! Filters are maximally flat (Butterworth) band-pass or band-stop designs
//! obtained from an analog low-pass prototype of order `order / 2`, the
//! low-pass to band transform, and the bilinear transform with frequency
//! prewarping. They are realized as cascaded second-order sections in
//! direct form II transposed.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::io::MotionSeries;

/// Poles must sit at least this far inside the unit circle.
pub const STABILITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterKind {
    #[default]
    Bandpass,
    /// Band-stop (notch) complement of the band-pass.
    Notch,
}

/// Band edges and order of a respiratory-band filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    /// Total filter order; must be even and positive.
    pub order: usize,
    pub kind: FilterKind,
}

impl Default for BandSpec {
    fn default() -> Self {
        Self {
            low_hz: 0.2,
            high_hz: 0.5,
            order: 4,
            kind: FilterKind::Bandpass,
        }
    }
}

impl BandSpec {
    pub fn bandpass(low_hz: f64, high_hz: f64) -> Self {
        Self {
            low_hz,
            high_hz,
            ..Self::default()
        }
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let nyquist = sample_rate_hz / 2.0;
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < nyquist) {
            return Err(Error::InvalidArgument(format!(
                "band {}-{} Hz must satisfy 0 < low < high < Nyquist ({nyquist} Hz)",
                self.low_hz, self.high_hz
            )));
        }
        if self.order == 0 || !self.order.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "filter order must be even and positive, got {}",
                self.order
            )));
        }
        Ok(())
    }
}

/// Parses `"lo:hi"` in Hz.
impl FromStr for BandSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("band '{s}' is not of the form lo:hi")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("band edge '{v}' is not a number")))
        };
        Ok(BandSpec::bandpass(parse(lo)?, parse(hi)?))
    }
}

impl fmt::Display for BandSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.low_hz, self.high_hz)
    }
}

/// One biquad with `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    /// `[a1, a2]`.
    pub a: [f64; 2],
}

impl Sos {
    pub const IDENTITY: Sos = Sos {
        b: [1.0, 0.0, 0.0],
        a: [0.0, 0.0],
    };

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + self.b[1] * z_inv + self.b[2] * z2;
        let den = 1.0 + self.a[0] * z_inv + self.a[1] * z2;
        num / den
    }

    /// Pole moduli (roots of `z^2 + a1 z + a2`).
    fn pole_magnitudes(&self) -> [f64; 2] {
        let [a1, a2] = self.a;
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [((-a1 + disc) / 2.0).norm(), ((-a1 - disc) / 2.0).norm()]
    }

    /// Steady-state DF2T state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let gain = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z2 = b2 - a2 * gain;
        let z1 = b1 - a1 * gain + z2;
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// A stable cascade of second-order sections at a fixed design rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRealization {
    sections: Vec<Sos>,
    sample_rate_hz: f64,
}

impl FilterRealization {
    pub fn new(sections: Vec<Sos>, sample_rate_hz: f64) -> Result<Self> {
        if sections.is_empty() {
            return Err(Error::InvalidArgument("filter has no sections".into()));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidArgument("design sample rate must be positive".into()));
        }
        for (i, s) in sections.iter().enumerate() {
            if s.b.iter().chain(&s.a).any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(format!("coefficient in section {i}")));
            }
            if s.pole_magnitudes().iter().any(|&m| m >= 1.0 - STABILITY_MARGIN) {
                return Err(Error::InvalidArgument(format!("section {i} is unstable")));
            }
        }
        Ok(Self {
            sections,
            sample_rate_hz,
        })
    }

    pub fn sections(&self) -> &[Sos] {
        &self.sections
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// Total order (two per section).
    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    /// Largest pole modulus over all sections.
    pub fn max_pole_magnitude(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| s.pole_magnitudes())
            .fold(0.0, f64::max)
    }

    /// Series connection of `self` followed by `other`.
    pub fn cascade(&self, other: &FilterRealization) -> Result<FilterRealization> {
        if (self.sample_rate_hz - other.sample_rate_hz).abs() > 1e-12 * self.sample_rate_hz {
            return Err(Error::InvalidArgument("cascaded filters differ in sample rate".into()));
        }
        let mut sections = self.sections.clone();
        sections.extend_from_slice(&other.sections);
        FilterRealization::new(sections, self.sample_rate_hz)
    }

    /// Edge padding used by [`filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * self.order()
    }

    /// One causal pass. `initial` holds per-section DF2T states.
    pub fn filter_once(&self, input: &[f64], initial: Option<&[[f64; 2]]>) -> Vec<f64> {
        let mut out = input.to_vec();
        for (i, s) in self.sections.iter().enumerate() {
            let [b0, b1, b2] = s.b;
            let [a1, a2] = s.a;
            let [mut z1, mut z2] = initial.map_or([0.0, 0.0], |st| st[i]);
            for v in out.iter_mut() {
                let x = *v;
                let y = b0 * x + z1;
                z1 = b1 * x - a1 * y + z2;
                z2 = b2 * x - a2 * y;
                *v = y;
            }
        }
        out
    }

    /// Per-section states that make the cascade start in steady state for a
    /// unit constant input.
    pub fn step_initial_state(&self) -> Vec<[f64; 2]> {
        let mut level = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [z1, z2] = s.step_state();
                let state = [z1 * level, z2 * level];
                level *= s.dc_gain();
                state
            })
            .collect()
    }
}

/// Design a Butterworth band-pass (or band-stop for [`FilterKind::Notch`]).
pub fn design_bandpass(spec: &BandSpec, sample_rate_hz: f64) -> Result<FilterRealization> {
    spec.validate(sample_rate_hz)?;
    let n = spec.order / 2;
    let w1 = (PI * spec.low_hz / sample_rate_hz).tan();
    let w2 = (PI * spec.high_hz / sample_rate_hz).tan();
    let w0_sq = w1 * w2;
    let bw = w2 - w1;

    let mut analog = Vec::with_capacity(2 * n);
    for k in 0..n {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta);
        // Roots of s^2 - c s + w0^2 with c = p*bw (band-pass) or bw/p (band-stop).
        let c = match spec.kind {
            FilterKind::Bandpass => p * bw,
            FilterKind::Notch => bw / p,
        };
        let disc = (c * c - 4.0 * w0_sq).sqrt();
        analog.push((c + disc) / 2.0);
        analog.push((c - disc) / 2.0);
    }
    let one = Complex64::new(1.0, 0.0);
    let digital: Vec<Complex64> = analog.iter().map(|s| (one + s) / (one - s)).collect();
    let pole_pairs = pair_conjugates(&digital)?;

    let w0 = w0_sq.sqrt();
    let (b_shape, reference) = match spec.kind {
        FilterKind::Bandpass => ([1.0, 0.0, -1.0], 2.0 * w0.atan()),
        FilterKind::Notch => {
            let zero = (one + Complex64::new(0.0, w0)) / (one - Complex64::new(0.0, w0));
            ([1.0, -2.0 * zero.re, 1.0], 0.0)
        }
    };
    let z_inv = Complex64::from_polar(1.0, -reference);
    let sections = pole_pairs
        .into_iter()
        .map(|[a1, a2]| {
            let unit = Sos { b: b_shape, a: [a1, a2] };
            let g = 1.0 / unit.response(z_inv).norm();
            Sos {
                b: [b_shape[0] * g, b_shape[1] * g, b_shape[2] * g],
                a: [a1, a2],
            }
        })
        .collect();
    FilterRealization::new(sections, sample_rate_hz)
}

/// Group poles into real-coefficient quadratics `[a1, a2]`.
fn pair_conjugates(poles: &[Complex64]) -> Result<Vec<[f64; 2]>> {
    const IMAG_TOL: f64 = 1e-12;
    let mut upper: Vec<Complex64> = poles.iter().filter(|p| p.im > IMAG_TOL).copied().collect();
    let lower = poles.iter().filter(|p| p.im < -IMAG_TOL).count();
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= IMAG_TOL)
        .map(|p| p.re)
        .collect();
    if upper.len() != lower || !real.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument("pole set is not conjugate-symmetric".into()));
    }
    upper.sort_by(|a, b| a.re.total_cmp(&b.re));
    real.sort_by(f64::total_cmp);
    let mut pairs: Vec<[f64; 2]> = upper.iter().map(|p| [-2.0 * p.re, p.norm_sqr()]).collect();
    pairs.extend(real.chunks(2).map(|r| [-(r[0] + r[1]), r[0] * r[1]]));
    Ok(pairs)
}

/// Complex gain of the cascade at each frequency (Hz).
pub fn frequency_response(filter: &FilterRealization, freqs_hz: &[f64]) -> Result<Vec<Complex64>> {
    let fs = filter.sample_rate_hz();
    let nyquist = fs / 2.0;
    freqs_hz
        .iter()
        .map(|&f| {
            if !(0.0..=nyquist * (1.0 + 1e-12)).contains(&f) {
                return Err(Error::InvalidArgument(format!(
                    "frequency {f} Hz outside [0, {nyquist}] Hz"
                )));
            }
            let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f / fs);
            Ok(filter
                .sections()
                .iter()
                .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv)))
        })
        .collect()
}

/// Zero-phase forward-backward filtering with odd-reflection edge padding.
pub fn filtfilt(filter: &FilterRealization, channel: &[f64]) -> Result<Vec<f64>> {
    let pad = filter.pad_len();
    let n = channel.len();
    if n <= pad {
        return Err(Error::InvalidArgument(format!(
            "channel of {n} samples is too short for edge padding of {pad}"
        )));
    }
    let first = channel[0];
    let last = channel[n - 1];
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - channel[i]));
    ext.extend_from_slice(channel);
    ext.extend((1..=pad).map(|i| 2.0 * last - channel[n - 1 - i]));

    let zi = filter.step_initial_state();
    let scaled = |x0: f64| -> Vec<[f64; 2]> { zi.iter().map(|[a, b]| [a * x0, b * x0]).collect() };

    let mut y = filter.filter_once(&ext, Some(&scaled(ext[0])));
    y.reverse();
    let mut y = filter.filter_once(&y, Some(&scaled(y[0])));
    y.reverse();
    Ok(y[pad..pad + n].to_vec())
}

/// Zero-phase filter every motion channel independently at the frame rate.
pub fn filter_motion(motion: &MotionSeries, spec: &BandSpec) -> Result<MotionSeries> {
    let clock = *motion.clock();
    let filter = design_bandpass(spec, clock.frame_rate_hz())?;
    let mut rows = vec![[0.0; 6]; motion.n_frames()];
    for c in 0..6 {
        let channel: Vec<f64> = motion.rows().iter().map(|r| r[c]).collect();
        for (row, v) in rows.iter_mut().zip(filtfilt(&filter, &channel)?) {
            row[c] = v;
        }
    }
    MotionSeries::new(rows, clock)
}
