//! Deterministic synthetic scans: respiration with rate drift, depth
//! modulation and discrete events; head motion coupled to respiration;
//! ROI signals coupled to smoothed RV.
//!
//! Scenario files are `key = value` lines (`#` starts a comment). Lists are
//! comma-separated. Events are written `kind:onset_s:duration_s:magnitude`.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::io::{MotionSeries, RoiSeries};
use crate::rng;
use crate::signals::{compute_rv, FrameClock, RespiratoryTrace, RvSeries, DEFAULT_PHYSIO_RATE_HZ, DEFAULT_RV_WINDOW_S, DEFAULT_TR_S};

/// Length of the raised-cosine transition on each side of an event.
pub const EVENT_RAMP_S: f64 = 2.0;
/// Respiration rate never drops below this.
const MIN_RATE_HZ: f64 = 0.05;
/// Frames in the moving average applied to RV before it drives the ROIs.
pub const BOLD_SMOOTHING_FRAMES: usize = 9;
/// Lag-one coefficient of the ROI noise.
pub const BOLD_NOISE_AR: f64 = 0.3;
/// Components in the slow random depth modulation.
const DEPTH_COMPONENTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    DeepBreath,
    ShallowSpell,
    BreathHold,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::DeepBreath => "deep_breath",
            EventKind::ShallowSpell => "shallow_spell",
            EventKind::BreathHold => "breath_hold",
        }
    }

    /// Change of breathing rate at full event weight.
    fn rate_delta_hz(self) -> f64 {
        match self {
            EventKind::DeepBreath => -0.05,
            EventKind::ShallowSpell => 0.05,
            EventKind::BreathHold => 0.0,
        }
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deep_breath" => Ok(EventKind::DeepBreath),
            "shallow_spell" => Ok(EventKind::ShallowSpell),
            "breath_hold" => Ok(EventKind::BreathHold),
            _ => Err(Error::InvalidArgument(format!("events: unknown event kind '{s}'"))),
        }
    }
}

/// A span of altered breathing depth. `magnitude` is the depth factor
/// reached inside the span: above 1 for deep breaths, below 1 for shallow
/// spells, near 0 for holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    pub onset_s: f64,
    pub duration_s: f64,
    pub magnitude: f64,
}

impl Event {
    /// Weight in [0, 1]: 1 inside the span, raised-cosine ramps outside it.
    pub fn weight(&self, t: f64) -> f64 {
        let end = self.onset_s + self.duration_s;
        if t >= self.onset_s && t <= end {
            1.0
        } else {
            let d = if t < self.onset_s { self.onset_s - t } else { t - end };
            if d >= EVENT_RAMP_S {
                0.0
            } else {
                0.5 * (1.0 + (PI * d / EVENT_RAMP_S).cos())
            }
        }
    }

    fn validate(&self, duration_s: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("events: {} {msg}", self.kind.name())));
        if !(self.onset_s >= 0.0 && self.duration_s > 0.0 && self.onset_s + self.duration_s <= duration_s) {
            return bad(format!(
                "span [{}, {}] s is outside the scan (0 to {duration_s} s)",
                self.onset_s,
                self.onset_s + self.duration_s
            ));
        }
        let ok = match self.kind {
            EventKind::DeepBreath => self.magnitude >= 1.0,
            EventKind::ShallowSpell => self.magnitude > 0.0 && self.magnitude <= 1.0,
            EventKind::BreathHold => (0.0..1.0).contains(&self.magnitude),
        };
        if !ok || !self.magnitude.is_finite() {
            return bad(format!("magnitude {} out of range", self.magnitude));
        }
        Ok(())
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}:{}", self.kind.name(), self.onset_s, self.duration_s, self.magnitude)
    }
}

impl FromStr for Event {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        let (kind, onset, dur, mag) = match parts.as_slice() {
            [k, o, d, m] => (*k, *o, *d, Some(*m)),
            [k, o, d] => (*k, *o, *d, None),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "events: '{s}' is not kind:onset_s:duration_s[:magnitude]"
                )))
            }
        };
        let kind: EventKind = kind.parse()?;
        let num = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("events: '{v}' is not a number in '{s}'")))
        };
        let magnitude = match (mag, kind) {
            (Some(m), _) => num(m)?,
            (None, EventKind::DeepBreath) => 2.0,
            (None, EventKind::ShallowSpell) => 0.5,
            (None, EventKind::BreathHold) => 0.0,
        };
        Ok(Event {
            kind,
            onset_s: num(onset)?,
            duration_s: num(dur)?,
            magnitude,
        })
    }
}

/// Everything needed to generate one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub duration_s: f64,
    pub tr_s: f64,
    pub physio_rate_hz: f64,
    pub rv_window_s: f64,
    /// Mean breathing rate; the instantaneous rate is
    /// `base - drift_amp * cos(2 pi t / drift_period)`.
    pub base_rate_hz: f64,
    pub drift_amp_hz: f64,
    pub drift_period_s: f64,
    /// Standard deviation of the log depth modulation (0 disables it).
    pub depth_variability: f64,
    /// Shortest period of the depth modulation.
    pub depth_timescale_s: f64,
    pub events: Vec<Event>,
    /// Extra events drawn from the respiration stream.
    pub random_events: usize,
    /// Gain of respiration into each motion parameter (rad, rad, rad, mm, mm, mm).
    pub motion_gains: [f64; 6],
    /// Polynomial drift amplitude relative to each channel's gain.
    pub motion_drift: f64,
    /// White-noise sigma relative to each channel's gain.
    pub motion_noise: f64,
    pub n_roi: usize,
    /// One gain for all ROIs or one per ROI; empty means evenly spread over
    /// [0.1, 1].
    pub roi_coupling: Vec<f64>,
    pub bold_noise_sigma: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            duration_s: 300.0,
            tr_s: DEFAULT_TR_S,
            physio_rate_hz: DEFAULT_PHYSIO_RATE_HZ,
            rv_window_s: DEFAULT_RV_WINDOW_S,
            base_rate_hz: 0.3,
            drift_amp_hz: 0.15,
            drift_period_s: 600.0,
            depth_variability: 0.3,
            depth_timescale_s: 15.0,
            events: Vec::new(),
            random_events: 4,
            motion_gains: [0.002, 0.001, 0.0005, 0.05, 0.2, 0.08],
            motion_drift: 0.3,
            motion_noise: 1.0,
            n_roi: 90,
            roi_coupling: Vec::new(),
            bold_noise_sigma: 1.0,
            seed: 0,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse '{}'", v.trim())))
        })
        .collect()
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse '{}'", value.trim())))
}

impl ScenarioConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "duration_s" => self.duration_s = parse_value(key, value)?,
            "tr_s" => self.tr_s = parse_value(key, value)?,
            "physio_rate_hz" => self.physio_rate_hz = parse_value(key, value)?,
            "rv_window_s" => self.rv_window_s = parse_value(key, value)?,
            "base_rate_hz" => self.base_rate_hz = parse_value(key, value)?,
            "drift_amp_hz" => self.drift_amp_hz = parse_value(key, value)?,
            "drift_period_s" => self.drift_period_s = parse_value(key, value)?,
            "depth_variability" => self.depth_variability = parse_value(key, value)?,
            "depth_timescale_s" => self.depth_timescale_s = parse_value(key, value)?,
            "random_events" => self.random_events = parse_value(key, value)?,
            "motion_drift" => self.motion_drift = parse_value(key, value)?,
            "motion_noise" => self.motion_noise = parse_value(key, value)?,
            "n_roi" => self.n_roi = parse_value(key, value)?,
            "bold_noise_sigma" => self.bold_noise_sigma = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "events" => self.events = parse_list(key, value)?,
            "roi_coupling" => self.roi_coupling = parse_list(key, value)?,
            "motion_gains" => {
                let g: Vec<f64> = parse_list(key, value)?;
                self.motion_gains = g.try_into().map_err(|g: Vec<f64>| {
                    Error::InvalidArgument(format!("motion_gains: expected 6 values, got {}", g.len()))
                })?;
            }
            _ => return Err(Error::InvalidArgument(format!("unknown scenario key '{key}'"))),
        }
        Ok(())
    }

    /// Defaults overridden by the settings in `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("line {}: expected key = value, got '{line}'", i + 1))
            })?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::InvalidArgument(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Settings as scenario-file text; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
        let events: Vec<String> = self.events.iter().map(Event::to_string).collect();
        [
            format!("duration_s = {}", self.duration_s),
            format!("tr_s = {}", self.tr_s),
            format!("physio_rate_hz = {}", self.physio_rate_hz),
            format!("rv_window_s = {}", self.rv_window_s),
            format!("base_rate_hz = {}", self.base_rate_hz),
            format!("drift_amp_hz = {}", self.drift_amp_hz),
            format!("drift_period_s = {}", self.drift_period_s),
            format!("depth_variability = {}", self.depth_variability),
            format!("depth_timescale_s = {}", self.depth_timescale_s),
            format!("events = {}", events.join(", ")),
            format!("random_events = {}", self.random_events),
            format!("motion_gains = {}", list(&self.motion_gains)),
            format!("motion_drift = {}", self.motion_drift),
            format!("motion_noise = {}", self.motion_noise),
            format!("n_roi = {}", self.n_roi),
            format!("roi_coupling = {}", list(&self.roi_coupling)),
            format!("bold_noise_sigma = {}", self.bold_noise_sigma),
            format!("seed = {}", self.seed),
        ]
        .join("\n")
            + "\n"
    }

    /// Settings as key/value pairs, in the same form as [`Self::to_text`].
    pub fn text_pairs(&self) -> std::collections::BTreeMap<String, String> {
        self.to_text()
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("duration_s", self.duration_s),
            ("tr_s", self.tr_s),
            ("physio_rate_hz", self.physio_rate_hz),
            ("rv_window_s", self.rv_window_s),
            ("base_rate_hz", self.base_rate_hz),
            ("drift_period_s", self.drift_period_s),
            ("depth_timescale_s", self.depth_timescale_s),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{key} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("drift_amp_hz", self.drift_amp_hz),
            ("depth_variability", self.depth_variability),
            ("motion_drift", self.motion_drift),
            ("motion_noise", self.motion_noise),
            ("bold_noise_sigma", self.bold_noise_sigma),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{key} must be non-negative, got {v}")));
            }
        }
        if self.motion_gains.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidArgument("motion_gains must be finite".into()));
        }
        if self.base_rate_hz - self.drift_amp_hz <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "drift_amp_hz {} would drive the rate to zero (base_rate_hz {})",
                self.drift_amp_hz, self.base_rate_hz
            )));
        }
        if 2.0 * self.base_rate_hz.max(self.base_rate_hz + self.drift_amp_hz) >= self.physio_rate_hz {
            return Err(Error::InvalidArgument("physio_rate_hz is too low for the breathing rate".into()));
        }
        if self.n_frames() < 2 * 65 {
            return Err(Error::InvalidArgument(format!(
                "duration_s {} gives {} frames; at least two 65-frame windows are needed",
                self.duration_s,
                self.n_frames()
            )));
        }
        if self.n_roi == 0 {
            return Err(Error::InvalidArgument("n_roi must be positive".into()));
        }
        if self.roi_coupling.len() > 1 && self.roi_coupling.len() != self.n_roi {
            return Err(Error::InvalidArgument(format!(
                "roi_coupling: expected 1 or {} values, got {}",
                self.n_roi,
                self.roi_coupling.len()
            )));
        }
        if self.roi_coupling.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("roi_coupling must be finite".into()));
        }
        for e in &self.events {
            e.validate(self.duration_s)?;
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        (self.duration_s / self.tr_s + 1e-9).floor() as usize
    }

    pub fn clock(&self) -> Result<FrameClock> {
        FrameClock::new(self.tr_s, self.n_frames())
    }

    /// Per-ROI coupling gains.
    pub fn roi_gains(&self) -> Vec<f64> {
        match self.roi_coupling.as_slice() {
            [] if self.n_roi == 1 => vec![1.0],
            [] => (0..self.n_roi)
                .map(|j| 0.1 + 0.9 * j as f64 / (self.n_roi - 1) as f64)
                .collect(),
            [g] => vec![*g; self.n_roi],
            gains => gains.to_vec(),
        }
    }

    /// Breathing rate at time `t` before event adjustments.
    pub fn drift_rate_hz(&self, t: f64) -> f64 {
        self.base_rate_hz - self.drift_amp_hz * (2.0 * PI * t / self.drift_period_s).cos()
    }

    /// Configured events plus the random ones, sorted by onset.
    pub fn all_events(&self) -> Vec<Event> {
        let mut events = self.events.clone();
        let mut r = rng::stream(self.seed, rng::RESPIRATION);
        // Separate from the depth-modulation draws.
        r.set_word_pos(1 << 40);
        for _ in 0..self.random_events {
            let kind = [EventKind::DeepBreath, EventKind::ShallowSpell, EventKind::BreathHold][r.random_range(0..3)];
            let (dur, mag) = match kind {
                EventKind::DeepBreath => (r.random_range(3.0..6.0), r.random_range(1.5..2.5)),
                EventKind::ShallowSpell => (r.random_range(10.0..30.0), r.random_range(0.3..0.6)),
                EventKind::BreathHold => (r.random_range(5.0..15.0), 0.0),
            };
            let latest = self.duration_s - dur - EVENT_RAMP_S;
            if latest <= EVENT_RAMP_S {
                continue;
            }
            events.push(Event {
                kind,
                onset_s: r.random_range(EVENT_RAMP_S..latest),
                duration_s: dur,
                magnitude: mag,
            });
        }
        events.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
        events
    }
}

/// Depth factor and rate at each physio sample time.
fn depth_and_rate(cfg: &ScenarioConfig, times: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng::stream(cfg.seed, rng::RESPIRATION);
    // Sum of slow sinusoids with random frequency and phase, unit variance.
    let components: Vec<(f64, f64)> = (0..DEPTH_COMPONENTS)
        .map(|_| {
            let period = cfg.depth_timescale_s * r.random_range(1.0..4.0);
            (1.0 / period, r.random_range(0.0..2.0 * PI))
        })
        .collect();
    let norm = (2.0 / DEPTH_COMPONENTS as f64).sqrt();
    let events = cfg.all_events();
    let mut depth = Vec::with_capacity(times.len());
    let mut rate = Vec::with_capacity(times.len());
    for &t in times {
        let slow: f64 = components.iter().map(|(f, ph)| (2.0 * PI * f * t + ph).sin()).sum::<f64>() * norm;
        let mut a = (cfg.depth_variability * slow).exp();
        let mut f = cfg.drift_rate_hz(t);
        for e in &events {
            let w = e.weight(t);
            if w == 0.0 {
                continue;
            }
            a *= 1.0 + (e.magnitude - 1.0) * w;
            f += e.kind.rate_delta_hz() * w;
        }
        depth.push(a);
        rate.push(f.max(MIN_RATE_HZ));
    }
    (depth, rate)
}

/// Respiratory belt trace `A(t) sin(2 pi phi(t))` with `phi` the running
/// integral of the instantaneous rate.
pub fn gen_respiration(cfg: &ScenarioConfig) -> Result<RespiratoryTrace> {
    cfg.validate()?;
    let fs = cfg.physio_rate_hz;
    // Cover the last frame's full RV window.
    let n = (cfg.duration_s * fs).ceil() as usize + 1;
    let times: Vec<f64> = (0..n).map(|i| i as f64 / fs).collect();
    let (depth, rate) = depth_and_rate(cfg, &times);
    let mut phase = 0.0;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            phase += 0.5 * (rate[i - 1] + rate[i]) / fs;
        }
        samples.push(depth[i] * (2.0 * PI * phase).sin());
    }
    RespiratoryTrace::new(samples, fs, 0.0)
}

/// Motion parameters: `gain * resp(t_k)` plus a random cubic drift and
/// white noise, both scaled by the channel gain.
pub fn gen_motion(cfg: &ScenarioConfig, resp: &RespiratoryTrace, clock: &FrameClock) -> Result<MotionSeries> {
    let last = clock.time(clock.n_frames() - 1);
    if clock.start_time_s() < resp.start_time_s() - 1e-9 || last > resp.end_time_s() + 1e-9 {
        return Err(Error::Shape(format!(
            "respiration covers [{}, {}] s but frames span [{}, {last}] s",
            resp.start_time_s(),
            resp.end_time_s(),
            clock.start_time_s()
        )));
    }
    let mut r = rng::stream(cfg.seed, rng::MOTION);
    let drift: Vec<[f64; 3]> = (0..6)
        .map(|_| [0; 3].map(|_| r.random_range(-1.0..1.0) * cfg.motion_drift))
        .collect();
    let span = (last - clock.start_time_s()).max(f64::MIN_POSITIVE);
    let rows = clock
        .times()
        .map(|t| {
            let u = 2.0 * (t - clock.start_time_s()) / span - 1.0;
            let resp_t = resp.value_at(t);
            let mut row = [0.0; 6];
            for (c, v) in row.iter_mut().enumerate() {
                let g = cfg.motion_gains[c];
                let [c1, c2, c3] = drift[c];
                let poly = c1 * u + c2 * u * u + c3 * u * u * u;
                let noise: f64 = StandardNormal.sample(&mut r);
                *v = g * (resp_t + poly + cfg.motion_noise * noise);
            }
            row
        })
        .collect();
    MotionSeries::new(rows, *clock)
}

/// Centered moving average with the window truncated at the edges.
fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..x.len())
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// ROI signals `-gain_j * smooth(rv) + AR(1) noise`.
pub fn gen_bold(cfg: &ScenarioConfig, rv: &RvSeries, clock: &FrameClock) -> Result<RoiSeries> {
    rv.clock().ensure_same(clock, "RV vs frames")?;
    let gains = cfg.roi_gains();
    let smooth = moving_average(rv.values(), BOLD_SMOOTHING_FRAMES);
    let mut r = rng::stream(cfg.seed, rng::BOLD);
    let innovation = cfg.bold_noise_sigma * (1.0 - BOLD_NOISE_AR * BOLD_NOISE_AR).sqrt();
    let channels: Vec<Vec<f64>> = gains
        .iter()
        .map(|g| {
            let z0: f64 = StandardNormal.sample(&mut r);
            let mut e = cfg.bold_noise_sigma * z0;
            smooth
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    if k > 0 {
                        let z: f64 = StandardNormal.sample(&mut r);
                        e = BOLD_NOISE_AR * e + innovation * z;
                    }
                    -g * s + e
                })
                .collect()
        })
        .collect();
    RoiSeries::from_channels(&channels, *clock)
}

/// One generated scan; `rv` is computed from `respiration`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanBundle {
    pub respiration: RespiratoryTrace,
    pub motion: MotionSeries,
    pub roi: RoiSeries,
    pub rv: RvSeries,
}

pub fn gen_scan(cfg: &ScenarioConfig) -> Result<ScanBundle> {
    cfg.validate()?;
    let clock = cfg.clock()?;
    let respiration = gen_respiration(cfg)?;
    let rv = compute_rv(&respiration, &clock, cfg.rv_window_s)?;
    let motion = gen_motion(cfg, &respiration, &clock)?;
    let roi = gen_bold(cfg, &rv, &clock)?;
    Ok(ScanBundle {
        respiration,
        motion,
        roi,
        rv,
    })
}

/// Scenario of scan `index` in a dataset generated from `cfg`: identical
/// settings with a per-scan seed drawn from `cfg.seed`.
pub fn scan_scenario(cfg: &ScenarioConfig, index: usize) -> ScenarioConfig {
    let mut rng = rng::stream(cfg.seed, rng::SCAN_SEEDS);
    rng.set_word_pos(2 * index as u128);
    ScenarioConfig {
        seed: rng.next_u64(),
        ..cfg.clone()
    }
}

/// `n_scans` bundles named `scan000`, `scan001`, ...
pub fn gen_dataset(cfg: &ScenarioConfig, n_scans: usize) -> Result<Vec<(String, ScanBundle)>> {
    cfg.validate()?;
    (0..n_scans)
        .into_par_iter()
        .map(|i| Ok((format!("scan{i:03}"), gen_scan(&scan_scenario(cfg, i))?)))
        .collect()
}
