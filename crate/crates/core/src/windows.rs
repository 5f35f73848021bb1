//! Channel assembly, per-scan normalization, sliding windows and
//! scan-level train/test splitting.
//!
//! Channel order is fixed: ROIs `0..n_roi`, then the six motion channels in
//! `.par` order when the arm includes motion.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::filters::{filter_motion, BandSpec};
use crate::io::{MotionSeries, RoiSeries};
use crate::rng;
use crate::signals::RvSeries;

/// Standard deviations below this are treated as a constant channel.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub window_len: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            window_len: 65,
            stride: 1,
        }
    }
}

impl WindowSpec {
    pub fn new(window_len: usize, stride: usize) -> Result<Self> {
        if window_len == 0 || stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "window length and stride must be positive (got {window_len}, {stride})"
            )));
        }
        Ok(Self { window_len, stride })
    }

    /// First, middle (rounded down) and last position inside a window.
    pub fn target_offsets(&self) -> [usize; 3] {
        [0, (self.window_len - 1) / 2, self.window_len - 1]
    }

    /// Number of windows over `n_frames`.
    pub fn count(&self, n_frames: usize) -> Result<usize> {
        if self.window_len == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument("window length and stride must be positive".into()));
        }
        if n_frames < self.window_len {
            return Err(Error::InvalidArgument(format!(
                "scan of {n_frames} frames is shorter than the {}-frame window",
                self.window_len
            )));
        }
        Ok((n_frames - self.window_len) / self.stride + 1)
    }

    pub fn starts(&self, n_frames: usize) -> Result<impl Iterator<Item = usize>> {
        let n = self.count(n_frames)?;
        let stride = self.stride;
        Ok((0..n).map(move |i| i * stride))
    }
}

/// Input configuration of one experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExperimentArm {
    BoldOnly,
    BoldPlusRawMotion,
    BoldPlusFilteredMotion(BandSpec),
}

impl ExperimentArm {
    pub fn uses_motion(&self) -> bool {
        !matches!(self, ExperimentArm::BoldOnly)
    }

    pub fn n_channels(&self, n_roi: usize) -> usize {
        if self.uses_motion() {
            n_roi + 6
        } else {
            n_roi
        }
    }

    /// Command-line name: `bold`, `bold+motion` or `bold+motion-filtered`.
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentArm::BoldOnly => "bold",
            ExperimentArm::BoldPlusRawMotion => "bold+motion",
            ExperimentArm::BoldPlusFilteredMotion(_) => "bold+motion-filtered",
        }
    }

    pub fn band(&self) -> Option<BandSpec> {
        match self {
            ExperimentArm::BoldPlusFilteredMotion(b) => Some(*b),
            _ => None,
        }
    }
}

impl fmt::Display for ExperimentArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExperimentArm::BoldPlusFilteredMotion(b) => write!(f, "{}[{b}]", self.name()),
            _ => f.write_str(self.name()),
        }
    }
}

/// Parses an arm name; the filtered arm gets the default band.
impl FromStr for ExperimentArm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bold" => Ok(ExperimentArm::BoldOnly),
            "bold+motion" => Ok(ExperimentArm::BoldPlusRawMotion),
            "bold+motion-filtered" => Ok(ExperimentArm::BoldPlusFilteredMotion(BandSpec::default())),
            other => Err(Error::InvalidArgument(format!(
                "unknown arm '{other}' (expected bold, bold+motion or bold+motion-filtered)"
            ))),
        }
    }
}

/// Channels x frames block, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBlock {
    data: Vec<f64>,
    n_channels: usize,
    n_frames: usize,
}

impl ChannelBlock {
    pub fn new(data: Vec<f64>, n_channels: usize, n_frames: usize) -> Result<Self> {
        if data.len() != n_channels * n_frames {
            return Err(Error::Shape(format!(
                "block has {} values, expected {n_channels} x {n_frames}",
                data.len()
            )));
        }
        Ok(Self {
            data,
            n_channels,
            n_frames,
        })
    }

    pub fn from_channels(channels: &[Vec<f64>]) -> Result<Self> {
        let n_frames = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != n_frames) {
            return Err(Error::Shape("channels differ in length".into()));
        }
        Self::new(channels.concat(), channels.len(), n_frames)
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.n_frames..(c + 1) * self.n_frames]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Stack ROI channels and, depending on the arm, raw or band-pass filtered
/// motion channels.
pub fn assemble_channels(
    roi: &RoiSeries,
    motion: Option<&MotionSeries>,
    arm: &ExperimentArm,
) -> Result<ChannelBlock> {
    let mut channels: Vec<Vec<f64>> = (0..roi.n_roi()).map(|j| roi.channel(j)).collect();
    if arm.uses_motion() {
        let motion = motion.ok_or_else(|| {
            Error::InvalidArgument(format!("arm {} requires motion parameters", arm.name()))
        })?;
        roi.clock().ensure_same(motion.clock(), "ROI vs motion")?;
        let motion = match arm {
            ExperimentArm::BoldPlusFilteredMotion(band) => filter_motion(motion, band)?,
            _ => motion.clone(),
        };
        channels.extend((0..6).map(|c| motion.channel(c)));
    }
    ChannelBlock::from_channels(&channels)
}

/// Per-channel mean and population standard deviation of one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(block: &ChannelBlock) -> Self {
        let n = block.n_frames() as f64;
        let (mean, std) = (0..block.n_channels())
            .map(|c| {
                let ch = block.channel(c);
                let m = ch.iter().sum::<f64>() / n;
                let var = ch.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                (m, var.sqrt())
            })
            .unzip();
        Self { mean, std }
    }

    pub fn apply(&self, block: &ChannelBlock) -> Result<ChannelBlock> {
        if self.mean.len() != block.n_channels() {
            return Err(Error::Shape(format!(
                "scaler has {} channels, block has {}",
                self.mean.len(),
                block.n_channels()
            )));
        }
        let n = block.n_frames();
        let mut data = Vec::with_capacity(block.data().len());
        for c in 0..block.n_channels() {
            let (m, s) = (self.mean[c], self.std[c]);
            if s < DEGENERATE_STD {
                data.extend(std::iter::repeat_n(0.0, n));
            } else {
                data.extend(block.channel(c).iter().map(|v| (v - m) / s));
            }
        }
        ChannelBlock::new(data, block.n_channels(), n)
    }
}

/// Z-score each channel over the scan; returns the statistics for reuse.
pub fn zscore_per_channel(block: &ChannelBlock) -> (ChannelBlock, Scaler) {
    let scaler = Scaler::fit(block);
    let out = scaler.apply(block).expect("scaler fitted on this block");
    (out, scaler)
}

/// One model input window and its three RV targets.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Channel-major `n_channels x window_len` values.
    pub inputs: Vec<f64>,
    pub n_channels: usize,
    pub window_len: usize,
    pub targets: [f64; 3],
    pub scan_id: String,
    pub start_frame: usize,
}

/// Slice an already assembled block into windows.
pub fn window_block(
    block: &ChannelBlock,
    rv: &RvSeries,
    spec: &WindowSpec,
    scan_id: &str,
) -> Result<Vec<WindowSample>> {
    if rv.len() != block.n_frames() {
        return Err(Error::Shape(format!(
            "RV has {} frames, inputs have {}",
            rv.len(),
            block.n_frames()
        )));
    }
    let offsets = spec.target_offsets();
    let w = spec.window_len;
    spec.starts(block.n_frames())?
        .map(|start| {
            let mut inputs = Vec::with_capacity(block.n_channels() * w);
            for c in 0..block.n_channels() {
                inputs.extend_from_slice(&block.channel(c)[start..start + w]);
            }
            let targets = offsets.map(|o| rv.values()[start + o]);
            Ok(WindowSample {
                inputs,
                n_channels: block.n_channels(),
                window_len: w,
                targets,
                scan_id: scan_id.to_string(),
                start_frame: start,
            })
        })
        .collect()
}

/// Assemble channels for `arm` and cut them into windows (no normalization).
pub fn build_windows(
    roi: &RoiSeries,
    motion: Option<&MotionSeries>,
    rv: &RvSeries,
    arm: &ExperimentArm,
    spec: &WindowSpec,
    scan_id: &str,
) -> Result<Vec<WindowSample>> {
    roi.clock().ensure_same(rv.clock(), "ROI vs RV")?;
    let block = assemble_channels(roi, motion, arm)?;
    window_block(&block, rv, spec, scan_id)
}

/// Deterministically partition scan ids; `round(n * fraction)` go to
/// training, clamped so both sides get at least one scan. Both halves are
/// returned sorted.
pub fn split_scan_ids(ids: &[String], train_fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let unique: BTreeSet<&String> = ids.iter().collect();
    let n = unique.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 scans to split, got {n}")));
    }
    let mut order: Vec<String> = unique.into_iter().cloned().collect();
    order.shuffle(&mut rng::stream(seed, rng::SPLIT));
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort();
    test.sort();
    Ok((train, test))
}

/// Scan-level split of window samples.
pub fn split_by_scan(
    samples: Vec<WindowSample>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<WindowSample>, Vec<WindowSample>)> {
    let ids: Vec<String> = samples.iter().map(|s| s.scan_id.clone()).collect();
    let (train_ids, _) = split_scan_ids(&ids, train_fraction, seed)?;
    let train_ids: BTreeSet<String> = train_ids.into_iter().collect();
    Ok(samples.into_iter().partition(|s| train_ids.contains(&s.scan_id)))
}

/// Normalized inputs and RV targets of one scan.
#[derive(Debug, Clone)]
pub struct ScanData {
    pub scan_id: String,
    pub block: ChannelBlock,
    pub targets: Vec<f64>,
}

/// Windows over several scans, materialized on demand. Windows are ordered
/// by scan id, then start frame.
#[derive(Debug, Clone)]
pub struct WindowSet {
    scans: Vec<ScanData>,
    index: Vec<(usize, usize)>,
    spec: WindowSpec,
    n_channels: usize,
}

impl WindowSet {
    pub fn new(mut scans: Vec<ScanData>, spec: WindowSpec) -> Result<Self> {
        scans.sort_by(|a, b| a.scan_id.cmp(&b.scan_id));
        let n_channels = scans.first().map_or(0, |s| s.block.n_channels());
        let mut index = Vec::new();
        for (i, scan) in scans.iter().enumerate() {
            if scan.block.n_channels() != n_channels {
                return Err(Error::Shape(format!(
                    "scan {} has {} channels, expected {n_channels}",
                    scan.scan_id,
                    scan.block.n_channels()
                )));
            }
            if scan.targets.len() != scan.block.n_frames() {
                return Err(Error::Shape(format!("scan {}: target length mismatch", scan.scan_id)));
            }
            index.extend(spec.starts(scan.block.n_frames())?.map(|s| (i, s)));
        }
        Ok(Self {
            scans,
            index,
            spec,
            n_channels,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    pub fn scans(&self) -> &[ScanData] {
        &self.scans
    }

    /// Copy window `i` into `out` (length `n_channels * window_len`).
    pub fn fill_input(&self, i: usize, out: &mut [f64]) {
        let (s, start) = self.index[i];
        let block = &self.scans[s].block;
        let w = self.spec.window_len;
        for c in 0..self.n_channels {
            out[c * w..(c + 1) * w].copy_from_slice(&block.channel(c)[start..start + w]);
        }
    }

    pub fn targets(&self, i: usize) -> [f64; 3] {
        let (s, start) = self.index[i];
        self.spec
            .target_offsets()
            .map(|o| self.scans[s].targets[start + o])
    }

    pub fn sample(&self, i: usize) -> WindowSample {
        let (s, start) = self.index[i];
        let mut inputs = vec![0.0; self.n_channels * self.spec.window_len];
        self.fill_input(i, &mut inputs);
        WindowSample {
            inputs,
            n_channels: self.n_channels,
            window_len: self.spec.window_len,
            targets: self.targets(i),
            scan_id: self.scans[s].scan_id.clone(),
            start_frame: start,
        }
    }
}
