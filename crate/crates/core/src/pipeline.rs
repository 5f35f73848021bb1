//! Dataset layout, experiment configuration and the
//! split -> windows -> train -> predict -> score workflow.
//!
//! A dataset directory holds, per scan `<id>`:
//! `<id>.physio`, `<id>.par`, `<id>.roi.csv` and optionally `<id>.rv.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::filters::{filter_motion, BandSpec};
use crate::io::{self, MotionSeries, RoiSeries, FORMAT_VERSION, MOTION_CHANNELS};
use crate::metrics::{self, aggregate, score_scan, Aggregate, Metric, ScanScore};
use crate::nn::{self, CnnModel, Head, History, Prediction, TrainConfig};
use crate::signals::{compute_rv, RespiratoryTrace, RvSeries, DEFAULT_PHYSIO_RATE_HZ, DEFAULT_RV_WINDOW_S, DEFAULT_TR_S};
use crate::synth::ScanBundle;
use crate::windows::{assemble_channels, split_scan_ids, ExperimentArm, ScanData, Scaler, WindowSet, WindowSpec};

pub const PHYSIO_SUFFIX: &str = ".physio";
pub const MOTION_SUFFIX: &str = ".par";
pub const ROI_SUFFIX: &str = ".roi.csv";
pub const RV_SUFFIX: &str = ".rv.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Files of one scan in a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanPaths {
    pub id: String,
    pub physio: PathBuf,
    pub motion: PathBuf,
    pub roi: PathBuf,
    pub rv: PathBuf,
}

impl ScanPaths {
    pub fn in_dir(dir: &Path, id: &str) -> Self {
        Self {
            id: id.to_string(),
            physio: dir.join(format!("{id}{PHYSIO_SUFFIX}")),
            motion: dir.join(format!("{id}{MOTION_SUFFIX}")),
            roi: dir.join(format!("{id}{ROI_SUFFIX}")),
            rv: dir.join(format!("{id}{RV_SUFFIX}")),
        }
    }

    /// Files that exist, in a fixed order.
    pub fn existing(&self) -> Vec<&Path> {
        [&self.physio, &self.motion, &self.roi, &self.rv]
            .into_iter()
            .map(PathBuf::as_path)
            .filter(|p| p.exists())
            .collect()
    }
}

/// Scans in `dir`, one per ROI table, sorted by id.
pub fn discover_scans(dir: &Path) -> Result<Vec<ScanPaths>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(ROI_SUFFIX) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids.iter().map(|id| ScanPaths::in_dir(dir, id)).collect())
}

pub fn write_bundle(dir: &Path, id: &str, bundle: &ScanBundle) -> Result<ScanPaths> {
    let paths = ScanPaths::in_dir(dir, id);
    io::write_physio(&paths.physio, &bundle.respiration)?;
    io::write_motion_par(&paths.motion, &bundle.motion)?;
    io::write_roi_table(&paths.roi, &bundle.roi)?;
    io::write_rv(&paths.rv, &bundle.rv, None)?;
    Ok(paths)
}

/// Acquisition parameters needed to read a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataConfig {
    pub tr_s: f64,
    pub physio_rate_hz: f64,
    pub physio_column: usize,
    pub rv_window_s: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            tr_s: DEFAULT_TR_S,
            physio_rate_hz: DEFAULT_PHYSIO_RATE_HZ,
            physio_column: 1,
            rv_window_s: DEFAULT_RV_WINDOW_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScan {
    pub id: String,
    pub roi: RoiSeries,
    pub motion: MotionSeries,
    pub rv: RvSeries,
}

/// Read one scan. Ground truth comes from the RV file when present,
/// otherwise it is computed from the physio log.
pub fn load_scan(paths: &ScanPaths, data: &DataConfig) -> Result<LoadedScan> {
    let roi = io::read_roi_table_with_tr(&paths.roi, data.tr_s)?;
    let motion = io::read_motion_par(&paths.motion, roi.clock())?;
    let rv = if paths.rv.exists() {
        let (rv, _) = io::read_rv(&paths.rv, data.rv_window_s)?;
        if !rv.clock().same_frames(roi.clock()) {
            return Err(Error::Shape(format!(
                "{}: RV frames do not match the ROI table ({} vs {} frames, TR {} s)",
                paths.rv.display(),
                rv.len(),
                roi.n_frames(),
                data.tr_s
            )));
        }
        RvSeries::new(rv.values().to_vec(), *roi.clock(), data.rv_window_s)?
    } else {
        let trace = io::read_physio(&paths.physio, data.physio_column, data.physio_rate_hz)?;
        compute_rv(&trace, roi.clock(), data.rv_window_s)?
    };
    Ok(LoadedScan {
        id: paths.id.clone(),
        roi,
        motion,
        rv,
    })
}

pub fn load_scans(paths: &[ScanPaths], data: &DataConfig) -> Result<Vec<LoadedScan>> {
    paths.par_iter().map(|p| load_scan(p, data)).collect()
}

/// Channels for `arm`, z-scored over the scan.
pub fn prepare_scan(scan: &LoadedScan, arm: &ExperimentArm) -> Result<(ScanData, Scaler)> {
    let block = assemble_channels(&scan.roi, Some(&scan.motion), arm)?;
    let scaler = Scaler::fit(&block);
    let block = scaler.apply(&block)?;
    Ok((
        ScanData {
            scan_id: scan.id.clone(),
            block,
            targets: scan.rv.values().to_vec(),
        },
        scaler,
    ))
}

/// Settings of one experiment run. `seed` drives the split, the
/// initialization and the batch order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub arm: ExperimentArm,
    pub window_len: usize,
    /// Window stride used for training and validation windows.
    pub train_stride: usize,
    /// Window stride used when reconstructing test scans.
    pub predict_stride: usize,
    /// Fraction of scans used for training (the rest are held out).
    pub train_fraction: f64,
    /// Fraction of the training scans used for early stopping.
    pub val_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub head: Head,
    pub n_perm: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            data: DataConfig::default(),
            arm: ExperimentArm::BoldOnly,
            window_len: WindowSpec::default().window_len,
            train_stride: 1,
            predict_stride: 1,
            train_fraction: 0.8,
            val_fraction: 0.15,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            patience: t.patience,
            head: t.head,
            n_perm: 10_000,
            seed: 0,
        }
    }
}

fn parse_key<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse '{}'", value.trim())))
}

pub fn parse_head(s: &str) -> Result<Head> {
    match s.trim() {
        "gap" | "global-average" => Ok(Head::GlobalAverage),
        "flatten" => Ok(Head::Flatten),
        other => Err(Error::InvalidArgument(format!("head: expected gap or flatten, got '{other}'"))),
    }
}

pub fn head_name(head: Head) -> &'static str {
    match head {
        Head::GlobalAverage => "gap",
        Head::Flatten => "flatten",
    }
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "tr_s" => self.data.tr_s = parse_key(key, value)?,
            "physio_rate_hz" => self.data.physio_rate_hz = parse_key(key, value)?,
            "physio_column" => self.data.physio_column = parse_key(key, value)?,
            "rv_window_s" => self.data.rv_window_s = parse_key(key, value)?,
            "arm" => {
                let band = self.arm.band();
                self.arm = value.trim().parse()?;
                if let (Some(b), ExperimentArm::BoldPlusFilteredMotion(_)) = (band, self.arm) {
                    self.arm = ExperimentArm::BoldPlusFilteredMotion(b);
                }
            }
            "band" => {
                let mut band: BandSpec = value.trim().parse()?;
                if let ExperimentArm::BoldPlusFilteredMotion(old) = self.arm {
                    band.order = old.order;
                    self.arm = ExperimentArm::BoldPlusFilteredMotion(band);
                } else {
                    warn!("band {band} ignored for arm {}", self.arm);
                }
            }
            "band_order" => match &mut self.arm {
                ExperimentArm::BoldPlusFilteredMotion(b) => b.order = parse_key(key, value)?,
                _ => warn!("band_order ignored for arm {}", self.arm),
            },
            "window_len" => self.window_len = parse_key(key, value)?,
            "train_stride" => self.train_stride = parse_key(key, value)?,
            "predict_stride" => self.predict_stride = parse_key(key, value)?,
            "train_fraction" => self.train_fraction = parse_key(key, value)?,
            "val_fraction" => self.val_fraction = parse_key(key, value)?,
            "epochs" => self.epochs = parse_key(key, value)?,
            "batch_size" => self.batch_size = parse_key(key, value)?,
            "lr" => self.lr = parse_key(key, value)?,
            "patience" => self.patience = parse_key(key, value)?,
            "head" => self.head = parse_head(value)?,
            "n_perm" => self.n_perm = parse_key(key, value)?,
            "seed" => self.seed = parse_key(key, value)?,
            _ => return Err(Error::InvalidArgument(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("config line {}: expected key = value, got '{line}'", i + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Effective settings in a stable order.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("tr_s", self.data.tr_s.to_string());
        put("physio_rate_hz", self.data.physio_rate_hz.to_string());
        put("physio_column", self.data.physio_column.to_string());
        put("rv_window_s", self.data.rv_window_s.to_string());
        put("arm", self.arm.name().to_string());
        if let Some(b) = self.arm.band() {
            put("band", b.to_string());
            put("band_order", b.order.to_string());
        }
        put("window_len", self.window_len.to_string());
        put("train_stride", self.train_stride.to_string());
        put("predict_stride", self.predict_stride.to_string());
        put("train_fraction", self.train_fraction.to_string());
        put("val_fraction", self.val_fraction.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lr", self.lr.to_string());
        put("patience", self.patience.to_string());
        put("head", head_name(self.head).to_string());
        put("n_perm", self.n_perm.to_string());
        put("seed", self.seed.to_string());
        m
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            lr: self.lr,
            patience: self.patience,
            head: self.head,
        }
    }

    pub fn train_spec(&self) -> Result<WindowSpec> {
        WindowSpec::new(self.window_len, self.train_stride)
    }

    pub fn predict_spec(&self) -> Result<WindowSpec> {
        WindowSpec::new(self.window_len, self.predict_stride)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.train_spec()?;
        self.predict_spec()?;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if let Some(b) = self.arm.band() {
            b.validate(1.0 / self.data.tr_s)?;
        }
        Ok(())
    }
}

/// Scan ids assigned to each role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Hold out test scans, then carve validation scans from the rest. With a
/// single training scan it doubles as the validation scan.
pub fn split_scans(ids: &[String], cfg: &ExperimentConfig) -> Result<Split> {
    let (fit, test) = split_scan_ids(ids, cfg.train_fraction, cfg.seed)?;
    let (train, val) = validation_split(&fit, cfg)?;
    Ok(Split { train, val, test })
}

/// Carve validation scans out of `fit`.
pub fn validation_split(fit: &[String], cfg: &ExperimentConfig) -> Result<(Vec<String>, Vec<String>)> {
    match fit.len() {
        0 => Err(Error::InvalidArgument("no training scans".into())),
        1 => {
            warn!("only one training scan; it is also used for validation");
            Ok((fit.to_vec(), fit.to_vec()))
        }
        _ => split_scan_ids(fit, 1.0 - cfg.val_fraction, cfg.seed.wrapping_add(1)),
    }
}

/// Outcome of training and evaluating one arm.
#[derive(Debug, Clone)]
pub struct ArmRun {
    pub arm: ExperimentArm,
    pub model: CnnModel,
    pub history: History,
    pub predictions: Vec<(String, Prediction)>,
    pub scores: Vec<ScanScore>,
}

impl ArmRun {
    pub fn summary(&self) -> Result<Aggregate> {
        aggregate(&self.scores)
    }
}

fn window_set(scans: &[&LoadedScan], arm: &ExperimentArm, spec: WindowSpec) -> Result<WindowSet> {
    let data: Vec<ScanData> = scans
        .par_iter()
        .map(|s| prepare_scan(s, arm).map(|(d, _)| d))
        .collect::<Result<_>>()?;
    WindowSet::new(data, spec)
}

/// Predict one scan and score it against its ground truth, ignoring frames
/// that received no window estimate.
pub fn predict_and_score(
    model: &CnnModel,
    scan: &LoadedScan,
    arm: &ExperimentArm,
    spec: &WindowSpec,
) -> Result<(Prediction, ScanScore)> {
    let prediction = nn::predict_series(model, &scan.roi, Some(&scan.motion), arm, spec, None, scan.rv.rv_window_s())?;
    let score = score_scan(&scan.id, &prediction.series, &scan.rv, Some(&prediction.extrapolated))?;
    Ok((prediction, score))
}

/// Train on the split's training scans and score its test scans.
pub fn run_arm(scans: &[LoadedScan], split: &Split, cfg: &ExperimentConfig) -> Result<ArmRun> {
    let (model, history) = train_arm(scans, split, cfg)?;
    let predict_spec = cfg.predict_spec()?;
    let test_scans: Vec<&LoadedScan> = split
        .test
        .iter()
        .map(|id| {
            scans
                .iter()
                .find(|s| &s.id == id)
                .ok_or_else(|| Error::InvalidArgument(format!("scan '{id}' is not in the dataset")))
        })
        .collect::<Result<_>>()?;
    let results: Vec<(Prediction, ScanScore)> = test_scans
        .par_iter()
        .map(|s| predict_and_score(&model, s, &cfg.arm, &predict_spec))
        .collect::<Result<_>>()?;
    let (predictions, scores): (Vec<_>, Vec<_>) = results
        .into_iter()
        .zip(&test_scans)
        .map(|((p, s), scan)| ((scan.id.clone(), p), s))
        .unzip();
    Ok(ArmRun {
        arm: cfg.arm,
        model,
        history,
        predictions,
        scores,
    })
}

/// Train on the split's training scans, early-stopping on its validation scans.
pub fn train_arm(scans: &[LoadedScan], split: &Split, cfg: &ExperimentConfig) -> Result<(CnnModel, History)> {
    cfg.validate()?;
    let by_id: BTreeMap<&str, &LoadedScan> = scans.iter().map(|s| (s.id.as_str(), s)).collect();
    let pick = |ids: &[String]| -> Result<Vec<&LoadedScan>> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("scan '{id}' is not in the dataset")))
            })
            .collect()
    };
    let spec = cfg.train_spec()?;
    let train_set = window_set(&pick(&split.train)?, &cfg.arm, spec)?;
    let val_set = window_set(&pick(&split.val)?, &cfg.arm, spec)?;
    info!(
        "arm {}: {} training windows, {} validation windows, {} channels",
        cfg.arm,
        train_set.len(),
        val_set.len(),
        train_set.n_channels()
    );
    nn::train(&train_set, &val_set, &cfg.train_config())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

pub fn summary_map(agg: &Aggregate) -> BTreeMap<String, MetricSummary> {
    Metric::ALL
        .iter()
        .map(|m| {
            let s = agg.get(*m);
            (
                m.name().to_string(),
                MetricSummary {
                    mean: s.map(|v| v.mean),
                    std: s.map(|v| v.std),
                    n: s.map_or(0, |v| v.n),
                },
            )
        })
        .collect()
}

/// Record of one command invocation: effective configuration, input and
/// output digests and headline metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub format_version: u32,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    /// File name -> SHA-256 of every input read.
    pub inputs: BTreeMap<String, String>,
    /// File name -> SHA-256 of every output written (manifest excluded).
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, MetricSummary>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: BTreeMap<String, String>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            format_version: FORMAT_VERSION,
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            metrics: BTreeMap::new(),
        }
    }

    /// Record `path` under its name relative to `base`.
    fn digest_into(map: &mut BTreeMap<String, String>, base: &Path, path: &Path) -> Result<()> {
        let name = path.strip_prefix(base).unwrap_or(path).to_string_lossy().into_owned();
        map.insert(name, sha256_file(path)?);
        Ok(())
    }

    pub fn add_input(&mut self, base: &Path, path: &Path) -> Result<()> {
        Self::digest_into(&mut self.inputs, base, path)
    }

    pub fn add_output(&mut self, base: &Path, path: &Path) -> Result<()> {
        Self::digest_into(&mut self.outputs, base, path)
    }

    /// Write `manifest.json` into an output directory.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        self.write_to(&dir.join(MANIFEST_FILE))
    }

    /// Write `<output>.manifest.json` next to a single output file.
    pub fn write_sidecar(&self, output: &Path) -> Result<PathBuf> {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.json");
        self.write_to(Path::new(&name))
    }

    pub fn write_to(&self, path: &Path) -> Result<PathBuf> {
        let path = path.to_path_buf();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidArgument(format!("manifest serialization: {e}")))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}

pub fn write_split(path: &Path, split: &Split) -> Result<()> {
    let mut out = format!("# rvrecon split v{FORMAT_VERSION}\n");
    for (role, ids) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for id in ids {
            writeln!(out, "{role},{id}").unwrap();
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn dataset(data_dir: &Path, cfg: &ExperimentConfig, min_scans: usize) -> Result<(Vec<ScanPaths>, Vec<LoadedScan>)> {
    let paths = discover_scans(data_dir)?;
    if paths.len() < min_scans {
        return Err(Error::InvalidArgument(format!(
            "{} holds {} scans; at least {min_scans} needed",
            data_dir.display(),
            paths.len()
        )));
    }
    let scans = load_scans(&paths, &cfg.data)?;
    Ok((paths, scans))
}

fn record_inputs(manifest: &mut RunManifest, data_dir: &Path, paths: &[ScanPaths]) -> Result<()> {
    for p in paths {
        for f in p.existing() {
            manifest.add_input(data_dir, f)?;
        }
    }
    Ok(())
}

/// Train on every scan in `data_dir` (minus validation scans) and write
/// `model.ckpt`, `history.tsv`, `split.csv` and the manifest.
pub fn run_training(data_dir: &Path, cfg: &ExperimentConfig, out_dir: &Path) -> Result<(CnnModel, History, RunManifest)> {
    cfg.validate()?;
    let (paths, scans) = dataset(data_dir, cfg, 1)?;
    let ids: Vec<String> = scans.iter().map(|s| s.id.clone()).collect();
    let (train, val) = validation_split(&ids, cfg)?;
    let split = Split { train, val, test: Vec::new() };
    let (model, history) = train_arm(&scans, &split, cfg)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let checkpoint = out_dir.join("model.ckpt");
    nn::save_checkpoint(&model, &checkpoint)?;
    let history_path = out_dir.join("history.tsv");
    fs::write(&history_path, history.to_tsv()).map_err(|e| Error::io(&history_path, e))?;
    let split_path = out_dir.join("split.csv");
    write_split(&split_path, &split)?;

    let mut manifest = RunManifest::new("train", cfg.seed, cfg.to_pairs());
    record_inputs(&mut manifest, data_dir, &paths)?;
    for f in [&checkpoint, &history_path, &split_path] {
        manifest.add_output(out_dir, f)?;
    }
    manifest.write(out_dir)?;
    Ok((model, history, manifest))
}

/// Frame-rate table of one scan: time, respiration sampled at frame times,
/// raw and band-passed motion, and RV.
pub fn plot_table(trace: &RespiratoryTrace, motion: &MotionSeries, rv: &RvSeries, band: &BandSpec) -> Result<String> {
    motion.clock().ensure_same(rv.clock(), "motion vs RV")?;
    let filtered = filter_motion(motion, band)?;
    let mut out = format!("# rvrecon plotdata v{FORMAT_VERSION} band={band}\ntime_s,resp");
    for name in MOTION_CHANNELS {
        write!(out, ",{name}").unwrap();
    }
    for name in MOTION_CHANNELS {
        write!(out, ",{name}_filtered").unwrap();
    }
    out.push_str(",rv\n");
    for (k, t) in rv.clock().times().enumerate() {
        write!(out, "{t},{}", trace.value_at(t)).unwrap();
        for v in motion.rows()[k].iter().chain(&filtered.rows()[k]) {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out, ",{}", rv.values()[k]).unwrap();
    }
    Ok(out)
}

/// Debug listing of the windows of one scan: start frame, the three
/// target frames and their RV values, and per-window input statistics.
pub fn window_table(set: &WindowSet) -> String {
    let spec = set.spec();
    let [o0, o1, o2] = spec.target_offsets();
    let mut out = format!(
        "# rvrecon windows v{FORMAT_VERSION} channels={} window_len={} stride={}\n\
         window,scan_id,start_frame,target_frames,target_rv,input_mean,input_std\n",
        set.n_channels(),
        spec.window_len,
        spec.stride
    );
    for i in 0..set.len() {
        let s = set.sample(i);
        let n = s.inputs.len() as f64;
        let mean = s.inputs.iter().sum::<f64>() / n;
        let std = (s.inputs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let [t0, t1, t2] = s.targets;
        let f = s.start_frame;
        writeln!(
            out,
            "{i},{},{f},{}:{}:{},{t0}:{t1}:{t2},{mean},{std}",
            s.scan_id,
            f + o0,
            f + o1,
            f + o2
        )
        .unwrap();
    }
    out
}

/// Files written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub run: ArmRun,
    pub split: Split,
    pub manifest: RunManifest,
    pub checkpoint: PathBuf,
    pub scores: PathBuf,
}

/// Full experiment for `cfg.arm` on the scans in `data_dir`.
pub fn run_experiment(data_dir: &Path, cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let (paths, scans) = dataset(data_dir, cfg, 2)?;
    let ids: Vec<String> = scans.iter().map(|s| s.id.clone()).collect();
    let split = split_scans(&ids, cfg)?;
    let run = run_arm(&scans, &split, cfg)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pred_dir = out_dir.join("predictions");
    fs::create_dir_all(&pred_dir).map_err(|e| Error::io(&pred_dir, e))?;
    let checkpoint = out_dir.join("model.ckpt");
    nn::save_checkpoint(&run.model, &checkpoint)?;
    let history = out_dir.join("history.tsv");
    fs::write(&history, run.history.to_tsv()).map_err(|e| Error::io(&history, e))?;
    let scores = out_dir.join("scores.csv");
    metrics::write_scores(&scores, &run.scores)?;
    let split_path = out_dir.join("split.csv");
    write_split(&split_path, &split)?;
    let mut written = vec![checkpoint.clone(), history, scores.clone(), split_path];
    for (id, p) in &run.predictions {
        let path = pred_dir.join(format!("{id}{RV_SUFFIX}"));
        io::write_rv(&path, &p.series, Some(&p.extrapolated))?;
        written.push(path);
    }
    let summary = run.summary()?;
    let summary_path = out_dir.join("summary.json");
    let summary_text = serde_json::to_string_pretty(&summary_map(&summary))
        .map_err(|e| Error::InvalidArgument(format!("summary serialization: {e}")))?;
    fs::write(&summary_path, summary_text + "\n").map_err(|e| Error::io(&summary_path, e))?;
    written.push(summary_path);

    let mut manifest = RunManifest::new("experiment", cfg.seed, cfg.to_pairs());
    record_inputs(&mut manifest, data_dir, &paths)?;
    for f in &written {
        manifest.add_output(out_dir, f)?;
    }
    manifest.metrics = summary_map(&summary);
    manifest.write(out_dir)?;
    Ok(ExperimentOutput {
        run,
        split,
        manifest,
        checkpoint,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_scan, ScenarioConfig};

    fn tiny_dataset(dir: &Path, n: usize) {
        for i in 0..n {
            let cfg = ScenarioConfig {
                duration_s: 100.0,
                n_roi: 4,
                seed: i as u64,
                ..ScenarioConfig::default()
            };
            write_bundle(dir, &format!("scan{i:02}"), &gen_scan(&cfg).unwrap()).unwrap();
        }
    }

    fn quick() -> ExperimentConfig {
        ExperimentConfig {
            epochs: 2,
            train_stride: 8,
            predict_stride: 2,
            n_perm: 1000,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_precedence_and_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("epochs = 7\narm = bold+motion-filtered # comment\nhead = flatten\n").unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.arm.band(), Some(BandSpec::default()));
        cfg.set("band", "0.2:0.33").unwrap();
        assert_eq!(cfg.arm.band(), Some(BandSpec::bandpass(0.2, 0.33)));
        cfg.set("arm", "bold+motion-filtered").unwrap();
        assert_eq!(cfg.arm.band(), Some(BandSpec::bandpass(0.2, 0.33)));

        let mut again = ExperimentConfig::default();
        for (k, v) in cfg.to_pairs() {
            again.set(&k, &v).unwrap();
        }
        assert_eq!(again, cfg);
        assert!(cfg.set("bogus", "1").is_err());
        assert!(cfg.apply_text("epochs 3").is_err());
    }

    #[test]
    fn split_roles_are_disjoint() {
        let ids: Vec<String> = (0..40).map(|i| format!("s{i:02}")).collect();
        let cfg = ExperimentConfig {
            train_fraction: 0.875,
            ..ExperimentConfig::default()
        };
        let s = split_scans(&ids, &cfg).unwrap();
        assert_eq!(s.test.len(), 5);
        assert_eq!(s.train.len() + s.val.len(), 35);
        assert!(!s.val.is_empty());
        for id in &s.test {
            assert!(!s.train.contains(id) && !s.val.contains(id));
        }
        let two = split_scans(&ids[..2], &cfg).unwrap();
        assert_eq!(two.train, two.val);
    }

    #[test]
    fn experiment_end_to_end() {
        let data = tempfile::tempdir().unwrap();
        tiny_dataset(data.path(), 4);
        let out = tempfile::tempdir().unwrap();
        let result = run_experiment(data.path(), &quick(), out.path()).unwrap();
        assert_eq!(result.run.scores.len(), result.split.test.len());
        for name in ["model.ckpt", "scores.csv", "history.tsv", "summary.json", "split.csv", MANIFEST_FILE] {
            assert!(out.path().join(name).exists(), "{name}");
        }
        let manifest = RunManifest::read(&out.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest, result.manifest);
        assert_eq!(manifest.inputs.len(), 16);
        assert_eq!(manifest.config["arm"], "bold");
    }

    #[test]
    fn missing_rv_file_is_computed_from_physio() {
        let dir = tempfile::tempdir().unwrap();
        tiny_dataset(dir.path(), 1);
        let paths = ScanPaths::in_dir(dir.path(), "scan00");
        let with_file = load_scan(&paths, &DataConfig::default()).unwrap();
        fs::remove_file(&paths.rv).unwrap();
        let computed = load_scan(&paths, &DataConfig::default()).unwrap();
        for (a, b) in with_file.rv.values().iter().zip(computed.rv.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_scans() {
        let data = tempfile::tempdir().unwrap();
        tiny_dataset(data.path(), 1);
        let out = tempfile::tempdir().unwrap();
        assert!(run_experiment(data.path(), &quick(), out.path()).is_err());
    }
}
