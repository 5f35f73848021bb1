//! `rvrecon` command-line interface.
//!
//! Exit codes: 0 success, 1 data or validation error, 2 usage error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use rvrecon::filters::{filter_motion, BandSpec};
use rvrecon::io::{self, read_motion_par_with_tr, read_roi_table_with_tr, write_motion_par, write_rv};
use rvrecon::metrics::{self, paired_permutation_test, relative_improvement, score_scan, Metric, ScanScore};
use rvrecon::nn::{load_checkpoint, predict_series};
use rvrecon::pipeline::{
    self, run_experiment, run_training, write_bundle, window_table, ExperimentConfig, RunManifest, ScanPaths,
    RV_SUFFIX,
};
use rvrecon::signals::{compute_rv, FrameClock};
use rvrecon::synth::{gen_dataset, ScenarioConfig};
use rvrecon::windows::{assemble_channels, ExperimentArm, ScanData, Scaler, WindowSet, WindowSpec};
use rvrecon::{Error, Result};

/// Environment variable naming a default experiment config file.
const CONFIG_ENV: &str = "RVRECON_CONFIG";

#[derive(Parser, Debug)]
#[command(name = "rvrecon", version, about = "Respiratory variation reconstruction from fMRI ROI signals and head motion")]
struct Cli {
    /// Worker threads for per-scan stages.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Compute RV from a physiological log.
    Rv(RvArgs),
    /// Band-pass filter motion parameters.
    Filter(FilterArgs),
    /// List the training windows of one scan.
    Windows(WindowsArgs),
    /// Train a model on every scan of a dataset.
    Train(TrainArgs),
    /// Reconstruct RV for one scan with a trained model.
    Predict(PredictArgs),
    /// Score predicted RV files against ground truth.
    Evaluate(EvaluateArgs),
    /// Compare two score tables with a paired permutation test.
    Compare(CompareArgs),
    /// Write a frame-rate table of respiration, motion and RV for plotting.
    Plotdata(PlotArgs),
    /// Split, train, predict and score one experimental arm.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scenario file (key = value lines).
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    n_scans: usize,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Extra scenario settings, `key=value`; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args, Debug)]
struct RvArgs {
    #[arg(long)]
    physio: PathBuf,
    /// Physio sampling rate in Hz.
    #[arg(long, default_value_t = 400.0)]
    rate: f64,
    /// Zero-based column holding the respiration trace.
    #[arg(long, default_value_t = 1)]
    column: usize,
    #[arg(long, default_value_t = 0.72)]
    tr: f64,
    /// Number of fMRI frames.
    #[arg(long)]
    frames: usize,
    /// RV window length in seconds.
    #[arg(long, default_value_t = 6.0)]
    window: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long)]
    motion: PathBuf,
    #[arg(long, default_value_t = 0.72)]
    tr: f64,
    /// Pass band `lo:hi` in Hz.
    #[arg(long, default_value = "0.2:0.5")]
    band: BandSpec,
    /// Total filter order (even).
    #[arg(long, default_value_t = 4)]
    order: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ArmArgs {
    /// bold, bold+motion or bold+motion-filtered.
    #[arg(long)]
    arm: Option<ExperimentArm>,
    /// Motion pass band `lo:hi` in Hz for the filtered arm.
    #[arg(long)]
    band: Option<BandSpec>,
    #[arg(long)]
    band_order: Option<usize>,
}

#[derive(Args, Debug)]
struct WindowsArgs {
    #[arg(long)]
    roi: PathBuf,
    #[arg(long)]
    motion: Option<PathBuf>,
    #[arg(long)]
    rv: PathBuf,
    #[command(flatten)]
    arm: ArmArgs,
    #[arg(long, default_value_t = 0.72)]
    tr: f64,
    #[arg(long, default_value_t = 65)]
    window_len: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Experiment settings; each flag overrides the config file.
#[derive(Args, Debug)]
struct ConfigArgs {
    /// Config file (key = value lines); defaults to $RVRECON_CONFIG.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    arm: ArmArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// Feature head: gap or flatten.
    #[arg(long)]
    head: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window_len: Option<usize>,
    #[arg(long)]
    train_stride: Option<usize>,
    #[arg(long)]
    predict_stride: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    tr: Option<f64>,
    #[arg(long)]
    physio_rate: Option<f64>,
    #[arg(long)]
    physio_column: Option<usize>,
    #[arg(long)]
    rv_window: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let file = self
            .config
            .clone()
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        if let Some(path) = file {
            info!("config file {}", path.display());
            cfg.apply_file(&path)?;
        }
        let flags: [(&str, Option<String>); 18] = [
            ("arm", self.arm.arm.map(|a| a.name().to_string())),
            ("band", self.arm.band.map(|b| b.to_string())),
            ("band_order", self.arm.band_order.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("patience", self.patience.map(|v| v.to_string())),
            ("head", self.head.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("window_len", self.window_len.map(|v| v.to_string())),
            ("train_stride", self.train_stride.map(|v| v.to_string())),
            ("predict_stride", self.predict_stride.map(|v| v.to_string())),
            ("train_fraction", self.train_fraction.map(|v| v.to_string())),
            ("val_fraction", self.val_fraction.map(|v| v.to_string())),
            ("tr_s", self.tr.map(|v| v.to_string())),
            ("physio_rate_hz", self.physio_rate.map(|v| v.to_string())),
            ("physio_column", self.physio_column.map(|v| v.to_string())),
            ("rv_window_s", self.rv_window.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Checkpoint written by `train` or `experiment`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    roi: PathBuf,
    #[arg(long)]
    motion: Option<PathBuf>,
    #[command(flatten)]
    arm: ArmArgs,
    #[arg(long, default_value_t = 0.72)]
    tr: f64,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 6.0)]
    rv_window: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Directory of predicted `<id>.rv.csv` files.
    #[arg(long)]
    pred: PathBuf,
    /// Dataset directory holding the ground truth.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = 6.0)]
    rv_window: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Baseline score table.
    scores_a: PathBuf,
    /// Score table compared against the baseline.
    scores_b: PathBuf,
    /// Restrict to one metric (mae, mse, pearson_r, dtw).
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long, default_value_t = 10_000)]
    n_perm: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// One `.physio`, one `.par` and one `.rv.csv` file of the same scan.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 400.0)]
    rate: f64,
    #[arg(long, default_value_t = 1)]
    column: usize,
    #[arg(long, default_value = "0.2:0.5")]
    band: BandSpec,
    #[arg(long, default_value_t = 4)]
    order: usize,
    #[arg(long, default_value_t = 6.0)]
    rv_window: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} workers: {e}", cli.jobs);
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Rv(a) => cmd_rv(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Windows(a) => cmd_windows(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Plotdata(a) => cmd_plotdata(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::InvalidArgument(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn pairs(items: &[(&str, String)]) -> BTreeMap<String, String> {
    items.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn resolve_arm(args: &ArmArgs) -> Result<ExperimentArm> {
    let mut arm = args.arm.unwrap_or(ExperimentArm::BoldOnly);
    if let ExperimentArm::BoldPlusFilteredMotion(b) = &mut arm {
        if let Some(band) = args.band {
            *b = band;
        }
        if let Some(order) = args.band_order {
            b.order = order;
        }
    } else if args.band.is_some() || args.band_order.is_some() {
        warn!("--band ignored for arm {arm}");
    }
    Ok(arm)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut scenario = match &a.scenario {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    for kv in &a.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects key=value, got '{kv}'")))?;
        scenario.set(k.trim(), v.trim())?;
    }
    scenario.validate()?;
    create_dir(&a.out)?;
    let bundles = gen_dataset(&scenario, a.n_scans)?;
    let paths: Vec<ScanPaths> = bundles
        .par_iter()
        .map(|(id, b)| write_bundle(&a.out, id, b))
        .collect::<Result<_>>()?;

    let mut config = scenario.text_pairs();
    config.insert("n_scans".into(), a.n_scans.to_string());
    let mut manifest = RunManifest::new("synth", scenario.seed, config);
    if let Some(p) = &a.scenario {
        manifest.add_input(p.parent().unwrap_or(Path::new("")), p)?;
    }
    for p in &paths {
        for f in p.existing() {
            manifest.add_output(&a.out, f)?;
        }
    }
    manifest.write(&a.out)?;
    println!("wrote {} scans to {}", paths.len(), a.out.display());
    Ok(())
}

fn cmd_rv(a: RvArgs) -> Result<()> {
    let trace = io::read_physio(&a.physio, a.column, a.rate)?;
    let clock = FrameClock::new(a.tr, a.frames)?;
    let rv = compute_rv(&trace, &clock, a.window)?;
    write_rv(&a.out, &rv, None)?;
    let config = pairs(&[
        ("rate_hz", a.rate.to_string()),
        ("column", a.column.to_string()),
        ("tr_s", a.tr.to_string()),
        ("frames", a.frames.to_string()),
        ("rv_window_s", a.window.to_string()),
    ]);
    let mut manifest = RunManifest::new("rv", 0, config);
    manifest.add_input(Path::new(""), &a.physio)?;
    manifest.add_output(Path::new(""), &a.out)?;
    manifest.write_sidecar(&a.out)?;
    Ok(())
}

fn cmd_filter(a: FilterArgs) -> Result<()> {
    let motion = read_motion_par_with_tr(&a.motion, a.tr)?;
    let mut band = a.band;
    band.order = a.order;
    let filtered = filter_motion(&motion, &band)?;
    write_motion_par(&a.out, &filtered)?;
    let config = pairs(&[
        ("tr_s", a.tr.to_string()),
        ("band", band.to_string()),
        ("band_order", band.order.to_string()),
    ]);
    let mut manifest = RunManifest::new("filter", 0, config);
    manifest.add_input(Path::new(""), &a.motion)?;
    manifest.add_output(Path::new(""), &a.out)?;
    manifest.write_sidecar(&a.out)?;
    Ok(())
}

fn cmd_windows(a: WindowsArgs) -> Result<()> {
    let arm = resolve_arm(&a.arm)?;
    let roi = read_roi_table_with_tr(&a.roi, a.tr)?;
    let motion = match (&a.motion, arm.uses_motion()) {
        (Some(p), _) => Some(io::read_motion_par(p, roi.clock())?),
        (None, true) => return Err(Error::InvalidArgument(format!("arm {arm} needs --motion"))),
        (None, false) => None,
    };
    let (rv, _) = io::read_rv(&a.rv, 6.0)?;
    let block = assemble_channels(&roi, motion.as_ref(), &arm)?;
    let block = Scaler::fit(&block).apply(&block)?;
    let scan_id = a
        .roi
        .file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.trim_end_matches(pipeline::ROI_SUFFIX).to_string())
        .unwrap_or_default();
    let set = WindowSet::new(
        vec![ScanData {
            scan_id,
            block,
            targets: rv.values().to_vec(),
        }],
        WindowSpec::new(a.window_len, a.stride)?,
    )?;
    write_file(&a.out, &window_table(&set))?;
    let mut config = pairs(&[
        ("arm", arm.name().to_string()),
        ("tr_s", a.tr.to_string()),
        ("window_len", a.window_len.to_string()),
        ("stride", a.stride.to_string()),
    ]);
    if let Some(b) = arm.band() {
        config.insert("band".into(), b.to_string());
    }
    let mut manifest = RunManifest::new("windows", 0, config);
    for p in [Some(&a.roi), a.motion.as_ref(), Some(&a.rv)].into_iter().flatten() {
        manifest.add_input(Path::new(""), p)?;
    }
    manifest.add_output(Path::new(""), &a.out)?;
    manifest.write_sidecar(&a.out)?;
    println!("{} windows, {} channels", set.len(), set.n_channels());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let (_, history, _) = run_training(&a.data, &cfg, &a.out)?;
    if let Some(best) = history.best() {
        println!(
            "best epoch {} of {}: val mae {:.6}, val loss {:.6}",
            best.epoch,
            history.epochs.len(),
            best.val_mae,
            best.val_loss
        );
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let arm = resolve_arm(&a.arm)?;
    let model = load_checkpoint(&a.model)?;
    let roi = read_roi_table_with_tr(&a.roi, a.tr)?;
    let motion = match (&a.motion, arm.uses_motion()) {
        (Some(p), true) => Some(io::read_motion_par(p, roi.clock())?),
        (None, true) => return Err(Error::InvalidArgument(format!("arm {arm} needs --motion"))),
        (_, false) => None,
    };
    let spec = WindowSpec::new(model.arch().window_len, a.stride)?;
    let p = predict_series(&model, &roi, motion.as_ref(), &arm, &spec, None, a.rv_window)?;
    write_rv(&a.out, &p.series, Some(&p.extrapolated))?;
    let mut config = pairs(&[
        ("arm", arm.name().to_string()),
        ("tr_s", a.tr.to_string()),
        ("stride", a.stride.to_string()),
        ("rv_window_s", a.rv_window.to_string()),
    ]);
    if let Some(b) = arm.band() {
        config.insert("band".into(), b.to_string());
    }
    let mut manifest = RunManifest::new("predict", 0, config);
    for p in [Some(&a.model), Some(&a.roi), motion.as_ref().and(a.motion.as_ref())].into_iter().flatten() {
        manifest.add_input(Path::new(""), p)?;
    }
    manifest.add_output(Path::new(""), &a.out)?;
    manifest.write_sidecar(&a.out)?;
    let n_extra = p.extrapolated.iter().filter(|e| **e).count();
    if n_extra > 0 {
        info!("{n_extra} frames filled from their nearest estimate");
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let mut preds: Vec<(String, PathBuf)> = fs::read_dir(&a.pred)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", a.pred.display())))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_suffix(RV_SUFFIX).map(|id| (id.to_string(), e.path()))
        })
        .collect();
    preds.sort();
    if preds.is_empty() {
        return Err(Error::InvalidArgument(format!("no *{RV_SUFFIX} files in {}", a.pred.display())));
    }
    let scored: Vec<(ScanScore, Vec<PathBuf>)> = preds
        .par_iter()
        .map(|(id, path)| {
            let (pred, extrapolated) = io::read_rv(path, a.rv_window)?;
            let truth_paths = ScanPaths::in_dir(&a.truth, id);
            let (truth, used) = if truth_paths.rv.exists() {
                (io::read_rv(&truth_paths.rv, a.rv_window)?.0, truth_paths.rv.clone())
            } else {
                let trace = io::read_physio(&truth_paths.physio, 1, 400.0)?;
                (compute_rv(&trace, pred.clock(), a.rv_window)?, truth_paths.physio.clone())
            };
            let score = score_scan(id, &pred, &truth, Some(&extrapolated))?;
            Ok((score, vec![path.clone(), used]))
        })
        .collect::<Result<_>>()?;
    let scores: Vec<ScanScore> = scored.iter().map(|(s, _)| s.clone()).collect();
    metrics::write_scores(&a.out, &scores)?;

    let config = pairs(&[("rv_window_s", a.rv_window.to_string())]);
    let mut manifest = RunManifest::new("evaluate", 0, config);
    for (_, files) in &scored {
        for f in files {
            manifest.add_input(Path::new(""), f)?;
        }
    }
    manifest.add_output(Path::new(""), &a.out)?;
    manifest.metrics = pipeline::summary_map(&metrics::aggregate(&scores)?);
    manifest.write_sidecar(&a.out)?;
    print!("{}", fs::read_to_string(&a.out).unwrap_or_default());
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let sa = metrics::read_scores(&a.scores_a)?;
    let sb = metrics::read_scores(&a.scores_b)?;
    let agg_a = metrics::aggregate(&sa)?;
    let agg_b = metrics::aggregate(&sb)?;
    let selected: Vec<Metric> = match a.metric {
        Some(m) => vec![m],
        None => Metric::ALL.to_vec(),
    };
    println!("metric,mean_a,mean_b,improvement_pct,p_value,n_pairs");
    for m in selected {
        let (Some(ma), Some(mb)) = (agg_a.get(m), agg_b.get(m)) else {
            warn!("{m} undefined in one of the tables; skipped");
            continue;
        };
        let cmp = paired_permutation_test(&sa, &sb, m, a.n_perm, a.seed)?;
        let improvement = relative_improvement(ma.mean, mb.mean, m)
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|_| "nan".into());
        println!(
            "{m},{:.6},{:.6},{improvement},{:.4},{}",
            ma.mean, mb.mean, cmp.p_value, cmp.n_pairs
        );
    }
    Ok(())
}

fn cmd_plotdata(a: PlotArgs) -> Result<()> {
    let find = |suffix: &str| -> Result<&PathBuf> {
        let hits: Vec<&PathBuf> = a
            .inputs
            .iter()
            .filter(|p| p.to_string_lossy().ends_with(suffix))
            .collect();
        match hits.as_slice() {
            [one] => Ok(one),
            [] => Err(Error::InvalidArgument(format!("plotdata needs one *{suffix} input"))),
            _ => Err(Error::InvalidArgument(format!("more than one *{suffix} input"))),
        }
    };
    let (physio, par, rv_path) = (find(pipeline::PHYSIO_SUFFIX)?, find(pipeline::MOTION_SUFFIX)?, find(RV_SUFFIX)?);
    let (rv, _) = io::read_rv(rv_path, a.rv_window)?;
    let motion = io::read_motion_par(par, rv.clock())?;
    let trace = io::read_physio(physio, a.column, a.rate)?;
    let mut band = a.band;
    band.order = a.order;
    write_file(&a.out, &pipeline::plot_table(&trace, &motion, &rv, &band)?)?;
    let config = pairs(&[
        ("rate_hz", a.rate.to_string()),
        ("column", a.column.to_string()),
        ("band", band.to_string()),
        ("band_order", band.order.to_string()),
    ]);
    let mut manifest = RunManifest::new("plotdata", 0, config);
    for p in [physio, par, rv_path] {
        manifest.add_input(Path::new(""), p)?;
    }
    manifest.add_output(Path::new(""), &a.out)?;
    manifest.write_sidecar(&a.out)?;
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let out = run_experiment(&a.data, &cfg, &a.out)?;
    println!(
        "arm {}: {} train, {} val, {} test scans; best epoch {:?}",
        cfg.arm,
        out.split.train.len(),
        out.split.val.len(),
        out.split.test.len(),
        out.run.history.best_epoch
    );
    print!("{}", metrics::format_scores(&out.run.scores)?);
    Ok(())
}
