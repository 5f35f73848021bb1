//! Per-scan reconstruction metrics, aggregation and the paired sign-flip
//! permutation test used to compare arms.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::signals::RvSeries;

/// Below this standard deviation a series is treated as constant.
pub const MIN_STD: f64 = 1e-12;

/// Minimum number of sampled sign patterns.
pub const MIN_PERMUTATIONS: usize = 1000;

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("no frames to score".into()));
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Product-moment correlation; errors if either series is (nearly) constant.
pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    for (name, ss) in [("prediction", sxx), ("ground truth", syy)] {
        if (ss / n).sqrt() < MIN_STD {
            return Err(Error::ZeroVariance(format!("{name} is constant")));
        }
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Dynamic time warping cost with `|x - y|` local cost and unit steps
/// (1,0), (0,1), (1,1). Not normalized by path length.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("DTW of an empty sequence".into()));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for x in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = (x - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Mae,
    Mse,
    Pearson,
    Dtw,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mae, Metric::Mse, Metric::Pearson, Metric::Dtw];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Mse => "mse",
            Metric::Pearson => "pearson_r",
            Metric::Dtw => "dtw",
        }
    }

    /// Lower is better.
    pub fn is_error(self) -> bool {
        self != Metric::Pearson
    }

    pub fn of(self, s: &ScanScore) -> Option<f64> {
        match self {
            Metric::Mae => Some(s.mae),
            Metric::Mse => Some(s.mse),
            Metric::Pearson => s.pearson_r,
            Metric::Dtw => Some(s.dtw),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mae" => Ok(Metric::Mae),
            "mse" => Ok(Metric::Mse),
            "pearson" | "pearson_r" | "r" => Ok(Metric::Pearson),
            "dtw" => Ok(Metric::Dtw),
            _ => Err(Error::InvalidArgument(format!("unknown metric '{s}'"))),
        }
    }
}

/// Scores of one scan. `pearson_r` is `None` when either series is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanScore {
    pub scan_id: String,
    pub mae: f64,
    pub mse: f64,
    pub pearson_r: Option<f64>,
    pub dtw: f64,
}

/// Score `pred` against `truth`, skipping frames flagged in `exclude`.
pub fn score_scan(scan_id: &str, pred: &RvSeries, truth: &RvSeries, exclude: Option<&[bool]>) -> Result<ScanScore> {
    pred.clock().ensure_same(truth.clock(), "prediction vs ground truth")?;
    let keep: Vec<usize> = match exclude {
        Some(flags) => {
            if flags.len() != pred.len() {
                return Err(Error::Shape(format!(
                    "{} exclusion flags for {} frames",
                    flags.len(),
                    pred.len()
                )));
            }
            (0..pred.len()).filter(|&k| !flags[k]).collect()
        }
        None => (0..pred.len()).collect(),
    };
    let p: Vec<f64> = keep.iter().map(|&k| pred.values()[k]).collect();
    let t: Vec<f64> = keep.iter().map(|&k| truth.values()[k]).collect();
    let pearson_r = match pearson(&p, &t) {
        Ok(r) => Some(r),
        Err(Error::ZeroVariance(why)) => {
            log::warn!("scan {scan_id}: correlation undefined ({why}); excluded from pearson_r");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(ScanScore {
        scan_id: scan_id.to_string(),
        mae: mae(&p, &t)?,
        mse: mse(&p, &t)?,
        pearson_r,
        dtw: dtw(&p, &t)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

/// Per-metric mean and std over scans. `pearson_r` is `None` if no scan
/// has a defined correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub mae: MeanStd,
    pub mse: MeanStd,
    pub pearson_r: Option<MeanStd>,
    pub dtw: MeanStd,
}

impl Aggregate {
    pub fn get(&self, metric: Metric) -> Option<MeanStd> {
        match metric {
            Metric::Mae => Some(self.mae),
            Metric::Mse => Some(self.mse),
            Metric::Pearson => self.pearson_r,
            Metric::Dtw => Some(self.dtw),
        }
    }
}

pub fn aggregate(scores: &[ScanScore]) -> Result<Aggregate> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scans to aggregate".into()));
    }
    let col = |m: Metric| -> Vec<f64> { scores.iter().filter_map(|s| m.of(s)).collect() };
    Ok(Aggregate {
        mae: MeanStd::of(&col(Metric::Mae)).expect("non-empty"),
        mse: MeanStd::of(&col(Metric::Mse)).expect("non-empty"),
        pearson_r: MeanStd::of(&col(Metric::Pearson)),
        dtw: MeanStd::of(&col(Metric::Dtw)).expect("non-empty"),
    })
}

/// Two-sided sign-flip test of mean(diffs) = 0. The observed statistic is
/// counted once, so `p = (1 + #{|T*| >= |T|}) / (n_perm + 1)`.
pub fn sign_flip_p_value(diffs: &[f64], n_perm: usize, seed: u64) -> Result<f64> {
    if diffs.is_empty() {
        return Err(Error::InvalidArgument("no paired differences".into()));
    }
    if n_perm < MIN_PERMUTATIONS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_PERMUTATIONS} permutations, got {n_perm}"
        )));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("paired difference".into()));
    }
    let n = diffs.len() as f64;
    let observed = (diffs.iter().sum::<f64>() / n).abs();
    // Relative slack so that rounding never breaks exact ties.
    let scale = diffs.iter().map(|d| d.abs()).sum::<f64>() / n;
    let tol = 1e-9 * scale;
    let mut rng = rng::stream(seed, rng::PERMUTATION);
    let mut extreme = 0usize;
    for _ in 0..n_perm {
        let t: f64 = diffs
            .iter()
            .map(|&d| if rng.random::<bool>() { d } else { -d })
            .sum::<f64>()
            / n;
        if t.abs() >= observed - tol {
            extreme += 1;
        }
    }
    Ok((1 + extreme) as f64 / (n_perm + 1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub metric: Metric,
    pub n_pairs: usize,
    /// Mean of `b - a` over paired scans.
    pub mean_diff: f64,
    pub p_value: f64,
}

/// Pair scores by scan id and run the sign-flip test on `b - a`.
pub fn paired_permutation_test(
    a: &[ScanScore],
    b: &[ScanScore],
    metric: Metric,
    n_perm: usize,
    seed: u64,
) -> Result<Comparison> {
    let ma: BTreeMap<&str, &ScanScore> = a.iter().map(|s| (s.scan_id.as_str(), s)).collect();
    let mb: BTreeMap<&str, &ScanScore> = b.iter().map(|s| (s.scan_id.as_str(), s)).collect();
    if ma.len() != a.len() || mb.len() != b.len() {
        return Err(Error::InvalidArgument("duplicate scan id in score set".into()));
    }
    let only_a: Vec<String> = ma.keys().filter(|k| !mb.contains_key(*k)).map(|k| k.to_string()).collect();
    let only_b: Vec<String> = mb.keys().filter(|k| !ma.contains_key(*k)).map(|k| k.to_string()).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(Error::ScanMismatch { only_a, only_b });
    }
    let diffs: Vec<f64> = ma
        .iter()
        .filter_map(|(id, sa)| Some(metric.of(mb[id])? - metric.of(sa)?))
        .collect();
    if diffs.is_empty() {
        return Err(Error::InvalidArgument(format!("no scans with a defined {metric}")));
    }
    Ok(Comparison {
        metric,
        n_pairs: diffs.len(),
        mean_diff: diffs.iter().sum::<f64>() / diffs.len() as f64,
        p_value: sign_flip_p_value(&diffs, n_perm, seed)?,
    })
}

/// Percent improvement of `new` over `baseline`; positive is better.
pub fn relative_improvement(baseline: f64, new: f64, metric: Metric) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::InvalidArgument("relative improvement over a zero baseline".into()));
    }
    Ok(if metric.is_error() {
        100.0 * (baseline - new) / baseline
    } else {
        100.0 * (new - baseline) / baseline.abs()
    })
}

const SCORE_HEADER: &str = "scan_id,mae,mse,pearson_r,dtw";
const SUMMARY_HEADER: &str = "metric,mean,std,n";

/// Per-scan table, then a summary block of mean/std per metric.
pub fn format_scores(scores: &[ScanScore]) -> Result<String> {
    let agg = aggregate(scores)?;
    let mut out = format!("# rvrecon scores v{}\n{SCORE_HEADER}\n", crate::io::FORMAT_VERSION);
    for s in scores {
        let r = s.pearson_r.map(|r| r.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", s.scan_id, s.mae, s.mse, r, s.dtw));
    }
    out.push_str(&format!("\n{SUMMARY_HEADER}\n"));
    for m in Metric::ALL {
        match agg.get(m) {
            Some(v) => out.push_str(&format!("{m},{},{},{}\n", v.mean, v.std, v.n)),
            None => out.push_str(&format!("{m},,,0\n")),
        }
    }
    Ok(out)
}

pub fn write_scores(path: &Path, scores: &[ScanScore]) -> Result<()> {
    std::fs::write(path, format_scores(scores)?).map_err(|e| Error::io(path, e))
}

/// Read the per-scan table of a score report; the summary block is ignored.
pub fn read_scores(path: &Path) -> Result<Vec<ScanScore>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut scores = Vec::new();
    let mut seen_header = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == SCORE_HEADER {
            seen_header = true;
            continue;
        }
        if line == SUMMARY_HEADER {
            break;
        }
        if !seen_header {
            return Err(Error::parse(path, i + 1, format!("expected header '{SCORE_HEADER}'")));
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::parse(path, i + 1, format!("expected 5 fields, got {}", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad number '{s}'")))
        };
        scores.push(ScanScore {
            scan_id: f[0].to_string(),
            mae: num(f[1])?,
            mse: num(f[2])?,
            pearson_r: if f[3].trim().is_empty() { None } else { Some(num(f[3])?) },
            dtw: num(f[4])?,
        });
    }
    if scores.is_empty() {
        return Err(Error::parse(path, 0, "no scan rows"));
    }
    Ok(scores)
}
