use super::model::{CnnModel, N_OUTPUTS};
use crate::error::{Error, Result};
use crate::io::{MotionSeries, RoiSeries};
use crate::signals::{FrameClock, RvSeries};
use crate::windows::{assemble_channels, ChannelBlock, ExperimentArm, Scaler, WindowSpec};

/// Windows evaluated per forward call.
const PREDICT_BATCH: usize = 256;

/// Per-frame RV estimate of one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub series: RvSeries,
    /// Frames that received no window estimate and were filled from the
    /// nearest frame that did.
    pub extrapolated: Vec<bool>,
    /// Number of window estimates averaged into each frame.
    pub counts: Vec<usize>,
}

/// Average the three outputs of every window onto their frames. Inputs must
/// already be normalized.
pub fn predict_block(
    model: &CnnModel,
    block: &ChannelBlock,
    spec: &WindowSpec,
    clock: &FrameClock,
    rv_window_s: f64,
) -> Result<Prediction> {
    let arch = model.arch();
    if block.n_channels() != arch.in_channels || spec.window_len != arch.window_len {
        return Err(Error::Shape(format!(
            "model expects {} channels x {} frames, got {} channels and windows of {}",
            arch.in_channels,
            arch.window_len,
            block.n_channels(),
            spec.window_len
        )));
    }
    if clock.n_frames() != block.n_frames() {
        return Err(Error::Shape(format!(
            "clock has {} frames, inputs have {}",
            clock.n_frames(),
            block.n_frames()
        )));
    }
    let n = block.n_frames();
    let w = spec.window_len;
    let offsets = spec.target_offsets();
    let starts: Vec<usize> = spec.starts(n)?.collect();

    let mut sum = vec![0.0; n];
    let mut counts = vec![0usize; n];
    let per = block.n_channels() * w;
    let mut inputs = Vec::new();
    for chunk in starts.chunks(PREDICT_BATCH) {
        inputs.clear();
        inputs.resize(chunk.len() * per, 0.0);
        for (k, &s) in chunk.iter().enumerate() {
            for c in 0..block.n_channels() {
                let dst = k * per + c * w;
                inputs[dst..dst + w].copy_from_slice(&block.channel(c)[s..s + w]);
            }
        }
        let out: Vec<[f64; N_OUTPUTS]> = model.forward(&inputs)?;
        for (&s, y) in chunk.iter().zip(&out) {
            for (o, v) in offsets.iter().zip(y) {
                sum[s + o] += v;
                counts[s + o] += 1;
            }
        }
    }

    let mut values: Vec<f64> = sum
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    let extrapolated: Vec<bool> = counts.iter().map(|&c| c == 0).collect();
    let covered: Vec<usize> = (0..n).filter(|&k| counts[k] > 0).collect();
    // Nearest covered frame; ties go to the earlier one.
    for k in 0..n {
        if counts[k] > 0 {
            continue;
        }
        let pos = covered.partition_point(|&c| c < k);
        let pick = match (pos.checked_sub(1).map(|i| covered[i]), covered.get(pos)) {
            (Some(l), Some(&r)) => {
                if k - l <= r - k {
                    l
                } else {
                    r
                }
            }
            (Some(l), None) => l,
            (None, Some(&r)) => r,
            (None, None) => unreachable!("every scan has at least one window"),
        };
        values[k] = values[pick];
    }
    // RV is a standard deviation; negative regression outputs carry no meaning.
    for v in &mut values {
        *v = v.max(0.0);
    }
    Ok(Prediction {
        series: RvSeries::new(values, *clock, rv_window_s)?,
        extrapolated,
        counts,
    })
}

/// Assemble, normalize and predict one scan. Without a stored `scaler`
/// the scan's own statistics are used.
#[allow(clippy::too_many_arguments)]
pub fn predict_series(
    model: &CnnModel,
    roi: &RoiSeries,
    motion: Option<&MotionSeries>,
    arm: &ExperimentArm,
    spec: &WindowSpec,
    scaler: Option<&Scaler>,
    rv_window_s: f64,
) -> Result<Prediction> {
    let block = assemble_channels(roi, motion, arm)?;
    let fitted;
    let scaler = match scaler {
        Some(s) => s,
        None => {
            fitted = Scaler::fit(&block);
            &fitted
        }
    };
    let block = scaler.apply(&block)?;
    predict_block(model, &block, spec, roi.clock(), rv_window_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, Head};

    fn model(channels: usize) -> CnnModel {
        let arch = Architecture {
            in_channels: channels,
            window_len: 65,
            conv_channels: [2, 2, 2],
            kernels: [3, 3, 3],
            hidden: 3,
            head: Head::GlobalAverage,
        };
        CnnModel::new(arch, 1).unwrap()
    }

    fn block(n: usize) -> ChannelBlock {
        let ch: Vec<f64> = (0..n).map(|k| (k as f64 * 0.3).sin()).collect();
        ChannelBlock::from_channels(&[ch.clone(), ch.iter().map(|v| v * v).collect()]).unwrap()
    }

    fn counting_oracle(n: usize, stride: usize) -> Vec<usize> {
        let mut c = vec![0; n];
        let mut s = 0;
        while s + 65 <= n {
            for o in [0, 32, 64] {
                c[s + o] += 1;
            }
            s += stride;
        }
        c
    }

    #[test]
    fn single_window_covers_three_frames() {
        let clock = FrameClock::new(0.72, 65).unwrap();
        let p = predict_block(&model(2), &block(65), &WindowSpec::default(), &clock, 6.0).unwrap();
        let covered: Vec<usize> = (0..65).filter(|&k| p.counts[k] == 1).collect();
        assert_eq!(covered, vec![0, 32, 64]);
        assert_eq!(p.extrapolated.iter().filter(|e| **e).count(), 62);
        // Frames 1..=16 copy frame 0, 17..=31 copy frame 32.
        let v = p.series.values();
        assert_eq!(v[16], v[0]);
        assert_eq!(v[17], v[32]);
        assert_eq!(v[48], v[32]);
        assert_eq!(v[49], v[64]);
    }

    #[test]
    fn counts_match_oracle() {
        for (n, stride) in [(200, 1), (300, 7), (130, 64), (66, 1)] {
            let clock = FrameClock::new(0.72, n).unwrap();
            let spec = WindowSpec::new(65, stride).unwrap();
            let p = predict_block(&model(2), &block(n), &spec, &clock, 6.0).unwrap();
            assert_eq!(p.counts, counting_oracle(n, stride));
            if stride == 1 && n == 200 {
                assert!((64..136).all(|k| p.counts[k] == 3));
            }
            assert!(p.series.values().iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn zero_head_gives_flat_zero() {
        let mut m = model(2);
        m.zero_output_layer();
        let clock = FrameClock::new(0.72, 100).unwrap();
        let p = predict_block(&m, &block(100), &WindowSpec::default(), &clock, 6.0).unwrap();
        assert!(p.series.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let clock = FrameClock::new(0.72, 100).unwrap();
        assert!(predict_block(&model(3), &block(100), &WindowSpec::default(), &clock, 6.0).is_err());
        let short = FrameClock::new(0.72, 99).unwrap();
        assert!(predict_block(&model(2), &block(100), &WindowSpec::default(), &short, 6.0).is_err());
    }
}
