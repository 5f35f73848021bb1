//! The 1D-CNN regressor: three conv blocks, a pooling head and two dense
//! layers producing RV at the first, middle and last frame of a window.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use super::layers::*;
use crate::error::{Error, Result};
use crate::rng;

/// Number of regression outputs per window.
pub const N_OUTPUTS: usize = 3;

/// Windows per gradient shard.
const GRAD_SHARD: usize = 16;

/// How the last conv feature map is reduced before the dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Head {
    /// Mean over time per channel.
    #[default]
    GlobalAverage,
    /// Keep every (channel, time) feature.
    Flatten,
}

/// Layer sizes of a [`CnnModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub in_channels: usize,
    pub window_len: usize,
    pub conv_channels: [usize; 3],
    pub kernels: [usize; 3],
    pub hidden: usize,
    pub head: Head,
}

impl Architecture {
    /// `conv(in->32,k5) relu pool | conv(32->64,k5) relu pool |
    /// conv(64->64,k3) relu | gap | dense(64->32) relu | dense(32->3)`.
    pub fn standard(in_channels: usize, window_len: usize) -> Self {
        Self {
            in_channels,
            window_len,
            conv_channels: [32, 64, 64],
            kernels: [5, 5, 3],
            hidden: 32,
            head: Head::GlobalAverage,
        }
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.hidden == 0 || self.conv_channels.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if let Some(k) = self.kernels.iter().find(|k| *k % 2 == 0) {
            return Err(Error::InvalidArgument(format!("kernel size {k} must be odd")));
        }
        if self.window_len < 4 {
            return Err(Error::InvalidArgument(format!(
                "window of {} frames is too short for two pooling stages",
                self.window_len
            )));
        }
        Ok(())
    }

    /// Time length after each conv stage.
    pub fn lengths(&self) -> [usize; 3] {
        let l1 = self.window_len;
        let l2 = l1 / 2;
        [l1, l2, l2 / 2]
    }

    pub fn feature_len(&self) -> usize {
        match self.head {
            Head::GlobalAverage => self.conv_channels[2],
            Head::Flatten => self.conv_channels[2] * self.lengths()[2],
        }
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.window_len
    }

    /// Shapes of all parameter tensors in canonical order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let [c1, c2, c3] = self.conv_channels;
        let [k1, k2, k3] = self.kernels;
        vec![
            vec![c1, self.in_channels, k1],
            vec![c1],
            vec![c2, c1, k2],
            vec![c2],
            vec![c3, c2, k3],
            vec![c3],
            vec![self.hidden, self.feature_len()],
            vec![self.hidden],
            vec![N_OUTPUTS, self.hidden],
            vec![N_OUTPUTS],
        ]
    }

    /// Parses the string produced by `Display`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unrecognized layer spec '{spec}'"));
        let nums: Vec<usize> = spec
            .split(|c: char| !c.is_ascii_digit())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        // input(CxW) conv(C->a,kK) maxpool2 conv(a->b,kK) maxpool2
        // conv(b->c,kK) head dense(F->h) dense(h->3)
        if nums.len() < 17 {
            return Err(bad());
        }
        let head = if spec.contains("|flatten(") {
            Head::Flatten
        } else {
            Head::GlobalAverage
        };
        let arch = Architecture {
            in_channels: nums[0],
            window_len: nums[1],
            conv_channels: [nums[3], nums[7], nums[11]],
            kernels: [nums[4], nums[8], nums[12]],
            hidden: *nums.get(nums.len() - 2).ok_or_else(bad)?,
            head,
        };
        arch.validate()?;
        if arch.to_string() != spec {
            return Err(bad());
        }
        Ok(arch)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [c1, c2, c3] = self.conv_channels;
        let [k1, k2, k3] = self.kernels;
        let head = match self.head {
            Head::GlobalAverage => "gap".to_string(),
            Head::Flatten => format!("flatten({c3}x{})", self.lengths()[2]),
        };
        write!(
            f,
            "input({}x{})|conv({}->{c1},k{k1})|relu|maxpool2|conv({c1}->{c2},k{k2})|relu|maxpool2|\
             conv({c2}->{c3},k{k3})|relu|{head}|dense({}->{})|relu|dense({}->{N_OUTPUTS})",
            self.in_channels,
            self.window_len,
            self.in_channels,
            self.feature_len(),
            self.hidden,
            self.hidden
        )
    }
}

/// Names of the parameter tensors in canonical order.
pub const PARAM_NAMES: [&str; 10] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "conv3.weight",
    "conv3.bias",
    "dense1.weight",
    "dense1.bias",
    "dense2.weight",
    "dense2.bias",
];

/// Per-tensor gradients, same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(model: &CnnModel) -> Self {
        Gradients(model.params.iter().map(|p| vec![0.0; p.len()]).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    arch: Architecture,
    params: Vec<Vec<f64>>,
}

/// Activations of one sample kept for the backward pass.
struct Cache {
    a1: Vec<f64>,
    p1: Vec<f64>,
    i1: Vec<usize>,
    a2: Vec<f64>,
    p2: Vec<f64>,
    i2: Vec<usize>,
    a3: Vec<f64>,
    feat: Vec<f64>,
    h: Vec<f64>,
    y: [f64; N_OUTPUTS],
}

impl Cache {
    fn new(arch: &Architecture) -> Self {
        let [c1, c2, c3] = arch.conv_channels;
        let [l1, l2, l3] = arch.lengths();
        Self {
            a1: vec![0.0; c1 * l1],
            p1: vec![0.0; c1 * l2],
            i1: vec![0; c1 * l2],
            a2: vec![0.0; c2 * l2],
            p2: vec![0.0; c2 * l3],
            i2: vec![0; c2 * l3],
            a3: vec![0.0; c3 * l3],
            feat: vec![0.0; arch.feature_len()],
            h: vec![0.0; arch.hidden],
            y: [0.0; N_OUTPUTS],
        }
    }
}

/// Scratch buffers for the backward pass of one sample.
struct GradScratch {
    dh: Vec<f64>,
    dfeat: Vec<f64>,
    d3: Vec<f64>,
    dp2: Vec<f64>,
    d2: Vec<f64>,
    dp1: Vec<f64>,
    d1: Vec<f64>,
}

impl GradScratch {
    fn new(arch: &Architecture) -> Self {
        let [c1, c2, c3] = arch.conv_channels;
        let [l1, l2, l3] = arch.lengths();
        Self {
            dh: vec![0.0; arch.hidden],
            dfeat: vec![0.0; arch.feature_len()],
            d3: vec![0.0; c3 * l3],
            dp2: vec![0.0; c2 * l3],
            d2: vec![0.0; c2 * l2],
            dp1: vec![0.0; c1 * l2],
            d1: vec![0.0; c1 * l1],
        }
    }
}

fn ensure_finite(values: &[f64], layer: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation { layer: layer.into() })
    }
}

impl CnnModel {
    /// He-uniform weights, zero biases, drawn from the seeded init stream.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::stream(seed, rng::INIT);
        let params = arch
            .param_shapes()
            .iter()
            .map(|shape| {
                let n: usize = shape.iter().product();
                if shape.len() == 1 {
                    return vec![0.0; n];
                }
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            })
            .collect();
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<Vec<f64>>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.param_shapes();
        if params.len() != shapes.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((p, shape), name) in params.iter().zip(&shapes).zip(PARAM_NAMES) {
            let n: usize = shape.iter().product();
            if p.len() != n {
                return Err(Error::Shape(format!("{name}: expected {n} values, got {}", p.len())));
            }
            ensure_finite(p, name)?;
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    /// Zero the output layer so every prediction is 0.
    pub fn zero_output_layer(&mut self) {
        self.params[8].fill(0.0);
        self.params[9].fill(0.0);
    }

    fn check_batch(&self, inputs: &[f64]) -> Result<usize> {
        let per = self.arch.input_len();
        if inputs.is_empty() || !inputs.len().is_multiple_of(per) {
            return Err(Error::Shape(format!(
                "input of {} values is not a batch of {} x {} windows",
                inputs.len(),
                self.arch.in_channels,
                self.arch.window_len
            )));
        }
        ensure_finite(inputs, "input")?;
        Ok(inputs.len() / per)
    }

    fn forward_one(&self, x: &[f64], cache: &mut Cache) -> Result<()> {
        let a = &self.arch;
        let [c1, c2, c3] = a.conv_channels;
        let [k1, k2, k3] = a.kernels;
        let [l1, l2, l3] = a.lengths();
        let p = &self.params;

        conv1d_forward(x, &p[0], &p[1], a.in_channels, c1, l1, k1, &mut cache.a1);
        relu_in_place(&mut cache.a1);
        ensure_finite(&cache.a1, "conv1")?;
        maxpool2_forward(&cache.a1, c1, l1, &mut cache.p1, &mut cache.i1);

        conv1d_forward(&cache.p1, &p[2], &p[3], c1, c2, l2, k2, &mut cache.a2);
        relu_in_place(&mut cache.a2);
        ensure_finite(&cache.a2, "conv2")?;
        maxpool2_forward(&cache.a2, c2, l2, &mut cache.p2, &mut cache.i2);

        conv1d_forward(&cache.p2, &p[4], &p[5], c2, c3, l3, k3, &mut cache.a3);
        relu_in_place(&mut cache.a3);
        ensure_finite(&cache.a3, "conv3")?;

        match a.head {
            Head::GlobalAverage => {
                for (c, f) in cache.feat.iter_mut().enumerate() {
                    *f = cache.a3[c * l3..(c + 1) * l3].iter().sum::<f64>() / l3 as f64;
                }
            }
            Head::Flatten => cache.feat.copy_from_slice(&cache.a3),
        }

        dense_forward(&cache.feat, &p[6], &p[7], a.feature_len(), &mut cache.h);
        relu_in_place(&mut cache.h);
        ensure_finite(&cache.h, "dense1")?;
        dense_forward(&cache.h, &p[8], &p[9], a.hidden, &mut cache.y);
        ensure_finite(&cache.y, "dense2")?;
        Ok(())
    }

    fn backward_one(&self, x: &[f64], cache: &Cache, dy: &[f64; N_OUTPUTS], g: &mut Gradients, s: &mut GradScratch) {
        let a = &self.arch;
        let [c1, c2, c3] = a.conv_channels;
        let [k1, k2, k3] = a.kernels;
        let [l1, l2, l3] = a.lengths();
        let p = &self.params;
        let (g01, rest) = g.0.split_at_mut(2);
        let (g23, rest) = rest.split_at_mut(2);
        let (g45, rest) = rest.split_at_mut(2);
        let (g67, g89) = rest.split_at_mut(2);

        {
            let (w, b) = g89.split_at_mut(1);
            dense_backward(&cache.h, &p[8], dy, a.hidden, &mut w[0], &mut b[0], &mut s.dh);
        }
        relu_backward_in_place(&mut s.dh, &cache.h);
        {
            let (w, b) = g67.split_at_mut(1);
            dense_backward(&cache.feat, &p[6], &s.dh, a.feature_len(), &mut w[0], &mut b[0], &mut s.dfeat);
        }
        match a.head {
            Head::GlobalAverage => {
                for c in 0..c3 {
                    let v = s.dfeat[c] / l3 as f64;
                    s.d3[c * l3..(c + 1) * l3].fill(v);
                }
            }
            Head::Flatten => s.d3.copy_from_slice(&s.dfeat),
        }
        relu_backward_in_place(&mut s.d3, &cache.a3);
        {
            let (w, b) = g45.split_at_mut(1);
            conv1d_backward(&cache.p2, &p[4], &s.d3, c2, c3, l3, k3, &mut w[0], &mut b[0], Some(&mut s.dp2));
        }
        maxpool2_backward(&s.dp2, &cache.i2, &mut s.d2);
        relu_backward_in_place(&mut s.d2, &cache.a2);
        {
            let (w, b) = g23.split_at_mut(1);
            conv1d_backward(&cache.p1, &p[2], &s.d2, c1, c2, l2, k2, &mut w[0], &mut b[0], Some(&mut s.dp1));
        }
        maxpool2_backward(&s.dp1, &cache.i1, &mut s.d1);
        relu_backward_in_place(&mut s.d1, &cache.a1);
        {
            let (w, b) = g01.split_at_mut(1);
            conv1d_backward(x, &p[0], &s.d1, a.in_channels, c1, l1, k1, &mut w[0], &mut b[0], None);
        }
    }

    /// Predict `B x 3` outputs for `B` channel-major windows laid end to end.
    pub fn forward(&self, inputs: &[f64]) -> Result<Vec<[f64; N_OUTPUTS]>> {
        self.check_batch(inputs)?;
        let per = self.arch.input_len();
        let shards: Vec<Result<Vec<[f64; N_OUTPUTS]>>> = inputs
            .par_chunks(per * GRAD_SHARD)
            .map(|x| {
                let mut cache = Cache::new(&self.arch);
                x.chunks(per)
                    .map(|xi| {
                        self.forward_one(xi, &mut cache)?;
                        Ok(cache.y)
                    })
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(inputs.len() / per);
        for s in shards {
            out.extend(s?);
        }
        Ok(out)
    }

    /// Mean squared error over all `B x 3` outputs and its gradient.
    pub fn backward(&self, inputs: &[f64], targets: &[[f64; N_OUTPUTS]]) -> Result<(f64, Gradients)> {
        self.backward_scaled(inputs, targets, 1.0)
    }

    /// As [`backward`](Self::backward) for the loss multiplied by `loss_scale`.
    pub fn backward_scaled(
        &self,
        inputs: &[f64],
        targets: &[[f64; N_OUTPUTS]],
        loss_scale: f64,
    ) -> Result<(f64, Gradients)> {
        let b = self.check_batch(inputs)?;
        if targets.len() != b {
            return Err(Error::Shape(format!("{} targets for a batch of {b}", targets.len())));
        }
        let per = self.arch.input_len();
        let norm = loss_scale / (b * N_OUTPUTS) as f64;
        // Fixed shard boundaries and in-order reduction keep the result
        // independent of the worker count.
        let shards: Vec<Result<(f64, Gradients)>> = inputs
            .par_chunks(per * GRAD_SHARD)
            .zip(targets.par_chunks(GRAD_SHARD))
            .map(|(x, t)| self.shard_gradients(x, t, norm))
            .collect();
        let mut total = Gradients::zeros_like(self);
        let mut sse = 0.0;
        for shard in shards {
            let (s, g) = shard?;
            sse += s;
            for (acc, part) in total.0.iter_mut().zip(&g.0) {
                for (a, p) in acc.iter_mut().zip(part) {
                    *a += p;
                }
            }
        }
        let loss = sse * norm;
        if !loss.is_finite() {
            return Err(Error::NonFiniteActivation { layer: "loss".into() });
        }
        Ok((loss, total))
    }

    fn shard_gradients(&self, inputs: &[f64], targets: &[[f64; N_OUTPUTS]], norm: f64) -> Result<(f64, Gradients)> {
        let per = self.arch.input_len();
        let mut cache = Cache::new(&self.arch);
        let mut scratch = GradScratch::new(&self.arch);
        let mut grads = Gradients::zeros_like(self);
        let mut sse = 0.0;
        for (i, t) in targets.iter().enumerate() {
            let x = &inputs[i * per..(i + 1) * per];
            self.forward_one(x, &mut cache)?;
            let mut dy = [0.0; N_OUTPUTS];
            for j in 0..N_OUTPUTS {
                let d = cache.y[j] - t[j];
                sse += d * d;
                dy[j] = 2.0 * d * norm;
            }
            self.backward_one(x, &cache, &dy, &mut grads, &mut scratch);
        }
        Ok((sse, grads))
    }

    /// Mean squared error without gradients.
    pub fn loss(&self, inputs: &[f64], targets: &[[f64; N_OUTPUTS]]) -> Result<f64> {
        let out = self.forward(inputs)?;
        if out.len() != targets.len() {
            return Err(Error::Shape("target count differs from batch".into()));
        }
        let sse: f64 = out
            .iter()
            .zip(targets)
            .flat_map(|(y, t)| y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)))
            .sum();
        Ok(sse / (out.len() * N_OUTPUTS) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(head: Head) -> Architecture {
        Architecture {
            in_channels: 2,
            window_len: 9,
            conv_channels: [3, 4, 3],
            kernels: [5, 3, 3],
            hidden: 5,
            head,
        }
    }

    fn inputs(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, 99);
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn standard_shape_chain() {
        let arch = Architecture::standard(96, 65);
        assert_eq!(arch.lengths(), [65, 32, 16]);
        assert_eq!(arch.feature_len(), 64);
        let m = CnnModel::new(arch, 0).unwrap();
        let out = m.forward(&inputs(2 * 96 * 65, 1)).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn spec_string_round_trip() {
        for head in [Head::GlobalAverage, Head::Flatten] {
            let arch = Architecture::standard(90, 65).with_head(head);
            let s = arch.to_string();
            assert_eq!(Architecture::parse(&s).unwrap(), arch);
        }
        assert_eq!(
            Architecture::standard(96, 65).to_string(),
            "input(96x65)|conv(96->32,k5)|relu|maxpool2|conv(32->64,k5)|relu|maxpool2|\
             conv(64->64,k3)|relu|gap|dense(64->32)|relu|dense(32->3)"
        );
        assert!(Architecture::parse("input(2x9)|junk").is_err());
    }

    #[test]
    fn zero_head_outputs_zero() {
        let mut m = CnnModel::new(tiny(Head::GlobalAverage), 3).unwrap();
        m.zero_output_layer();
        for y in m.forward(&inputs(5 * 18, 2)).unwrap() {
            assert_eq!(y, [0.0; 3]);
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let m = CnnModel::new(tiny(Head::Flatten), 4).unwrap();
        let x = inputs(3 * 18, 5);
        let out = m.forward(&x).unwrap();
        let mut swapped = x[18..36].to_vec();
        swapped.extend_from_slice(&x[..18]);
        swapped.extend_from_slice(&x[36..]);
        let out2 = m.forward(&swapped).unwrap();
        assert_eq!(out2, vec![out[1], out[0], out[2]]);
        let same = [x[..18].to_vec(), x[..18].to_vec()].concat();
        let o = m.forward(&same).unwrap();
        assert_eq!(o[0], o[1]);
    }

    #[test]
    fn shape_errors() {
        let m = CnnModel::new(tiny(Head::GlobalAverage), 0).unwrap();
        assert!(m.forward(&inputs(17, 0)).is_err());
        assert!(m.backward(&inputs(36, 0), &[[0.0; 3]]).is_err());
        assert!(m.forward(&[f64::NAN; 18]).is_err());
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let mut m = CnnModel::new(tiny(Head::GlobalAverage), 1).unwrap();
        let x = inputs(4 * 18, 8);
        let targets = m.forward(&x).unwrap();
        let (loss, g) = m.backward(&x, &targets).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
        m.zero_output_layer();
        let (loss, _) = m.backward(&x, &[[0.0; 3]; 4]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn loss_scale_is_linear() {
        let m = CnnModel::new(tiny(Head::Flatten), 2).unwrap();
        let x = inputs(3 * 18, 3);
        let t = [[0.5, -0.2, 1.0], [0.1, 0.1, 0.1], [2.0, 0.0, -1.0]];
        let (l1, g1) = m.backward(&x, &t).unwrap();
        let (l2, g2) = m.backward_scaled(&x, &t, 2.0).unwrap();
        assert_eq!(l2, 2.0 * l1);
        for (a, b) in g1.0.iter().flatten().zip(g2.0.iter().flatten()) {
            assert_eq!(2.0 * a, *b);
        }
        assert!((m.loss(&x, &t).unwrap() - l1).abs() < 1e-15);
    }

    fn max_rel_grad_error(arch: Architecture, seed: u64) -> f64 {
        let mut m = CnnModel::new(arch, seed).unwrap();
        // Non-zero biases so no unit sits exactly on a ReLU kink.
        let mut r = rng::stream(seed, 98);
        for t in [1, 3, 5, 7, 9] {
            for v in &mut m.params_mut()[t] {
                *v = r.random_range(-0.1..0.1);
            }
        }
        let b = 3;
        let x = inputs(b * arch.input_len(), seed + 1);
        let targets: Vec<[f64; 3]> = (0..b).map(|_| [r.random(), r.random(), r.random()]).collect();
        let (_, g) = m.backward(&x, &targets).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for t in 0..m.params.len() {
            for j in 0..m.params[t].len() {
                let orig = m.params[t][j];
                m.params[t][j] = orig + h;
                let up = m.loss(&x, &targets).unwrap();
                m.params[t][j] = orig - h;
                let down = m.loss(&x, &targets).unwrap();
                m.params[t][j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = g.0[t][j];
                let scale = analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (seed, head) in [(1, Head::GlobalAverage), (2, Head::Flatten), (3, Head::GlobalAverage)] {
            let err = max_rel_grad_error(tiny(head), seed);
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }
}
