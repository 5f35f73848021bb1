//! Single-sample layer kernels over channel-major slices.

/// 1D convolution, stride 1, symmetric zero padding of `kernel / 2`.
///
/// `x` is `cin x len`, `w` is `cout x cin x kernel`, `out` is `cout x len`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    cin: usize,
    cout: usize,
    len: usize,
    kernel: usize,
    out: &mut [f64],
) {
    let pad = kernel / 2;
    for o in 0..cout {
        let row = &mut out[o * len..(o + 1) * len];
        row.fill(b[o]);
        for i in 0..cin {
            let xr = &x[i * len..(i + 1) * len];
            let wr = &w[(o * cin + i) * kernel..(o * cin + i + 1) * kernel];
            for (kk, &wv) in wr.iter().enumerate() {
                let (t0, t1, s0) = tap_range(kk, pad, len);
                for (y, xv) in row[t0..t1].iter_mut().zip(&xr[s0..s0 + (t1 - t0)]) {
                    *y += wv * xv;
                }
            }
        }
    }
}

/// Accumulate weight/bias gradients and, if `dx` is given, the input
/// gradient of a convolution.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dz: &[f64],
    cin: usize,
    cout: usize,
    len: usize,
    kernel: usize,
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let pad = kernel / 2;
    if let Some(dx) = dx.as_deref_mut() {
        dx.fill(0.0);
    }
    for o in 0..cout {
        let g = &dz[o * len..(o + 1) * len];
        db[o] += g.iter().sum::<f64>();
        for i in 0..cin {
            let xr = &x[i * len..(i + 1) * len];
            let base = (o * cin + i) * kernel;
            for kk in 0..kernel {
                let (t0, t1, s0) = tap_range(kk, pad, len);
                let n = t1 - t0;
                dw[base + kk] += g[t0..t1]
                    .iter()
                    .zip(&xr[s0..s0 + n])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
                if let Some(dx) = dx.as_deref_mut() {
                    let wv = w[base + kk];
                    let dxr = &mut dx[i * len + s0..i * len + s0 + n];
                    for (d, gv) in dxr.iter_mut().zip(&g[t0..t1]) {
                        *d += wv * gv;
                    }
                }
            }
        }
    }
}

/// Output positions `t0..t1` that read input `s0..` for tap `kk`.
#[inline]
fn tap_range(kk: usize, pad: usize, len: usize) -> (usize, usize, usize) {
    if kk >= pad {
        let shift = kk - pad;
        (0, len.saturating_sub(shift), shift.min(len))
    } else {
        let shift = pad - kk;
        (shift.min(len), len, 0)
    }
}

pub fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zero the gradient where the (post-ReLU) activation is not positive.
pub fn relu_backward_in_place(grad: &mut [f64], activation: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Max-pool with width and stride 2 (trailing odd element dropped). Ties go
/// to the lower index. Returns the winning input index per output.
pub fn maxpool2_forward(x: &[f64], channels: usize, len: usize, out: &mut [f64], argmax: &mut [usize]) {
    let half = len / 2;
    for c in 0..channels {
        for j in 0..half {
            let i0 = c * len + 2 * j;
            let pick = if x[i0 + 1] > x[i0] { i0 + 1 } else { i0 };
            out[c * half + j] = x[pick];
            argmax[c * half + j] = pick;
        }
    }
}

pub fn maxpool2_backward(dout: &[f64], argmax: &[usize], dx: &mut [f64]) {
    dx.fill(0.0);
    for (g, &i) in dout.iter().zip(argmax) {
        dx[i] += g;
    }
}

/// Fully connected layer `out = w x + b`, `w` is `dout x din`.
pub fn dense_forward(x: &[f64], w: &[f64], b: &[f64], din: usize, out: &mut [f64]) {
    for (o, y) in out.iter_mut().enumerate() {
        *y = b[o]
            + w[o * din..(o + 1) * din]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>();
    }
}

pub fn dense_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    din: usize,
    dw: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    dx.fill(0.0);
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        let wr = &w[o * din..(o + 1) * din];
        let dwr = &mut dw[o * din..(o + 1) * din];
        for ((dwv, xv), (dxv, wv)) in dwr.iter_mut().zip(x).zip(dx.iter_mut().zip(wr)) {
            *dwv += g * xv;
            *dxv += g * wv;
        }
    }
}
