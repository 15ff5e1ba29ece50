//! Kernels for the layer types of the network.
//!
//! Activations between convolutions are stored channel-major as
//! `[channels][batch][time]`, so every channel is one contiguous run of
//! `batch * time` values. That makes batch-norm statistics a slice reduction
//! and lets each convolution run as a single GEMM over the whole batch.

use super::gemm::{gemm, Op};

pub(crate) const KERNEL: usize = 3;
pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.9;

/// Geometry of a channel-major activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geom {
    pub channels: usize,
    pub batch: usize,
    pub time: usize,
}

impl Geom {
    pub fn run(&self) -> usize {
        self.batch * self.time
    }

    pub fn len(&self) -> usize {
        self.channels * self.run()
    }
}

/// `[m][C][T]` (record-major) to `[C][m][T]`.
pub(crate) fn to_channel_major(x: &[f64], g: Geom) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for s in 0..g.batch {
        for c in 0..g.channels {
            let src = &x[(s * g.channels + c) * g.time..][..g.time];
            out[c * g.run() + s * g.time..][..g.time].copy_from_slice(src);
        }
    }
    out
}

/// `[C][m][T]` to `[m][C*T]`, one flattened row per record.
pub(crate) fn flatten(x: &[f64], g: Geom) -> Vec<f64> {
    let width = g.channels * g.time;
    let mut out = vec![0.0; g.len()];
    for c in 0..g.channels {
        for s in 0..g.batch {
            let src = &x[c * g.run() + s * g.time..][..g.time];
            out[s * width + c * g.time..][..g.time].copy_from_slice(src);
        }
    }
    out
}

pub(crate) fn unflatten(x: &[f64], g: Geom) -> Vec<f64> {
    let width = g.channels * g.time;
    let mut out = vec![0.0; g.len()];
    for c in 0..g.channels {
        for s in 0..g.batch {
            let src = &x[s * width + c * g.time..][..g.time];
            out[c * g.run() + s * g.time..][..g.time].copy_from_slice(src);
        }
    }
    out
}

fn im2col(x: &[f64], g: Geom) -> Vec<f64> {
    let n = g.run();
    let mut cols = vec![0.0; KERNEL * g.channels * n];
    for c in 0..g.channels {
        let chan = &x[c * n..][..n];
        for tap in 0..KERNEL {
            let row = &mut cols[(c * KERNEL + tap) * n..][..n];
            for s in 0..g.batch {
                let src = &chan[s * g.time..][..g.time];
                let dst = &mut row[s * g.time..][..g.time];
                // output position t reads input t + tap - 1
                match tap {
                    0 => dst[1..].copy_from_slice(&src[..g.time - 1]),
                    1 => dst.copy_from_slice(src),
                    _ => dst[..g.time - 1].copy_from_slice(&src[1..]),
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: Geom) -> Vec<f64> {
    let n = g.run();
    let mut x = vec![0.0; g.len()];
    for c in 0..g.channels {
        let chan = &mut x[c * n..][..n];
        for tap in 0..KERNEL {
            let row = &cols[(c * KERNEL + tap) * n..][..n];
            for s in 0..g.batch {
                let src = &row[s * g.time..][..g.time];
                let dst = &mut chan[s * g.time..][..g.time];
                let (d, r) = match tap {
                    0 => (&mut dst[..g.time - 1], &src[1..]),
                    1 => (&mut dst[..], src),
                    _ => (&mut dst[1..], &src[..g.time - 1]),
                };
                d.iter_mut().zip(r).for_each(|(a, b)| *a += b);
            }
        }
    }
    x
}

/// Kernel-3, stride-1, zero-padded "same" convolution over time.
///
/// `weight` is `[out][in][3]`. Returns the output and the im2col buffer the
/// backward pass needs.
pub(crate) fn conv_forward(x: &[f64], g: Geom, weight: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let out_channels = bias.len();
    let n = g.run();
    let cols = im2col(x, g);
    let mut y = vec![0.0; out_channels * n];
    for (row, &b) in y.chunks_exact_mut(n).zip(bias) {
        row.fill(b);
    }
    gemm(out_channels, KERNEL * g.channels, n, weight, Op::N, &cols, Op::N, 1.0, &mut y);
    (y, cols)
}

/// Returns `(d_weight, d_bias, d_input)`; `d_input` is skipped when not needed.
pub(crate) fn conv_backward(
    dy: &[f64],
    cols: &[f64],
    g: Geom,
    weight: &[f64],
    out_channels: usize,
    need_input_grad: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let n = g.run();
    let k_in = KERNEL * g.channels;
    let mut dw = vec![0.0; out_channels * k_in];
    gemm(out_channels, n, k_in, dy, Op::N, cols, Op::T, 0.0, &mut dw);
    let db = dy.chunks_exact(n).map(|row| row.iter().sum()).collect();
    let dx = need_input_grad.then(|| {
        let mut dcols = vec![0.0; k_in * n];
        gemm(k_in, out_channels, n, weight, Op::T, dy, Op::N, 0.0, &mut dcols);
        col2im(&dcols, g)
    });
    (dw, db, dx)
}

pub(crate) struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Batch-statistics normalization. Returns the output, the cache, and the
/// per-channel `(mean, biased variance)` used.
pub(crate) fn bn_forward_train(
    x: &[f64],
    n: usize,
    scale: &[f64],
    shift: &[f64],
) -> (Vec<f64>, BnCache, Vec<(f64, f64)>) {
    let channels = scale.len();
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(channels);
    let mut stats = Vec::with_capacity(channels);
    for c in 0..channels {
        let xs = &x[c * n..][..n];
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let istd = (var + BN_EPS).sqrt().recip();
        let (gamma, beta) = (scale[c], shift[c]);
        for ((h, o), &v) in xhat[c * n..][..n].iter_mut().zip(&mut y[c * n..][..n]).zip(xs) {
            *h = (v - mean) * istd;
            *o = gamma * *h + beta;
        }
        inv_std.push(istd);
        stats.push((mean, var));
    }
    (y, BnCache { xhat, inv_std }, stats)
}

pub(crate) fn bn_forward_eval(
    x: &[f64],
    n: usize,
    scale: &[f64],
    shift: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for c in 0..scale.len() {
        let a = scale[c] / (running_var[c] + BN_EPS).sqrt();
        let b = shift[c] - a * running_mean[c];
        for (o, &v) in y[c * n..][..n].iter_mut().zip(&x[c * n..][..n]) {
            *o = a * v + b;
        }
    }
    y
}

/// Returns `(d_scale, d_shift, d_input)`.
pub(crate) fn bn_backward(dy: &[f64], n: usize, cache: &BnCache, scale: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let channels = scale.len();
    let mut dscale = vec![0.0; channels];
    let mut dshift = vec![0.0; channels];
    let mut dx = vec![0.0; dy.len()];
    let nf = n as f64;
    for c in 0..channels {
        let dys = &dy[c * n..][..n];
        let hs = &cache.xhat[c * n..][..n];
        let sum_dy: f64 = dys.iter().sum();
        let sum_dy_h: f64 = dys.iter().zip(hs).map(|(d, h)| d * h).sum();
        dscale[c] = sum_dy_h;
        dshift[c] = sum_dy;
        let coef = scale[c] * cache.inv_std[c] / nf;
        for ((o, &d), &h) in dx[c * n..][..n].iter_mut().zip(dys).zip(hs) {
            *o = coef * (nf * d - sum_dy - h * sum_dy_h);
        }
    }
    (dscale, dshift, dx)
}

pub(crate) fn relu_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes `dy` wherever the activation output was not positive.
pub(crate) fn relu_backward_inplace(dy: &mut [f64], out: &[f64]) {
    dy.iter_mut().zip(out).for_each(|(d, &o)| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
}

/// Width-2, stride-2 max pooling over time. Returns the pooled activation
/// and, for each output, the flat index of the winning input.
pub(crate) fn maxpool_forward(x: &[f64], g: Geom) -> (Vec<f64>, Vec<usize>, Geom) {
    let out_g = Geom {
        time: g.time / 2,
        ..g
    };
    let mut y = Vec::with_capacity(out_g.len());
    let mut argmax = Vec::with_capacity(out_g.len());
    for c in 0..g.channels {
        for s in 0..g.batch {
            let base = c * g.run() + s * g.time;
            for t in 0..out_g.time {
                let (a, b) = (base + 2 * t, base + 2 * t + 1);
                let idx = if x[b] > x[a] { b } else { a };
                y.push(x[idx]);
                argmax.push(idx);
            }
        }
    }
    (y, argmax, out_g)
}

pub(crate) fn maxpool_backward(dy: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (&d, &idx) in dy.iter().zip(argmax) {
        dx[idx] += d;
    }
    dx
}

/// `y = x * W^T + b` for `x: [m][in]`, `W: [out][in]`.
pub(crate) fn dense_forward(x: &[f64], batch: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let out = bias.len();
    let inp = weight.len() / out;
    let mut y: Vec<f64> = (0..batch).flat_map(|_| bias.iter().copied()).collect();
    gemm(batch, inp, out, x, Op::N, weight, Op::T, 1.0, &mut y);
    y
}

/// Returns `(d_weight, d_bias, d_input)`.
pub(crate) fn dense_backward(dy: &[f64], x: &[f64], batch: usize, weight: &[f64], out: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let inp = weight.len() / out;
    let mut dw = vec![0.0; out * inp];
    gemm(out, batch, inp, dy, Op::T, x, Op::N, 0.0, &mut dw);
    let mut db = vec![0.0; out];
    for row in dy.chunks_exact(out) {
        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    let mut dx = vec![0.0; batch * inp];
    gemm(batch, out, inp, dy, Op::N, weight, Op::N, 0.0, &mut dx);
    (dw, db, dx)
}

/// Row-wise softmax, in place.
pub(crate) fn softmax_rows(z: &mut [f64], width: usize) {
    for row in z.chunks_exact_mut(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

pub(crate) fn softmax_backward(dp: &[f64], p: &[f64], width: usize) -> Vec<f64> {
    let mut dz = vec![0.0; dp.len()];
    for ((out, dps), ps) in dz.chunks_exact_mut(width).zip(dp.chunks_exact(width)).zip(p.chunks_exact(width)) {
        let dot: f64 = dps.iter().zip(ps).map(|(a, b)| a * b).sum();
        for ((o, &d), &pv) in out.iter_mut().zip(dps).zip(ps) {
            *o = pv * (d - dot);
        }
    }
    dz
}

/// Scales each row to unit Euclidean norm. Returns the norms.
pub(crate) fn l2_normalize_rows(x: &mut [f64], width: usize) -> Vec<f64> {
    x.chunks_exact_mut(width)
        .map(|row| {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
            norm
        })
        .collect()
}

/// Gradient through `f = p / |p|` given the normalized rows and norms.
pub(crate) fn l2_normalize_backward(df: &[f64], f: &[f64], norms: &[f64], width: usize) -> Vec<f64> {
    let mut dp = vec![0.0; df.len()];
    for (((out, dfs), fs), &norm) in dp
        .chunks_exact_mut(width)
        .zip(df.chunks_exact(width))
        .zip(f.chunks_exact(width))
        .zip(norms)
    {
        let dot: f64 = dfs.iter().zip(fs).map(|(a, b)| a * b).sum();
        for ((o, &d), &fv) in out.iter_mut().zip(dfs).zip(fs) {
            *o = (d - fv * dot) / norm;
        }
    }
    dp
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(channels: usize, batch: usize, time: usize) -> Geom {
        Geom { channels, batch, time }
    }

    #[test]
    fn conv_matches_direct_sum() {
        let g = geom(2, 2, 5);
        let x: Vec<f64> = (0..g.len()).map(|v| (v as f64 * 0.37).sin()).collect();
        let out_channels = 3;
        let w: Vec<f64> = (0..out_channels * 2 * KERNEL).map(|v| (v as f64 * 0.11).cos()).collect();
        let b = vec![0.1, -0.2, 0.3];
        let (y, _) = conv_forward(&x, g, &w, &b);
        for o in 0..out_channels {
            for s in 0..g.batch {
                for t in 0..g.time {
                    let mut acc = b[o];
                    for c in 0..g.channels {
                        for tap in 0..KERNEL {
                            let pos = t as isize + tap as isize - 1;
                            if (0..g.time as isize).contains(&pos) {
                                acc += w[(o * g.channels + c) * KERNEL + tap] * x[c * g.run() + s * g.time + pos as usize];
                            }
                        }
                    }
                    assert!((y[o * g.run() + s * g.time + t] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = geom(3, 2, 4);
        let x: Vec<f64> = (0..g.len()).map(|v| (v as f64).sin()).collect();
        let c: Vec<f64> = (0..g.len() * KERNEL).map(|v| (v as f64 * 1.3).cos()).collect();
        let lhs: f64 = im2col(&x, g).iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = col2im(&c, g).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_train_output_statistics() {
        let n = 40;
        let x: Vec<f64> = (0..2 * n).map(|v| (v as f64 * 0.9).sin() * 3.0 + 1.0).collect();
        let scale = [1.5, 0.5];
        let shift = [0.2, -1.0];
        let (y, _, stats) = bn_forward_train(&x, n, &scale, &shift);
        for c in 0..2 {
            let ys = &y[c * n..][..n];
            let mean = ys.iter().sum::<f64>() / n as f64;
            let var = ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((mean - shift[c]).abs() < 1e-9);
            // eps in the denominator shrinks the variance by var/(var+eps)
            let (_, batch_var) = stats[c];
            let expected = scale[c] * scale[c] * batch_var / (batch_var + BN_EPS);
            assert!((var - expected).abs() < 1e-9);
            assert!((var - scale[c] * scale[c]).abs() < 1e-5);
        }
    }

    #[test]
    fn flatten_round_trip() {
        let g = geom(3, 2, 4);
        let x: Vec<f64> = (0..g.len()).map(|v| v as f64).collect();
        assert_eq!(unflatten(&flatten(&x, g), g), x);
        let flat = flatten(&x, g);
        // record 1, channel 2, time 3
        assert_eq!(flat[12 + 2 * 4 + 3], x[2 * 8 + 4 + 3]);
    }

    #[test]
    fn maxpool_routes_gradient_to_winner() {
        let g = geom(1, 1, 5);
        let x = [1.0, 3.0, 2.0, -1.0, 9.0];
        let (y, idx, og) = maxpool_forward(&x, g);
        assert_eq!(og.time, 2);
        assert_eq!(y, vec![3.0, 2.0]);
        assert_eq!(maxpool_backward(&[1.0, 2.0], &idx, 5), vec![0.0, 1.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_and_normalize() {
        let mut z = vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0];
        softmax_rows(&mut z, 3);
        assert!(z[..3].iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let norms = l2_normalize_rows(&mut z, 3);
        assert_eq!(norms.len(), 2);
        for row in z.chunks(3) {
            assert!((row.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
