//! Forward and backward kernels for the U-Net building blocks.
//!
//! Work is split across the batch with rayon; every reduction over the batch
//! runs sequentially in sample order so results do not depend on thread count.

use rand::Rng;
use rayon::prelude::*;

use super::gemm::{gemm, Strides};
use super::tensor::Tensor;

pub(crate) const BN_EPSILON: f32 = 1e-3;
pub(crate) const BN_MOMENTUM: f32 = 0.99;

/// Lower and upper bound of the sigmoid output.
const PROB_EPS: f32 = 1e-7;

fn im2col(x: &[f32], channels: usize, h: usize, w: usize, col: &mut [f32]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(c * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + kx as isize - 1;
                        *o = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f32], channels: usize, h: usize, w: usize, x: &mut [f32]) {
    let hw = h * w;
    x.fill(0.0);
    for c in 0..channels {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(c * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, &v) in row[y * w..(y + 1) * w].iter().enumerate() {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// 3×3 convolution, stride 1, zero "same" padding, no bias.
/// `kernel` is `[out][in][3][3]`.
pub(crate) fn conv3x3_forward(x: &Tensor, kernel: &[f32], out_channels: usize) -> Tensor {
    let [n, cin, h, w] = x.shape;
    let hw = h * w;
    let mut out = Tensor::zeros([n, out_channels, h, w]);
    out.data
        .par_chunks_mut(out_channels * hw)
        .zip(x.data.par_chunks(cin * hw))
        .for_each_init(
            || vec![0.0f32; cin * 9 * hw],
            |col, (o, xs)| {
                im2col(xs, cin, h, w, col);
                gemm(
                    out_channels,
                    cin * 9,
                    hw,
                    kernel,
                    Strides::row_major(cin * 9),
                    col,
                    Strides::row_major(hw),
                    0.0,
                    o,
                );
            },
        );
    out
}

/// Returns `(∂kernel, ∂x)`; `∂x` is skipped when `need_input` is false.
pub(crate) fn conv3x3_backward(
    x: &Tensor,
    kernel: &[f32],
    grad_out: &Tensor,
    need_input: bool,
) -> (Vec<f32>, Option<Tensor>) {
    let [n, cin, h, w] = x.shape;
    let cout = grad_out.channels();
    let hw = h * w;
    let k = cin * 9;
    let parts: Vec<(Vec<f32>, Vec<f32>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut col = vec![0.0f32; k * hw];
            im2col(x.sample(i), cin, h, w, &mut col);
            let dy = grad_out.sample(i);
            let mut dk = vec![0.0f32; cout * k];
            gemm(cout, hw, k, dy, Strides::row_major(hw), &col, Strides::transposed(hw), 0.0, &mut dk);
            let mut dx = Vec::new();
            if need_input {
                gemm(k, cout, hw, kernel, Strides::transposed(k), dy, Strides::row_major(hw), 0.0, &mut col);
                dx = vec![0.0f32; cin * hw];
                col2im(&col, cin, h, w, &mut dx);
            }
            (dk, dx)
        })
        .collect();
    let mut dkernel = vec![0.0f32; cout * k];
    let mut dx = need_input.then(|| Tensor::zeros(x.shape));
    for (i, (dk, dxi)) in parts.into_iter().enumerate() {
        for (a, b) in dkernel.iter_mut().zip(&dk) {
            *a += b;
        }
        if let Some(t) = dx.as_mut() {
            t.data[i * cin * hw..(i + 1) * cin * hw].copy_from_slice(&dxi);
        }
    }
    (dkernel, dx)
}

/// Cached values of a training-mode batch-norm pass.
#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f32>,
}

/// Batch statistics per channel as `(mean, biased variance)`.
fn channel_stats(x: &Tensor) -> Vec<(f64, f64)> {
    let [n, c, _, _] = x.shape;
    let count = (n * x.plane()) as f64;
    (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut sum = 0.0f64;
            for i in 0..n {
                sum += x.channel(i, ch).iter().map(|&v| f64::from(v)).sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0f64;
            for i in 0..n {
                sq += x.channel(i, ch).iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>();
            }
            (mean, sq / count)
        })
        .collect()
}

/// Normalizes with batch statistics and updates the running averages.
pub(crate) fn batchnorm_train(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &mut [f32],
    running_var: &mut [f32],
) -> (Tensor, BnCache) {
    let stats = channel_stats(x);
    let plane = x.plane();
    let c = x.channels();
    let inv_std: Vec<f32> = stats
        .iter()
        .map(|&(_, var)| (1.0 / (var + f64::from(BN_EPSILON)).sqrt()) as f32)
        .collect();
    let mean: Vec<f32> = stats.iter().map(|&(m, _)| m as f32).collect();
    for (ch, &(m, v)) in stats.iter().enumerate() {
        running_mean[ch] = BN_MOMENTUM * running_mean[ch] + (1.0 - BN_MOMENTUM) * m as f32;
        running_var[ch] = BN_MOMENTUM * running_var[ch] + (1.0 - BN_MOMENTUM) * v as f32;
    }
    let mut xhat = Tensor::zeros(x.shape);
    let mut out = Tensor::zeros(x.shape);
    xhat.data
        .par_chunks_mut(plane)
        .zip(out.data.par_chunks_mut(plane))
        .zip(x.data.par_chunks(plane))
        .enumerate()
        .for_each(|(idx, ((xh, o), xs))| {
            let ch = idx % c;
            for ((a, b), &v) in xh.iter_mut().zip(o.iter_mut()).zip(xs) {
                *a = (v - mean[ch]) * inv_std[ch];
                *b = gamma[ch] * *a + beta[ch];
            }
        });
    (out, BnCache { xhat, inv_std })
}

pub(crate) fn batchnorm_eval(
    x: &mut Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
) {
    let plane = x.plane();
    let c = x.channels();
    x.data.par_chunks_mut(plane).enumerate().for_each(|(idx, xs)| {
        let ch = idx % c;
        let scale = gamma[ch] / (running_var[ch] + BN_EPSILON).sqrt();
        let shift = beta[ch] - running_mean[ch] * scale;
        for v in xs.iter_mut() {
            *v = *v * scale + shift;
        }
    });
}

/// Returns `(∂x, ∂gamma, ∂beta)`.
pub(crate) fn batchnorm_backward(cache: &BnCache, gamma: &[f32], grad_out: &Tensor) -> (Tensor, Vec<f32>, Vec<f32>) {
    let [n, c, _, _] = grad_out.shape;
    let plane = grad_out.plane();
    let count = (n * plane) as f32;
    let sums: Vec<(f32, f32)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let (mut sd, mut sdx) = (0.0f64, 0.0f64);
            for i in 0..n {
                for (&d, &xh) in grad_out.channel(i, ch).iter().zip(cache.xhat.channel(i, ch)) {
                    sd += f64::from(d);
                    sdx += f64::from(d) * f64::from(xh);
                }
            }
            (sd as f32, sdx as f32)
        })
        .collect();
    let mut dx = Tensor::zeros(grad_out.shape);
    dx.data
        .par_chunks_mut(plane)
        .zip(grad_out.data.par_chunks(plane))
        .zip(cache.xhat.data.par_chunks(plane))
        .enumerate()
        .for_each(|(idx, ((o, d), xh))| {
            let ch = idx % c;
            let (sd, sdx) = sums[ch];
            let k = gamma[ch] * cache.inv_std[ch] / count;
            for ((o, &d), &xh) in o.iter_mut().zip(d).zip(xh) {
                *o = k * (count * d - sd - xh * sdx);
            }
        });
    let dgamma = sums.iter().map(|s| s.1).collect();
    let dbeta = sums.iter().map(|s| s.0).collect();
    (dx, dgamma, dbeta)
}

pub(crate) fn relu_inplace(x: &mut Tensor) {
    x.data.par_iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes `grad` where the ReLU output was not positive.
pub(crate) fn relu_backward_inplace(output: &Tensor, grad: &mut Tensor) {
    grad.data
        .par_iter_mut()
        .zip(output.data.par_iter())
        .for_each(|(g, &o)| {
            if o <= 0.0 {
                *g = 0.0;
            }
        });
}

/// 2×2 max pooling; also returns the winning offset (0..4) of every output.
pub(crate) fn maxpool_forward(x: &Tensor) -> (Tensor, Vec<u8>) {
    let [n, c, h, w] = x.shape;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut arg = vec![0u8; out.data.len()];
    out.data
        .par_chunks_mut(oh * ow)
        .zip(arg.par_chunks_mut(oh * ow))
        .zip(x.data.par_chunks(h * w))
        .for_each(|((o, a), xs)| {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut which = 0u8;
                    for (k, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                        let v = xs[(2 * y + dy) * w + 2 * xx + dx];
                        if v > best {
                            best = v;
                            which = k as u8;
                        }
                    }
                    o[y * ow + xx] = best;
                    a[y * ow + xx] = which;
                }
            }
        });
    (out, arg)
}

pub(crate) fn maxpool_backward(grad_out: &Tensor, arg: &[u8], input_shape: [usize; 4]) -> Tensor {
    let [_, _, h, w] = input_shape;
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = Tensor::zeros(input_shape);
    dx.data
        .par_chunks_mut(h * w)
        .zip(grad_out.data.par_chunks(oh * ow))
        .zip(arg.par_chunks(oh * ow))
        .for_each(|((d, g), a)| {
            for y in 0..oh {
                for x in 0..ow {
                    let k = a[y * ow + x] as usize;
                    d[(2 * y + k / 2) * w + 2 * x + k % 2] += g[y * ow + x];
                }
            }
        });
    dx
}

/// Whole-channel dropout mask: one scale factor per `(sample, channel)`.
pub(crate) fn spatial_dropout_mask<R: Rng>(rng: &mut R, n: usize, c: usize, rate: f32) -> Option<Vec<f32>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    Some(
        (0..n * c)
            .map(|_| if rng.gen::<f32>() < keep { 1.0 / keep } else { 0.0 })
            .collect(),
    )
}

pub(crate) fn apply_channel_scale(x: &mut Tensor, mask: &[f32]) {
    let plane = x.plane();
    x.data
        .par_chunks_mut(plane)
        .zip(mask.par_iter())
        .for_each(|(xs, &m)| xs.iter_mut().for_each(|v| *v *= m));
}

/// 2×2 stride-2 transposed convolution. `kernel` is `[in][out][2][2]`.
pub(crate) fn upconv_forward(x: &Tensor, kernel: &[f32], bias: &[f32], out_channels: usize) -> Tensor {
    let [n, cin, h, w] = x.shape;
    let (oh, ow) = (2 * h, 2 * w);
    let hw = h * w;
    let mut out = Tensor::zeros([n, out_channels, oh, ow]);
    out.data
        .par_chunks_mut(out_channels * oh * ow)
        .zip(x.data.par_chunks(cin * hw))
        .for_each_init(
            || vec![0.0f32; out_channels * 4 * hw],
            |t, (o, xs)| {
                // t[(co·4 + tap), pixel] = Σ_ci kernel[ci, co·4 + tap] · x[ci, pixel]
                gemm(
                    out_channels * 4,
                    cin,
                    hw,
                    kernel,
                    Strides::transposed(out_channels * 4),
                    xs,
                    Strides::row_major(hw),
                    0.0,
                    t,
                );
                for co in 0..out_channels {
                    for tap in 0..4 {
                        let (dy, dx) = (tap / 2, tap % 2);
                        let src = &t[(co * 4 + tap) * hw..][..hw];
                        for y in 0..h {
                            for x in 0..w {
                                o[(co * oh + 2 * y + dy) * ow + 2 * x + dx] = src[y * w + x] + bias[co];
                            }
                        }
                    }
                }
            },
        );
    out
}

/// Returns `(∂x, ∂kernel, ∂bias)`.
pub(crate) fn upconv_backward(x: &Tensor, kernel: &[f32], grad_out: &Tensor) -> (Tensor, Vec<f32>, Vec<f32>) {
    let [n, cin, h, w] = x.shape;
    let cout = grad_out.channels();
    let (oh, ow) = (2 * h, 2 * w);
    let hw = h * w;
    let parts: Vec<(Vec<f32>, Vec<f32>, Vec<f32>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let g = grad_out.sample(i);
            let mut dt = vec![0.0f32; cout * 4 * hw];
            let mut db = vec![0.0f32; cout];
            for co in 0..cout {
                for tap in 0..4 {
                    let (dy, dx) = (tap / 2, tap % 2);
                    let dst = &mut dt[(co * 4 + tap) * hw..][..hw];
                    for y in 0..h {
                        for x in 0..w {
                            dst[y * w + x] = g[(co * oh + 2 * y + dy) * ow + 2 * x + dx];
                        }
                    }
                }
                db[co] = g[co * oh * ow..(co + 1) * oh * ow].iter().sum();
            }
            let mut dx = vec![0.0f32; cin * hw];
            gemm(cin, cout * 4, hw, kernel, Strides::row_major(cout * 4), &dt, Strides::row_major(hw), 0.0, &mut dx);
            let mut dk = vec![0.0f32; cin * cout * 4];
            gemm(cin, hw, cout * 4, x.sample(i), Strides::row_major(hw), &dt, Strides::transposed(hw), 0.0, &mut dk);
            (dx, dk, db)
        })
        .collect();
    let mut dx = Tensor::zeros(x.shape);
    let mut dkernel = vec![0.0f32; cin * cout * 4];
    let mut dbias = vec![0.0f32; cout];
    for (i, (dxi, dk, db)) in parts.into_iter().enumerate() {
        dx.data[i * cin * hw..(i + 1) * cin * hw].copy_from_slice(&dxi);
        dkernel.iter_mut().zip(&dk).for_each(|(a, b)| *a += b);
        dbias.iter_mut().zip(&db).for_each(|(a, b)| *a += b);
    }
    (dx, dkernel, dbias)
}

/// Concatenates along channels: `a` first, then `b`.
pub(crate) fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let [n, ca, h, w] = a.shape;
    let cb = b.channels();
    let mut out = Tensor::zeros([n, ca + cb, h, w]);
    for i in 0..n {
        let dst = &mut out.data[i * (ca + cb) * h * w..(i + 1) * (ca + cb) * h * w];
        dst[..ca * h * w].copy_from_slice(a.sample(i));
        dst[ca * h * w..].copy_from_slice(b.sample(i));
    }
    out
}

pub(crate) fn split_channels(x: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let [n, c, h, w] = x.shape;
    let cb = c - ca;
    let mut a = Tensor::zeros([n, ca, h, w]);
    let mut b = Tensor::zeros([n, cb, h, w]);
    for i in 0..n {
        let src = x.sample(i);
        a.data[i * ca * h * w..(i + 1) * ca * h * w].copy_from_slice(&src[..ca * h * w]);
        b.data[i * cb * h * w..(i + 1) * cb * h * w].copy_from_slice(&src[ca * h * w..]);
    }
    (a, b)
}

/// 1×1 convolution with bias followed by a sigmoid. `kernel` is `[out][in]`.
///
/// Each output channel is accumulated over input channels in a fixed order, so
/// a channel's values do not depend on how many other channels the head has.
pub(crate) fn head_forward(x: &Tensor, kernel: &[f32], bias: &[f32], out_channels: usize) -> Tensor {
    let [n, cin, h, w] = x.shape;
    let hw = h * w;
    let mut out = Tensor::zeros([n, out_channels, h, w]);
    out.data
        .par_chunks_mut(hw)
        .enumerate()
        .for_each(|(idx, o)| {
            let (i, k) = (idx / out_channels, idx % out_channels);
            let xs = x.sample(i);
            o.fill(bias[k]);
            for c in 0..cin {
                let wk = kernel[k * cin + c];
                for (v, &xv) in o.iter_mut().zip(&xs[c * hw..(c + 1) * hw]) {
                    *v += wk * xv;
                }
            }
            for v in o.iter_mut() {
                *v = (1.0 / (1.0 + (-*v).exp())).clamp(PROB_EPS, 1.0 - PROB_EPS);
            }
        });
    out
}

/// Backward through sigmoid and the 1×1 head. Returns `(∂x, ∂kernel, ∂bias)`.
pub(crate) fn head_backward(x: &Tensor, kernel: &[f32], probs: &Tensor, grad_probs: &Tensor) -> (Tensor, Vec<f32>, Vec<f32>) {
    let [n, cin, h, w] = x.shape;
    let k = probs.channels();
    let hw = h * w;
    let mut dz = Tensor::zeros(probs.shape);
    dz.data
        .par_iter_mut()
        .zip(probs.data.par_iter().zip(grad_probs.data.par_iter()))
        .for_each(|(d, (&p, &g))| *d = g * p * (1.0 - p));
    let parts: Vec<(Vec<f32>, Vec<f32>, Vec<f32>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xs = x.sample(i);
            let dzs = dz.sample(i);
            let mut dx = vec![0.0f32; cin * hw];
            let mut dk = vec![0.0f32; k * cin];
            let mut db = vec![0.0f32; k];
            gemm(cin, k, hw, kernel, Strides::transposed(cin), dzs, Strides::row_major(hw), 0.0, &mut dx);
            gemm(k, hw, cin, dzs, Strides::row_major(hw), xs, Strides::transposed(hw), 0.0, &mut dk);
            for (kk, b) in db.iter_mut().enumerate() {
                *b = dzs[kk * hw..(kk + 1) * hw].iter().sum();
            }
            (dx, dk, db)
        })
        .collect();
    let mut dx = Tensor::zeros(x.shape);
    let mut dkernel = vec![0.0f32; k * cin];
    let mut dbias = vec![0.0f32; k];
    for (i, (dxi, dk, db)) in parts.into_iter().enumerate() {
        dx.data[i * cin * hw..(i + 1) * cin * hw].copy_from_slice(&dxi);
        dkernel.iter_mut().zip(&dk).for_each(|(a, b)| *a += b);
        dbias.iter_mut().zip(&db).for_each(|(a, b)| *a += b);
    }
    (dx, dkernel, dbias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct 3×3 same convolution.
    fn conv_naive(x: &Tensor, kernel: &[f32], cout: usize) -> Tensor {
        let [n, cin, h, w] = x.shape;
        let mut out = Tensor::zeros([n, cout, h, w]);
        for i in 0..n {
            for co in 0..cout {
                for y in 0..h {
                    for xx in 0..w {
                        let mut s = 0.0f64;
                        for ci in 0..cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = y as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    s += f64::from(kernel[((co * cin + ci) * 3 + ky) * 3 + kx])
                                        * f64::from(x.data[((i * cin + ci) * h + sy as usize) * w + sx as usize]);
                                }
                            }
                        }
                        out.data[((i * cout + co) * h + y) * w + xx] = s as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = random([2, 3, 5, 4], 1);
        let kernel = random([4, 3, 3, 3], 2).data;
        let fast = conv3x3_forward(&x, &kernel, 4);
        let slow = conv_naive(&x, &kernel, 4);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> = <x, conv^T(g)> and the kernel gradient is linear in x
        let x = random([2, 3, 4, 5], 3);
        let kernel = random([2, 3, 3, 3], 4).data;
        let g = random([2, 2, 4, 5], 5);
        let y = conv3x3_forward(&x, &kernel, 2);
        let (dk, dx) = conv3x3_backward(&x, &kernel, &g, true);
        let dx = dx.unwrap();
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| f64::from(a * b)).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| f64::from(a * b)).sum();
        let rhs_k: f64 = kernel.iter().zip(&dk).map(|(a, b)| f64::from(a * b)).sum();
        assert!((lhs - rhs).abs() < 1e-3, "{lhs} vs {rhs}");
        assert!((lhs - rhs_k).abs() < 1e-3, "{lhs} vs {rhs_k}");
    }

    #[test]
    fn upconv_backward_is_adjoint() {
        let x = random([2, 3, 3, 2], 6);
        let kernel = random([3, 2, 2, 2], 7).data;
        let zero = vec![0.0; 2];
        let g = random([2, 2, 6, 4], 8);
        let y = upconv_forward(&x, &kernel, &zero, 2);
        let (dx, dk, db) = upconv_backward(&x, &kernel, &g);
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| f64::from(a * b)).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| f64::from(a * b)).sum();
        let rhs_k: f64 = kernel.iter().zip(&dk).map(|(a, b)| f64::from(a * b)).sum();
        assert!((lhs - rhs).abs() < 1e-3 && (lhs - rhs_k).abs() < 1e-3);
        let sum0: f32 = (0..2).map(|i| g.channel(i, 0).iter().sum::<f32>()).sum();
        assert!((db[0] - sum0).abs() < 1e-4);
    }

    #[test]
    fn maxpool_routes_gradient_to_winner() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![0.1, 0.9, 0.3, 0.2]).unwrap();
        let (y, arg) = maxpool_forward(&x);
        assert_eq!(y.data, vec![0.9]);
        let g = Tensor::from_vec([1, 1, 1, 1], vec![2.0]).unwrap();
        assert_eq!(maxpool_backward(&g, &arg, x.shape).data, vec![0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn batchnorm_normalizes_and_tracks_running_stats() {
        let x = random([3, 2, 4, 4], 9);
        let mut rm = vec![0.0; 2];
        let mut rv = vec![1.0; 2];
        let (y, _) = batchnorm_train(&x, &[1.0, 1.0], &[0.0, 0.0], &mut rm, &mut rv);
        for ch in 0..2 {
            let vals: Vec<f32> = (0..3).flat_map(|i| y.channel(i, ch).to_vec()).collect();
            let mean = vals.iter().sum::<f32>() / vals.len() as f32;
            assert!(mean.abs() < 1e-5);
        }
        assert!(rm.iter().all(|&m| m != 0.0));
    }

    #[test]
    fn dropout_keeps_or_drops_whole_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mask = spatial_dropout_mask(&mut rng, 4, 8, 0.5).unwrap();
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
        assert!(spatial_dropout_mask(&mut rng, 4, 8, 0.0).is_none());
    }
}
