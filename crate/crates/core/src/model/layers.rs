//! Encoder building blocks with hand-derived backward passes.
//!
//! Convolutions run as im2col + matmul; batch normalization backpropagates
//! through the batch statistics; max pooling routes gradients through cached
//! argmax indices. Every accumulation is sequential, so results are
//! bit-reproducible for a fixed input.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView1, ArrayView2, Axis};

use crate::scalar::{real, to_f64, Real};

/// Frequency pooling width of every encoder block.
pub const POOL_WIDTH: usize = 4;

/// Unfold 3x3 neighborhoods (zero-padded) into a `(c_in * 9, n * h * w)`
/// matrix; column index is `(n * h + y) * w + x`.
pub fn im2col<F: Real>(x: &Array4<F>) -> Array2<F> {
    let (n, c_in, h, w) = x.dim();
    let mut cols = Array2::zeros((c_in * 9, n * h * w));
    for ci in 0..c_in {
        for ki in 0..3 {
            for kj in 0..3 {
                let mut row = cols.row_mut(ci * 9 + ki * 3 + kj);
                let mut idx = 0;
                for nn in 0..n {
                    for hh in 0..h {
                        let src_h = hh as isize + ki as isize - 1;
                        if src_h < 0 || src_h >= h as isize {
                            idx += w;
                            continue;
                        }
                        for ww in 0..w {
                            let src_w = ww as isize + kj as isize - 1;
                            if src_w >= 0 && (src_w as usize) < w {
                                row[idx] = x[[nn, ci, src_h as usize, src_w as usize]];
                            }
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add column gradients back onto the input.
pub fn col2im<F: Real>(
    dcols: &Array2<F>,
    (n, c_in, h, w): (usize, usize, usize, usize),
) -> Array4<F> {
    let mut dx = Array4::zeros((n, c_in, h, w));
    for ci in 0..c_in {
        for ki in 0..3 {
            for kj in 0..3 {
                let row = dcols.row(ci * 9 + ki * 3 + kj);
                let mut idx = 0;
                for nn in 0..n {
                    for hh in 0..h {
                        let src_h = hh as isize + ki as isize - 1;
                        if src_h < 0 || src_h >= h as isize {
                            idx += w;
                            continue;
                        }
                        for ww in 0..w {
                            let src_w = ww as isize + kj as isize - 1;
                            if src_w >= 0 && (src_w as usize) < w {
                                dx[[nn, ci, src_h as usize, src_w as usize]] += row[idx];
                            }
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
    dx
}

pub struct ConvCache<F: Real> {
    pub cols: Array2<F>,
    pub in_dims: (usize, usize, usize, usize),
}

/// 3x3 convolution, stride 1, zero padding 1 (shape-preserving).
/// `weight` is viewed as `(c_out, c_in * 9)`.
pub fn conv3x3_forward<F: Real>(
    x: &Array4<F>,
    weight: ArrayView2<F>,
    bias: ArrayView1<F>,
) -> (Array4<F>, ConvCache<F>) {
    let (n, _, h, w) = x.dim();
    let c_out = weight.nrows();
    let cols = im2col(x);
    let out_mat = weight.dot(&cols);
    let mut out = Array4::zeros((n, c_out, h, w));
    for co in 0..c_out {
        let row = out_mat.row(co);
        let b = bias[co];
        let mut idx = 0;
        for nn in 0..n {
            for hh in 0..h {
                for ww in 0..w {
                    out[[nn, co, hh, ww]] = row[idx] + b;
                    idx += 1;
                }
            }
        }
    }
    (out, ConvCache { cols, in_dims: x.dim() })
}

/// Returns (d input, d weight as `(c_out, c_in * 9)`, d bias).
pub fn conv3x3_backward<F: Real>(
    dout: &Array4<F>,
    cache: &ConvCache<F>,
    weight: ArrayView2<F>,
) -> (Array4<F>, Array2<F>, Array1<F>) {
    let (n, c_out, h, w) = dout.dim();
    let mut dout_mat = Array2::zeros((c_out, n * h * w));
    for co in 0..c_out {
        let mut row = dout_mat.row_mut(co);
        let mut idx = 0;
        for nn in 0..n {
            for hh in 0..h {
                for ww in 0..w {
                    row[idx] = dout[[nn, co, hh, ww]];
                    idx += 1;
                }
            }
        }
    }
    let dweight = dout_mat.dot(&cache.cols.t());
    let dbias = dout_mat.sum_axis(Axis(1));
    let dcols = weight.t().dot(&dout_mat);
    let dx = col2im(&dcols, cache.in_dims);
    (dx, dweight, dbias)
}

pub struct BnCache<F: Real> {
    pub xhat: Array4<F>,
    pub invstd: Array1<F>,
}

/// Per-channel batch statistics of one training step, reported to the owner
/// so running statistics can be updated outside the pure forward pass.
#[derive(Debug, Clone)]
pub struct BnBatchStats<F: Real> {
    pub mean: Array1<F>,
    pub var: Array1<F>,
}

/// Batch normalization over (batch, height, width) per channel, using biased
/// batch variance.
pub fn bn_train_forward<F: Real>(
    x: &Array4<F>,
    gamma: ArrayView1<F>,
    beta: ArrayView1<F>,
    epsilon: f64,
) -> (Array4<F>, BnCache<F>, BnBatchStats<F>) {
    let (n, c, h, w) = x.dim();
    let count = real::<F>((n * h * w) as f64);
    let eps = real::<F>(epsilon);

    let mut mean = Array1::zeros(c);
    let mut var = Array1::zeros(c);
    let mut invstd = Array1::zeros(c);
    for cc in 0..c {
        let view = x.index_axis(Axis(1), cc);
        let mut sum = F::zero();
        for &v in view.iter() {
            sum += v;
        }
        let mu = sum / count;
        let mut sq = F::zero();
        for &v in view.iter() {
            let d = v - mu;
            sq += d * d;
        }
        mean[cc] = mu;
        var[cc] = sq / count;
        invstd[cc] = F::one() / (var[cc] + eps).sqrt();
    }

    let mut xhat = Array4::zeros((n, c, h, w));
    let mut y = Array4::zeros((n, c, h, w));
    for cc in 0..c {
        let (mu, is, g, b) = (mean[cc], invstd[cc], gamma[cc], beta[cc]);
        for nn in 0..n {
            for hh in 0..h {
                for ww in 0..w {
                    let xh = (x[[nn, cc, hh, ww]] - mu) * is;
                    xhat[[nn, cc, hh, ww]] = xh;
                    y[[nn, cc, hh, ww]] = g * xh + b;
                }
            }
        }
    }
    (y, BnCache { xhat, invstd }, BnBatchStats { mean, var })
}

/// Inference-mode normalization with frozen running statistics.
pub fn bn_eval_forward<F: Real>(
    x: &Array4<F>,
    gamma: ArrayView1<F>,
    beta: ArrayView1<F>,
    running_mean: ArrayView1<F>,
    running_var: ArrayView1<F>,
    epsilon: f64,
) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    let eps = real::<F>(epsilon);
    let mut y = Array4::zeros((n, c, h, w));
    for cc in 0..c {
        let is = F::one() / (running_var[cc] + eps).sqrt();
        let (mu, g, b) = (running_mean[cc], gamma[cc], beta[cc]);
        for nn in 0..n {
            for hh in 0..h {
                for ww in 0..w {
                    y[[nn, cc, hh, ww]] = g * (x[[nn, cc, hh, ww]] - mu) * is + b;
                }
            }
        }
    }
    y
}

/// Backward through the batch statistics. Returns (dx, dgamma, dbeta).
pub fn bn_backward<F: Real>(
    dy: &Array4<F>,
    cache: &BnCache<F>,
    gamma: ArrayView1<F>,
) -> (Array4<F>, Array1<F>, Array1<F>) {
    let (n, c, h, w) = dy.dim();
    let count = real::<F>((n * h * w) as f64);
    let mut dx = Array4::zeros((n, c, h, w));
    let mut dgamma = Array1::zeros(c);
    let mut dbeta = Array1::zeros(c);
    for cc in 0..c {
        let mut s1 = F::zero(); // sum dy
        let mut s2 = F::zero(); // sum dy * xhat
        for nn in 0..n {
            for hh in 0..h {
                for ww in 0..w {
                    let d = dy[[nn, cc, hh, ww]];
                    s1 += d;
                    s2 += d * cache.xhat[[nn, cc, hh, ww]];
                }
            }
        }
        dgamma[cc] = s2;
        dbeta[cc] = s1;
        let scale = gamma[cc] * cache.invstd[cc];
        let m1 = s1 / count;
        let m2 = s2 / count;
        for nn in 0..n {
            for hh in 0..h {
                for ww in 0..w {
                    let d = dy[[nn, cc, hh, ww]];
                    let xh = cache.xhat[[nn, cc, hh, ww]];
                    dx[[nn, cc, hh, ww]] = scale * (d - m1 - xh * m2);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu<F: Real>(x: &Array4<F>) -> Array4<F> {
    x.mapv(|v| v.max(F::zero()))
}

/// Max pooling along the frequency (last) axis with ceil-mode windows, so any
/// input width maps to `ceil(w / width)` columns and no column is dropped.
/// The argmax array stores the chosen absolute input index (first maximum).
pub fn maxpool_freq_forward<F: Real>(
    x: &Array4<F>,
    width: usize,
) -> (Array4<F>, Array4<usize>) {
    let (n, c, h, w) = x.dim();
    let w_out = w.div_ceil(width);
    let mut out = Array4::zeros((n, c, h, w_out));
    let mut argmax = Array4::zeros((n, c, h, w_out));
    for nn in 0..n {
        for cc in 0..c {
            for hh in 0..h {
                for wo in 0..w_out {
                    let start = wo * width;
                    let end = (start + width).min(w);
                    let mut best = x[[nn, cc, hh, start]];
                    let mut best_idx = start;
                    for ww in start + 1..end {
                        let v = x[[nn, cc, hh, ww]];
                        if v > best {
                            best = v;
                            best_idx = ww;
                        }
                    }
                    out[[nn, cc, hh, wo]] = best;
                    argmax[[nn, cc, hh, wo]] = best_idx;
                }
            }
        }
    }
    (out, argmax)
}

pub fn maxpool_freq_backward<F: Real>(
    dout: &Array4<F>,
    argmax: &Array4<usize>,
    w_in: usize,
) -> Array4<F> {
    let (n, c, h, w_out) = dout.dim();
    let mut dx = Array4::zeros((n, c, h, w_in));
    for nn in 0..n {
        for cc in 0..c {
            for hh in 0..h {
                for wo in 0..w_out {
                    dx[[nn, cc, hh, argmax[[nn, cc, hh, wo]]]] += dout[[nn, cc, hh, wo]];
                }
            }
        }
    }
    dx
}

/// Collapse the remaining frequency axis by averaging:
/// `(n, c, t, w) -> (n, t, c)` frame embeddings.
pub fn freq_mean_forward<F: Real>(x: &Array4<F>) -> Array3<F> {
    let (n, c, h, w) = x.dim();
    let inv = real::<F>(1.0 / w as f64);
    let mut emb = Array3::zeros((n, h, c));
    for nn in 0..n {
        for cc in 0..c {
            for hh in 0..h {
                let mut sum = F::zero();
                for ww in 0..w {
                    sum += x[[nn, cc, hh, ww]];
                }
                emb[[nn, hh, cc]] = sum * inv;
            }
        }
    }
    emb
}

pub fn freq_mean_backward<F: Real>(
    demb: &Array3<F>,
    (n, c, h, w): (usize, usize, usize, usize),
) -> Array4<F> {
    let inv = real::<F>(1.0 / w as f64);
    let mut dx = Array4::zeros((n, c, h, w));
    for nn in 0..n {
        for cc in 0..c {
            for hh in 0..h {
                let d = demb[[nn, hh, cc]] * inv;
                for ww in 0..w {
                    dx[[nn, cc, hh, ww]] = d;
                }
            }
        }
    }
    dx
}

/// One encoder block's parameter views.
pub struct BlockParams<'a, F: Real> {
    pub weight: ArrayView2<'a, F>,
    pub bias: ArrayView1<'a, F>,
    pub gamma: ArrayView1<'a, F>,
    pub beta: ArrayView1<'a, F>,
}

pub struct BlockCache<F: Real> {
    pub conv: ConvCache<F>,
    pub bn: BnCache<F>,
    /// Batchnorm output before the ReLU; its sign is the ReLU mask.
    pub prerelu: Array4<F>,
    pub argmax: Array4<usize>,
}

impl<F: Real> BlockCache<F> {
    /// Distance from the nearest non-smooth point of this block's forward
    /// pass: ReLU preactivations near zero and near-ties inside pooling
    /// windows make finite differences unreliable.
    pub fn nonsmooth_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for &v in self.prerelu.iter() {
            margin = margin.min(to_f64(v).abs());
        }
        let a = relu(&self.prerelu);
        let (n, c, h, w) = a.dim();
        let w_out = w.div_ceil(POOL_WIDTH);
        for nn in 0..n {
            for cc in 0..c {
                for hh in 0..h {
                    for wo in 0..w_out {
                        let start = wo * POOL_WIDTH;
                        let end = (start + POOL_WIDTH).min(w);
                        if end - start < 2 {
                            continue;
                        }
                        let (mut top1, mut top2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                        for ww in start..end {
                            let v = to_f64(a[[nn, cc, hh, ww]]);
                            if v > top1 {
                                top2 = top1;
                                top1 = v;
                            } else if v > top2 {
                                top2 = v;
                            }
                        }
                        // An all-zero window is flat: gradients vanish on
                        // both sides, so only positive maxima constrain.
                        if top1 > 0.0 {
                            margin = margin.min(top1 - top2);
                        }
                    }
                }
            }
        }
        margin
    }
}

/// conv -> batchnorm (batch stats) -> ReLU -> frequency max pool.
pub fn block_train_forward<F: Real>(
    x: &Array4<F>,
    p: &BlockParams<F>,
    epsilon: f64,
) -> (Array4<F>, BlockCache<F>, BnBatchStats<F>) {
    let (z, conv_cache) = conv3x3_forward(x, p.weight, p.bias);
    let (y, bn_cache, stats) = bn_train_forward(&z, p.gamma, p.beta, epsilon);
    let a = relu(&y);
    let (out, argmax) = maxpool_freq_forward(&a, POOL_WIDTH);
    (out, BlockCache { conv: conv_cache, bn: bn_cache, prerelu: y, argmax }, stats)
}

/// Same pipeline with frozen running statistics and no caches.
pub fn block_eval_forward<F: Real>(
    x: &Array4<F>,
    p: &BlockParams<F>,
    running_mean: ArrayView1<F>,
    running_var: ArrayView1<F>,
    epsilon: f64,
) -> Array4<F> {
    let (z, _) = conv3x3_forward(x, p.weight, p.bias);
    let y = bn_eval_forward(&z, p.gamma, p.beta, running_mean, running_var, epsilon);
    let a = relu(&y);
    maxpool_freq_forward(&a, POOL_WIDTH).0
}

pub struct BlockGrads<F: Real> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

pub fn block_backward<F: Real>(
    dout: &Array4<F>,
    cache: &BlockCache<F>,
    p: &BlockParams<F>,
) -> (Array4<F>, BlockGrads<F>) {
    let w_in = cache.prerelu.dim().3;
    let mut dy = maxpool_freq_backward(dout, &cache.argmax, w_in);
    dy.zip_mut_with(&cache.prerelu, |d, &pre| {
        if pre <= F::zero() {
            *d = F::zero();
        }
    });
    let (dz, dgamma, dbeta) = bn_backward(&dy, &cache.bn, p.gamma);
    let (dx, dweight, dbias) = conv3x3_backward(&dz, &cache.conv, p.weight);
    (dx, BlockGrads { weight: dweight, bias: dbias, gamma: dgamma, beta: dbeta })
}
