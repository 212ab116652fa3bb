//! Numeric routines behind the tape operations.
//!
//! Convolution kernels parallelize over the batch dimension. Per-example
//! results are written to disjoint slices and cross-example reductions sum
//! per-example partials in batch order, so results are bit-identical
//! regardless of thread count.

use rayon::prelude::*;

/// Output frame count of a valid (unpadded) strided convolution.
pub(crate) fn conv_output_len(input_len: usize, kernel: usize, stride: usize) -> usize {
    debug_assert!(input_len >= kernel && stride >= 1);
    (input_len - kernel) / stride + 1
}

/// y[n,o,t] = b[o] + sum_{c,k} w[o,c,k] * x[n,c,t*stride+k]
pub(crate) fn conv1d_forward(
    x: &[f64],
    (n, c_in, l): (usize, usize, usize),
    w: &[f64],
    (c_out, k): (usize, usize),
    b: &[f64],
    stride: usize,
) -> Vec<f64> {
    let t_len = conv_output_len(l, k, stride);
    let mut y = vec![0.0; n * c_out * t_len];
    y.par_chunks_mut(c_out * t_len)
        .zip(x.par_chunks(c_in * l))
        .for_each(|(y_n, x_n)| {
            for o in 0..c_out {
                let y_row = &mut y_n[o * t_len..(o + 1) * t_len];
                y_row.fill(b[o]);
                for c in 0..c_in {
                    let w_row = &w[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                    let x_row = &x_n[c * l..(c + 1) * l];
                    for (t, out) in y_row.iter_mut().enumerate() {
                        let window = &x_row[t * stride..t * stride + k];
                        let mut acc = 0.0;
                        for (wv, xv) in w_row.iter().zip(window) {
                            acc += wv * xv;
                        }
                        *out += acc;
                    }
                }
            }
        });
    y
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward(
    dy: &[f64],
    x: &[f64],
    (n, c_in, l): (usize, usize, usize),
    w: &[f64],
    (c_out, k): (usize, usize),
    stride: usize,
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> ConvGrads {
    let t_len = conv_output_len(l, k, stride);

    let dx = want_dx.then(|| {
        let mut dx = vec![0.0; n * c_in * l];
        dx.par_chunks_mut(c_in * l)
            .zip(dy.par_chunks(c_out * t_len))
            .for_each(|(dx_n, dy_n)| {
                for o in 0..c_out {
                    let dy_row = &dy_n[o * t_len..(o + 1) * t_len];
                    for c in 0..c_in {
                        let w_row = &w[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                        let dx_row = &mut dx_n[c * l..(c + 1) * l];
                        for (t, &g) in dy_row.iter().enumerate() {
                            let window = &mut dx_row[t * stride..t * stride + k];
                            for (dv, wv) in window.iter_mut().zip(w_row) {
                                *dv += g * wv;
                            }
                        }
                    }
                }
            });
        dx
    });

    // Per-example weight/bias partials, reduced in batch order.
    let (dw, db) = if want_dw || want_db {
        let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x_n = &x[i * c_in * l..(i + 1) * c_in * l];
                let dy_n = &dy[i * c_out * t_len..(i + 1) * c_out * t_len];
                let mut dw_n = vec![0.0; c_out * c_in * k];
                let mut db_n = vec![0.0; c_out];
                for o in 0..c_out {
                    let dy_row = &dy_n[o * t_len..(o + 1) * t_len];
                    db_n[o] = dy_row.iter().sum();
                    for c in 0..c_in {
                        let x_row = &x_n[c * l..(c + 1) * l];
                        let dw_row = &mut dw_n[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                        for (t, &g) in dy_row.iter().enumerate() {
                            let window = &x_row[t * stride..t * stride + k];
                            for (dv, xv) in dw_row.iter_mut().zip(window) {
                                *dv += g * xv;
                            }
                        }
                    }
                }
                (dw_n, db_n)
            })
            .collect();
        let mut dw = vec![0.0; c_out * c_in * k];
        let mut db = vec![0.0; c_out];
        for (dw_n, db_n) in &partials {
            for (acc, v) in dw.iter_mut().zip(dw_n) {
                *acc += v;
            }
            for (acc, v) in db.iter_mut().zip(db_n) {
                *acc += v;
            }
        }
        (want_dw.then_some(dw), want_db.then_some(db))
    } else {
        (None, None)
    };

    ConvGrads { dx, dw, db }
}

pub(crate) struct BnForward {
    pub y: Vec<f64>,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Population variance per channel.
    pub var: Vec<f64>,
}

/// Training-mode batch normalization over [N, C, L]; statistics are pooled
/// per channel across the batch and time axes.
pub(crate) fn batchnorm_train_forward(
    x: &[f64],
    (n, c, l): (usize, usize, usize),
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> BnForward {
    let m = (n * l) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut sum = 0.0;
        for i in 0..n {
            let row = &x[(i * c + ch) * l..(i * c + ch + 1) * l];
            sum += row.iter().sum::<f64>();
        }
        let mu = sum / m;
        let mut sq = 0.0;
        for i in 0..n {
            let row = &x[(i * c + ch) * l..(i * c + ch + 1) * l];
            sq += row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = sq / m;
    }

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * l;
            for t in 0..l {
                let h = (x[base + t] - mean[ch]) * inv_std[ch];
                xhat[base + t] = h;
                y[base + t] = gamma[ch] * h + beta[ch];
            }
        }
    }
    BnForward {
        y,
        xhat,
        inv_std,
        mean,
        var,
    }
}

pub(crate) struct BnGrads {
    pub dx: Option<Vec<f64>>,
    pub dgamma: Option<Vec<f64>>,
    pub dbeta: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_train_backward(
    dy: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    (n, c, l): (usize, usize, usize),
    want_dx: bool,
    want_dgamma: bool,
    want_dbeta: bool,
) -> BnGrads {
    let m = (n * l) as f64;
    // Channel sums are needed for dx as well as for the parameter grads.
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * l;
            for t in 0..l {
                sum_dy[ch] += dy[base + t];
                sum_dy_xhat[ch] += dy[base + t] * xhat[base + t];
            }
        }
    }

    let dx = want_dx.then(|| {
        let mut dx = vec![0.0; dy.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * l;
                let scale = gamma[ch] * inv_std[ch];
                let mean_dy = sum_dy[ch] / m;
                let mean_dy_xhat = sum_dy_xhat[ch] / m;
                for t in 0..l {
                    dx[base + t] = scale * (dy[base + t] - mean_dy - xhat[base + t] * mean_dy_xhat);
                }
            }
        }
        dx
    });

    BnGrads {
        dx,
        dgamma: want_dgamma.then_some(sum_dy_xhat),
        dbeta: want_dbeta.then_some(sum_dy),
    }
}

/// Inference-mode batch normalization using running statistics.
pub(crate) fn batchnorm_infer_forward(
    x: &[f64],
    (n, c, l): (usize, usize, usize),
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * l;
            let inv = 1.0 / (running_var[ch] + eps).sqrt();
            for t in 0..l {
                y[base + t] = gamma[ch] * (x[base + t] - running_mean[ch]) * inv + beta[ch];
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_infer_backward(
    dy: &[f64],
    x: &[f64],
    (n, c, l): (usize, usize, usize),
    gamma: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
    want_dx: bool,
    want_dgamma: bool,
    want_dbeta: bool,
) -> BnGrads {
    let dx = want_dx.then(|| {
        let mut dx = vec![0.0; dy.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * l;
                let scale = gamma[ch] / (running_var[ch] + eps).sqrt();
                for t in 0..l {
                    dx[base + t] = dy[base + t] * scale;
                }
            }
        }
        dx
    });
    let (dgamma, dbeta) = if want_dgamma || want_dbeta {
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * l;
                let inv = 1.0 / (running_var[ch] + eps).sqrt();
                for t in 0..l {
                    dgamma[ch] += dy[base + t] * (x[base + t] - running_mean[ch]) * inv;
                    dbeta[ch] += dy[base + t];
                }
            }
        }
        (want_dgamma.then_some(dgamma), want_dbeta.then_some(dbeta))
    } else {
        (None, None)
    };
    BnGrads { dx, dgamma, dbeta }
}

/// y[n,o] = b[o] + sum_f x[n,f] * w[o,f]
pub(crate) fn linear_forward(
    x: &[f64],
    (n, f): (usize, usize),
    w: &[f64],
    o_len: usize,
    b: &[f64],
) -> Vec<f64> {
    let mut y = vec![0.0; n * o_len];
    for i in 0..n {
        let x_row = &x[i * f..(i + 1) * f];
        for o in 0..o_len {
            let w_row = &w[o * f..(o + 1) * f];
            let mut acc = b[o];
            for (wv, xv) in w_row.iter().zip(x_row) {
                acc += wv * xv;
            }
            y[i * o_len + o] = acc;
        }
    }
    y
}

pub(crate) struct LinearGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

pub(crate) fn linear_backward(
    dy: &[f64],
    x: &[f64],
    w: &[f64],
    (n, f, o_len): (usize, usize, usize),
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> LinearGrads {
    let dx = want_dx.then(|| {
        let mut dx = vec![0.0; n * f];
        for i in 0..n {
            let dy_row = &dy[i * o_len..(i + 1) * o_len];
            let dx_row = &mut dx[i * f..(i + 1) * f];
            for (o, &g) in dy_row.iter().enumerate() {
                let w_row = &w[o * f..(o + 1) * f];
                for (dv, wv) in dx_row.iter_mut().zip(w_row) {
                    *dv += g * wv;
                }
            }
        }
        dx
    });
    let dw = want_dw.then(|| {
        let mut dw = vec![0.0; o_len * f];
        for i in 0..n {
            let x_row = &x[i * f..(i + 1) * f];
            let dy_row = &dy[i * o_len..(i + 1) * o_len];
            for (o, &g) in dy_row.iter().enumerate() {
                let dw_row = &mut dw[o * f..(o + 1) * f];
                for (dv, xv) in dw_row.iter_mut().zip(x_row) {
                    *dv += g * xv;
                }
            }
        }
        dw
    });
    let db = want_db.then(|| {
        let mut db = vec![0.0; o_len];
        for i in 0..n {
            for o in 0..o_len {
                db[o] += dy[i * o_len + o];
            }
        }
        db
    });
    LinearGrads { dx, dw, db }
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows(logits: &[f64], (n, k): (usize, usize)) -> Vec<f64> {
    let mut p = vec![0.0; n * k];
    for i in 0..n {
        let row = &logits[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            p[i * k + j] = e;
            sum += e;
        }
        for j in 0..k {
            p[i * k + j] /= sum;
        }
    }
    p
}

/// Mean over the batch of -log softmax(logits)[label], computed via
/// log-sum-exp with max subtraction.
pub(crate) fn cross_entropy_mean(logits: &[f64], (n, k): (usize, usize), labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        let row = &logits[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += lse - row[labels[i]];
    }
    total / n as f64
}
