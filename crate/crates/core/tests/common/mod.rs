//! Shared test support: independent oracles (naive convolution, plain DFT,
//! central finite differences) and synthetic corpus builders.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wavedream_core::net::{Architecture, GenreNet, Mode};
use wavedream_core::tensor::{Tape, Tensor};
use wavedream_core::train::Dataset;

/// Reduced architecture sharing every code path with the production net.
pub fn reduced_arch() -> Architecture {
    Architecture {
        input_len: 64,
        channels: 3,
        kernels: [4, 4, 4],
        stride: 2,
        classes: 5,
    }
}

/// Naive quadruple-loop convolution oracle over [C_in, L]:
/// out[o][t] = bias[o] + sum_{c,k} w[o][c][k] * x[c][t*stride + k].
pub fn naive_conv(
    x: &[Vec<f64>],
    w: &[Vec<Vec<f64>>],
    bias: &[f64],
    stride: usize,
) -> Vec<Vec<f64>> {
    let c_in = x.len();
    let l = x[0].len();
    let c_out = w.len();
    let k = w[0][0].len();
    let t_len = (l - k) / stride + 1;
    let mut out = vec![vec![0.0; t_len]; c_out];
    for o in 0..c_out {
        for t in 0..t_len {
            let mut acc = bias[o];
            for c in 0..c_in {
                for j in 0..k {
                    acc += w[o][c][j] * x[c][t * stride + j];
                }
            }
            out[o][t] = acc;
        }
    }
    out
}

/// |X[k]| of the length-n DFT of `x` at integer bin `k`.
pub fn dft_magnitude(x: &[f64], k: usize) -> f64 {
    let n = x.len() as f64;
    let mut re = 0.0;
    let mut im = 0.0;
    for (t, &v) in x.iter().enumerate() {
        let angle = -2.0 * std::f64::consts::PI * k as f64 * t as f64 / n;
        re += v * angle.cos();
        im += v * angle.sin();
    }
    (re * re + im * im).sqrt()
}

/// Mean |X[k]|^2 over an inclusive bin range.
pub fn mean_band_power(x: &[f64], bins: std::ops::RangeInclusive<usize>) -> f64 {
    let count = bins.clone().count();
    let total: f64 = bins.map(|k| dft_magnitude(x, k).powi(2)).sum();
    total / count as f64
}

/// Returns `t` with element `idx` shifted by `delta`.
pub fn perturbed(t: &Tensor, idx: usize, delta: f64) -> Tensor {
    let mut data = t.data().to_vec();
    data[idx] += delta;
    Tensor::from_vec(t.shape(), data).unwrap()
}

/// Guarded relative error used by every finite-difference comparison:
/// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero gradients from
/// amplifying the difference-quotient's cancellation noise.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub const FD_EPS: f64 = 1e-6;

/// Central finite difference of a scalar function at one coordinate.
pub fn central_diff(f: impl Fn(&Tensor) -> f64, at: &Tensor, idx: usize) -> f64 {
    let plus = f(&perturbed(at, idx, FD_EPS));
    let minus = f(&perturbed(at, idx, -FD_EPS));
    (plus - minus) / (2.0 * FD_EPS)
}

/// Smallest |x| over all rectify inputs (the batch-norm outputs) of a
/// forward pass, used to confirm gradient checks sit away from the kink.
/// Replays the normalization stages directly since post-rectify activations
/// no longer expose the magnitude of their negative inputs.
pub fn min_rectify_input_magnitude(net: &GenreNet, batch: &Tensor, mode: Mode) -> f64 {
    let mut tape = Tape::new();
    let mut min_abs = f64::INFINITY;
    let mut x = tape.leaf(batch.clone(), false);
    for (conv, bn) in [
        (&net.conv1, &net.bn1),
        (&net.conv2, &net.bn2),
        (&net.conv3, &net.bn3),
    ] {
        let w = tape.leaf(conv.weights.clone(), false);
        let b = tape.leaf(conv.bias.clone(), false);
        let gamma = tape.leaf(bn.gamma.clone(), false);
        let beta = tape.leaf(bn.beta.clone(), false);
        let convolved = tape.conv1d(x, w, b, conv.stride).unwrap();
        let normalized = match mode {
            Mode::Training => {
                tape.batchnorm_train(convolved, gamma, beta, bn.eps)
                    .unwrap()
                    .0
            }
            Mode::Inference => tape
                .batchnorm_infer(
                    convolved,
                    gamma,
                    beta,
                    &bn.running_mean,
                    &bn.running_var,
                    bn.eps,
                )
                .unwrap(),
        };
        for &v in tape.value(normalized).data() {
            min_abs = min_abs.min(v.abs());
        }
        x = tape.relu(normalized);
    }
    min_abs
}

/// Five classes of seeded sine-tone clips (220/440/880/1760/3000 Hz) with
/// mild noise; `per_class` clips each of length `input_len` at 8 kHz.
pub fn tone_corpus(per_class: usize, input_len: usize, seed: u64) -> Dataset {
    const FREQS: [f64; 5] = [220.0, 440.0, 880.0, 1760.0, 3000.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(5 * per_class);
    let mut labels = Vec::with_capacity(5 * per_class);
    for (class, &freq) in FREQS.iter().enumerate() {
        for _ in 0..per_class {
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let clip: Vec<f64> = (0..input_len)
                .map(|t| {
                    let tone =
                        0.6 * (std::f64::consts::TAU * freq * t as f64 / 8_000.0 + phase).sin();
                    let noise: f64 = rng.random_range(-0.05..0.05);
                    tone + noise
                })
                .collect();
            inputs.push(clip);
            labels.push(class);
        }
    }
    Dataset::new(inputs, labels).unwrap()
}

/// Fraction of examples whose argmax prediction matches the label.
pub fn training_accuracy(net: &GenreNet, data: &Dataset) -> f64 {
    wavedream_core::train::evaluate(net, data)
        .unwrap()
        .overall_accuracy
}
