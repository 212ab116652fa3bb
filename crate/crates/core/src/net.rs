//! The genre network: three strided 1D convolutions with batch normalization
//! and rectification, flattened into a dense layer over five genre logits.
//!
//! With the default architecture the shape ledger is
//! `[1,40000] -> conv1 [16,5000] -> conv2 [16,622] -> conv3 [16,62]
//! -> flatten [992] -> logits [5]`
//! (valid convolution, stride 8, kernel lengths 8/32/128).

use crate::tensor::{BatchStats, Tape, Tensor, TensorError, Var};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("architecture is infeasible: {0}")]
    Infeasible(String),
    #[error("expected input shape {expected:?}, got {got:?}")]
    BadInput {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("expected {expected} parameter tensors, got {got}")]
    BadParameterCount { expected: usize, got: usize },
    #[error("parameter {index} has shape {got:?}, expected {expected:?}")]
    BadParameterShape {
        index: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Structural constants of a [`GenreNet`].
///
/// The defaults are the production network; tests shrink `input_len`,
/// `channels`, and the kernels to run the same code paths quickly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub input_len: usize,
    /// Filters per convolutional layer.
    pub channels: usize,
    pub kernels: [usize; 3],
    pub stride: usize,
    pub classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_len: 40_000,
            channels: 16,
            kernels: [8, 32, 128],
            stride: 8,
            classes: 5,
        }
    }
}

impl Architecture {
    /// Frame counts after each convolution (valid convolution:
    /// floor((L - k) / stride) + 1).
    pub fn conv_output_lens(&self) -> Result<[usize; 3], NetError> {
        if self.stride == 0 || self.channels == 0 || self.classes == 0 || self.input_len == 0 {
            return Err(NetError::Infeasible(
                "all architecture constants must be positive".into(),
            ));
        }
        let mut lens = [0usize; 3];
        let mut l = self.input_len;
        for (i, &k) in self.kernels.iter().enumerate() {
            if k == 0 || l < k {
                return Err(NetError::Infeasible(format!(
                    "layer {} input length {} is shorter than kernel {}",
                    i + 1,
                    l,
                    k
                )));
            }
            l = (l - k) / self.stride + 1;
            lens[i] = l;
        }
        Ok(lens)
    }

    /// Width of the flattened conv3 activation feeding the dense layer.
    pub fn flattened_width(&self) -> Result<usize, NetError> {
        Ok(self.channels * self.conv_output_lens()?[2])
    }
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    /// `[out_channels, in_channels, kernel_length]`
    pub weights: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNormLayer {
    fn identity(channels: usize) -> Self {
        Self {
            gamma: Tensor::new(&[channels], 1.0).expect("positive channels"),
            beta: Tensor::zeros(&[channels]).expect("positive channels"),
            running_mean: Tensor::zeros(&[channels]).expect("positive channels"),
            running_var: Tensor::new(&[channels], 1.0).expect("positive channels"),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// running <- (1 - momentum) * running + momentum * batch_stat.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let keep = 1.0 - self.momentum;
        self.running_mean = self
            .running_mean
            .scaled(keep)
            .add_scaled(self.momentum, &stats.mean);
        self.running_var = self
            .running_var
            .scaled(keep)
            .add_scaled(self.momentum, &stats.var);
    }
}

#[derive(Clone, Debug)]
pub struct DenseLayer {
    /// `[classes, flattened_width]`
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Whether batch normalization uses batch statistics (and parameters receive
/// gradients) or frozen running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Clone, Debug)]
pub struct GenreNet {
    pub arch: Architecture,
    pub conv1: ConvLayer,
    pub bn1: BatchNormLayer,
    pub conv2: ConvLayer,
    pub bn2: BatchNormLayer,
    pub conv3: ConvLayer,
    pub bn3: BatchNormLayer,
    pub dense: DenseLayer,
}

/// Result of one forward pass on a tape.
pub struct ForwardPass {
    pub logits: Var,
    /// Post-rectify activations of the three convolutional layers.
    pub activations: [Var; 3],
    /// Trainable parameter leaves in [`GenreNet::parameters`] order.
    pub param_vars: Vec<Var>,
    /// Batch statistics per normalization layer; `Some` in training mode.
    pub batch_stats: Option<[BatchStats; 3]>,
}

impl GenreNet {
    /// Builds a network with Glorot-uniform weights, zero biases, and
    /// identity batch-norm parameters, fully determined by `seed`.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self, NetError> {
        arch.conv_output_lens()?; // validate feasibility up front
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = arch.channels;

        let mut conv = |in_ch: usize, k: usize| -> Result<ConvLayer, NetError> {
            let weights = glorot_uniform(&[ch, in_ch, k], in_ch * k, ch * k, &mut rng)?;
            Ok(ConvLayer {
                weights,
                bias: Tensor::zeros(&[ch])?,
                stride: arch.stride,
            })
        };
        let conv1 = conv(1, arch.kernels[0])?;
        let conv2 = conv(ch, arch.kernels[1])?;
        let conv3 = conv(ch, arch.kernels[2])?;

        let width = arch.flattened_width()?;
        let dense = DenseLayer {
            weights: glorot_uniform(&[arch.classes, width], width, arch.classes, &mut rng)?,
            bias: Tensor::zeros(&[arch.classes])?,
        };

        Ok(Self {
            arch,
            conv1,
            bn1: BatchNormLayer::identity(ch),
            conv2,
            bn2: BatchNormLayer::identity(ch),
            conv3,
            bn3: BatchNormLayer::identity(ch),
            dense,
        })
    }

    /// Runs `batch` of shape `[N, 1, input_len]` through the network on the
    /// given tape: conv -> batchnorm -> rectify per layer, then flatten and
    /// the dense map. In training mode the parameters are registered as
    /// gradient-requiring leaves and batch statistics are returned.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        input: Var,
        mode: Mode,
    ) -> Result<ForwardPass, NetError> {
        self.forward_batch_with(tape, input, mode, mode == Mode::Training)
    }

    /// [`GenreNet::forward_batch`] with parameter-gradient registration
    /// decoupled from the normalization mode.
    pub fn forward_batch_with(
        &self,
        tape: &mut Tape,
        input: Var,
        mode: Mode,
        param_grads: bool,
    ) -> Result<ForwardPass, NetError> {
        let shape = tape.value(input).shape().to_vec();
        let n = match shape.as_slice() {
            &[n, 1, len] if len == self.arch.input_len => n,
            _ => {
                return Err(NetError::BadInput {
                    expected: vec![0, 1, self.arch.input_len],
                    got: shape,
                })
            }
        };

        let train = mode == Mode::Training;
        let mut param_vars = Vec::with_capacity(14);
        let mut stats: Vec<BatchStats> = Vec::with_capacity(3);
        let mut activations = Vec::with_capacity(3);

        let mut x = input;
        for (conv, bn) in [
            (&self.conv1, &self.bn1),
            (&self.conv2, &self.bn2),
            (&self.conv3, &self.bn3),
        ] {
            let w = tape.leaf(conv.weights.clone(), param_grads);
            let b = tape.leaf(conv.bias.clone(), param_grads);
            let gamma = tape.leaf(bn.gamma.clone(), param_grads);
            let beta = tape.leaf(bn.beta.clone(), param_grads);
            param_vars.extend([w, b, gamma, beta]);

            let convolved = tape.conv1d(x, w, b, conv.stride)?;
            let normalized = if train {
                let (var, batch) = tape.batchnorm_train(convolved, gamma, beta, bn.eps)?;
                stats.push(batch);
                var
            } else {
                tape.batchnorm_infer(
                    convolved,
                    gamma,
                    beta,
                    &bn.running_mean,
                    &bn.running_var,
                    bn.eps,
                )?
            };
            x = tape.relu(normalized);
            activations.push(x);
        }

        let width = self.arch.flattened_width()?;
        let flat = tape.reshape(x, &[n, width])?;
        let dw = tape.leaf(self.dense.weights.clone(), param_grads);
        let db = tape.leaf(self.dense.bias.clone(), param_grads);
        param_vars.extend([dw, db]);
        let logits = tape.linear(flat, dw, db)?;

        Ok(ForwardPass {
            logits,
            activations: [activations[0], activations[1], activations[2]],
            param_vars,
            batch_stats: if train {
                let mut it = stats.into_iter();
                Some([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
            } else {
                None
            },
        })
    }

    /// Trainable parameters in fixed order: per conv layer its weights,
    /// bias, gamma, beta; then dense weights and bias. Running statistics
    /// are not trainable and are excluded.
    pub fn parameters(&self) -> Vec<Tensor> {
        vec![
            self.conv1.weights.clone(),
            self.conv1.bias.clone(),
            self.bn1.gamma.clone(),
            self.bn1.beta.clone(),
            self.conv2.weights.clone(),
            self.conv2.bias.clone(),
            self.bn2.gamma.clone(),
            self.bn2.beta.clone(),
            self.conv3.weights.clone(),
            self.conv3.bias.clone(),
            self.bn3.gamma.clone(),
            self.bn3.beta.clone(),
            self.dense.weights.clone(),
            self.dense.bias.clone(),
        ]
    }

    /// Replaces the trainable parameters; shapes must match exactly.
    pub fn set_parameters(&mut self, params: &[Tensor]) -> Result<(), NetError> {
        let current = self.parameters();
        if params.len() != current.len() {
            return Err(NetError::BadParameterCount {
                expected: current.len(),
                got: params.len(),
            });
        }
        for (i, (new, old)) in params.iter().zip(&current).enumerate() {
            if new.shape() != old.shape() {
                return Err(NetError::BadParameterShape {
                    index: i,
                    expected: old.shape().to_vec(),
                    got: new.shape().to_vec(),
                });
            }
        }
        let slots: [&mut Tensor; 14] = [
            &mut self.conv1.weights,
            &mut self.conv1.bias,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2.weights,
            &mut self.conv2.bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.conv3.weights,
            &mut self.conv3.bias,
            &mut self.bn3.gamma,
            &mut self.bn3.beta,
            &mut self.dense.weights,
            &mut self.dense.bias,
        ];
        for (slot, new) in slots.into_iter().zip(params) {
            *slot = new.clone();
        }
        Ok(())
    }

    /// Advances the running batch-norm statistics from one training forward.
    pub fn update_running_stats(&mut self, stats: &[BatchStats; 3]) {
        self.bn1.update_running(&stats[0]);
        self.bn2.update_running(&stats[1]);
        self.bn3.update_running(&stats[2]);
    }

    /// Total trainable parameter count.
    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }

    /// Convenience inference pass: logits tensor for `[N, 1, input_len]`.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor, NetError> {
        let mut tape = Tape::new();
        let input = tape.leaf(batch.clone(), false);
        let pass = self.forward_batch(&mut tape, input, Mode::Inference)?;
        Ok(tape.value(pass.logits).clone())
    }
}

/// Valid strided cross-correlation of a single `[C_in, L]` input with one
/// convolutional layer, outside any tape.
pub fn conv1d_forward(input: &Tensor, layer: &ConvLayer) -> Result<Tensor, NetError> {
    let batched = match input.shape() {
        &[c, l] => input.reshaped(&[1, c, l])?,
        shape => {
            return Err(NetError::BadInput {
                expected: vec![0, 0],
                got: shape.to_vec(),
            })
        }
    };
    let mut tape = Tape::new();
    let x = tape.leaf(batched, false);
    let w = tape.leaf(layer.weights.clone(), false);
    let b = tape.leaf(layer.bias.clone(), false);
    let y = tape.conv1d(x, w, b, layer.stride)?;
    let out = tape.value(y);
    let (c_out, t_len) = (out.shape()[1], out.shape()[2]);
    Ok(out.reshaped(&[c_out, t_len])?)
}

fn glorot_uniform(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor, NetError> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new(-bound, bound).expect("valid bounds");
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| dist.sample(rng)).collect();
    Ok(Tensor::from_vec(shape, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_ledger_default_architecture() {
        let arch = Architecture::default();
        assert_eq!(arch.conv_output_lens().unwrap(), [5_000, 622, 62]);
        assert_eq!(arch.flattened_width().unwrap(), 992);
    }

    #[test]
    fn conv_single_channel_running_sums() {
        // input 1..16, one filter of eight ones, stride 8 -> [36, 100]
        let layer = ConvLayer {
            weights: Tensor::new(&[1, 1, 8], 1.0).unwrap(),
            bias: Tensor::zeros(&[1]).unwrap(),
            stride: 8,
        };
        let input = Tensor::from_vec(&[1, 16], (1..=16).map(|v| v as f64).collect()).unwrap();
        let out = conv1d_forward(&input, &layer).unwrap();
        assert_eq!(out.shape(), &[1, 2]);
        assert_eq!(out.data(), &[36.0, 100.0]);
    }

    #[test]
    fn conv_output_length_for_default_first_layer() {
        let layer = ConvLayer {
            weights: Tensor::new(&[1, 1, 8], 0.0).unwrap(),
            bias: Tensor::zeros(&[1]).unwrap(),
            stride: 8,
        };
        let input = Tensor::zeros(&[1, 40_000]).unwrap();
        let out = conv1d_forward(&input, &layer).unwrap();
        assert_eq!(out.shape(), &[1, 5_000]);
    }

    #[test]
    fn conv_zero_input_yields_bias() {
        let layer = ConvLayer {
            weights: Tensor::new(&[3, 2, 4], 0.7).unwrap(),
            bias: Tensor::from_vec(&[3], vec![1.5, -2.0, 0.25]).unwrap(),
            stride: 2,
        };
        let input = Tensor::zeros(&[2, 12]).unwrap();
        let out = conv1d_forward(&input, &layer).unwrap();
        for o in 0..3 {
            let row = &out.data()[o * out.shape()[1]..(o + 1) * out.shape()[1]];
            assert!(row.iter().all(|&v| v == layer.bias.data()[o]));
        }
    }

    #[test]
    fn conv_input_shorter_than_kernel_errors() {
        let layer = ConvLayer {
            weights: Tensor::new(&[1, 1, 8], 1.0).unwrap(),
            bias: Tensor::zeros(&[1]).unwrap(),
            stride: 8,
        };
        let input = Tensor::zeros(&[1, 7]).unwrap();
        assert!(conv1d_forward(&input, &layer).is_err());
    }

    #[test]
    fn batchnorm_constant_input_outputs_beta() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[1, 2, 3], 4.2).unwrap(), false);
        let gamma = tape.leaf(Tensor::from_vec(&[2], vec![3.0, -1.0]).unwrap(), false);
        let beta = tape.leaf(Tensor::from_vec(&[2], vec![0.5, -0.25]).unwrap(), false);
        let (y, stats) = tape.batchnorm_train(x, gamma, beta, 1e-5).unwrap();
        let out = tape.value(y).data();
        assert_eq!(&out[0..3], &[0.5, 0.5, 0.5]);
        assert_eq!(&out[3..6], &[-0.25, -0.25, -0.25]);
        assert_eq!(stats.mean.data(), &[4.2, 4.2]);
        assert_eq!(stats.var.data(), &[0.0, 0.0]);
    }

    #[test]
    fn batchnorm_two_values_normalize_to_unit() {
        // channel values {1,3}, eps 0: mean 2, population var 1 -> {-1, +1}
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 1, 2], vec![1.0, 3.0]).unwrap(), false);
        let gamma = tape.leaf(Tensor::new(&[1], 1.0).unwrap(), false);
        let beta = tape.leaf(Tensor::zeros(&[1]).unwrap(), false);
        let (y, _) = tape.batchnorm_train(x, gamma, beta, 0.0).unwrap();
        assert_eq!(tape.value(y).data(), &[-1.0, 1.0]);
    }

    #[test]
    fn batchnorm_inference_identity_statistics() {
        let mut tape = Tape::new();
        let data = vec![0.1, -0.4, 2.0, 0.9];
        let x = tape.leaf(Tensor::from_vec(&[1, 2, 2], data.clone()).unwrap(), false);
        let gamma = tape.leaf(Tensor::new(&[2], 1.0).unwrap(), false);
        let beta = tape.leaf(Tensor::zeros(&[2]).unwrap(), false);
        let mean = Tensor::zeros(&[2]).unwrap();
        let var = Tensor::new(&[2], 1.0).unwrap();
        let y = tape
            .batchnorm_infer(x, gamma, beta, &mean, &var, 1e-5)
            .unwrap();
        for (a, b) in tape.value(y).data().iter().zip(&data) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn batchnorm_degenerate_batch_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap(), false);
        let gamma = tape.leaf(Tensor::new(&[1], 1.0).unwrap(), false);
        let beta = tape.leaf(Tensor::zeros(&[1]).unwrap(), false);
        assert!(matches!(
            tape.batchnorm_train(x, gamma, beta, 1e-5),
            Err(TensorError::DegenerateBatch { count: 1 })
        ));
    }

    #[test]
    fn batchnorm_training_standardizes_each_channel() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..2 * 3 * 5)
            .map(|i| (i as f64 * 0.73).sin() * 3.0 + 1.0)
            .collect();
        let x = tape.leaf(Tensor::from_vec(&[2, 3, 5], data).unwrap(), false);
        let gamma = tape.leaf(Tensor::new(&[3], 1.0).unwrap(), false);
        let beta = tape.leaf(Tensor::zeros(&[3]).unwrap(), false);
        let (y, _) = tape.batchnorm_train(x, gamma, beta, 0.0).unwrap();
        let out = tape.value(y).data();
        for ch in 0..3 {
            let mut vals = Vec::new();
            for n in 0..2 {
                vals.extend_from_slice(&out[(n * 3 + ch) * 5..(n * 3 + ch + 1) * 5]);
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 =
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-10, "channel mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "channel var {var}");
        }
    }

    #[test]
    fn softmax_cross_entropy_reference_values() {
        let mut tape = Tape::new();
        let uniform = tape.leaf(Tensor::zeros(&[1, 5]).unwrap(), false);
        let loss = tape.softmax_cross_entropy(uniform, &[3]).unwrap();
        assert!((tape.value(loss).item() - 5.0f64.ln()).abs() < 1e-12);

        let mut tape = Tape::new();
        let logits = tape.leaf(
            Tensor::from_vec(&[1, 5], vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap(),
            false,
        );
        let loss = tape.softmax_cross_entropy(logits, &[0]).unwrap();
        let expected = (1.0 + 4.0 / std::f64::consts::E).ln();
        assert!((tape.value(loss).item() - expected).abs() < 1e-12);

        let mut tape = Tape::new();
        let confident = tape.leaf(
            Tensor::from_vec(&[1, 5], vec![50.0, 0.0, 0.0, 0.0, 0.0]).unwrap(),
            false,
        );
        let loss = tape.softmax_cross_entropy(confident, &[0]).unwrap();
        assert!(tape.value(loss).item() < 1e-20);
    }

    #[test]
    fn softmax_cross_entropy_rejects_bad_label() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(&[1, 5]).unwrap(), false);
        assert!(matches!(
            tape.softmax_cross_entropy(logits, &[5]),
            Err(TensorError::LabelOutOfRange {
                label: 5,
                classes: 5
            })
        ));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = GenreNet::init(Architecture::default(), 7).unwrap();
        let b = GenreNet::init(Architecture::default(), 7).unwrap();
        for (x, y) in a.parameters().iter().zip(b.parameters().iter()) {
            assert!(x.bits_eq(y));
        }
        let c = GenreNet::init(Architecture::default(), 8).unwrap();
        assert!(!a.conv1.weights.bits_eq(&c.conv1.weights));
    }

    #[test]
    fn init_batchnorm_and_bias_values() {
        let net = GenreNet::init(Architecture::default(), 3).unwrap();
        assert!(net.bn1.gamma.data().iter().all(|&v| v == 1.0));
        assert!(net.bn2.beta.data().iter().all(|&v| v == 0.0));
        assert!(net.bn3.running_mean.data().iter().all(|&v| v == 0.0));
        assert!(net.bn1.running_var.data().iter().all(|&v| v == 1.0));
        assert!(net.conv1.bias.data().iter().all(|&v| v == 0.0));
        assert!(net.dense.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_conv1_weights_within_glorot_bound() {
        let net = GenreNet::init(Architecture::default(), 11).unwrap();
        // fan_in = in_ch * k = 8, fan_out = out_ch * k = 128
        let bound = (6.0f64 / (8 + 128) as f64).sqrt();
        assert!(net
            .conv1
            .weights
            .data()
            .iter()
            .all(|&w| w > -bound && w < bound));
    }

    #[test]
    fn forward_shape_ledger_and_finiteness() {
        let net = GenreNet::init(Architecture::default(), 1).unwrap();
        let mut tape = Tape::new();
        let input = tape.leaf(Tensor::zeros(&[1, 1, 40_000]).unwrap(), false);
        let pass = net
            .forward_batch(&mut tape, input, Mode::Inference)
            .unwrap();
        assert_eq!(tape.value(pass.activations[0]).shape(), &[1, 16, 5_000]);
        assert_eq!(tape.value(pass.activations[1]).shape(), &[1, 16, 622]);
        assert_eq!(tape.value(pass.activations[2]).shape(), &[1, 16, 62]);
        let logits = tape.value(pass.logits);
        assert_eq!(logits.shape(), &[1, 5]);
        assert!(logits.all_finite());
    }

    #[test]
    fn forward_identical_clips_identical_logits() {
        let arch = Architecture {
            input_len: 64,
            channels: 3,
            kernels: [4, 4, 4],
            stride: 2,
            classes: 5,
        };
        let net = GenreNet::init(arch, 5).unwrap();
        let clip: Vec<f64> = (0..64).map(|i| ((i as f64) * 0.3).sin()).collect();
        let mut batch = clip.clone();
        batch.extend_from_slice(&clip);
        let logits = net
            .logits(&Tensor::from_vec(&[2, 1, 64], batch).unwrap())
            .unwrap();
        let (row0, row1) = logits.data().split_at(5);
        assert_eq!(row0, row1);
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let net = GenreNet::init(Architecture::default(), 1).unwrap();
        let mut tape = Tape::new();
        let input = tape.leaf(Tensor::zeros(&[1, 1, 39_999]).unwrap(), false);
        assert!(matches!(
            net.forward_batch(&mut tape, input, Mode::Inference),
            Err(NetError::BadInput { .. })
        ));
    }

    #[test]
    fn inference_forward_is_pure() {
        let net = GenreNet::init(Architecture::default(), 2).unwrap();
        let data: Vec<f64> = (0..40_000)
            .map(|i| ((i as f64) * 0.01).sin() * 0.5)
            .collect();
        let batch = Tensor::from_vec(&[1, 1, 40_000], data).unwrap();
        let a = net.logits(&batch).unwrap();
        let b = net.logits(&batch).unwrap();
        assert!(a.bits_eq(&b));
    }

    #[test]
    fn set_parameters_roundtrip_and_validation() {
        let mut net = GenreNet::init(Architecture::default(), 1).unwrap();
        let params = net.parameters();
        assert_eq!(params.len(), 14);
        net.set_parameters(&params).unwrap();
        assert!(matches!(
            net.set_parameters(&params[1..]),
            Err(NetError::BadParameterCount { .. })
        ));
        let mut wrong = params.clone();
        wrong[0] = Tensor::zeros(&[1, 1, 1]).unwrap();
        assert!(matches!(
            net.set_parameters(&wrong),
            Err(NetError::BadParameterShape { index: 0, .. })
        ));
    }

    #[test]
    fn running_stats_update_rule() {
        let mut bn = BatchNormLayer::identity(2);
        let stats = BatchStats {
            mean: Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap(),
            var: Tensor::from_vec(&[2], vec![4.0, 9.0]).unwrap(),
        };
        bn.update_running(&stats);
        assert_eq!(bn.running_mean.data(), &[0.1, -0.1]);
        assert_eq!(bn.running_var.data(), &[0.9 + 0.4, 0.9 + 0.9]);
    }
}
