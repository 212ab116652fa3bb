//! Operation tape for reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied during one forward pass. Each
//! operation appends a node holding the result tensor plus whatever the
//! backward rule needs. [`Tape::backward`] walks the nodes in exact reverse
//! execution order, accumulating gradients; leaves created with
//! `requires_grad` always come back with a gradient of their own shape, zero
//! if the loss never touched them.
//!
//! A tape is meant for a single forward/backward pair and is not shared
//! across threads.

use super::kernels;
use super::{Tensor, TensorError};

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Per-channel batch statistics produced by a training-mode batch
/// normalization, used to advance the running estimates.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Tensor,
    /// Population variance.
    pub var: Tensor,
}

enum Op {
    Leaf {
        requires_grad: bool,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Sum {
        a: usize,
    },
    Relu {
        a: usize,
    },
    Reshape {
        a: usize,
    },
    Conv1d {
        input: usize,
        weights: usize,
        bias: usize,
        stride: usize,
    },
    BatchNormTrain {
        input: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormInfer {
        input: usize,
        gamma: usize,
        beta: usize,
        running_mean: Tensor,
        running_var: Tensor,
        eps: f64,
    },
    Linear {
        input: usize,
        weights: usize,
        bias: usize,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        softmax: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

/// Records primitive operations for one forward/backward pair.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an input tensor. Gradients are produced only for leaves
    /// created with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf { requires_grad })
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data().iter())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::from_vec(ta.shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, Op::Add { a: a.0, b: b.0 }))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data().iter())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::from_vec(ta.shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, Op::Mul { a: a.0, b: b.0 }))
    }

    /// Sum of all elements, as a shape-`[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(total), needs, Op::Sum { a: a.0 })
    }

    /// Elementwise max(0, x). The backward pass passes gradient only where
    /// x > 0 (subgradient 0 at x = 0).
    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::from_vec(self.value(a).shape(), data).expect("shape preserved");
        let needs = self.needs(a);
        self.push(value, needs, Op::Relu { a: a.0 })
    }

    /// Same elements under a new shape.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(a).reshaped(shape)?;
        let needs = self.needs(a);
        Ok(self.push(value, needs, Op::Reshape { a: a.0 }))
    }

    /// Valid strided cross-correlation of `input` [N, C_in, L] with
    /// `weights` [C_out, C_in, K] plus `bias` [C_out].
    pub fn conv1d(
        &mut self,
        input: Var,
        weights: Var,
        bias: Var,
        stride: usize,
    ) -> Result<Var, TensorError> {
        let x = self.value(input);
        let w = self.value(weights);
        let b = self.value(bias);
        let (n, c_in, l) = expect_rank3(x)?;
        let (c_out, w_c_in, k) = expect_rank3(w)?;
        if w_c_in != c_in || b.shape() != [c_out] {
            return Err(TensorError::ShapeMismatch {
                left: w.shape().to_vec(),
                right: x.shape().to_vec(),
            });
        }
        if l < k {
            return Err(TensorError::InputShorterThanKernel {
                input: l,
                kernel: k,
            });
        }
        let t_len = kernels::conv_output_len(l, k, stride);
        let y = kernels::conv1d_forward(
            x.data(),
            (n, c_in, l),
            w.data(),
            (c_out, k),
            b.data(),
            stride,
        );
        let value = Tensor::from_vec(&[n, c_out, t_len], y)?;
        let needs = self.needs(input) || self.needs(weights) || self.needs(bias);
        Ok(self.push(
            value,
            needs,
            Op::Conv1d {
                input: input.0,
                weights: weights.0,
                bias: bias.0,
                stride,
            },
        ))
    }

    /// Training-mode batch normalization of `input` [N, C, L] with per-channel
    /// statistics over the batch and time axes. Also returns the batch
    /// statistics so the caller can advance running estimates.
    pub fn batchnorm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats), TensorError> {
        let x = self.value(input);
        let (n, c, l) = expect_rank3(x)?;
        if n * l < 2 {
            return Err(TensorError::DegenerateBatch { count: n * l });
        }
        let g = self.value(gamma);
        let bt = self.value(beta);
        if g.shape() != [c] || bt.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                left: g.shape().to_vec(),
                right: vec![c],
            });
        }
        let fwd = kernels::batchnorm_train_forward(x.data(), (n, c, l), g.data(), bt.data(), eps);
        let stats = BatchStats {
            mean: Tensor::from_vec(&[c], fwd.mean)?,
            var: Tensor::from_vec(&[c], fwd.var)?,
        };
        let value = Tensor::from_vec(x.shape(), fwd.y)?;
        let needs = self.needs(input) || self.needs(gamma) || self.needs(beta);
        let var = self.push(
            value,
            needs,
            Op::BatchNormTrain {
                input: input.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat: fwd.xhat,
                inv_std: fwd.inv_std,
            },
        );
        Ok((var, stats))
    }

    /// Inference-mode batch normalization using fixed running statistics.
    pub fn batchnorm_infer(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor,
        running_var: &Tensor,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let x = self.value(input);
        let (n, c, l) = expect_rank3(x)?;
        let g = self.value(gamma);
        let bt = self.value(beta);
        if g.shape() != [c]
            || bt.shape() != [c]
            || running_mean.shape() != [c]
            || running_var.shape() != [c]
        {
            return Err(TensorError::ShapeMismatch {
                left: g.shape().to_vec(),
                right: vec![c],
            });
        }
        let y = kernels::batchnorm_infer_forward(
            x.data(),
            (n, c, l),
            g.data(),
            bt.data(),
            running_mean.data(),
            running_var.data(),
            eps,
        );
        let value = Tensor::from_vec(x.shape(), y)?;
        let needs = self.needs(input) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            value,
            needs,
            Op::BatchNormInfer {
                input: input.0,
                gamma: gamma.0,
                beta: beta.0,
                running_mean: running_mean.clone(),
                running_var: running_var.clone(),
                eps,
            },
        ))
    }

    /// Dense map of `input` [N, F] by `weights` [O, F] plus `bias` [O].
    pub fn linear(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var, TensorError> {
        let x = self.value(input);
        let w = self.value(weights);
        let b = self.value(bias);
        let (n, f) = expect_rank2(x)?;
        let (o_len, w_f) = expect_rank2(w)?;
        if w_f != f || b.shape() != [o_len] {
            return Err(TensorError::ShapeMismatch {
                left: w.shape().to_vec(),
                right: x.shape().to_vec(),
            });
        }
        let y = kernels::linear_forward(x.data(), (n, f), w.data(), o_len, b.data());
        let value = Tensor::from_vec(&[n, o_len], y)?;
        let needs = self.needs(input) || self.needs(weights) || self.needs(bias);
        Ok(self.push(
            value,
            needs,
            Op::Linear {
                input: input.0,
                weights: weights.0,
                bias: bias.0,
            },
        ))
    }

    /// Mean over the batch of -log softmax(logits)[label], as shape `[1]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<Var, TensorError> {
        let lg = self.value(logits);
        let (n, k) = expect_rank2(lg)?;
        if labels.len() != n {
            return Err(TensorError::LabelCountMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&lab| lab >= k) {
            return Err(TensorError::LabelOutOfRange {
                label: bad,
                classes: k,
            });
        }
        let softmax = kernels::softmax_rows(lg.data(), (n, k));
        let loss = kernels::cross_entropy_mean(lg.data(), (n, k), labels);
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            needs,
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                softmax,
            },
        ))
    }

    /// Replays the tape in reverse from a scalar loss, returning gradients
    /// for every requiring-gradient leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let loss_node = &self.nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(TensorError::NotScalar {
                shape: loss_node.value.shape().to_vec(),
            });
        }

        let mut bufs: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        bufs[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = bufs[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { .. } => {
                    bufs[idx] = Some(g); // keep leaf gradients for the result
                    continue;
                }
                Op::Add { a, b } => {
                    self.accumulate(&mut bufs, *a, &g, |dst, g| {
                        for (d, v) in dst.iter_mut().zip(g) {
                            *d += v;
                        }
                    });
                    self.accumulate(&mut bufs, *b, &g, |dst, g| {
                        for (d, v) in dst.iter_mut().zip(g) {
                            *d += v;
                        }
                    });
                }
                Op::Mul { a, b } => {
                    let (va, vb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                    self.accumulate(&mut bufs, *a, &g, |dst, g| {
                        for ((d, v), other) in dst.iter_mut().zip(g).zip(vb) {
                            *d += v * other;
                        }
                    });
                    self.accumulate(&mut bufs, *b, &g, |dst, g| {
                        for ((d, v), other) in dst.iter_mut().zip(g).zip(va) {
                            *d += v * other;
                        }
                    });
                }
                Op::Sum { a } => {
                    let upstream = g[0];
                    self.accumulate(&mut bufs, *a, &g, |dst, _| {
                        for d in dst.iter_mut() {
                            *d += upstream;
                        }
                    });
                }
                Op::Relu { a } => {
                    let x = self.nodes[*a].value.data();
                    self.accumulate(&mut bufs, *a, &g, |dst, g| {
                        for ((d, v), xv) in dst.iter_mut().zip(g).zip(x) {
                            if *xv > 0.0 {
                                *d += v;
                            }
                        }
                    });
                }
                Op::Reshape { a } => {
                    self.accumulate(&mut bufs, *a, &g, |dst, g| {
                        for (d, v) in dst.iter_mut().zip(g) {
                            *d += v;
                        }
                    });
                }
                Op::Conv1d {
                    input,
                    weights,
                    bias,
                    stride,
                } => {
                    let x = &self.nodes[*input].value;
                    let w = &self.nodes[*weights].value;
                    let (n, c_in, l) = rank3(x);
                    let (c_out, _, k) = rank3(w);
                    let grads = kernels::conv1d_backward(
                        &g,
                        x.data(),
                        (n, c_in, l),
                        w.data(),
                        (c_out, k),
                        *stride,
                        self.nodes[*input].needs_grad,
                        self.nodes[*weights].needs_grad,
                        self.nodes[*bias].needs_grad,
                    );
                    if let Some(dx) = grads.dx {
                        self.accumulate_vec(&mut bufs, *input, dx);
                    }
                    if let Some(dw) = grads.dw {
                        self.accumulate_vec(&mut bufs, *weights, dw);
                    }
                    if let Some(db) = grads.db {
                        self.accumulate_vec(&mut bufs, *bias, db);
                    }
                }
                Op::BatchNormTrain {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let x = &self.nodes[*input].value;
                    let (n, c, l) = rank3(x);
                    let grads = kernels::batchnorm_train_backward(
                        &g,
                        xhat,
                        inv_std,
                        self.nodes[*gamma].value.data(),
                        (n, c, l),
                        self.nodes[*input].needs_grad,
                        self.nodes[*gamma].needs_grad,
                        self.nodes[*beta].needs_grad,
                    );
                    if let Some(dx) = grads.dx {
                        self.accumulate_vec(&mut bufs, *input, dx);
                    }
                    if let Some(dg) = grads.dgamma {
                        self.accumulate_vec(&mut bufs, *gamma, dg);
                    }
                    if let Some(db) = grads.dbeta {
                        self.accumulate_vec(&mut bufs, *beta, db);
                    }
                }
                Op::BatchNormInfer {
                    input,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    eps,
                } => {
                    let x = &self.nodes[*input].value;
                    let (n, c, l) = rank3(x);
                    let grads = kernels::batchnorm_infer_backward(
                        &g,
                        x.data(),
                        (n, c, l),
                        self.nodes[*gamma].value.data(),
                        running_mean.data(),
                        running_var.data(),
                        *eps,
                        self.nodes[*input].needs_grad,
                        self.nodes[*gamma].needs_grad,
                        self.nodes[*beta].needs_grad,
                    );
                    if let Some(dx) = grads.dx {
                        self.accumulate_vec(&mut bufs, *input, dx);
                    }
                    if let Some(dg) = grads.dgamma {
                        self.accumulate_vec(&mut bufs, *gamma, dg);
                    }
                    if let Some(db) = grads.dbeta {
                        self.accumulate_vec(&mut bufs, *beta, db);
                    }
                }
                Op::Linear {
                    input,
                    weights,
                    bias,
                } => {
                    let x = &self.nodes[*input].value;
                    let w = &self.nodes[*weights].value;
                    let (n, f) = rank2(x);
                    let (o_len, _) = rank2(w);
                    let grads = kernels::linear_backward(
                        &g,
                        x.data(),
                        w.data(),
                        (n, f, o_len),
                        self.nodes[*input].needs_grad,
                        self.nodes[*weights].needs_grad,
                        self.nodes[*bias].needs_grad,
                    );
                    if let Some(dx) = grads.dx {
                        self.accumulate_vec(&mut bufs, *input, dx);
                    }
                    if let Some(dw) = grads.dw {
                        self.accumulate_vec(&mut bufs, *weights, dw);
                    }
                    if let Some(db) = grads.db {
                        self.accumulate_vec(&mut bufs, *bias, db);
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    softmax,
                } => {
                    if self.nodes[*logits].needs_grad {
                        let (n, k) = rank2(&self.nodes[*logits].value);
                        let upstream = g[0];
                        let scale = upstream / n as f64;
                        let mut dl = softmax.iter().map(|p| p * scale).collect::<Vec<_>>();
                        for (i, &lab) in labels.iter().enumerate() {
                            dl[i * k + lab] -= scale;
                        }
                        self.accumulate_vec(&mut bufs, *logits, dl);
                    }
                }
            }
        }

        // Every requiring-gradient leaf gets a gradient of its own shape,
        // zeros if the loss never reached it.
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf {
                requires_grad: true,
            } = node.op
            {
                let shape = node.value.shape();
                let tensor = match bufs[idx].take() {
                    Some(buf) => Tensor::from_vec(shape, buf)?,
                    None => Tensor::zeros(shape)?,
                };
                grads[idx] = Some(tensor);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        &self,
        bufs: &mut [Option<Vec<f64>>],
        target: usize,
        g: &[f64],
        apply: impl FnOnce(&mut [f64], &[f64]),
    ) {
        if !self.nodes[target].needs_grad {
            return;
        }
        let buf = bufs[target].get_or_insert_with(|| vec![0.0; self.nodes[target].value.numel()]);
        apply(buf, g);
    }

    fn accumulate_vec(&self, bufs: &mut [Option<Vec<f64>>], target: usize, contrib: Vec<f64>) {
        if !self.nodes[target].needs_grad {
            return;
        }
        match &mut bufs[target] {
            Some(buf) => {
                for (d, v) in buf.iter_mut().zip(contrib) {
                    *d += v;
                }
            }
            slot => *slot = Some(contrib),
        }
    }
}

/// Gradient map produced by [`Tape::backward`], keyed by leaf handle.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a requiring-gradient leaf; `None` for anything else.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

fn expect_rank3(t: &Tensor) -> Result<(usize, usize, usize), TensorError> {
    match t.shape() {
        &[a, b, c] => Ok((a, b, c)),
        shape => Err(TensorError::BadRank {
            expected: 3,
            shape: shape.to_vec(),
        }),
    }
}

fn expect_rank2(t: &Tensor) -> Result<(usize, usize), TensorError> {
    match t.shape() {
        &[a, b] => Ok((a, b)),
        shape => Err(TensorError::BadRank {
            expected: 2,
            shape: shape.to_vec(),
        }),
    }
}

fn rank3(t: &Tensor) -> (usize, usize, usize) {
    (t.shape()[0], t.shape()[1], t.shape()[2])
}

fn rank2(t: &Tensor) -> (usize, usize) {
    (t.shape()[0], t.shape()[1])
}
