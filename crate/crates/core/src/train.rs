//! Mini-batch training with Nesterov momentum, per-epoch bookkeeping, and
//! per-genre evaluation.

use crate::audio::AudioClip;
use crate::manifest::GENRES;
use crate::net::{GenreNet, Mode, NetError};
use crate::tensor::{Tape, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset needs at least 2 examples for batch normalization, got {0}")]
    DatasetTooSmall(usize),
    #[error("example {index} has length {got}, expected {expected}")]
    BadExampleLength {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("gradient count {got} does not match parameter count {expected}")]
    GradientCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Training hyperparameters. Twenty epochs is the trained configuration;
/// the rest are reproducibility-pinned defaults.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 {
            return Err(TrainError::BadConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainError::BadConfig(
                "batch_size must be at least 2 (batch normalization needs a batch)".into(),
            ));
        }
        if self.learning_rate <= 0.0 || self.learning_rate.is_nan() {
            return Err(TrainError::BadConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::BadConfig("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Labeled examples with a uniform input length.
#[derive(Clone, Debug)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    input_len: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self, TrainError> {
        if inputs.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        if inputs.len() != labels.len() {
            return Err(TrainError::BadConfig(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let input_len = inputs[0].len();
        for (index, input) in inputs.iter().enumerate() {
            if input.len() != input_len {
                return Err(TrainError::BadExampleLength {
                    index,
                    expected: input_len,
                    got: input.len(),
                });
            }
        }
        Ok(Self {
            inputs,
            labels,
            input_len,
        })
    }

    pub fn from_clips(clips: &[AudioClip], labels: &[usize]) -> Result<Self, TrainError> {
        Self::new(
            clips.iter().map(|c| c.samples().to_vec()).collect(),
            labels.to_vec(),
        )
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn check_against(&self, net: &GenreNet) -> Result<(), TrainError> {
        if self.input_len != net.arch.input_len {
            return Err(TrainError::BadExampleLength {
                index: 0,
                expected: net.arch.input_len,
                got: self.input_len,
            });
        }
        for &label in &self.labels {
            if label >= net.arch.classes {
                return Err(TrainError::BadLabel {
                    label,
                    classes: net.arch.classes,
                });
            }
        }
        Ok(())
    }

    /// `[B, 1, input_len]` tensor plus labels for the given example indices.
    fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.input_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.inputs[i]);
            labels.push(self.labels[i]);
        }
        let tensor = Tensor::from_vec(&[indices.len(), 1, self.input_len], data)
            .expect("batch assembly preserves lengths");
        (tensor, labels)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

/// Optimizer velocities plus the per-epoch loss/time log.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub velocity: Vec<Tensor>,
    pub epoch_log: Vec<EpochRecord>,
}

impl TrainState {
    /// Zero velocities mirroring the network's parameter shapes.
    pub fn new(net: &GenreNet) -> Self {
        let velocity = net
            .parameters()
            .iter()
            .map(|p| Tensor::zeros(p.shape()).expect("parameter shapes are valid"))
            .collect();
        Self {
            velocity,
            epoch_log: Vec::new(),
        }
    }

    /// Writes the epoch log as `epoch,loss,seconds` CSV.
    pub fn write_epoch_log_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,loss,seconds")?;
        for rec in &self.epoch_log {
            writeln!(w, "{},{},{}", rec.epoch, rec.mean_loss, rec.seconds)?;
        }
        Ok(())
    }
}

/// One Nesterov accelerated gradient step in lookahead form:
/// g = grad_fn(theta + mu*v); v' = mu*v - lr*g; theta' = theta + v'.
///
/// `grad_fn` evaluates the loss gradient at an arbitrary parameter point.
pub fn nesterov_step<F>(
    params: &mut [Tensor],
    velocity: &mut [Tensor],
    grad_fn: F,
    learning_rate: f64,
    momentum: f64,
) -> Result<(), TrainError>
where
    F: FnOnce(&[Tensor]) -> Result<Vec<Tensor>, TrainError>,
{
    debug_assert_eq!(params.len(), velocity.len());
    let lookahead: Vec<Tensor> = params
        .iter()
        .zip(velocity.iter())
        .map(|(p, v)| p.add_scaled(momentum, v))
        .collect();
    let grads = grad_fn(&lookahead)?;
    if grads.len() != params.len() {
        return Err(TrainError::GradientCountMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grads) {
        *v = v.scaled(momentum).add_scaled(-learning_rate, g);
        *p = p.add_scaled(1.0, v);
    }
    Ok(())
}

/// Batch index spans for one epoch: consecutive chunks of `batch_size`; a
/// final short batch is kept when it has at least 2 examples (batch
/// normalization degenerates on 1) and dropped otherwise.
fn batch_spans(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut spans: Vec<_> = (0..n.div_ceil(batch_size))
        .map(|i| i * batch_size..(i * batch_size + batch_size).min(n))
        .collect();
    if let Some(last) = spans.last() {
        if last.len() < 2 {
            spans.pop();
        }
    }
    spans
}

/// One pass over the dataset: deterministic shuffle keyed by
/// (shuffle_seed, epoch index), one Nesterov step per batch, and an epoch
/// record appended to the state's log. The epoch index is the number of
/// epochs already logged, so repeated calls resume cleanly.
pub fn train_epoch(
    net: &mut GenreNet,
    data: &Dataset,
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<(), TrainError> {
    cfg.validate()?;
    data.check_against(net)?;
    if data.len() < 2 {
        return Err(TrainError::DatasetTooSmall(data.len()));
    }
    let epoch = state.epoch_log.len();
    let started = Instant::now();

    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    rng.set_stream(epoch as u64);
    indices.shuffle(&mut rng);

    let mut params = net.parameters();
    let mut loss_sum = 0.0;
    let spans = batch_spans(data.len(), cfg.batch_size);
    let batches = spans.len();
    for span in spans {
        let (batch, labels) = data.batch(&indices[span]);
        let mut batch_loss = 0.0;
        let mut stats_out = None;
        nesterov_step(
            &mut params,
            &mut state.velocity,
            |at| {
                let mut lookahead_net = net.clone();
                lookahead_net.set_parameters(at)?;
                let mut tape = Tape::new();
                let input = tape.leaf(batch.clone(), false);
                let pass = lookahead_net.forward_batch(&mut tape, input, Mode::Training)?;
                let loss = tape.softmax_cross_entropy(pass.logits, &labels)?;
                batch_loss = tape.value(loss).item();
                stats_out = pass.batch_stats;
                let mut grads = tape.backward(loss)?;
                Ok(pass
                    .param_vars
                    .iter()
                    .map(|&v| grads.take(v).expect("parameter leaves require gradients"))
                    .collect())
            },
            cfg.learning_rate,
            cfg.momentum,
        )?;
        net.set_parameters(&params)?;
        if let Some(stats) = &stats_out {
            net.update_running_stats(stats);
        }
        loss_sum += batch_loss;
    }

    state.epoch_log.push(EpochRecord {
        epoch,
        mean_loss: loss_sum / batches as f64,
        seconds: started.elapsed().as_secs_f64(),
    });
    Ok(())
}

/// Runs `cfg.epochs` epochs from a fresh optimizer state.
pub fn train(
    net: &mut GenreNet,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainState, TrainError> {
    cfg.validate()?;
    let mut state = TrainState::new(net);
    for _ in 0..cfg.epochs {
        train_epoch(net, data, cfg, &mut state)?;
    }
    Ok(state)
}

/// Per-genre accuracies, overall accuracy, and the confusion matrix
/// (rows = true genre, columns = predicted genre).
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub per_genre_accuracy: Vec<f64>,
    pub overall_accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    /// Human-readable summary: one `genre NN.N%` line per genre in fixed
    /// order, the overall accuracy, then the confusion matrix.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for (name, acc) in GENRES.iter().zip(&self.per_genre_accuracy) {
            out.push_str(&format!("{} {:.1}%\n", name, acc * 100.0));
        }
        out.push_str(&format!("overall {:.1}%\n", self.overall_accuracy * 100.0));
        out.push_str("confusion (rows true, columns predicted):\n");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "genres": GENRES,
            "per_genre_accuracy": self.per_genre_accuracy,
            "overall_accuracy": self.overall_accuracy,
            "confusion": self.confusion,
        })
        .to_string()
    }
}

/// Inference-mode evaluation: argmax of the logits per clip, ties broken
/// toward the lowest class index.
pub fn evaluate(net: &GenreNet, data: &Dataset) -> Result<EvalReport, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    data.check_against(net)?;
    let classes = net.arch.classes;
    let mut confusion = vec![vec![0u64; classes]; classes];

    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(64) {
        let (batch, labels) = data.batch(chunk);
        let logits = net.logits(&batch)?;
        for (row, &truth) in logits.data().chunks(classes).zip(&labels) {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            confusion[truth][best] += 1;
        }
    }

    let per_genre_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(g, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                0.0
            } else {
                row[g] as f64 / total as f64
            }
        })
        .collect();
    let correct: u64 = (0..classes).map(|g| confusion[g][g]).sum();
    let overall_accuracy = correct as f64 / data.len() as f64;

    Ok(EvalReport {
        per_genre_accuracy,
        overall_accuracy,
        confusion,
    })
}
