//! Gradient-ascent modification of audio clips.
//!
//! The objective is the sum of the post-rectify activations of the selected
//! convolutional layers (or all three). The network stays frozen: batch
//! normalization runs on its running statistics and no parameter gradients
//! are requested; only the clip moves.

use crate::audio::{AudioClip, CLIP_SAMPLES};
use crate::net::{GenreNet, Mode, NetError};
use crate::tensor::{Tape, Tensor, TensorError, Var};
use std::io::Write;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DreamError {
    #[error("layer selection must name at least one layer")]
    EmptySelection,
    #[error("layer {0} does not exist; valid layers are 1, 2, 3")]
    NoSuchLayer(usize),
    #[error(
        "cannot parse layer selection {0:?}: expected \"all\" or comma-separated layers from 1-3"
    )]
    BadSelectionSyntax(String),
    #[error("invalid dream config: {0}")]
    BadConfig(String),
    #[error("network expects input length {expected}, clips are {got} samples")]
    ArchMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Nonempty subset of the three convolutional layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSelection {
    mask: [bool; 3],
}

impl LayerSelection {
    pub fn all() -> Self {
        Self { mask: [true; 3] }
    }

    /// Selection from 1-based layer numbers.
    pub fn layers(layers: &[usize]) -> Result<Self, DreamError> {
        if layers.is_empty() {
            return Err(DreamError::EmptySelection);
        }
        let mut mask = [false; 3];
        for &layer in layers {
            if !(1..=3).contains(&layer) {
                return Err(DreamError::NoSuchLayer(layer));
            }
            mask[layer - 1] = true;
        }
        Ok(Self { mask })
    }

    pub fn contains(&self, layer_index: usize) -> bool {
        self.mask[layer_index]
    }

    pub fn is_all(&self) -> bool {
        self.mask == [true; 3]
    }
}

impl FromStr for LayerSelection {
    type Err = DreamError;

    fn from_str(s: &str) -> Result<Self, DreamError> {
        let trimmed = s.trim();
        if trimmed.eq_ignore_ascii_case("all") {
            return Ok(Self::all());
        }
        let layers = trimmed
            .split(',')
            .map(|part| {
                part.trim()
                    .parse::<usize>()
                    .map_err(|_| DreamError::BadSelectionSyntax(s.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::layers(&layers)
    }
}

impl std::fmt::Display for LayerSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_all() {
            return write!(f, "all");
        }
        let picked: Vec<String> = (0..3)
            .filter(|&i| self.mask[i])
            .map(|i| (i + 1).to_string())
            .collect();
        write!(f, "{}", picked.join(","))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DreamConfig {
    pub layers: LayerSelection,
    pub steps: usize,
    pub step_size: f64,
    pub normalize_gradient: bool,
}

impl Default for DreamConfig {
    fn default() -> Self {
        Self {
            layers: LayerSelection::all(),
            steps: 100,
            step_size: 0.01,
            normalize_gradient: true,
        }
    }
}

impl DreamConfig {
    pub fn validate(&self) -> Result<(), DreamError> {
        if self.steps < 1 {
            return Err(DreamError::BadConfig("steps must be at least 1".into()));
        }
        if self.step_size <= 0.0 || self.step_size.is_nan() {
            return Err(DreamError::BadConfig("step_size must be positive".into()));
        }
        Ok(())
    }
}

/// Objective values before the first step and after each step.
#[derive(Clone, Debug)]
pub struct DreamTrace {
    pub objective_per_step: Vec<f64>,
}

impl DreamTrace {
    /// Writes the trace as `step,objective` CSV; step 0 is the initial value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,objective")?;
        for (step, objective) in self.objective_per_step.iter().enumerate() {
            writeln!(w, "{},{}", step, objective)?;
        }
        Ok(())
    }
}

/// Builds the dream objective on a tape: the summed post-rectify activations
/// of the selected layers for an input var of shape `[1, 1, input_len]`.
/// The forward runs in inference mode.
pub fn objective_on_tape(
    net: &GenreNet,
    tape: &mut Tape,
    input: Var,
    selection: &LayerSelection,
) -> Result<Var, DreamError> {
    let pass = net.forward_batch(tape, input, Mode::Inference)?;
    let mut total: Option<Var> = None;
    for (i, &activation) in pass.activations.iter().enumerate() {
        if !selection.contains(i) {
            continue;
        }
        let layer_sum = tape.sum(activation);
        total = Some(match total {
            None => layer_sum,
            Some(acc) => tape.add(acc, layer_sum)?,
        });
    }
    total.ok_or(DreamError::EmptySelection)
}

fn clip_input_tensor(net: &GenreNet, clip: &AudioClip) -> Result<Tensor, DreamError> {
    if net.arch.input_len != CLIP_SAMPLES {
        return Err(DreamError::ArchMismatch {
            expected: net.arch.input_len,
            got: CLIP_SAMPLES,
        });
    }
    Ok(clip.to_input_tensor())
}

/// The objective value for a clip, as a scalar tensor.
pub fn dream_objective(
    net: &GenreNet,
    clip: &AudioClip,
    selection: &LayerSelection,
) -> Result<Tensor, DreamError> {
    let input = clip_input_tensor(net, clip)?;
    let mut tape = Tape::new();
    let x = tape.leaf(input, false);
    let objective = objective_on_tape(net, &mut tape, x, selection)?;
    Ok(tape.value(objective).clone())
}

/// One gradient-ascent step. Returns the updated clip and the objective
/// value at the *input* clip. The gradient is optionally rescaled to unit
/// mean magnitude, and the result is clamped to [-1, 1].
pub fn dream_step(
    net: &GenreNet,
    clip: &AudioClip,
    cfg: &DreamConfig,
) -> Result<(AudioClip, f64), DreamError> {
    cfg.validate()?;
    let input = clip_input_tensor(net, clip)?;
    let mut tape = Tape::new();
    let x = tape.leaf(input, true);
    let objective = objective_on_tape(net, &mut tape, x, &cfg.layers)?;
    let value = tape.value(objective).item();
    let mut grads = tape.backward(objective)?;
    let grad = grads.take(x).expect("input leaf requires gradient");

    let mut g: Vec<f64> = grad.data().to_vec();
    if cfg.normalize_gradient {
        let mean_abs = g.iter().map(|v| v.abs()).sum::<f64>() / g.len() as f64;
        let scale = 1.0 / (mean_abs + 1e-8);
        for v in &mut g {
            *v *= scale;
        }
    }
    let samples = clip
        .samples()
        .iter()
        .zip(&g)
        .map(|(s, gv)| (s + cfg.step_size * gv).clamp(-1.0, 1.0))
        .collect();
    let updated = AudioClip::new(samples).expect("clamped samples stay valid");
    Ok((updated, value))
}

/// Runs `cfg.steps` ascent steps. The trace holds the objective before the
/// first step and after every step (length steps + 1); the final clip stays
/// within [-1, 1] and is ready for [`crate::audio::clip_to_wave`].
pub fn dream(
    net: &GenreNet,
    clip: &AudioClip,
    cfg: &DreamConfig,
) -> Result<(AudioClip, DreamTrace), DreamError> {
    cfg.validate()?;
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut current = clip.clone();
    for _ in 0..cfg.steps {
        let (next, objective_before) = dream_step(net, &current, cfg)?;
        trace.push(objective_before);
        current = next;
    }
    trace.push(dream_objective(net, &current, &cfg.layers)?.item());
    Ok((
        current,
        DreamTrace {
            objective_per_step: trace,
        },
    ))
}
