//! Raw-waveform genre classification and audio "dreaming".
//!
//! A three-layer 1D convolutional network over five-second, 8 kHz audio
//! clips, trained with mini-batch Nesterov gradient descent, plus a
//! gradient-ascent procedure that reshapes clips to maximize the summed
//! activations of chosen convolutional layers.
//!
//! Module map:
//! - [`tensor`]: dense f64 tensors and the reverse-mode gradient tape
//! - [`audio`]: WAV codec, 8 kHz decimation, clip segmentation, PCM output
//! - [`net`]: the convolutional genre network
//! - [`train`]: Nesterov mini-batch training and evaluation
//! - [`dream`]: activation-maximization of input clips
//! - [`checkpoint`]: versioned binary model persistence
//! - [`manifest`]: dataset manifests and WAV ingestion

pub mod audio;
pub mod checkpoint;
pub mod dream;
pub mod manifest;
pub mod net;
pub mod tensor;
pub mod train;

pub use audio::{AudioClip, PcmWave, CLIP_SAMPLES, TARGET_SAMPLE_RATE};
pub use manifest::GENRES;
pub use net::{Architecture, GenreNet, Mode};
pub use tensor::{Tape, Tensor};
