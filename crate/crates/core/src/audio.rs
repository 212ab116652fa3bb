//! WAV ingestion, resampling to 8 kHz, clip segmentation, and 16-bit PCM
//! output.
//!
//! The network consumes [`AudioClip`]s: exactly five seconds of mono audio at
//! 8,000 Hz as floats in [-1, 1]. Everything else here exists to get real
//! audio into that shape and modified clips back out as WAV files.

use crate::tensor::Tensor;
use thiserror::Error;

/// Samples per clip: five seconds at 8 kHz.
pub const CLIP_SAMPLES: usize = 40_000;
/// The network's sample rate.
pub const TARGET_SAMPLE_RATE: u32 = 8_000;

/// Anti-alias filter length used when decimating.
const FILTER_TAPS: usize = 127;
/// Fraction of the target rate where the stopband must begin.
const CUTOFF_FRACTION: f64 = 0.45;
/// Approximate transition width of a Hann-windowed sinc, in cycles/sample.
const HANN_TRANSITION: f64 = 3.1 / FILTER_TAPS as f64;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("not a RIFF stream (magic {found:?})")]
    BadMagic { found: [u8; 4] },
    #[error("RIFF stream is not a WAVE file")]
    NotWave,
    #[error("unsupported audio format code {0}; only PCM (code 1) is supported")]
    UnsupportedFormat(u16),
    #[error("unsupported bit depth {0}; only 16-bit samples are supported")]
    UnsupportedBitDepth(u16),
    #[error("stream truncated while reading {0}")]
    Truncated(&'static str),
    #[error("missing required chunk {0:?}")]
    MissingChunk(&'static str),
    #[error("malformed fmt chunk: {0}")]
    MalformedFmt(&'static str),
    #[error("data chunk length {0} is not a whole number of frames")]
    RaggedFrames(usize),
    #[error("sample rate {0} Hz is unsupported: must be 8000 Hz or an integer multiple of it")]
    UnsupportedRate(u32),
    #[error("expected mono audio, got {0} channels")]
    NotMono(usize),
    #[error("expected 8000 Hz audio, got {0} Hz")]
    NotTargetRate(u32),
    #[error("a clip must hold exactly {CLIP_SAMPLES} samples, got {0}")]
    BadClipLength(usize),
    #[error("clip contains non-finite samples")]
    NonFiniteClip,
    #[error("invalid wave: {0}")]
    InvalidWave(&'static str),
}

/// Uncompressed 16-bit PCM audio, one sample array per channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PcmWave {
    pub sample_rate: u32,
    pub channels: Vec<Vec<i16>>,
}

impl PcmWave {
    pub fn new(sample_rate: u32, channels: Vec<Vec<i16>>) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidWave("sample rate must be positive"));
        }
        if channels.is_empty() {
            return Err(AudioError::InvalidWave("at least one channel required"));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(AudioError::InvalidWave("channels differ in length"));
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn mono(sample_rate: u32, samples: Vec<i16>) -> Result<Self, AudioError> {
        Self::new(sample_rate, vec![samples])
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn is_mono(&self) -> bool {
        self.channel_count() == 1
    }
}

/// Exactly five seconds of mono 8 kHz audio as floats, nominal range [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>) -> Result<Self, AudioError> {
        if samples.len() != CLIP_SAMPLES {
            return Err(AudioError::BadClipLength(samples.len()));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(AudioError::NonFiniteClip);
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// The clip as a `[1, 1, 40000]` network input batch.
    pub fn to_input_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, 1, CLIP_SAMPLES], self.samples.clone()).expect("clip length is fixed")
    }
}

// ---------------------------------------------------------------------------
// WAV codec
//
// Canonical layout: "RIFF" + size + "WAVE", a 16-byte PCM "fmt " chunk, then
// "data". The reader tolerates extra chunks between "fmt " and "data"; the
// writer always emits the canonical 44-byte header.
// ---------------------------------------------------------------------------

/// Parses a RIFF/WAVE stream holding 16-bit PCM samples.
pub fn wav_decode(bytes: &[u8]) -> Result<PcmWave, AudioError> {
    if bytes.len() < 12 {
        return Err(AudioError::Truncated("RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[0..4]);
        return Err(AudioError::BadMagic { found });
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(AudioError::NotWave);
    }

    let mut offset = 12usize;
    let mut fmt: Option<(u16, u32)> = None; // (channels, sample_rate)
    loop {
        if offset == bytes.len() {
            return Err(AudioError::MissingChunk(if fmt.is_none() {
                "fmt "
            } else {
                "data"
            }));
        }
        if offset + 8 > bytes.len() {
            return Err(AudioError::Truncated("chunk header"));
        }
        let id = &bytes[offset..offset + 4];
        let size = u32::from_le_bytes(bytes[offset + 4..offset + 8].try_into().unwrap()) as usize;
        let body_start = offset + 8;

        if id == b"fmt " {
            if body_start + size > bytes.len() {
                return Err(AudioError::Truncated("fmt chunk"));
            }
            if size < 16 {
                return Err(AudioError::MalformedFmt("chunk shorter than 16 bytes"));
            }
            let body = &bytes[body_start..body_start + size];
            let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
            if format != 1 {
                return Err(AudioError::UnsupportedFormat(format));
            }
            let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
            if channels == 0 {
                return Err(AudioError::MalformedFmt("zero channels"));
            }
            let sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
            if sample_rate == 0 {
                return Err(AudioError::MalformedFmt("zero sample rate"));
            }
            let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
            if bits != 16 {
                return Err(AudioError::UnsupportedBitDepth(bits));
            }
            fmt = Some((channels, sample_rate));
        } else if id == b"data" {
            let (channels, sample_rate) = fmt.ok_or(AudioError::MissingChunk("fmt "))?;
            if body_start + size > bytes.len() {
                return Err(AudioError::Truncated("data chunk"));
            }
            let data = &bytes[body_start..body_start + size];
            if !size.is_multiple_of(2 * channels as usize) {
                return Err(AudioError::RaggedFrames(size));
            }
            let frames = size / (2 * channels as usize);
            let mut per_channel = vec![Vec::with_capacity(frames); channels as usize];
            for frame in 0..frames {
                for (c, channel) in per_channel.iter_mut().enumerate() {
                    let at = (frame * channels as usize + c) * 2;
                    channel.push(i16::from_le_bytes(data[at..at + 2].try_into().unwrap()));
                }
            }
            return PcmWave::new(sample_rate, per_channel);
        }

        // Skip unknown chunks; RIFF pads odd-sized bodies to even offsets.
        let padded = size + (size & 1);
        offset = body_start
            .checked_add(padded)
            .ok_or(AudioError::Truncated("chunk size"))?;
        if offset > bytes.len() {
            return Err(AudioError::Truncated("chunk body"));
        }
    }
}

/// Serializes to the canonical 44-byte-header RIFF/WAVE PCM layout.
/// `wav_decode(wav_encode(w)) == w` bit-exactly.
pub fn wav_encode(wave: &PcmWave) -> Vec<u8> {
    let num_channels = wave.channel_count() as u16;
    let bits_per_sample: u16 = 16;
    let bytes_per_frame = num_channels as u32 * 2;
    let byte_rate = wave.sample_rate * bytes_per_frame;
    let data_len = (wave.len() as u32) * bytes_per_frame;
    let riff_len = 4 + (8 + 16) + (8 + data_len);

    let mut out = Vec::with_capacity(8 + riff_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&riff_len.to_le_bytes());
    out.extend_from_slice(b"WAVE");

    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&num_channels.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&(bytes_per_frame as u16).to_le_bytes());
    out.extend_from_slice(&bits_per_sample.to_le_bytes());

    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for frame in 0..wave.len() {
        for channel in &wave.channels {
            out.extend_from_slice(&channel[frame].to_le_bytes());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Preparation: mixdown, decimation, segmentation
// ---------------------------------------------------------------------------

/// Averages all channels into one; the mean is rounded half away from zero.
pub fn to_mono(wave: &PcmWave) -> PcmWave {
    if wave.is_mono() {
        return wave.clone();
    }
    let ch = wave.channel_count() as i64;
    let half = ch / 2;
    let samples = (0..wave.len())
        .map(|i| {
            let sum: i64 = wave.channels.iter().map(|c| c[i] as i64).sum();
            let rounded = if sum >= 0 {
                (sum + half) / ch
            } else {
                (sum - half) / ch
            };
            rounded.clamp(i16::MIN as i64, i16::MAX as i64) as i16
        })
        .collect();
    PcmWave {
        sample_rate: wave.sample_rate,
        channels: vec![samples],
    }
}

/// Decimates mono audio to 8 kHz. The source rate must be 8 kHz (identity)
/// or an integer multiple of it; decimation is preceded by a Hann-windowed
/// sinc low-pass so that the band above 0.45 x 8 kHz is suppressed.
pub fn resample_to_8k(wave: &PcmWave) -> Result<PcmWave, AudioError> {
    if !wave.is_mono() {
        return Err(AudioError::NotMono(wave.channel_count()));
    }
    if wave.sample_rate == TARGET_SAMPLE_RATE {
        return Ok(wave.clone());
    }
    if wave.sample_rate < TARGET_SAMPLE_RATE || !wave.sample_rate.is_multiple_of(TARGET_SAMPLE_RATE)
    {
        return Err(AudioError::UnsupportedRate(wave.sample_rate));
    }
    let factor = (wave.sample_rate / TARGET_SAMPLE_RATE) as usize;
    let input = &wave.channels[0];
    let out_len = input.len() / factor;

    let taps = lowpass_taps(wave.sample_rate);
    let half = FILTER_TAPS / 2;
    let samples = (0..out_len)
        .map(|t| {
            let center = t * factor;
            let mut acc = 0.0;
            for (j, h) in taps.iter().enumerate() {
                // Zero-padded at the edges.
                let idx = center as isize + j as isize - half as isize;
                if idx >= 0 && (idx as usize) < input.len() {
                    acc += h * input[idx as usize] as f64;
                }
            }
            quantize_i16(acc)
        })
        .collect();
    PcmWave::mono(TARGET_SAMPLE_RATE, samples)
}

/// Hann-windowed sinc low-pass, unit DC gain. The design frequency sits one
/// transition width below the stopband target so that attenuation reaches
/// the stopband floor by 0.45 x 8 kHz.
fn lowpass_taps(input_rate: u32) -> Vec<f64> {
    let stop_edge = CUTOFF_FRACTION * TARGET_SAMPLE_RATE as f64 / input_rate as f64;
    let cutoff = (stop_edge - HANN_TRANSITION).max(HANN_TRANSITION / 2.0);
    let alpha = (FILTER_TAPS - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..FILTER_TAPS)
        .map(|n| {
            let x = n as f64 - alpha;
            let sinc = if x == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * std::f64::consts::PI * cutoff * x).sin() / (std::f64::consts::PI * x)
            };
            let window = 0.5
                * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / (FILTER_TAPS - 1) as f64).cos());
            sinc * window
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

fn quantize_i16(v: f64) -> i16 {
    v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Splits 8 kHz mono audio into consecutive non-overlapping clips of
/// 40,000 samples; the trailing remainder is discarded. Integer samples map
/// to floats as x / 32768.
pub fn segment(wave: &PcmWave) -> Result<Vec<AudioClip>, AudioError> {
    if !wave.is_mono() {
        return Err(AudioError::NotMono(wave.channel_count()));
    }
    if wave.sample_rate != TARGET_SAMPLE_RATE {
        return Err(AudioError::NotTargetRate(wave.sample_rate));
    }
    let samples = &wave.channels[0];
    let clips = samples.len() / CLIP_SAMPLES;
    (0..clips)
        .map(|i| {
            let chunk = &samples[i * CLIP_SAMPLES..(i + 1) * CLIP_SAMPLES];
            AudioClip::new(chunk.iter().map(|&s| s as f64 / 32_768.0).collect())
        })
        .collect()
}

/// Peak-normalizes a clip to 0.95 of full scale (when it has any signal) and
/// quantizes to 16-bit PCM at 8 kHz, rounding half away from zero.
pub fn clip_to_wave(clip: &AudioClip) -> PcmWave {
    let peak = clip
        .samples()
        .iter()
        .fold(0.0f64, |acc, &s| acc.max(s.abs()));
    let scale = if peak > 0.0 { 0.95 / peak } else { 0.0 };
    let samples = clip
        .samples()
        .iter()
        .map(|&s| quantize_i16(s * scale * 32_767.0))
        .collect();
    PcmWave {
        sample_rate: TARGET_SAMPLE_RATE,
        channels: vec![samples],
    }
}
