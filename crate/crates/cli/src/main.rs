//! Command-line interface: train on a manifest, evaluate a checkpoint,
//! dream on a WAV, or inspect a model file.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use wavedream_core::audio::{self, AudioClip};
use wavedream_core::checkpoint::{checkpoint_load, checkpoint_save};
use wavedream_core::dream::{dream, DreamConfig, LayerSelection};
use wavedream_core::manifest::{ingest, IngestReport, Manifest, GENRES};
use wavedream_core::net::{Architecture, GenreNet};
use wavedream_core::train::{evaluate, train, Dataset, TrainConfig};

#[derive(Parser)]
#[command(
    name = "wavedream",
    about = "Raw-waveform genre classifier with gradient-ascent audio dreaming",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on a manifest and write a checkpoint plus an
    /// epoch-log CSV next to it.
    Train {
        /// CSV manifest with header `path,genre`
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint output path; the epoch log lands at <out>.epochs.csv
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long = "batch-size", default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        /// Seed for both parameter initialization and epoch shuffling
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a checkpoint on a manifest and print the report.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Modify a WAV clip by gradient ascent on layer activations.
    Dream {
        #[arg(long)]
        model: PathBuf,
        /// Input WAV; only the first 5-second clip is dreamed on
        #[arg(long = "in")]
        input: PathBuf,
        /// Output WAV (16-bit PCM, 8 kHz, peak-normalized)
        #[arg(long)]
        out: PathBuf,
        /// "all" or comma-separated layers from 1-3, e.g. "1,3"
        #[arg(long, default_value = "all")]
        layers: String,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long = "step-size", default_value_t = 0.01)]
        step_size: f64,
        /// Use the raw gradient instead of mean-magnitude normalization
        #[arg(long = "no-grad-norm")]
        no_grad_norm: bool,
        /// Optional CSV trace of the objective per step
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Print a checkpoint's architecture and parameter counts.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train {
            manifest,
            out,
            epochs,
            batch_size,
            lr,
            momentum,
            seed,
        } => cmd_train(&manifest, &out, epochs, batch_size, lr, momentum, seed),
        Command::Eval { manifest, model } => cmd_eval(&manifest, &model),
        Command::Dream {
            model,
            input,
            out,
            layers,
            steps,
            step_size,
            no_grad_norm,
            trace,
        } => cmd_dream(
            &model,
            &input,
            &out,
            &layers,
            steps,
            step_size,
            no_grad_norm,
            trace.as_deref(),
        ),
        Command::Inspect { model } => cmd_inspect(&model),
    }
}

fn load_dataset(manifest_path: &Path) -> Result<(Dataset, IngestReport)> {
    let manifest = Manifest::parse_csv(manifest_path)
        .with_context(|| format!("reading manifest {}", manifest_path.display()))?;
    let report = ingest(&manifest).context("ingesting manifest files")?;
    for skip in &report.skipped {
        eprintln!("skipped {}: {}", skip.path.display(), skip.reason);
    }
    let data = Dataset::from_clips(&report.clips, &report.labels)?;
    Ok((data, report))
}

fn cmd_train(
    manifest: &Path,
    out: &Path,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    momentum: f64,
    seed: u64,
) -> Result<()> {
    let (data, report) = load_dataset(manifest)?;
    let counts: Vec<String> = GENRES
        .iter()
        .zip(report.per_genre_clips.iter())
        .map(|(g, n)| format!("{g} {n}"))
        .collect();
    println!("ingested {} clips ({})", data.len(), counts.join(", "));

    let cfg = TrainConfig {
        epochs,
        batch_size,
        learning_rate: lr,
        momentum,
        shuffle_seed: seed,
    };
    let mut net = GenreNet::init(Architecture::default(), seed)?;
    let state = train(&mut net, &data, &cfg)?;

    checkpoint_save(&net, out).with_context(|| format!("writing {}", out.display()))?;
    let log_path = out.with_extension("epochs.csv");
    let mut log =
        fs::File::create(&log_path).with_context(|| format!("writing {}", log_path.display()))?;
    state.write_epoch_log_csv(&mut log)?;

    let last = state.epoch_log.last().expect("at least one epoch");
    println!(
        "trained {} epochs; final mean loss {:.6}",
        state.epoch_log.len(),
        last.mean_loss
    );
    println!("checkpoint: {}", out.display());
    println!("epoch log:  {}", log_path.display());
    Ok(())
}

fn cmd_eval(manifest: &Path, model: &Path) -> Result<()> {
    let net = checkpoint_load(model).with_context(|| format!("loading {}", model.display()))?;
    let (data, _) = load_dataset(manifest)?;
    let report = evaluate(&net, &data)?;
    print!("{}", report.render_text());
    println!("{}", report.to_json());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_dream(
    model: &Path,
    input: &Path,
    out: &Path,
    layers: &str,
    steps: usize,
    step_size: f64,
    no_grad_norm: bool,
    trace_path: Option<&Path>,
) -> Result<()> {
    let net = checkpoint_load(model).with_context(|| format!("loading {}", model.display()))?;
    let selection: LayerSelection = layers.parse()?;
    let cfg = DreamConfig {
        layers: selection,
        steps,
        step_size,
        normalize_gradient: !no_grad_norm,
    };

    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let wave = audio::wav_decode(&bytes).context("decoding input WAV")?;
    let mono = audio::to_mono(&wave);
    let at_8k = audio::resample_to_8k(&mono).context("resampling input")?;
    let clips = audio::segment(&at_8k)?;
    let clip: AudioClip = match clips.len() {
        0 => bail!(
            "input is shorter than one 5-second clip ({} samples at 8 kHz)",
            at_8k.len()
        ),
        1 => clips.into_iter().next().unwrap(),
        n => {
            println!("input yields {n} clips; dreaming on the first clip only");
            clips.into_iter().next().unwrap()
        }
    };

    let (dreamed, trace) = dream(&net, &clip, &cfg)?;
    let out_wave = audio::clip_to_wave(&dreamed);
    fs::write(out, audio::wav_encode(&out_wave))
        .with_context(|| format!("writing {}", out.display()))?;

    if let Some(path) = trace_path {
        let mut f =
            fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
        trace.write_csv(&mut f)?;
    }

    let first = trace.objective_per_step.first().unwrap();
    let last = trace.objective_per_step.last().unwrap();
    println!(
        "dreamed {} steps on layers {}: objective {:.4} -> {:.4}",
        steps, cfg.layers, first, last
    );
    println!("output: {}", out.display());
    Ok(())
}

fn cmd_inspect(model: &Path) -> Result<()> {
    let net = checkpoint_load(model).with_context(|| format!("loading {}", model.display()))?;
    let arch = &net.arch;
    let lens = arch.conv_output_lens()?;
    println!("architecture:");
    println!("  input:  1 x {}", arch.input_len);
    for (i, (&k, &len)) in arch.kernels.iter().zip(lens.iter()).enumerate() {
        println!(
            "  conv{}:  {} filters, kernel {}, stride {} -> {} x {} (+ batchnorm + rectify)",
            i + 1,
            arch.channels,
            k,
            arch.stride,
            arch.channels,
            len
        );
    }
    println!(
        "  dense:  {} -> {} logits",
        arch.flattened_width()?,
        arch.classes
    );
    println!("parameters:");
    let names = [
        "conv1.weights",
        "conv1.bias",
        "bn1.gamma",
        "bn1.beta",
        "conv2.weights",
        "conv2.bias",
        "bn2.gamma",
        "bn2.beta",
        "conv3.weights",
        "conv3.bias",
        "bn3.gamma",
        "bn3.beta",
        "dense.weights",
        "dense.bias",
    ];
    for (name, tensor) in names.iter().zip(net.parameters().iter()) {
        println!("  {:<14} {:?} = {}", name, tensor.shape(), tensor.numel());
    }
    println!("total trainable: {}", net.param_count());
    Ok(())
}
