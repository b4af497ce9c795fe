//! Batch front door for the spoofed-speech toolkit: corpus synthesis and
//! ingestion, hybrid composition, degradation, featurization, training,
//! and evaluation as re-runnable subcommands.
//!
//! Exit codes: 0 success, 1 pipeline failure (or validation violations),
//! 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod pipeline;

use config::PipelineConfig;

#[derive(Parser)]
#[command(
    name = "spoofkit",
    about = "Hybrid spoofed-speech dataset synthesis, training, and evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural toy corpus with audio and manifest
    Synth {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Number of synthetic speakers
        #[arg(long, default_value_t = 12)]
        speakers: usize,
        /// Script slots per speaker (104 = full corpus layout)
        #[arg(long, default_value_t = 8)]
        slots: usize,
        /// Utterance duration in seconds
        #[arg(long, default_value_t = 1.0)]
        seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a manifest from a directory of WAV files with .meta sidecars
    Ingest {
        /// Directory of .wav files
        dir: PathBuf,
        /// Output manifest path
        #[arg(long)]
        out: PathBuf,
    },
    /// Splice hybrid utterances out of manifest sources
    Compose {
        #[arg(long)]
        manifest: PathBuf,
        /// Segment arrangement: h2s, s2h, or inter
        #[arg(long)]
        pattern: String,
        /// Source kinds: gh (generated+human), cg (cloned+generated), hh (human only)
        #[arg(long, default_value = "gh")]
        mix: String,
        /// Cross-fade duration in milliseconds
        #[arg(long, default_value_t = 10.0)]
        fade_ms: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of hybrids to compose
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Output directory (audio/ plus corpus.manifest)
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply noise / filtering / codec degradations to every utterance
    Degrade {
        #[arg(long)]
        manifest: PathBuf,
        /// Target SNR in dB for additive noise
        #[arg(long, default_value_t = 20.0)]
        snr: f64,
        /// Noise source: white, ext, or none
        #[arg(long, default_value = "white")]
        noise: String,
        /// Directory of noise WAV files for --noise ext
        #[arg(long)]
        noise_dir: Option<PathBuf>,
        /// Low-pass cutoff in Hz (omit to skip filtering)
        #[arg(long)]
        lowpass: Option<f64>,
        /// Codec stage: none, sim16, sim24, or ext
        #[arg(long, default_value = "none")]
        codec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (audio/ plus corpus.manifest)
        #[arg(long)]
        out: PathBuf,
    },
    /// Precompute the spectrogram cache for a manifest
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        /// Cache directory for .spec files
        #[arg(long)]
        cache: PathBuf,
        /// Pipeline config file (key=value lines)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Fixed utterance duration in seconds
        #[arg(long)]
        seconds: Option<f64>,
    },
    /// Fine-tune the classifier on a manifest (speaker-disjoint split)
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Pipeline config file (key=value lines)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint output path
        #[arg(long)]
        out: PathBuf,
        /// Spectrogram cache directory
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Fixed utterance duration in seconds
        #[arg(long)]
        seconds: Option<f64>,
    },
    /// Score a manifest with a checkpoint and write report files
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Report path prefix (writes .txt and .tsv)
        #[arg(long)]
        report: PathBuf,
        /// Pipeline config file (key=value lines)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Spectrogram cache directory
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Fixed utterance duration in seconds
        #[arg(long)]
        seconds: Option<f64>,
    },
    /// Check a manifest against the corpus invariants
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Reliability-score statistics from a scores file
    Stats {
        /// Lines of `score` or `GROUP score`
        #[arg(long)]
        scores: PathBuf,
        /// Break statistics out per group
        #[arg(long)]
        groups: bool,
    },
}

fn load_config(
    path: Option<&PathBuf>,
    seed: Option<u64>,
    jobs: Option<usize>,
    epochs: Option<usize>,
    seconds: Option<f64>,
) -> anyhow::Result<PipelineConfig> {
    let mut config = match path {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    config.override_with(seed, jobs, epochs);
    if let Some(seconds) = seconds {
        config.seconds = seconds;
    }
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Synth {
            out,
            speakers,
            slots,
            seconds,
            seed,
        } => pipeline::cmd_synth(&out, speakers, slots, seconds, seed).map(|_| true),
        Command::Ingest { dir, out } => pipeline::cmd_ingest(&dir, &out).map(|_| true),
        Command::Compose {
            manifest,
            pattern,
            mix,
            fade_ms,
            seed,
            count,
            out,
        } => {
            let mut config = PipelineConfig::default();
            config.override_with(Some(seed), None, None);
            config.fade_ms = fade_ms;
            let mix = pipeline::MixKinds::parse(&mix)?;
            pipeline::cmd_compose(&manifest, &pattern, mix, fade_ms, seed, count, &out, &config)
                .map(|_| true)
        }
        Command::Degrade {
            manifest,
            snr,
            noise,
            noise_dir,
            lowpass,
            codec,
            seed,
            out,
        } => {
            let mut config = PipelineConfig::default();
            config.override_with(Some(seed), None, None);
            pipeline::cmd_degrade(
                &manifest,
                snr,
                &noise,
                noise_dir.as_deref(),
                lowpass,
                &codec,
                seed,
                &out,
                &config,
            )
            .map(|_| true)
        }
        Command::Featurize {
            manifest,
            cache,
            config,
            jobs,
            seconds,
        } => {
            let config = load_config(config.as_ref(), None, jobs, None, seconds)?;
            pipeline::cmd_featurize(&manifest, &cache, &config).map(|_| true)
        }
        Command::Train {
            manifest,
            config,
            out,
            cache,
            seed,
            epochs,
            jobs,
            seconds,
        } => {
            let config = load_config(config.as_ref(), seed, jobs, epochs, seconds)?;
            pipeline::cmd_train(&manifest, &out, cache.as_deref(), &config).map(|_| true)
        }
        Command::Evaluate {
            manifest,
            ckpt,
            report,
            config,
            cache,
            jobs,
            seconds,
        } => {
            let config = load_config(config.as_ref(), None, jobs, None, seconds)?;
            pipeline::cmd_evaluate(&manifest, &ckpt, &report, cache.as_deref(), &config)
                .map(|_| true)
        }
        Command::Validate { manifest } => pipeline::cmd_validate(&manifest),
        Command::Stats { scores, groups } => pipeline::cmd_stats(&scores, groups).map(|_| true),
    }
}

fn main() -> ExitCode {
    // exit quietly instead of panicking when stdout closes early (| head)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
