//! Real-world degradations for the noisy dataset variant: additive noise at
//! a target SNR, channel simulation by low-pass filtering, and codec
//! compression (external command pass-through or a built-in companding
//! simulator).

use std::path::Path;
use std::process::Command;

use thiserror::Error;

use crate::audio::{self, AudioClip};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum DegradeError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("external codec command failed with status {status}: {command}")]
    Codec { command: String, status: String },

    #[error(transparent)]
    Audio(#[from] audio::AudioError),
}

pub type Result<T> = std::result::Result<T, DegradeError>;

/// Noise source for SNR mixing.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    None,
    /// Seeded Gaussian noise, built in.
    White,
    /// User-supplied noise clip, referenced by file id in the manifest.
    External(String),
}

/// Codec stage of a degradation.
#[derive(Debug, Clone, PartialEq)]
pub enum Codec {
    None,
    /// Round-trip through an external encoder/decoder command template with
    /// `{in}` / `{out}` placeholders.
    Passthrough(String),
    /// Built-in band-limit + mu-law quantization approximation.
    Simulated { bitrate_kbps: u32 },
}

/// Full description of one degradation pass; recorded verbatim into the
/// output manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationSpec {
    pub noise: NoiseKind,
    pub snr_db: f64,
    pub lowpass_hz: Option<f64>,
    pub codec: Codec,
}

impl DegradationSpec {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !self.snr_db.is_finite() {
            return Err(DegradeError::Argument("snr_db must be finite".into()));
        }
        if let Some(hz) = self.lowpass_hz {
            if !(hz > 0.0 && hz < sample_rate as f64 / 2.0) {
                return Err(DegradeError::Argument(format!(
                    "lowpass cutoff {hz} Hz outside (0, {})",
                    sample_rate as f64 / 2.0
                )));
            }
        }
        if let Codec::Simulated { bitrate_kbps } = self.codec {
            if bitrate_kbps == 0 {
                return Err(DegradeError::Argument("bitrate must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Seeded standard-normal noise clip.
pub fn white_noise(len: usize, sample_rate: u32, seed: u64) -> AudioClip {
    let mut rng = Rng::new(seed);
    AudioClip::new((0..len).map(|_| rng.next_gaussian()).collect(), sample_rate)
}

/// Adds `noise` to `signal` scaled so the two addends sit at exactly
/// `snr_db`. Noise shorter than the signal is tiled; longer noise is
/// truncated. The mix is returned unclipped — peak limiting is a separate,
/// flagged step.
pub fn mix_at_snr(signal: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<AudioClip> {
    if signal.sample_rate != noise.sample_rate {
        return Err(DegradeError::Argument(format!(
            "rate mismatch: {} vs {}",
            signal.sample_rate, noise.sample_rate
        )));
    }
    if noise.is_empty() {
        return Err(DegradeError::Argument("empty noise clip".into()));
    }
    let fitted: Vec<f64> = (0..signal.len())
        .map(|i| noise.samples[i % noise.len()])
        .collect();
    let p_signal = audio::power(signal)?;
    let p_noise = {
        let sum: f64 = fitted.iter().map(|s| s * s).sum();
        sum / fitted.len() as f64
    };
    if p_signal == 0.0 || p_noise == 0.0 {
        return Err(DegradeError::Argument(
            "zero-power input to SNR mixing".into(),
        ));
    }
    let alpha = (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = signal
        .samples
        .iter()
        .zip(&fitted)
        .map(|(s, n)| s + alpha * n)
        .collect();
    Ok(AudioClip::new(samples, signal.sample_rate))
}

/// Hard clip to [-1, 1]; reports whether any sample was touched.
pub fn hard_clip(clip: &AudioClip) -> (AudioClip, bool) {
    let mut clipped = false;
    let samples = clip
        .samples
        .iter()
        .map(|&s| {
            if s.abs() > 1.0 {
                clipped = true;
                s.clamp(-1.0, 1.0)
            } else {
                s
            }
        })
        .collect();
    (AudioClip::new(samples, clip.sample_rate), clipped)
}

const LOWPASS_TAPS: usize = 255;

fn hamming(n: usize, len: usize) -> f64 {
    0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos()
}

/// Linear-phase FIR low-pass (255-tap windowed sinc, Hamming window),
/// applied zero-phase by compensating the group delay. Signal edges are
/// extended by holding the boundary sample, so length and DC level are
/// preserved.
pub fn lowpass(clip: &AudioClip, cutoff_hz: f64) -> Result<AudioClip> {
    let nyquist = clip.sample_rate as f64 / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(DegradeError::Argument(format!(
            "cutoff {cutoff_hz} Hz outside (0, {nyquist})"
        )));
    }
    let fc = cutoff_hz / clip.sample_rate as f64;
    let mid = (LOWPASS_TAPS - 1) / 2; // 127
    let mut taps: Vec<f64> = (0..LOWPASS_TAPS)
        .map(|n| {
            let x = n as f64 - mid as f64;
            let s = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * x).sin() / (std::f64::consts::PI * x)
            };
            s * hamming(n, LOWPASS_TAPS)
        })
        .collect();
    // unity DC gain
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }

    let n = clip.len() as i64;
    let get = |i: i64| clip.samples[i.clamp(0, n - 1) as usize];
    let out = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * get(i + mid as i64 - k as i64);
            }
            acc
        })
        .collect();
    Ok(AudioClip::new(out, clip.sample_rate))
}

const MU: f64 = 255.0;

/// Effective quantizer bits for a simulated bitrate: `round(kbps * 1000 /
/// 16000)` clamped to [1, 8]. A labeled approximation, not an Opus model.
pub fn effective_bits(bitrate_kbps: u32) -> u32 {
    let b = (bitrate_kbps as f64 * 1000.0 / 16_000.0).round() as u32;
    b.clamp(1, 8)
}

fn mu_law_round_trip(x: f64, bits: u32) -> f64 {
    let compressed = x.signum() * (1.0 + MU * x.abs()).ln() / (1.0 + MU).ln();
    // mid-tread quantizer: zero is always a level
    let scale = (1u32 << (bits - 1)) as f64;
    let quantized = (compressed * scale).round().clamp(-scale, scale) / scale;
    quantized.signum() * ((1.0 + MU).powf(quantized.abs()) - 1.0) / MU
}

/// Applies the codec stage. `Simulated` band-limits to 0.9x Nyquist and
/// runs a mu-law companding quantizer at [`effective_bits`]; `Passthrough`
/// round-trips a 16-bit WAV through the external command. Length and rate
/// are preserved either way.
pub fn codec_degrade(clip: &AudioClip, codec: &Codec, work_dir: &Path) -> Result<AudioClip> {
    if clip.sample_rate != audio::TARGET_RATE {
        return Err(DegradeError::Argument(format!(
            "codec stage expects {} Hz, got {}",
            audio::TARGET_RATE,
            clip.sample_rate
        )));
    }
    match codec {
        Codec::None => Ok(clip.clone()),
        Codec::Simulated { bitrate_kbps } => {
            if *bitrate_kbps == 0 {
                return Err(DegradeError::Argument("bitrate must be positive".into()));
            }
            let bits = effective_bits(*bitrate_kbps);
            let limited = lowpass(clip, 0.9 * clip.sample_rate as f64 / 2.0)?;
            let samples = limited
                .samples
                .iter()
                .map(|&s| mu_law_round_trip(s.clamp(-1.0, 1.0), bits))
                .collect();
            Ok(AudioClip::new(samples, clip.sample_rate))
        }
        Codec::Passthrough(template) => {
            let in_path = work_dir.join("codec_in.wav");
            let out_path = work_dir.join("codec_out.wav");
            audio::save_wav(clip, &in_path)?;
            let command = template
                .replace("{in}", &in_path.display().to_string())
                .replace("{out}", &out_path.display().to_string());
            let status = Command::new("sh")
                .arg("-c")
                .arg(&command)
                .status()
                .map_err(|e| DegradeError::Codec {
                    command: command.clone(),
                    status: e.to_string(),
                })?;
            if !status.success() {
                return Err(DegradeError::Codec {
                    command,
                    status: status.to_string(),
                });
            }
            let mut decoded = audio::load_wav(&out_path)?;
            decoded = audio::resample(&decoded, clip.sample_rate)?;
            decoded.samples.resize(clip.len(), 0.0);
            Ok(decoded)
        }
    }
}

/// Outcome of a full degradation pass.
#[derive(Debug, Clone)]
pub struct DegradeOutcome {
    pub clip: AudioClip,
    /// True when the post-mix peak limiter touched any sample.
    pub clipped: bool,
}

/// Runs the full chain — noise mixing, low-pass, codec, peak limit — on one
/// clip. Deterministic given `(spec, seed)`.
pub fn apply(
    clip: &AudioClip,
    spec: &DegradationSpec,
    seed: u64,
    noise_clip: Option<&AudioClip>,
    work_dir: &Path,
) -> Result<DegradeOutcome> {
    spec.validate(clip.sample_rate)?;
    let mut current = clip.clone();
    match &spec.noise {
        NoiseKind::None => {}
        NoiseKind::White => {
            let noise = white_noise(current.len(), current.sample_rate, seed);
            current = mix_at_snr(&current, &noise, spec.snr_db)?;
        }
        NoiseKind::External(id) => {
            let noise = noise_clip.ok_or_else(|| {
                DegradeError::Argument(format!("external noise '{id}' not supplied"))
            })?;
            current = mix_at_snr(&current, noise, spec.snr_db)?;
        }
    }
    if let Some(hz) = spec.lowpass_hz {
        current = lowpass(&current, hz)?;
    }
    current = codec_degrade(&current, &spec.codec, work_dir)?;
    let (limited, clipped) = hard_clip(&current);
    Ok(DegradeOutcome {
        clip: limited,
        clipped,
    })
}
