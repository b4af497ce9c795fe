//! Canonical PCM representation and waveform utilities.
//!
//! Everything downstream works on [`AudioClip`]: mono, f64 samples in a
//! nominal [-1, 1] range, 16 kHz after normalization. WAV files are read as
//! 16-bit integer or 32-bit float PCM and always written back as 16-bit
//! mono little-endian.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

/// Canonical sample rate for the whole pipeline.
pub const TARGET_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV file {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("unsupported WAV encoding in {path}: {detail}")]
    UnsupportedCodec { path: String, detail: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AudioError>;

/// Mono PCM audio: a sample sequence plus its rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample_rate must be positive");
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Mean squared amplitude.
pub fn power(clip: &AudioClip) -> Result<f64> {
    if clip.is_empty() {
        return Err(AudioError::Argument("power of an empty clip".into()));
    }
    let sum: f64 = clip.samples.iter().map(|s| s * s).sum();
    Ok(sum / clip.len() as f64)
}

/// Pads with trailing zeros or truncates the tail so the clip is exactly
/// `target_seconds` long. Requires the canonical 16 kHz rate.
pub fn fit_duration(clip: &AudioClip, target_seconds: f64) -> Result<AudioClip> {
    if target_seconds.is_nan() || target_seconds <= 0.0 {
        return Err(AudioError::Argument(format!(
            "target duration must be positive, got {target_seconds}"
        )));
    }
    if clip.sample_rate != TARGET_RATE {
        return Err(AudioError::Argument(format!(
            "fit_duration expects a {TARGET_RATE} Hz clip, got {} Hz",
            clip.sample_rate
        )));
    }
    let target_len = (target_seconds * TARGET_RATE as f64).round() as usize;
    let mut samples = clip.samples.clone();
    samples.resize(target_len, 0.0);
    Ok(AudioClip::new(samples, TARGET_RATE))
}

// ---------------------------------------------------------------------------
// Resampling: windowed-sinc interpolation with a Kaiser window. The kernel
// spans 32 zero-crossings per side at the cutoff rate, which is 64 taps per
// output sample in the upsampling case and proportionally more when
// downsampling (the cutoff drops to the target Nyquist, so the sinc widens).
// ---------------------------------------------------------------------------

const KAISER_BETA: f64 = 9.0;
const SINC_HALF_ZEROS: f64 = 32.0;
const WINDOW_TABLE_LEN: usize = 4096;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let mut k = 1.0;
    loop {
        let f = x / (2.0 * k);
        term *= f * f;
        sum += term;
        if term < sum * 1e-16 {
            return sum;
        }
        k += 1.0;
    }
}

/// Kaiser window sampled on [0, 1], looked up by linear interpolation.
struct WindowTable {
    values: Vec<f64>,
}

impl WindowTable {
    fn build() -> Self {
        let denom = bessel_i0(KAISER_BETA);
        let values = (0..=WINDOW_TABLE_LEN)
            .map(|i| {
                let x = i as f64 / WINDOW_TABLE_LEN as f64;
                bessel_i0(KAISER_BETA * (1.0 - x * x).max(0.0).sqrt()) / denom
            })
            .collect();
        Self { values }
    }

    fn eval(&self, x: f64) -> f64 {
        let x = x.abs();
        if x >= 1.0 {
            return 0.0;
        }
        let pos = x * WINDOW_TABLE_LEN as f64;
        let i = pos as usize;
        let frac = pos - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Band-limited resampling to `target_rate`. Equal rates return the input
/// unchanged; output length is `round(len * target / source)`.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(AudioError::Argument("target rate must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let src = clip.sample_rate as u128;
    let tgt = target_rate as u128;
    let out_len = ((clip.len() as u128 * tgt * 2 + src) / (2 * src)) as usize;

    // Cutoff relative to the source rate: unity when upsampling, the rate
    // ratio when downsampling (anti-aliasing at the target Nyquist).
    let cutoff = (target_rate as f64 / clip.sample_rate as f64).min(1.0);
    let half_width = (SINC_HALF_ZEROS / cutoff).ceil();
    let window = WindowTable::build();
    let step = clip.sample_rate as f64 / target_rate as f64;

    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let center = n as f64 * step;
        let lo = ((center - half_width).ceil() as i64).max(0);
        let hi = ((center + half_width).floor() as i64).min(clip.len() as i64 - 1);
        let mut acc = 0.0;
        for j in lo..=hi {
            let x = center - j as f64;
            let w = cutoff * sinc(cutoff * x) * window.eval(x / half_width);
            acc += clip.samples[j as usize] * w;
        }
        out.push(acc);
    }
    Ok(AudioClip::new(out, target_rate))
}

// ---------------------------------------------------------------------------
// WAV I/O
// ---------------------------------------------------------------------------

fn fmt_err(path: &Path, detail: impl Into<String>) -> AudioError {
    AudioError::Format {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

fn read_u16(b: &[u8], off: usize) -> Option<u16> {
    Some(u16::from_le_bytes(b.get(off..off + 2)?.try_into().ok()?))
}

fn read_u32(b: &[u8], off: usize) -> Option<u32> {
    Some(u32::from_le_bytes(b.get(off..off + 4)?.try_into().ok()?))
}

/// Loads a RIFF/WAVE file holding 16-bit integer or 32-bit float PCM with
/// one or two channels. Stereo is averaged to mono; integer samples are
/// scaled by 1/32768. The header's sample rate is preserved.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })?;

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(fmt_err(path, "missing RIFF/WAVE header"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut off = 12;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = read_u32(&bytes, off + 4).ok_or_else(|| fmt_err(path, "truncated chunk"))? as usize;
        let body_start = off + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            return Err(fmt_err(path, format!("chunk {:?} overruns file", String::from_utf8_lossy(id))));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(fmt_err(path, "fmt chunk too short"));
                }
                let format = read_u16(&bytes, body_start).unwrap();
                let channels = read_u16(&bytes, body_start + 2).unwrap();
                let rate = read_u32(&bytes, body_start + 4).unwrap();
                let bits = read_u16(&bytes, body_start + 14).unwrap();
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(&bytes[body_start..body_end]),
            _ => {}
        }
        // chunks are word-aligned
        off = body_end + (size & 1);
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| fmt_err(path, "no fmt chunk"))?;
    let data = data.ok_or_else(|| fmt_err(path, "no data chunk"))?;
    if rate == 0 {
        return Err(fmt_err(path, "zero sample rate"));
    }
    if channels != 1 && channels != 2 {
        return Err(AudioError::UnsupportedCodec {
            path: path.display().to_string(),
            detail: format!("{channels} channels (only mono/stereo supported)"),
        });
    }

    let ch = channels as usize;
    let samples = match (format, bits) {
        (1, 16) => {
            let frame_bytes = 2 * ch;
            let frames = data.len() / frame_bytes;
            (0..frames)
                .map(|f| {
                    let mut acc = 0.0;
                    for c in 0..ch {
                        let o = f * frame_bytes + c * 2;
                        let v = i16::from_le_bytes([data[o], data[o + 1]]);
                        acc += v as f64 / 32768.0;
                    }
                    acc / ch as f64
                })
                .collect()
        }
        (3, 32) => {
            let frame_bytes = 4 * ch;
            let frames = data.len() / frame_bytes;
            (0..frames)
                .map(|f| {
                    let mut acc = 0.0;
                    for c in 0..ch {
                        let o = f * frame_bytes + c * 4;
                        let v = f32::from_le_bytes([data[o], data[o + 1], data[o + 2], data[o + 3]]);
                        acc += v as f64;
                    }
                    acc / ch as f64
                })
                .collect()
        }
        _ => {
            return Err(AudioError::UnsupportedCodec {
                path: path.display().to_string(),
                detail: format!("format tag {format} with {bits} bits per sample"),
            })
        }
    };

    Ok(AudioClip::new(samples, rate))
}

/// Writes 16-bit PCM, mono, little-endian at the clip's rate. Samples are
/// rounded to the nearest level and clamped to the 16-bit range.
pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let data_len = clip.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }

    let mut file = fs::File::create(path).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(&out).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })
}
