//! Log-Mel spectrogram frontend: 25 ms Hamming frames at a 10 ms hop,
//! 512-point FFT, 128 triangular HTK-mel filters over 0-8000 Hz, natural
//! log with a 1e-10 floor, and per-utterance normalization to mean 0 /
//! std 0.5.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::audio::{AudioClip, TARGET_RATE};

pub const MEL_BINS: usize = 128;
pub const FRAME_MS: f64 = 25.0;
pub const HOP_MS: f64 = 10.0;
pub const FRAME_LEN: usize = 400; // 25 ms at 16 kHz
pub const HOP_LEN: usize = 160; // 10 ms at 16 kHz
pub const FFT_LEN: usize = 512;
pub const LOG_FLOOR: f64 = 1e-10;
const MEL_FMAX: f64 = 8000.0;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("malformed spectrogram cache {path}: {detail}")]
    Cache { path: String, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// F x T log-Mel feature matrix, row-major with one row per mel bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: Vec<f64>,
    mel_bins: usize,
    frames: usize,
    pub normalized: bool,
}

impl Spectrogram {
    pub fn new(values: Vec<f64>, mel_bins: usize, frames: usize, normalized: bool) -> Self {
        assert_eq!(values.len(), mel_bins * frames);
        Self {
            values,
            mel_bins,
            frames,
            normalized,
        }
    }

    pub fn mel_bins(&self) -> usize {
        self.mel_bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.frames + frame]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

fn hamming(n: usize, len: usize) -> f64 {
    0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos()
}

/// Slices a 16 kHz clip into Hamming-windowed 400-sample frames with a
/// 160-sample hop. Frame count is `floor((N - 400) / 160) + 1`.
pub fn frame_signal(clip: &AudioClip) -> Result<Vec<Vec<f64>>> {
    if clip.sample_rate != TARGET_RATE {
        return Err(FeatureError::Argument(format!(
            "expected {TARGET_RATE} Hz, got {}",
            clip.sample_rate
        )));
    }
    if clip.len() < FRAME_LEN {
        return Err(FeatureError::Argument(format!(
            "clip of {} samples is shorter than one {FRAME_LEN}-sample frame",
            clip.len()
        )));
    }
    let count = (clip.len() - FRAME_LEN) / HOP_LEN + 1;
    let frames = (0..count)
        .map(|f| {
            let start = f * HOP_LEN;
            (0..FRAME_LEN)
                .map(|n| clip.samples[start + n] * hamming(n, FRAME_LEN))
                .collect()
        })
        .collect();
    Ok(frames)
}

/// In-place iterative radix-2 FFT over (re, im) pairs. Length must be a
/// power of two.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    assert!(n.is_power_of_two() && n == im.len());

    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let mut len = 2;
    while len <= n {
        let angle = -2.0 * std::f64::consts::PI / len as f64;
        let (w_re, w_im) = (angle.cos(), angle.sin());
        for start in (0..n).step_by(len) {
            let (mut cur_re, mut cur_im) = (1.0, 0.0);
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let t_re = re[b] * cur_re - im[b] * cur_im;
                let t_im = re[b] * cur_im + im[b] * cur_re;
                re[b] = re[a] - t_re;
                im[b] = im[a] - t_im;
                re[a] += t_re;
                im[a] += t_im;
                let next_re = cur_re * w_re - cur_im * w_im;
                cur_im = cur_re * w_im + cur_im * w_re;
                cur_re = next_re;
            }
        }
        len *= 2;
    }
}

/// One-sided power spectrum of a frame, zero-padded to the FFT length.
fn power_spectrum(frame: &[f64]) -> Vec<f64> {
    let mut re = vec![0.0; FFT_LEN];
    let mut im = vec![0.0; FFT_LEN];
    re[..frame.len()].copy_from_slice(frame);
    fft_in_place(&mut re, &mut im);
    (0..=FFT_LEN / 2)
        .map(|k| re[k] * re[k] + im[k] * im[k])
        .collect()
}

/// Mean of the triangle `(lo, mid, hi)` over the band `[a, b]`.
fn triangle_band_mean(lo: f64, mid: f64, hi: f64, a: f64, b: f64) -> f64 {
    // rising piece on [lo, mid]
    let (ra, rb) = (a.max(lo), b.min(mid));
    let rising = if rb > ra {
        ((rb - lo) * (rb - lo) - (ra - lo) * (ra - lo)) / (2.0 * (mid - lo))
    } else {
        0.0
    };
    // falling piece on [mid, hi]
    let (fa, fb) = (a.max(mid), b.min(hi));
    let falling = if fb > fa {
        ((hi - fa) * (hi - fa) - (hi - fb) * (hi - fb)) / (2.0 * (hi - mid))
    } else {
        0.0
    };
    (rising + falling) / (b - a)
}

/// Triangular mel filterbank: `MEL_BINS` rows over the one-sided spectrum
/// bins, HTK scale, spanning 0-8000 Hz. Each weight is the triangle's mean
/// over the FFT bin's width, so filters narrower than one bin (the lowest
/// mel bands at this resolution) still land on the grid and adjacent
/// filters always overlap.
pub fn mel_filterbank() -> Vec<Vec<f64>> {
    let n_points = MEL_BINS + 2;
    let mel_max = hz_to_mel(MEL_FMAX);
    let hz_points: Vec<f64> = (0..n_points)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_points - 1) as f64))
        .collect();
    let bin_hz = TARGET_RATE as f64 / FFT_LEN as f64;

    (0..MEL_BINS)
        .map(|m| {
            let (lo, mid, hi) = (hz_points[m], hz_points[m + 1], hz_points[m + 2]);
            (0..=FFT_LEN / 2)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let (a, b) = (f - bin_hz / 2.0, f + bin_hz / 2.0);
                    if b <= lo || a >= hi {
                        0.0
                    } else {
                        triangle_band_mean(lo, mid, hi, a, b)
                    }
                })
                .collect()
        })
        .collect()
}

/// Unnormalized 128 x T log-Mel spectrogram from windowed frames.
pub fn log_mel(frames: &[Vec<f64>]) -> Spectrogram {
    let filterbank = mel_filterbank();
    let t = frames.len();
    let mut values = vec![0.0; MEL_BINS * t];
    for (fi, frame) in frames.iter().enumerate() {
        let spectrum = power_spectrum(frame);
        for (m, filter) in filterbank.iter().enumerate() {
            let energy: f64 = filter
                .iter()
                .zip(&spectrum)
                .map(|(w, p)| w * p)
                .sum();
            values[m * t + fi] = energy.max(LOG_FLOOR).ln();
        }
    }
    Spectrogram::new(values, MEL_BINS, t, false)
}

/// Rescales to global mean 0 and population standard deviation 0.5 using the
/// spectrogram's own statistics: `y = (x - mean) / (2 * std)`. A constant
/// input maps to all zeros.
pub fn normalize(spec: &Spectrogram) -> Spectrogram {
    // a constant input has zero deviation; detect it exactly rather than
    // through the rounded variance
    let constant = spec.values.windows(2).all(|w| w[0] == w[1]);
    let values = if constant {
        vec![0.0; spec.values.len()]
    } else {
        let n = spec.values.len() as f64;
        let mean = spec.values.iter().sum::<f64>() / n;
        let var = spec.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        spec.values.iter().map(|v| (v - mean) / (2.0 * std)).collect()
    };
    Spectrogram::new(values, spec.mel_bins, spec.frames, true)
}

/// Full frontend for one clip: frame, log-mel, normalize.
pub fn featurize(clip: &AudioClip) -> Result<Spectrogram> {
    let frames = frame_signal(clip)?;
    Ok(normalize(&log_mel(&frames)))
}

// ---------------------------------------------------------------------------
// Cache file: magic, F, T, flags (bit 0 = normalized), then row-major f32
// little-endian payload.
// ---------------------------------------------------------------------------

const CACHE_MAGIC: &[u8; 4] = b"SPEC";

pub fn save_spectrogram(spec: &Spectrogram, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(16 + spec.values.len() * 4);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(spec.mel_bins as u32).to_le_bytes());
    out.extend_from_slice(&(spec.frames as u32).to_le_bytes());
    out.extend_from_slice(&(spec.normalized as u32).to_le_bytes());
    for &v in &spec.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(&out).map_err(|source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_spectrogram(path: impl AsRef<Path>) -> Result<Spectrogram> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cache_err = |detail: &str| FeatureError::Cache {
        path: path.display().to_string(),
        detail: detail.into(),
    };
    if bytes.len() < 16 || &bytes[0..4] != CACHE_MAGIC {
        return Err(cache_err("missing magic"));
    }
    let f = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let flags = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let expected = 16 + f * t * 4;
    if bytes.len() != expected {
        return Err(cache_err("payload size mismatch"));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Spectrogram::new(values, f, t, flags & 1 != 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use approx::assert_relative_eq;

    fn clip_of(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, TARGET_RATE)
    }

    /// Direct O(n^2) DFT, the independent oracle for the FFT.
    fn dft(samples: &[f64]) -> Vec<(f64, f64)> {
        let n = samples.len();
        (0..n)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (j, &s) in samples.iter().enumerate() {
                    let arg = -2.0 * std::f64::consts::PI * k as f64 * j as f64 / n as f64;
                    re += s * arg.cos();
                    im += s * arg.sin();
                }
                (re, im)
            })
            .collect()
    }

    #[test]
    fn frame_counts() {
        assert_eq!(frame_signal(&clip_of(vec![0.0; 96_000])).unwrap().len(), 598);
        assert_eq!(frame_signal(&clip_of(vec![0.0; 400])).unwrap().len(), 1);
        assert_eq!(frame_signal(&clip_of(vec![0.0; 160_000])).unwrap().len(), 998);
        assert!(frame_signal(&clip_of(vec![0.0; 399])).is_err());
    }

    #[test]
    fn frames_are_windowed() {
        let clip = clip_of(vec![1.0; 800]);
        let frames = frame_signal(&clip).unwrap();
        assert_relative_eq!(frames[0][0], 0.08, epsilon = 1e-12); // 0.54 - 0.46
        assert_relative_eq!(frames[0][200], hamming(200, 400), epsilon = 1e-12);
    }

    #[test]
    fn fft_matches_direct_dft() {
        let mut rng = Rng::new(21);
        for _ in 0..50 {
            let frame: Vec<f64> = (0..FFT_LEN).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            let mut re = frame.clone();
            let mut im = vec![0.0; FFT_LEN];
            fft_in_place(&mut re, &mut im);
            let reference = dft(&frame);
            let scale: f64 = reference
                .iter()
                .map(|(r, i)| (r * r + i * i).sqrt())
                .fold(0.0, f64::max);
            for k in 0..FFT_LEN {
                assert!(
                    (re[k] - reference[k].0).abs() <= 1e-9 * scale,
                    "re bin {k}"
                );
                assert!(
                    (im[k] - reference[k].1).abs() <= 1e-9 * scale,
                    "im bin {k}"
                );
            }
        }
    }

    #[test]
    fn silent_clip_hits_log_floor() {
        let frames = frame_signal(&clip_of(vec![0.0; 800])).unwrap();
        let spec = log_mel(&frames);
        let expected = LOG_FLOOR.ln();
        assert!(spec.values().iter().all(|&v| v == expected));
    }

    #[test]
    fn mel_scale_anchor() {
        assert_relative_eq!(hz_to_mel(700.0), 2595.0 * 2f64.log10(), epsilon = 1e-9);
        assert_relative_eq!(hz_to_mel(700.0), 781.17, epsilon = 0.01);
        assert_relative_eq!(mel_to_hz(hz_to_mel(3456.0)), 3456.0, epsilon = 1e-6);
    }

    #[test]
    fn filterbank_shape() {
        let fb = mel_filterbank();
        assert_eq!(fb.len(), MEL_BINS);
        for (m, filter) in fb.iter().enumerate() {
            assert_eq!(filter.len(), FFT_LEN / 2 + 1);
            assert!(filter.iter().all(|&w| w >= 0.0));
            // unimodal: rises then falls
            let peak = filter
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert!(filter[..peak].windows(2).all(|w| w[0] <= w[1]), "filter {m}");
            assert!(filter[peak..].windows(2).all(|w| w[0] >= w[1]), "filter {m}");
        }
        // adjacent filters overlap
        for m in 0..MEL_BINS - 1 {
            let overlap: f64 = fb[m].iter().zip(&fb[m + 1]).map(|(a, b)| a * b).sum();
            assert!(overlap > 0.0, "filters {m} and {} disjoint", m + 1);
        }
    }

    #[test]
    fn normalize_statistics() {
        let mut rng = Rng::new(33);
        let clip = clip_of((0..9600).map(|_| rng.next_f64() * 2.0 - 1.0).collect());
        let spec = log_mel(&frame_signal(&clip).unwrap());
        let normed = normalize(&spec);
        let n = normed.values().len() as f64;
        let mean = normed.values().iter().sum::<f64>() / n;
        let var = normed.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((var.sqrt() - 0.5).abs() < 1e-6, "std {}", var.sqrt());
    }

    #[test]
    fn normalize_formula_and_degenerate_case() {
        // cells mu=3, sigma=2: x=5 -> 0.5
        let spec = Spectrogram::new(vec![5.0, 1.0, 5.0, 1.0], 2, 2, false);
        let normed = normalize(&spec);
        assert_relative_eq!(normed.at(0, 0), 0.5, epsilon = 1e-12);

        let constant = Spectrogram::new(vec![3.3; 8], 2, 4, false);
        assert!(normalize(&constant).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaling_raises_unfloored_values() {
        let mut rng = Rng::new(55);
        let samples: Vec<f64> = (0..1600).map(|_| (rng.next_f64() - 0.5) * 0.4).collect();
        let base = log_mel(&frame_signal(&clip_of(samples.clone())).unwrap());
        let louder = log_mel(
            &frame_signal(&clip_of(samples.iter().map(|s| s * 2.0).collect())).unwrap(),
        );
        let floor = LOG_FLOOR.ln();
        for (a, b) in base.values().iter().zip(louder.values()) {
            if *a > floor {
                assert!(b > a);
            }
        }
    }

    #[test]
    fn featurize_is_deterministic() {
        let mut rng = Rng::new(77);
        let clip = clip_of((0..16_000).map(|_| rng.next_f64() - 0.5).collect());
        let a = featurize(&clip).unwrap();
        let b = featurize(&clip).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.mel_bins(), MEL_BINS);
    }

    #[test]
    fn cache_round_trip() {
        let mut rng = Rng::new(88);
        let clip = clip_of((0..8000).map(|_| rng.next_f64() - 0.5).collect());
        let spec = featurize(&clip).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_spectrogram(&spec, f.path()).unwrap();
        let back = load_spectrogram(f.path()).unwrap();
        assert_eq!((back.mel_bins(), back.frames()), (spec.mel_bins(), spec.frames()));
        assert!(back.normalized);
        for (a, b) in spec.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= (*a as f32).abs() as f64 * 1e-6 + 1e-7);
        }

        let garbage = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(garbage.path(), b"XXXX").unwrap();
        assert!(load_spectrogram(garbage.path()).is_err());
    }
}
