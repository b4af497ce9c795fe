//! Browser bindings for the interactive demo page: compose hybrid
//! utterances, degrade them, and inspect log-Mel spectrograms, all running
//! in WebAssembly on procedurally synthesized voices. The page under
//! `www/` renders the returned buffers on canvases; no framework involved.

use wasm_bindgen::prelude::*;

use spoofkit::audio::{self, TARGET_RATE};
use spoofkit::compose::{self, Pattern, SegmentSpec, SourceKind};
use spoofkit::degrade::{self, Codec, DegradationSpec, NoiseKind};
use spoofkit::features;
use spoofkit::manifest::ClassLabel;
use spoofkit::model::{self, ModelConfig, ModelParams};
use spoofkit::synth;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn to_f32(samples: &[f64]) -> Vec<f32> {
    samples.iter().map(|&s| s as f32).collect()
}

fn kind_code(kind: SourceKind) -> u32 {
    match kind {
        SourceKind::Human => 0,
        SourceKind::Cloned => 1,
        SourceKind::Generated => 2,
    }
}

fn class_for(code: u32) -> Result<ClassLabel, String> {
    ClassLabel::from_index(code as usize).ok_or_else(|| "class code must be 0..=3".to_string())
}

/// A composed hybrid clip plus its segment boundaries.
#[wasm_bindgen]
pub struct ComposedAudio {
    samples: Vec<f32>,
    boundaries: Vec<u32>,
}

#[wasm_bindgen]
impl ComposedAudio {
    #[wasm_bindgen(getter)]
    pub fn samples(&self) -> Box<[f32]> {
        self.samples.clone().into_boxed_slice()
    }

    /// Flat (kind, start, end) triplets; kind 0 = human, 1 = cloned,
    /// 2 = generated. Adjacent segments overlap by the fade length.
    #[wasm_bindgen(getter)]
    pub fn boundaries(&self) -> Box<[u32]> {
        self.boundaries.clone().into_boxed_slice()
    }

    #[wasm_bindgen(getter)]
    pub fn sample_rate(&self) -> u32 {
        TARGET_RATE
    }
}

/// Builds a hybrid utterance from synthesized voices.
///
/// `pattern` is `h2s`, `s2h`, or `inter`; `mix` is `gh` (generated+human),
/// `cg` (cloned+generated), or `hh` (human recombination).
#[wasm_bindgen]
pub fn compose_hybrid(
    pattern: &str,
    mix: &str,
    segment_seconds: f64,
    fade_ms: f64,
    seed: u32,
) -> Result<ComposedAudio, JsValue> {
    compose_hybrid_impl(pattern, mix, segment_seconds, fade_ms, seed)
        .map_err(|e| JsValue::from_str(&e))
}

fn compose_hybrid_impl(
    pattern: &str,
    mix: &str,
    segment_seconds: f64,
    fade_ms: f64,
    seed: u32,
) -> Result<ComposedAudio, String> {
    if !(0.05..=5.0).contains(&segment_seconds) {
        return Err("segment length must be 0.05..=5 s".into());
    }
    let pattern = Pattern::from_token(pattern)
        .ok_or_else(|| "pattern must be h2s, s2h, or inter".to_string())?;
    let (first_kind, first_class, second_kind, second_class) = match mix {
        "gh" => (
            SourceKind::Human,
            ClassLabel::Human,
            SourceKind::Generated,
            ClassLabel::Generated,
        ),
        "cg" => (
            SourceKind::Cloned,
            ClassLabel::Cloned,
            SourceKind::Generated,
            ClassLabel::Generated,
        ),
        "hh" => (
            SourceKind::Human,
            ClassLabel::Human,
            SourceKind::Human,
            ClassLabel::Human,
        ),
        _ => return Err("mix must be gh, cg, or hh".into()),
    };

    let seg = |kind: SourceKind, class: ClassLabel, speaker: usize, salt: u64| SegmentSpec {
        clip: synth::class_texture(class, speaker, segment_seconds, seed as u64 ^ salt),
        kind,
        source_id: String::new(),
    };
    // human recombination draws from two different synthetic speakers
    let second_speaker = if mix == "hh" { 5 } else { 2 };
    let segments = match pattern {
        Pattern::HumanToSynthetic => vec![
            seg(first_kind, first_class, 2, 1),
            seg(second_kind, second_class, second_speaker, 2),
        ],
        Pattern::SyntheticToHuman => vec![
            seg(second_kind, second_class, second_speaker, 1),
            seg(first_kind, first_class, 2, 2),
        ],
        Pattern::Interleaved => vec![
            seg(first_kind, first_class, 2, 1),
            seg(second_kind, second_class, second_speaker, 2),
            seg(first_kind, first_class, 2, 3),
        ],
    };
    let (clip, annotations) = compose::concat_segments(&segments, fade_ms).map_err(err)?;
    let mut boundaries = Vec::with_capacity(annotations.len() * 3);
    for a in &annotations {
        boundaries.push(kind_code(a.kind));
        boundaries.push(a.start_sample as u32);
        boundaries.push(a.end_sample as u32);
    }
    Ok(ComposedAudio {
        samples: to_f32(&clip.samples),
        boundaries,
    })
}

/// A degradation before/after pair.
#[wasm_bindgen]
pub struct DegradedAudio {
    input: Vec<f32>,
    output: Vec<f32>,
    measured_snr_db: f64,
    clipped: bool,
}

#[wasm_bindgen]
impl DegradedAudio {
    #[wasm_bindgen(getter)]
    pub fn input(&self) -> Box<[f32]> {
        self.input.clone().into_boxed_slice()
    }

    #[wasm_bindgen(getter)]
    pub fn output(&self) -> Box<[f32]> {
        self.output.clone().into_boxed_slice()
    }

    /// SNR of the additive-noise stage measured on the mix, in dB
    /// (infinity when no noise was added).
    #[wasm_bindgen(getter)]
    pub fn measured_snr_db(&self) -> f64 {
        self.measured_snr_db
    }

    #[wasm_bindgen(getter)]
    pub fn clipped(&self) -> bool {
        self.clipped
    }

    #[wasm_bindgen(getter)]
    pub fn sample_rate(&self) -> u32 {
        TARGET_RATE
    }
}

/// Runs the degradation chain on a synthesized voice: white noise at
/// `snr_db`, an optional low-pass (`lowpass_hz` 0 disables), and the
/// simulated codec (`codec_kbps` 0 disables, otherwise 16 or 24).
#[wasm_bindgen]
pub fn degrade_audio(
    class_code: u32,
    seconds: f64,
    snr_db: f64,
    lowpass_hz: f64,
    codec_kbps: u32,
    seed: u32,
) -> Result<DegradedAudio, JsValue> {
    degrade_audio_impl(class_code, seconds, snr_db, lowpass_hz, codec_kbps, seed)
        .map_err(|e| JsValue::from_str(&e))
}

fn degrade_audio_impl(
    class_code: u32,
    seconds: f64,
    snr_db: f64,
    lowpass_hz: f64,
    codec_kbps: u32,
    seed: u32,
) -> Result<DegradedAudio, String> {
    if !(0.1..=5.0).contains(&seconds) {
        return Err("duration must be 0.1..=5 s".into());
    }
    let clip = synth::class_texture(class_for(class_code)?, 2, seconds, seed as u64);

    // mix stage, measured before any later filtering
    let (mixed, measured_snr_db) = if snr_db >= 100.0 {
        (clip.clone(), f64::INFINITY)
    } else {
        let noise = degrade::white_noise(clip.len(), TARGET_RATE, seed as u64 ^ 0xA5A5);
        let mixed = degrade::mix_at_snr(&clip, &noise, snr_db).map_err(err)?;
        let residual: Vec<f64> = mixed
            .samples
            .iter()
            .zip(&clip.samples)
            .map(|(m, s)| m - s)
            .collect();
        let p_signal = audio::power(&clip).map_err(err)?;
        let p_noise = residual.iter().map(|x| x * x).sum::<f64>() / residual.len() as f64;
        (mixed, 10.0 * (p_signal / p_noise).log10())
    };

    let spec = DegradationSpec {
        noise: NoiseKind::None, // mixing already applied above
        snr_db: 0.0,
        lowpass_hz: if lowpass_hz > 0.0 {
            Some(lowpass_hz)
        } else {
            None
        },
        codec: if codec_kbps > 0 {
            Codec::Simulated {
                bitrate_kbps: codec_kbps,
            }
        } else {
            Codec::None
        },
    };
    let outcome = degrade::apply(
        &mixed,
        &spec,
        seed as u64,
        None,
        std::path::Path::new("."),
    )
    .map_err(err)?;

    Ok(DegradedAudio {
        input: to_f32(&clip.samples),
        output: to_f32(&outcome.clip.samples),
        measured_snr_db,
        clipped: outcome.clipped,
    })
}

/// A spectrogram plus the toy model's class probabilities for it.
#[wasm_bindgen]
pub struct SpectrogramView {
    values: Vec<f32>,
    mel_bins: u32,
    frames: u32,
    min: f32,
    max: f32,
    probs: Vec<f64>,
}

#[wasm_bindgen]
impl SpectrogramView {
    /// Row-major mel_bins x frames matrix.
    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Box<[f32]> {
        self.values.clone().into_boxed_slice()
    }

    #[wasm_bindgen(getter)]
    pub fn mel_bins(&self) -> u32 {
        self.mel_bins
    }

    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> u32 {
        self.frames
    }

    #[wasm_bindgen(getter)]
    pub fn min(&self) -> f32 {
        self.min
    }

    #[wasm_bindgen(getter)]
    pub fn max(&self) -> f32 {
        self.max
    }

    /// Softmax outputs of a freshly initialized (untrained) toy
    /// transformer, ordered human, cloned, generated, hybrid.
    #[wasm_bindgen(getter)]
    pub fn probs(&self) -> Box<[f64]> {
        self.probs.clone().into_boxed_slice()
    }
}

/// Featurizes a synthesized voice into its normalized 128-bin log-Mel
/// spectrogram and runs the untrained toy transformer over it.
#[wasm_bindgen]
pub fn analyze_audio(class_code: u32, seconds: f64, seed: u32) -> Result<SpectrogramView, JsValue> {
    analyze_audio_impl(class_code, seconds, seed).map_err(|e| JsValue::from_str(&e))
}

fn analyze_audio_impl(
    class_code: u32,
    seconds: f64,
    seed: u32,
) -> Result<SpectrogramView, String> {
    if !(0.1..=5.0).contains(&seconds) {
        return Err("duration must be 0.1..=5 s".into());
    }
    let clip = synth::class_texture(class_for(class_code)?, 2, seconds, seed as u64);
    let spec = features::featurize(&clip).map_err(err)?;

    let config = ModelConfig {
        max_time_patches: ((spec.frames().saturating_sub(16)) / 10 + 1).max(1),
        ..ModelConfig::toy()
    };
    let params = ModelParams::init(&config, 17).map_err(err)?;
    let output = model::forward(&spec, &params, &config).map_err(err)?;

    let values = to_f32(spec.values());
    let (mut min, mut max) = (f32::INFINITY, f32::NEG_INFINITY);
    for &v in &values {
        min = min.min(v);
        max = max.max(v);
    }
    Ok(SpectrogramView {
        values,
        mel_bins: spec.mel_bins() as u32,
        frames: spec.frames() as u32,
        min,
        max,
        probs: output.probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_returns_tiling_boundaries() {
        let out = compose_hybrid_impl("inter", "gh", 0.4, 10.0, 9).unwrap();
        let b = out.boundaries;
        assert_eq!(b.len(), 9);
        assert_eq!(b[0], 0); // human first
        assert_eq!(b[3], 2); // generated second
        assert_eq!(b[1], 0);
        let samples = out.samples.len() as u32;
        assert_eq!(b[8], samples);
        assert!(compose_hybrid_impl("bogus", "gh", 0.4, 10.0, 9).is_err());
    }

    #[test]
    fn degrade_tracks_requested_snr() {
        let out = degrade_audio_impl(0, 0.5, 15.0, 4000.0, 24, 3).unwrap();
        assert_eq!(out.input.len(), out.output.len());
        assert!((out.measured_snr_db - 15.0).abs() < 1e-9);
        let quiet = degrade_audio_impl(0, 0.5, 300.0, 0.0, 0, 3).unwrap();
        assert!(quiet.measured_snr_db.is_infinite());
    }

    #[test]
    fn analyze_produces_valid_probabilities() {
        let view = analyze_audio_impl(2, 0.5, 21).unwrap();
        assert_eq!(view.mel_bins, 128);
        assert!(view.frames > 16);
        assert_eq!(view.values.len(), (view.mel_bins * view.frames) as usize);
        let sum: f64 = view.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(view.min < view.max);
    }
}
