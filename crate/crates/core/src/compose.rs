//! Hybrid utterance construction: cross-faded concatenation of human and
//! synthetic segments in three arrangement patterns, with per-segment
//! boundary annotations in output coordinates.

use thiserror::Error;

use crate::audio::AudioClip;

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("sample rate mismatch: {a} vs {b}")]
    RateMismatch { a: u32, b: u32 },

    #[error("fade of {fade_len} samples does not fit a clip of {clip_len}")]
    FadeTooLong { fade_len: usize, clip_len: usize },

    #[error("invalid recipe: {0}")]
    Recipe(String),
}

pub type Result<T> = std::result::Result<T, ComposeError>;

/// Origin of a segment inside a hybrid utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceKind {
    Human,
    Cloned,
    Generated,
}

impl SourceKind {
    pub fn token(self) -> &'static str {
        match self {
            SourceKind::Human => "human",
            SourceKind::Cloned => "cloned",
            SourceKind::Generated => "generated",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "human" => Some(SourceKind::Human),
            "cloned" => Some(SourceKind::Cloned),
            "generated" => Some(SourceKind::Generated),
            _ => None,
        }
    }
}

/// One source segment of a hybrid recipe.
#[derive(Debug, Clone)]
pub struct SegmentSpec {
    pub clip: AudioClip,
    pub kind: SourceKind,
    pub source_id: String,
}

/// Segment arrangement patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// Human speech followed by synthetic speech.
    HumanToSynthetic,
    /// Synthetic speech followed by human speech.
    SyntheticToHuman,
    /// Alternating kinds, at least three segments.
    Interleaved,
}

impl Pattern {
    pub fn token(self) -> &'static str {
        match self {
            Pattern::HumanToSynthetic => "h2s",
            Pattern::SyntheticToHuman => "s2h",
            Pattern::Interleaved => "inter",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "h2s" => Some(Pattern::HumanToSynthetic),
            "s2h" => Some(Pattern::SyntheticToHuman),
            "inter" => Some(Pattern::Interleaved),
            _ => None,
        }
    }
}

/// A validated plan for one hybrid utterance.
#[derive(Debug, Clone)]
pub struct HybridRecipe {
    pub pattern: Pattern,
    pub segments: Vec<SegmentSpec>,
    pub fade_ms: f64,
}

pub const DEFAULT_FADE_MS: f64 = 10.0;

/// Placement of one segment in the composed output. `end` is exclusive;
/// adjacent annotations overlap by exactly the fade length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryAnnotation {
    pub segment_index: usize,
    pub kind: SourceKind,
    pub start_sample: usize,
    pub end_sample: usize,
}

/// Fade length in samples for a given fade duration and rate.
pub fn fade_len(fade_ms: f64, sample_rate: u32) -> usize {
    (fade_ms * sample_rate as f64 / 1000.0).round() as usize
}

/// Joins two clips with a linear cross-fade over `fade_ms`. The clips share
/// the fade region, so the output is `len(a) + len(b) - L` samples.
///
/// Within the fade, `out[i] = a_tail[i] * (1 - w) + b_head[i] * w` with
/// `w = i / (L - 1)`; a single-sample fade takes the incoming value.
pub fn crossfade_concat(a: &AudioClip, b: &AudioClip, fade_ms: f64) -> Result<AudioClip> {
    if a.sample_rate != b.sample_rate {
        return Err(ComposeError::RateMismatch {
            a: a.sample_rate,
            b: b.sample_rate,
        });
    }
    if !fade_ms.is_finite() || fade_ms < 0.0 {
        return Err(ComposeError::Recipe(format!(
            "fade duration must be a nonnegative number, got {fade_ms}"
        )));
    }
    let fade = fade_len(fade_ms, a.sample_rate);
    if a.len() <= fade || b.len() <= fade {
        return Err(ComposeError::FadeTooLong {
            fade_len: fade,
            clip_len: a.len().min(b.len()),
        });
    }

    let mut out = Vec::with_capacity(a.len() + b.len() - fade);
    out.extend_from_slice(&a.samples[..a.len() - fade]);
    for i in 0..fade {
        let w = if fade == 1 {
            1.0
        } else {
            i as f64 / (fade - 1) as f64
        };
        out.push(a.samples[a.len() - fade + i] * (1.0 - w) + b.samples[i] * w);
    }
    out.extend_from_slice(&b.samples[fade..]);
    Ok(AudioClip::new(out, a.sample_rate))
}

fn validate_recipe(recipe: &HybridRecipe) -> Result<()> {
    let kinds: Vec<SourceKind> = recipe.segments.iter().map(|s| s.kind).collect();
    if kinds.is_empty() {
        return Err(ComposeError::Recipe("no segments".into()));
    }
    match recipe.pattern {
        Pattern::HumanToSynthetic => {
            if kinds.len() != 2 || kinds[0] != SourceKind::Human || kinds[1] == SourceKind::Human {
                return Err(ComposeError::Recipe(
                    "h2s requires exactly [human, non-human]".into(),
                ));
            }
        }
        Pattern::SyntheticToHuman => {
            if kinds.len() != 2 || kinds[0] == SourceKind::Human || kinds[1] != SourceKind::Human {
                return Err(ComposeError::Recipe(
                    "s2h requires exactly [non-human, human]".into(),
                ));
            }
        }
        Pattern::Interleaved => {
            if kinds.len() < 3 {
                return Err(ComposeError::Recipe(
                    "interleaved requires at least 3 segments".into(),
                ));
            }
            if kinds.windows(2).any(|w| w[0] == w[1]) {
                return Err(ComposeError::Recipe(
                    "interleaved segments must alternate kinds".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Cross-fade fold over an arbitrary segment list, without pattern
/// validation. Returns the composed clip and one annotation per segment.
/// Also used for human-only recombination, which fits none of the hybrid
/// patterns.
pub fn concat_segments(
    segments: &[SegmentSpec],
    fade_ms: f64,
) -> Result<(AudioClip, Vec<BoundaryAnnotation>)> {
    let first = segments
        .first()
        .ok_or_else(|| ComposeError::Recipe("no segments".into()))?;
    let fade = fade_len(fade_ms, first.clip.sample_rate);

    let mut annotations = Vec::with_capacity(segments.len());
    let mut start = 0usize;
    for (i, seg) in segments.iter().enumerate() {
        annotations.push(BoundaryAnnotation {
            segment_index: i,
            kind: seg.kind,
            start_sample: start,
            end_sample: start + seg.clip.len(),
        });
        start += seg.clip.len() - fade;
    }

    let mut out = first.clip.clone();
    for seg in &segments[1..] {
        out = crossfade_concat(&out, &seg.clip, fade_ms)?;
    }
    Ok((out, annotations))
}

/// Composes a validated hybrid recipe: a left fold of [`crossfade_concat`]
/// over the segments, total length `sum(len_i) - (k - 1) * L`.
pub fn compose(recipe: &HybridRecipe) -> Result<(AudioClip, Vec<BoundaryAnnotation>)> {
    validate_recipe(recipe)?;
    concat_segments(&recipe.segments, recipe.fade_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 16000)
    }

    fn seg(kind: SourceKind, samples: Vec<f64>) -> SegmentSpec {
        SegmentSpec {
            clip: clip(samples),
            kind,
            source_id: String::new(),
        }
    }

    #[test]
    fn fade_length_at_16k() {
        assert_eq!(fade_len(10.0, 16000), 160);
    }

    #[test]
    fn fade_weights() {
        // 3-sample fade from a tail of ones into a head of zeros
        let a = clip(vec![1.0; 8]);
        let b = clip(vec![0.0; 8]);
        let out = crossfade_concat(&a, &b, 3.0 * 1000.0 / 16000.0).unwrap();
        assert_eq!(out.len(), 13);
        assert_eq!(&out.samples[5..8], &[1.0, 0.5, 0.0]);
    }

    #[test]
    fn concat_length_formula() {
        let a = clip(vec![0.1; 96_000]);
        let b = clip(vec![0.2; 96_000]);
        let out = crossfade_concat(&a, &b, 10.0).unwrap();
        assert_eq!(out.len(), 191_840);
    }

    #[test]
    fn concat_validates_inputs() {
        let a = clip(vec![0.0; 100]);
        let b = AudioClip::new(vec![0.0; 100], 8000);
        assert!(matches!(
            crossfade_concat(&a, &b, 10.0),
            Err(ComposeError::RateMismatch { .. })
        ));
        let short = clip(vec![0.0; 100]);
        let long = clip(vec![0.0; 1000]);
        assert!(matches!(
            crossfade_concat(&short, &long, 10.0),
            Err(ComposeError::FadeTooLong { .. })
        ));
        assert!(crossfade_concat(&long, &long, -1.0).is_err());
        assert!(crossfade_concat(&long, &long, f64::NAN).is_err());
    }

    #[test]
    fn single_segment_recipe_is_identity() {
        let samples: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.01).sin()).collect();
        let (out, ann) = concat_segments(&[seg(SourceKind::Human, samples.clone())], 10.0).unwrap();
        assert_eq!(out.samples, samples);
        assert_eq!(ann.len(), 1);
        assert_eq!((ann[0].start_sample, ann[0].end_sample), (0, 1000));
    }

    #[test]
    fn h2s_annotations() {
        let recipe = HybridRecipe {
            pattern: Pattern::HumanToSynthetic,
            segments: vec![
                seg(SourceKind::Human, vec![0.1; 96_000]),
                seg(SourceKind::Generated, vec![0.2; 96_000]),
            ],
            fade_ms: 10.0,
        };
        let (out, ann) = compose(&recipe).unwrap();
        assert_eq!(out.len(), 191_840);
        assert_eq!(ann.len(), 2);
        assert_eq!(ann[1].start_sample, 96_000 - 160);
        assert_eq!(ann[0].end_sample - ann[1].start_sample, 160);
    }

    #[test]
    fn interleaved_three_segments() {
        let recipe = HybridRecipe {
            pattern: Pattern::Interleaved,
            segments: vec![
                seg(SourceKind::Human, vec![0.1; 32_000]),
                seg(SourceKind::Generated, vec![0.2; 32_000]),
                seg(SourceKind::Human, vec![0.3; 32_000]),
            ],
            fade_ms: 10.0,
        };
        let (out, ann) = compose(&recipe).unwrap();
        assert_eq!(out.len(), 3 * 32_000 - 2 * 160);
        let kinds: Vec<SourceKind> = ann.iter().map(|a| a.kind).collect();
        assert_eq!(
            kinds,
            vec![SourceKind::Human, SourceKind::Generated, SourceKind::Human]
        );
    }

    #[test]
    fn pattern_validation_is_strict() {
        let bad = HybridRecipe {
            pattern: Pattern::HumanToSynthetic,
            segments: vec![
                seg(SourceKind::Generated, vec![0.0; 1000]),
                seg(SourceKind::Human, vec![0.0; 1000]),
            ],
            fade_ms: 10.0,
        };
        assert!(compose(&bad).is_err());

        let not_alternating = HybridRecipe {
            pattern: Pattern::Interleaved,
            segments: vec![
                seg(SourceKind::Human, vec![0.0; 1000]),
                seg(SourceKind::Human, vec![0.0; 1000]),
                seg(SourceKind::Generated, vec![0.0; 1000]),
            ],
            fade_ms: 10.0,
        };
        assert!(compose(&not_alternating).is_err());
    }

    #[test]
    fn fade_region_has_no_clicks() {
        // max first difference inside the fade stays within the inputs' own
        // slopes plus their combined amplitude range
        let a: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.05).sin() * 0.8).collect();
        let b: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.11).cos() * 0.6).collect();
        let fade = 160;
        let out = crossfade_concat(&clip(a.clone()), &clip(b.clone()), 10.0).unwrap();
        let max_diff = |s: &[f64]| {
            s.windows(2)
                .map(|w| (w[1] - w[0]).abs())
                .fold(0.0f64, f64::max)
        };
        let fade_slice = &out.samples[2000 - fade..2000];
        let a_slice = &a[2000 - fade..];
        let b_slice = &b[..fade];
        let bound = max_diff(a_slice).max(max_diff(b_slice)) + (0.8 + 0.6);
        assert!(max_diff(fade_slice) <= bound);
    }

    proptest! {
        #[test]
        fn fold_direction_is_irrelevant(
            seed in 0u64..1000,
            len_a in 400usize..900,
            len_b in 400usize..900,
            len_c in 400usize..900,
        ) {
            // segments at least twice the fade so the fade regions are
            // disjoint and left/right folds perform identical arithmetic
            let mut rng = crate::rng::Rng::new(seed);
            let mut gen = |n: usize| -> AudioClip {
                clip((0..n).map(|_| rng.next_f64() * 2.0 - 1.0).collect())
            };
            let (a, b, c) = (gen(len_a), gen(len_b), gen(len_c));
            let fade_ms = 10.0; // 160 samples at 16 kHz
            let left = crossfade_concat(&crossfade_concat(&a, &b, fade_ms).unwrap(), &c, fade_ms).unwrap();
            let right = crossfade_concat(&a, &crossfade_concat(&b, &c, fade_ms).unwrap(), fade_ms).unwrap();
            prop_assert_eq!(left.samples, right.samples);
        }

        #[test]
        fn annotations_tile_with_fade_overlap(
            n_segments in 2usize..6,
            seed in 0u64..1000,
        ) {
            let mut rng = crate::rng::Rng::new(seed);
            let mut kinds = [SourceKind::Human, SourceKind::Generated].iter().cycle();
            let segments: Vec<SegmentSpec> = (0..n_segments)
                .map(|_| {
                    let n = 400 + rng.next_below(600) as usize;
                    seg(*kinds.next().unwrap(), (0..n).map(|_| rng.next_f64()).collect())
                })
                .collect();
            let (out, ann) = concat_segments(&segments, 10.0).unwrap();
            let fade = 160;
            for pair in ann.windows(2) {
                prop_assert_eq!(pair[0].end_sample - pair[1].start_sample, fade);
            }
            prop_assert_eq!(ann[0].start_sample, 0);
            prop_assert_eq!(ann.last().unwrap().end_sample, out.len());
            let total: usize = segments.iter().map(|s| s.clip.len()).sum();
            prop_assert_eq!(out.len(), total - (n_segments - 1) * fade);
        }
    }
}
