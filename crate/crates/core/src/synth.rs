//! Procedural stand-in corpus. Real deployments ingest studio recordings
//! and externally synthesized clips; for demos and end-to-end tests this
//! module generates deterministic audio textures with a distinct character
//! per spoofing class, plus manifests that follow the full corpus layout
//! (12 speakers x 104 sentences, balanced across the four classes).

use std::f64::consts::PI;
use std::path::Path;

use crate::audio::{self, AudioClip, TARGET_RATE};
use crate::compose::{self, Pattern, SegmentSpec, SourceKind};
use crate::manifest::{
    ClassLabel, CloningCondition, Gender, Group, Manifest, SegmentBoundary, SentenceType,
    UtteranceRecord, DIRECTIVE_CLEAN_COMPLETE,
};
use crate::rng::Rng;

/// Sentence category of slot `i` in a speaker's 104-sentence script.
pub fn sentence_slot(i: usize) -> SentenceType {
    match i {
        0..=7 => SentenceType::Alphanumeric,
        8..=15 => SentenceType::Alphabetic,
        16..=23 => SentenceType::Numeric,
        24..=39 => SentenceType::NaturalEnglish,
        40..=55 => SentenceType::CoherentPair,
        56..=71 => SentenceType::UnrelatedPair,
        72..=87 => SentenceType::GrammaticalError,
        _ => SentenceType::SemanticAnomaly,
    }
}

fn speaker_f0(speaker: usize) -> f64 {
    110.0 + 13.0 * speaker as f64
}

/// Deterministic audio texture for one class. Humans get a vibrato'd
/// harmonic stack, clones the same stack frozen and detuned, generated
/// speech a bright odd-harmonic buzz; hybrids are composed elsewhere from
/// the human and generated textures.
pub fn class_texture(class: ClassLabel, speaker: usize, seconds: f64, seed: u64) -> AudioClip {
    let n = (seconds * TARGET_RATE as f64).round() as usize;
    let f0 = speaker_f0(speaker);
    let mut rng = Rng::derive(seed, (speaker as u64) << 8 | class.index() as u64);
    let phase: f64 = rng.next_f64() * 2.0 * PI;

    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / TARGET_RATE as f64;
            let envelope = (PI * t / seconds).sin().max(0.05);
            let value = match class {
                ClassLabel::Human => {
                    let vibrato = 1.0 + 0.01 * (2.0 * PI * 5.0 * t).sin();
                    let f = f0 * vibrato;
                    (1..=4)
                        .map(|h| (2.0 * PI * f * h as f64 * t + phase).sin() / h as f64)
                        .sum::<f64>()
                        * 0.25
                        + 0.01 * rng.next_gaussian()
                }
                ClassLabel::Cloned => {
                    let f = f0 * 1.013; // static detune, no vibrato
                    (1..=6)
                        .map(|h| (2.0 * PI * f * h as f64 * t + phase).sin() / (h as f64).sqrt())
                        .sum::<f64>()
                        * 0.15
                }
                ClassLabel::Generated => {
                    let f = 190.0 + 11.0 * speaker as f64;
                    [1.0, 3.0, 5.0, 7.0, 9.0]
                        .iter()
                        .map(|h| (2.0 * PI * f * h * t + phase).sin() / h)
                        .sum::<f64>()
                        * 0.3
                        + 0.03 * rng.next_gaussian()
                }
                // used directly only when a caller asks for the raw texture
                ClassLabel::Hybrid => {
                    let f = f0 * if t < seconds / 2.0 { 1.0 } else { 1.9 };
                    (2.0 * PI * f * t + phase).sin() * 0.4
                }
            };
            (value * envelope).clamp(-1.0, 1.0)
        })
        .collect();
    AudioClip::new(samples, TARGET_RATE)
}

fn base_record(
    speaker: usize,
    slot: usize,
    group: Group,
    audio_path: String,
) -> UtteranceRecord {
    UtteranceRecord {
        utterance_id: format!("u{speaker:02}_{slot:03}"),
        speaker_id: format!("spk{speaker:02}"),
        age: 19 + ((speaker * 7) % 20) as u32,
        gender: if speaker.is_multiple_of(2) {
            Gender::Female
        } else {
            Gender::Male
        },
        sentence_type: sentence_slot(slot),
        class_label: group.class_label(),
        group,
        cloning_condition: None,
        similarity_score: None,
        segment_boundaries: None,
        degradation: None,
        flags: Vec::new(),
        audio_path,
    }
}

fn group_for_slot(slot: usize) -> Group {
    match slot % 4 {
        0 => {
            // class 0 alternates genuine and recombined human
            if (slot / 4) % 4 == 3 {
                Group::G6
            } else {
                Group::G1
            }
        }
        1 => Group::G2,
        2 => Group::G3,
        // class 3 alternates the two hybrid compositions
        _ => {
            if (slot / 4).is_multiple_of(2) {
                Group::G4
            } else {
                Group::G5
            }
        }
    }
}

fn decorate(record: &mut UtteranceRecord, slot: usize) {
    match record.group {
        Group::G2 => {
            let cond = [
                CloningCondition::C1,
                CloningCondition::C2,
                CloningCondition::C3,
                CloningCondition::C4,
            ][(slot / 4) % 4];
            record.cloning_condition = Some(cond);
            record.similarity_score = Some(0.72 + 0.06 * ((slot / 4) % 4) as f64);
        }
        Group::G4 | Group::G5 | Group::G6 => {
            // placeholder boundaries for records-only fixtures; audio
            // builders overwrite these with the composer's annotations
            record.segment_boundaries = Some(vec![
                SegmentBoundary {
                    kind: if record.group == Group::G5 {
                        SourceKind::Cloned
                    } else if record.group == Group::G4 {
                        SourceKind::Generated
                    } else {
                        SourceKind::Human
                    },
                    start: 0,
                    end: 48_000,
                },
                SegmentBoundary {
                    kind: if record.group == Group::G5 {
                        SourceKind::Generated
                    } else {
                        SourceKind::Human
                    },
                    start: 47_840,
                    end: 95_840,
                },
            ]);
        }
        _ => {}
    }
}

/// The complete balanced fixture: `speakers` x 104 records (no audio files),
/// 26 per class per speaker, Table-layout sentence counts, declared
/// clean-complete.
pub fn records_corpus(speakers: usize) -> Manifest {
    let mut records = Vec::with_capacity(speakers * 104);
    for speaker in 0..speakers {
        for slot in 0..104 {
            let group = group_for_slot(slot);
            let mut record = base_record(
                speaker,
                slot,
                group,
                format!("audio/u{speaker:02}_{slot:03}.wav"),
            );
            decorate(&mut record, slot);
            records.push(record);
        }
    }
    let mut manifest = Manifest::new(records);
    manifest.directives.push(DIRECTIVE_CLEAN_COMPLETE.into());
    manifest
}

fn annotations_to_boundaries(
    annotations: &[compose::BoundaryAnnotation],
) -> Vec<SegmentBoundary> {
    annotations
        .iter()
        .map(|a| SegmentBoundary {
            kind: a.kind,
            start: a.start_sample,
            end: a.end_sample,
        })
        .collect()
}

/// Builds one utterance's audio for its group, composing hybrids from the
/// class textures. Returns the clip and boundary annotations when composed.
pub fn build_audio(
    group: Group,
    speaker: usize,
    slot: usize,
    seconds: f64,
    seed: u64,
) -> (AudioClip, Option<Vec<SegmentBoundary>>) {
    let seed = seed ^ ((slot as u64) << 32);
    let fade_ms = compose::DEFAULT_FADE_MS;
    let seg = |kind: SourceKind, class: ClassLabel, secs: f64, salt: u64| SegmentSpec {
        clip: class_texture(class, speaker, secs, seed ^ salt),
        kind,
        source_id: format!("u{speaker:02}_{slot:03}:{}", kind.token()),
    };
    match group {
        Group::G1 => (class_texture(ClassLabel::Human, speaker, seconds, seed), None),
        Group::G2 => (
            class_texture(ClassLabel::Cloned, speaker, seconds, seed),
            None,
        ),
        Group::G3 => (
            class_texture(ClassLabel::Generated, speaker, seconds, seed),
            None,
        ),
        Group::G4 | Group::G5 => {
            let (first_kind, first_class) = if group == Group::G4 {
                (SourceKind::Human, ClassLabel::Human)
            } else {
                (SourceKind::Cloned, ClassLabel::Cloned)
            };
            let pattern = [Pattern::HumanToSynthetic, Pattern::SyntheticToHuman, Pattern::Interleaved]
                [(slot / 4) % 3];
            let segments = match pattern {
                Pattern::Interleaved => vec![
                    seg(first_kind, first_class, seconds / 3.0, 1),
                    seg(SourceKind::Generated, ClassLabel::Generated, seconds / 3.0, 2),
                    seg(first_kind, first_class, seconds / 3.0, 3),
                ],
                Pattern::HumanToSynthetic => vec![
                    seg(first_kind, first_class, seconds / 2.0, 1),
                    seg(SourceKind::Generated, ClassLabel::Generated, seconds / 2.0, 2),
                ],
                Pattern::SyntheticToHuman => vec![
                    seg(SourceKind::Generated, ClassLabel::Generated, seconds / 2.0, 1),
                    seg(first_kind, first_class, seconds / 2.0, 2),
                ],
            };
            let (clip, annotations) =
                compose::concat_segments(&segments, fade_ms).expect("segments exceed fade");
            (clip, Some(annotations_to_boundaries(&annotations)))
        }
        Group::G6 => {
            let segments = vec![
                seg(SourceKind::Human, ClassLabel::Human, seconds / 2.0, 4),
                seg(SourceKind::Human, ClassLabel::Human, seconds / 2.0, 5),
            ];
            let (clip, annotations) =
                compose::concat_segments(&segments, fade_ms).expect("segments exceed fade");
            (clip, Some(annotations_to_boundaries(&annotations)))
        }
    }
}

/// Writes a playable toy corpus: WAV files under `dir/audio` plus the
/// manifest records (paths relative to `dir`). `slots_per_speaker` walks
/// the 104-slot script from the top, so 104 yields the clean-complete
/// corpus layout.
pub fn write_audio_corpus(
    dir: &Path,
    speakers: usize,
    slots_per_speaker: usize,
    seconds: f64,
    seed: u64,
) -> std::result::Result<Manifest, audio::AudioError> {
    let audio_dir = dir.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|source| audio::AudioError::Io {
        path: audio_dir.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    for speaker in 0..speakers {
        for slot in 0..slots_per_speaker {
            let group = group_for_slot(slot);
            let rel = format!("audio/u{speaker:02}_{slot:03}.wav");
            let mut record = base_record(speaker, slot, group, rel.clone());
            decorate(&mut record, slot);
            let (clip, boundaries) = build_audio(group, speaker, slot, seconds, seed);
            if boundaries.is_some() {
                record.segment_boundaries = boundaries;
            }
            audio::save_wav(&clip, dir.join(&rel))?;
            records.push(record);
        }
    }
    let mut manifest = Manifest::new(records);
    if slots_per_speaker == 104 {
        manifest.directives.push(DIRECTIVE_CLEAN_COMPLETE.into());
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::validate;

    #[test]
    fn slot_layout_covers_the_script() {
        let counts = (0..104).fold([0usize; 8], |mut acc, i| {
            acc[sentence_slot(i).index()] += 1;
            acc
        });
        assert_eq!(counts, [8, 8, 8, 16, 16, 16, 16, 16]);
    }

    #[test]
    fn records_corpus_is_balanced_and_valid() {
        let manifest = records_corpus(12);
        assert_eq!(manifest.records.len(), 1248);
        let report = validate(&manifest.records, manifest.declares_clean_complete());
        assert!(report.is_clean(), "violations: {:?}", report.violations);
        assert_eq!(report.summary.per_class, [312; 4]);
        assert_eq!(report.summary.per_speaker.len(), 12);
        // both real groups and both hybrid groups are populated
        for group in [Group::G1, Group::G4, Group::G5, Group::G6] {
            assert!(report.summary.per_group[group.index()] > 0, "{group:?}");
        }
    }

    #[test]
    fn textures_are_deterministic_and_distinct() {
        for class in ClassLabel::ALL {
            let a = class_texture(class, 3, 0.5, 42);
            let b = class_texture(class, 3, 0.5, 42);
            assert_eq!(a.samples, b.samples);
            assert_eq!(a.len(), 8000);
            assert!(a.samples.iter().all(|s| s.abs() <= 1.0));
        }
        let human = class_texture(ClassLabel::Human, 3, 0.5, 42);
        let generated = class_texture(ClassLabel::Generated, 3, 0.5, 42);
        let diff: f64 = human
            .samples
            .iter()
            .zip(&generated.samples)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1.0, "textures too similar");
    }

    #[test]
    fn hybrid_audio_carries_boundaries() {
        let (clip, boundaries) = build_audio(Group::G4, 1, 3, 1.0, 7);
        let boundaries = boundaries.unwrap();
        assert!(boundaries.len() >= 2);
        assert_eq!(boundaries.last().unwrap().end, clip.len());
        let (_, none) = build_audio(Group::G1, 1, 0, 1.0, 7);
        assert!(none.is_none());
    }

    #[test]
    fn audio_corpus_writes_valid_records() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_audio_corpus(dir.path(), 2, 8, 0.6, 11).unwrap();
        assert_eq!(manifest.records.len(), 16);
        let report = validate(&manifest.records, false);
        assert!(report.is_clean(), "violations: {:?}", report.violations);
        for record in &manifest.records {
            let clip = audio::load_wav(dir.path().join(&record.audio_path)).unwrap();
            assert!(!clip.is_empty());
            assert_eq!(clip.sample_rate, TARGET_RATE);
        }
    }
}
