//! Subcommand implementations. Every stage reads manifests + audio, writes
//! new files (inputs are never mutated), and is deterministic given its
//! flags and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use spoofkit::audio::{self, AudioClip, TARGET_RATE};
use spoofkit::compose::{self, Pattern, SegmentSpec, SourceKind};
use spoofkit::degrade::{self, Codec, DegradationSpec, NoiseKind};
use spoofkit::eval::{self, EvalReport, Prediction};
use spoofkit::features::{self, Spectrogram};
use spoofkit::manifest::{
    self, read_manifest, relative_path, validate, write_manifest, ClassLabel, DegradationEcho,
    Group, Manifest, SegmentBoundary, UtteranceRecord, FLAG_CLIPPED,
};
use spoofkit::model::{self, ModelParams};
use spoofkit::parallel;
use spoofkit::rng::Rng;
use spoofkit::synth;
use spoofkit::train::{self, speaker_disjoint_split, Example};

use crate::config::PipelineConfig;

/// Environment variable holding the external codec command template
/// (`{in}` / `{out}` placeholders).
pub const CODEC_ENV: &str = "SPOOFKIT_CODEC_CMD";

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn audio_abs_path(manifest_path: &Path, record: &UtteranceRecord) -> PathBuf {
    manifest_dir(manifest_path).join(&record.audio_path)
}

fn load_clip(manifest_path: &Path, record: &UtteranceRecord) -> Result<AudioClip> {
    let path = audio_abs_path(manifest_path, record);
    let clip = audio::load_wav(&path)
        .with_context(|| format!("loading audio for '{}'", record.utterance_id))?;
    Ok(clip)
}

fn canonical_clip(clip: &AudioClip, seconds: f64) -> Result<AudioClip> {
    let clip = if clip.sample_rate == TARGET_RATE {
        clip.clone()
    } else {
        audio::resample(clip, TARGET_RATE)?
    };
    Ok(audio::fit_duration(&clip, seconds)?)
}

fn expected_frames(seconds: f64) -> usize {
    let samples = (seconds * TARGET_RATE as f64).round() as usize;
    (samples - features::FRAME_LEN) / features::HOP_LEN + 1
}

fn features_for(
    manifest_path: &Path,
    record: &UtteranceRecord,
    cache: Option<&Path>,
    seconds: f64,
) -> Result<Spectrogram> {
    if let Some(cache) = cache {
        let cached = cache.join(format!("{}.spec", record.utterance_id));
        if cached.exists() {
            let spec = features::load_spectrogram(&cached)?;
            // a cache built for a different duration is stale; recompute
            if spec.frames() == expected_frames(seconds) {
                return Ok(spec);
            }
        }
    }
    let clip = load_clip(manifest_path, record)?;
    let clip = canonical_clip(&clip, seconds)?;
    Ok(features::featurize(&clip)?)
}

fn rebase_records(
    records: &[UtteranceRecord],
    from_manifest: &Path,
    to_dir: &Path,
) -> Result<Vec<UtteranceRecord>> {
    let from_dir = fs::canonicalize(manifest_dir(from_manifest))?;
    let to_dir = fs::canonicalize(to_dir)?;
    records
        .iter()
        .map(|record| {
            let mut rebased = record.clone();
            let abs = from_dir.join(&record.audio_path);
            rebased.audio_path = relative_path(&to_dir, &abs).to_string_lossy().to_string();
            Ok(rebased)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(
    out: &Path,
    speakers: usize,
    slots: usize,
    seconds: f64,
    seed: u64,
) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut manifest = synth::write_audio_corpus(out, speakers, slots, seconds, seed)?;
    manifest.directives.push(format!(
        "config seed={seed} speakers={speakers} slots={slots} seconds={seconds}"
    ));
    let path = out.join("corpus.manifest");
    write_manifest(&manifest, &path)?;
    println!(
        "wrote {} utterances for {} speakers to {}",
        manifest.records.len(),
        speakers,
        path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

pub fn cmd_ingest(dir: &Path, out: &Path) -> Result<()> {
    let out_dir = manifest_dir(out);
    fs::create_dir_all(&out_dir)?;
    let out_dir = fs::canonicalize(&out_dir)?;
    let records = manifest::ingest_directory(dir, &out_dir)?;
    let flagged = records.iter().filter(|r| !r.flags.is_empty()).count();
    let manifest = Manifest::new(records);
    write_manifest(&manifest, out)?;
    println!(
        "ingested {} files ({} flagged incomplete) into {}",
        manifest.records.len(),
        flagged,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// compose
// ---------------------------------------------------------------------------

/// Source-kind pairing for hybrid composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixKinds {
    /// Generated + human segments (group G4).
    GeneratedHuman,
    /// Cloned + generated segments (group G5).
    ClonedGenerated,
    /// Human-only recombination (group G6).
    HumanOnly,
}

impl MixKinds {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gh" => Ok(MixKinds::GeneratedHuman),
            "cg" => Ok(MixKinds::ClonedGenerated),
            "hh" => Ok(MixKinds::HumanOnly),
            _ => bail!("unknown mix '{s}' (expected gh, cg, or hh)"),
        }
    }

    fn group(self) -> Group {
        match self {
            MixKinds::GeneratedHuman => Group::G4,
            MixKinds::ClonedGenerated => Group::G5,
            MixKinds::HumanOnly => Group::G6,
        }
    }

    /// (first, second) source kinds in h2s order.
    fn kinds(self) -> (SourceKind, SourceKind) {
        match self {
            MixKinds::GeneratedHuman => (SourceKind::Human, SourceKind::Generated),
            MixKinds::ClonedGenerated => (SourceKind::Cloned, SourceKind::Generated),
            MixKinds::HumanOnly => (SourceKind::Human, SourceKind::Human),
        }
    }
}

fn pool_for(records: &[UtteranceRecord], kind: SourceKind) -> Vec<&UtteranceRecord> {
    records
        .iter()
        .filter(|r| match kind {
            SourceKind::Human => r.group == Group::G1,
            SourceKind::Cloned => r.group == Group::G2,
            SourceKind::Generated => r.group == Group::G3,
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_compose(
    manifest_path: &Path,
    pattern: &str,
    mix: MixKinds,
    fade_ms: f64,
    seed: u64,
    count: usize,
    out: &Path,
    config: &PipelineConfig,
) -> Result<()> {
    let pattern = Pattern::from_token(pattern)
        .ok_or_else(|| anyhow!("unknown pattern '{pattern}' (expected h2s, s2h, or inter)"))?;
    let manifest = read_manifest(manifest_path)?;
    let fade_samples = compose::fade_len(fade_ms, TARGET_RATE);
    println!(
        "composing {count} {} hybrids, pattern {}, fade {fade_ms} ms ({fade_samples} samples)",
        mix.group().token(),
        pattern.token()
    );

    let (kind_a, kind_b) = mix.kinds();
    let mut pool_a = pool_for(&manifest.records, kind_a);
    let mut pool_b = pool_for(&manifest.records, kind_b);
    if mix == MixKinds::HumanOnly {
        // split the human pool in two so a recombination never splices an
        // utterance with itself
        let half = pool_a.len() / 2;
        pool_b = pool_a.split_off(half);
    }
    if pool_a.is_empty() || pool_b.is_empty() {
        bail!(
            "manifest lacks source material for mix: {} and {} pools have {} and {} records",
            kind_a.token(),
            kind_b.token(),
            pool_a.len(),
            pool_b.len()
        );
    }
    let mut rng = Rng::derive(seed, 0xC0);
    rng.shuffle(&mut pool_a);
    rng.shuffle(&mut pool_b);

    fs::create_dir_all(out.join("audio"))?;
    let mut new_records = rebase_records(&manifest.records, manifest_path, out)?;
    for i in 0..count {
        let a = pool_a[i % pool_a.len()];
        let b = pool_b[i % pool_b.len()];
        let clip_a = load_clip(manifest_path, a)?;
        let clip_b = load_clip(manifest_path, b)?;

        let make = |record: &UtteranceRecord, clip: &AudioClip, kind: SourceKind| SegmentSpec {
            clip: clip.clone(),
            kind,
            source_id: record.utterance_id.clone(),
        };
        let segments = match pattern {
            Pattern::HumanToSynthetic => {
                vec![make(a, &clip_a, kind_a), make(b, &clip_b, kind_b)]
            }
            Pattern::SyntheticToHuman => {
                vec![make(b, &clip_b, kind_b), make(a, &clip_a, kind_a)]
            }
            Pattern::Interleaved => {
                // the closing segment comes from a different source
                // utterance of the same kind
                let a2 = pool_a[(i + 1) % pool_a.len()];
                let clip_a2 = load_clip(manifest_path, a2)?;
                vec![
                    make(a, &clip_a, kind_a),
                    make(b, &clip_b, kind_b),
                    make(a2, &clip_a2, kind_a),
                ]
            }
        };
        // hybrid patterns go through the validating composer; human-only
        // recombination uses the raw fold
        let (clip, annotations) = if mix == MixKinds::HumanOnly {
            compose::concat_segments(&segments, fade_ms)?
        } else {
            compose::compose(&compose::HybridRecipe {
                pattern,
                segments: segments.clone(),
                fade_ms,
            })?
        };

        let id = format!("hyb_{}_{}_{i:03}", mix.group().token().to_lowercase(), pattern.token());
        let rel = format!("audio/{id}.wav");
        audio::save_wav(&clip, out.join(&rel))?;
        let source_ids: Vec<String> = segments.iter().map(|s| s.source_id.clone()).collect();
        new_records.push(UtteranceRecord {
            utterance_id: id,
            speaker_id: a.speaker_id.clone(),
            age: a.age,
            gender: a.gender,
            sentence_type: a.sentence_type,
            class_label: mix.group().class_label(),
            group: mix.group(),
            cloning_condition: None,
            similarity_score: None,
            segment_boundaries: Some(
                annotations
                    .iter()
                    .map(|ann| SegmentBoundary {
                        kind: ann.kind,
                        start: ann.start_sample,
                        end: ann.end_sample,
                    })
                    .collect(),
            ),
            degradation: None,
            flags: vec![
                format!("pattern:{}", pattern.token()),
                format!("fade_ms:{}", manifest::format_sig6(fade_ms)),
                format!("seed:{seed}"),
                format!("src:{}", source_ids.join("+")),
            ],
            audio_path: rel,
        });
    }

    let mut out_manifest = Manifest::new(new_records);
    out_manifest.directives.push(config.echo());
    let path = out.join("corpus.manifest");
    write_manifest(&out_manifest, &path)?;
    println!(
        "wrote {} records ({} new hybrids) to {}",
        out_manifest.records.len(),
        count,
        path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// degrade
// ---------------------------------------------------------------------------

pub fn parse_codec_flag(s: &str) -> Result<Codec> {
    match s {
        "none" => Ok(Codec::None),
        "sim16" => Ok(Codec::Simulated { bitrate_kbps: 16 }),
        "sim24" => Ok(Codec::Simulated { bitrate_kbps: 24 }),
        "ext" => {
            let template = std::env::var(CODEC_ENV).map_err(|_| {
                anyhow!("--codec ext requires the {CODEC_ENV} environment variable")
            })?;
            Ok(Codec::Passthrough(template))
        }
        _ => bail!("unknown codec '{s}' (expected none, sim16, sim24, or ext)"),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_degrade(
    manifest_path: &Path,
    snr_db: f64,
    noise: &str,
    noise_dir: Option<&Path>,
    lowpass_hz: Option<f64>,
    codec: &str,
    seed: u64,
    out: &Path,
    config: &PipelineConfig,
) -> Result<()> {
    let manifest = read_manifest(manifest_path)?;
    let codec = parse_codec_flag(codec)?;
    fs::create_dir_all(out.join("audio"))?;

    // external noise pool, selected per record by seed
    let noise_files: Vec<PathBuf> = match noise_dir {
        Some(dir) => {
            let mut files: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "wav"))
                .collect();
            files.sort();
            if files.is_empty() {
                bail!("--noise-dir {} holds no .wav files", dir.display());
            }
            files
        }
        None => Vec::new(),
    };
    if noise == "ext" && noise_files.is_empty() {
        bail!("--noise ext requires --noise-dir");
    }

    // scratch space for external codec round-trips
    let work_dir = out.join(".codec-work");
    fs::create_dir_all(&work_dir)?;
    let mut records = Vec::with_capacity(manifest.records.len());
    let mut clipped_count = 0usize;
    for (i, record) in manifest.records.iter().enumerate() {
        let clip = load_clip(manifest_path, record)?;
        let file_seed = Rng::derive(seed, i as u64).next_u64();
        let (noise_kind, noise_clip) = match noise {
            "none" => (NoiseKind::None, None),
            "white" => (NoiseKind::White, None),
            "ext" => {
                let pick = &noise_files[(file_seed % noise_files.len() as u64) as usize];
                let noise_clip = audio::load_wav(pick)?;
                let noise_clip = if noise_clip.sample_rate == clip.sample_rate {
                    noise_clip
                } else {
                    audio::resample(&noise_clip, clip.sample_rate)?
                };
                let name = pick
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_default();
                (NoiseKind::External(name), Some(noise_clip))
            }
            other => bail!("unknown noise '{other}' (expected none, white, or ext)"),
        };
        let spec = DegradationSpec {
            noise: noise_kind,
            snr_db,
            lowpass_hz,
            codec: codec.clone(),
        };
        let outcome = degrade::apply(&clip, &spec, file_seed, noise_clip.as_ref(), &work_dir)?;
        clipped_count += outcome.clipped as usize;

        let id = format!("{}-deg", record.utterance_id);
        let rel = format!("audio/{id}.wav");
        audio::save_wav(&outcome.clip, out.join(&rel))?;
        let mut degraded = record.clone();
        degraded.utterance_id = id;
        degraded.audio_path = rel;
        degraded.degradation = Some(DegradationEcho {
            spec,
            seed: file_seed,
            clipped: outcome.clipped,
        });
        if outcome.clipped {
            degraded.flags.push(FLAG_CLIPPED.into());
        }
        records.push(degraded);
    }

    let _ = fs::remove_dir_all(&work_dir);
    let mut out_manifest = Manifest::new(records);
    out_manifest.directives.push(config.echo());
    let path = out.join("corpus.manifest");
    write_manifest(&out_manifest, &path)?;
    println!(
        "degraded {} utterances ({} peak-limited) into {}",
        out_manifest.records.len(),
        clipped_count,
        path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// featurize
// ---------------------------------------------------------------------------

pub fn cmd_featurize(manifest_path: &Path, cache: &Path, config: &PipelineConfig) -> Result<()> {
    let manifest = read_manifest(manifest_path)?;
    fs::create_dir_all(cache)?;
    let results = parallel::map_ordered(config.jobs, &manifest.records, |record| {
        let clip = load_clip(manifest_path, record)?;
        let clip = canonical_clip(&clip, config.seconds)?;
        let spec = features::featurize(&clip)?;
        features::save_spectrogram(&spec, cache.join(format!("{}.spec", record.utterance_id)))?;
        Ok::<(usize, usize), anyhow::Error>((spec.mel_bins(), spec.frames()))
    });
    let mut shape = (0, 0);
    for result in results {
        shape = result?;
    }
    println!(
        "cached {} spectrograms ({}x{}) in {}",
        manifest.records.len(),
        shape.0,
        shape.1,
        cache.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn examples_for(
    manifest_path: &Path,
    records: &[&UtteranceRecord],
    cache: Option<&Path>,
    config: &PipelineConfig,
) -> Result<Vec<Example>> {
    let specs = parallel::map_ordered(config.jobs, records, |record| {
        features_for(manifest_path, record, cache, config.seconds)
    });
    records
        .iter()
        .zip(specs)
        .map(|(record, spec)| {
            Ok(Example {
                spec: spec?,
                label: record.class_label,
            })
        })
        .collect()
}

pub fn cmd_train(
    manifest_path: &Path,
    out: &Path,
    cache: Option<&Path>,
    config: &PipelineConfig,
) -> Result<()> {
    let manifest = read_manifest(manifest_path)?;
    let split = speaker_disjoint_split(
        &manifest.records,
        config.train.split_fraction,
        config.seed,
    )?;
    let by_id: BTreeMap<&str, &UtteranceRecord> = manifest
        .records
        .iter()
        .map(|r| (r.utterance_id.as_str(), r))
        .collect();
    let train_records: Vec<&UtteranceRecord> =
        split.train.iter().map(|id| by_id[id.as_str()]).collect();
    let val_records: Vec<&UtteranceRecord> =
        split.test.iter().map(|id| by_id[id.as_str()]).collect();
    println!(
        "training on {} utterances ({} speakers), validating on {} ({} speakers)",
        train_records.len(),
        split.train_speakers.len(),
        val_records.len(),
        split.test_speakers.len()
    );

    let train_set = examples_for(manifest_path, &train_records, cache, config)?;
    let val_set = examples_for(manifest_path, &val_records, cache, config)?;
    let initial = ModelParams::init(&config.model, config.seed)?;
    let result = train::fit(&train_set, &val_set, initial, &config.model, &config.train)?;

    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    model::save_params(&result.params, &config.model, out)?;
    let history_path = out.with_extension("history");
    let mut history = format!("#{}\n", config.echo());
    history.push_str(&train::history_lines(&result.history));
    fs::write(&history_path, history)?;
    let last = result.history.last().expect("nonempty history");
    println!(
        "stopped after epoch {} (best epoch {}); final val_loss {:.4}, val_acc {:.2}%",
        last.epoch,
        result.best_epoch,
        last.val_loss,
        100.0 * last.val_acc
    );
    println!("checkpoint: {}", out.display());
    println!("history:    {}", history_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

pub fn cmd_evaluate(
    manifest_path: &Path,
    ckpt: &Path,
    report_prefix: &Path,
    cache: Option<&Path>,
    config: &PipelineConfig,
) -> Result<()> {
    let manifest = read_manifest(manifest_path)?;
    let params = model::load_params(&config.model, ckpt)?;
    let records: Vec<&UtteranceRecord> = manifest.records.iter().collect();
    let outputs = parallel::map_ordered(config.jobs, &records, |record| {
        let spec = features_for(manifest_path, record, cache, config.seconds)?;
        let out = model::forward(&spec, &params, &config.model)?;
        Ok::<model::ForwardOutput, anyhow::Error>(out)
    });

    let mut predictions = Vec::with_capacity(records.len());
    for (record, output) in records.iter().zip(outputs) {
        let output = output?;
        let predicted = output
            .probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut probs = [0.0; 4];
        for (slot, p) in probs.iter_mut().zip(output.probs.iter()) {
            *slot = *p;
        }
        predictions.push(Prediction {
            record: (*record).clone(),
            predicted: ClassLabel::from_index(predicted)
                .ok_or_else(|| anyhow!("prediction index {predicted} out of range"))?,
            probs,
        });
    }
    let report = eval::evaluate(&predictions)?;

    if let Some(parent) = report_prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let text_path = report_prefix.with_extension("txt");
    let lines_path = report_prefix.with_extension("tsv");
    let mut text = report.render_text();
    text.push('\n');
    text.push_str(&EvalReport::render_group_table(&report.per_group));
    fs::write(&text_path, text)?;
    fs::write(&lines_path, format!("#{}\n{}", config.echo(), report.to_lines()))?;
    println!(
        "accuracy {:.2}% over {} utterances; eer {:.4}",
        report.accuracy_pct, report.total, report.eer
    );
    println!("report: {} and {}", text_path.display(), lines_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// validate + stats
// ---------------------------------------------------------------------------

/// Returns false when violations were found (caller exits nonzero).
pub fn cmd_validate(manifest_path: &Path) -> Result<bool> {
    let manifest = read_manifest(manifest_path)?;
    let report = validate(&manifest.records, manifest.declares_clean_complete());
    print!("{}", report.summary);
    if report.is_clean() {
        println!("ok: no violations");
        return Ok(true);
    }
    for violation in &report.violations {
        eprintln!("violation {violation}");
    }
    eprintln!("{} violations", report.violations.len());
    Ok(false)
}

pub fn cmd_stats(scores_path: &Path, by_group: bool) -> Result<()> {
    let text = fs::read_to_string(scores_path)
        .with_context(|| format!("reading scores {}", scores_path.display()))?;
    let mut grouped: BTreeMap<Option<Group>, Vec<f64>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let first = parts.next().unwrap();
        let (group, score_text) = match parts.next() {
            Some(score) => (
                Some(Group::from_token(first).ok_or_else(|| {
                    anyhow!("{}:{}: unknown group '{first}'", scores_path.display(), i + 1)
                })?),
                score,
            ),
            None => (None, first),
        };
        let score: f64 = score_text.parse().with_context(|| {
            format!("{}:{}: bad score '{score_text}'", scores_path.display(), i + 1)
        })?;
        grouped.entry(if by_group { group } else { None }).or_default().push(score);
    }
    if grouped.is_empty() {
        bail!("no scores in {}", scores_path.display());
    }

    if by_group {
        let mut rows = Vec::new();
        for (group, scores) in &grouped {
            let group = group.ok_or_else(|| anyhow!("--groups requires group-tagged lines"))?;
            rows.push((group, eval::reliability_stats(scores, eval::MODE_BIN_WIDTH)?));
        }
        print!("{}", EvalReport::render_group_table(&rows));
    } else {
        let all: Vec<f64> = grouped.into_values().flatten().collect();
        let s = eval::reliability_stats(&all, eval::MODE_BIN_WIDTH)?;
        println!(
            "n={} mean={:.4} std={:.4} max={:.4} min={:.4} mode={:.4}",
            all.len(),
            s.mean,
            s.std_dev,
            s.max,
            s.min,
            s.mode
        );
    }
    Ok(())
}
