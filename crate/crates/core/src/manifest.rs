//! Dataset metadata: the utterance record schema, the line-delimited
//! manifest format, validation against the corpus counting rules, and
//! directory ingestion for externally produced audio.
//!
//! Manifest contract: one UTF-8 line per record, fields in a fixed order as
//! tab-separated `key=value` pairs, `-` for absent optionals, lists in
//! bracketed comma form, floats with six significant digits, LF endings.
//! Lines starting with `#` are directives (`#clean-complete`) or comments.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};

use thiserror::Error;

use crate::compose::SourceKind;
use crate::degrade::{Codec, DegradationSpec, NoiseKind};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest parse error at {path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("invalid record field: {0}")]
    Field(String),

    #[error("duplicate utterance id '{id}' ({first} and {second})")]
    DuplicateId {
        id: String,
        first: String,
        second: String,
    },

    #[error("unreadable audio file {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: crate::audio::AudioError,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ManifestError>;

/// Four-way spoofing class, the model's target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    Human = 0,
    Cloned = 1,
    Generated = 2,
    Hybrid = 3,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Human,
        ClassLabel::Cloned,
        ClassLabel::Generated,
        ClassLabel::Hybrid,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Binary ground truth: 0 = real, 1 = fake.
    pub fn real_tag(self) -> u8 {
        match self {
            ClassLabel::Human => 0,
            _ => 1,
        }
    }
}

/// Six-way spoofing group, the dataset's ground truth; the class label is
/// derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Genuine human speech.
    G1,
    /// Pure voice-cloned speech.
    G2,
    /// Pure synthetic speech without speaker conditioning.
    G3,
    /// Mixed synthetic + human segments.
    G4,
    /// Mixed cloned + synthetic segments.
    G5,
    /// Human-only segments recombined.
    G6,
}

impl Group {
    pub const ALL: [Group; 6] = [
        Group::G1,
        Group::G2,
        Group::G3,
        Group::G4,
        Group::G5,
        Group::G6,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Group::G1 => "G1",
            Group::G2 => "G2",
            Group::G3 => "G3",
            Group::G4 => "G4",
            Group::G5 => "G5",
            Group::G6 => "G6",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|g| g.token() == s)
    }

    pub fn index(self) -> usize {
        match self {
            Group::G1 => 0,
            Group::G2 => 1,
            Group::G3 => 2,
            Group::G4 => 3,
            Group::G5 => 4,
            Group::G6 => 5,
        }
    }

    /// Fixed group-to-class mapping: G1 and G6 are real, G4/G5 are hybrid.
    pub fn class_label(self) -> ClassLabel {
        match self {
            Group::G1 | Group::G6 => ClassLabel::Human,
            Group::G2 => ClassLabel::Cloned,
            Group::G3 => ClassLabel::Generated,
            Group::G4 | Group::G5 => ClassLabel::Hybrid,
        }
    }

    /// Whether hybrids of this group must carry segment boundaries.
    pub fn requires_segments(self) -> bool {
        matches!(self, Group::G4 | Group::G5 | Group::G6)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gender {
    Male,
    Female,
    Other,
}

impl Gender {
    pub fn token(self) -> &'static str {
        match self {
            Gender::Male => "m",
            Gender::Female => "f",
            Gender::Other => "x",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "m" => Some(Gender::Male),
            "f" => Some(Gender::Female),
            "x" => Some(Gender::Other),
            _ => None,
        }
    }
}

/// The eight scripted sentence categories each speaker records, with the
/// per-speaker count for the complete corpus (8+8+8+16*5 = 104).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SentenceType {
    Alphanumeric,
    Alphabetic,
    Numeric,
    NaturalEnglish,
    CoherentPair,
    UnrelatedPair,
    GrammaticalError,
    SemanticAnomaly,
}

impl SentenceType {
    pub const ALL: [SentenceType; 8] = [
        SentenceType::Alphanumeric,
        SentenceType::Alphabetic,
        SentenceType::Numeric,
        SentenceType::NaturalEnglish,
        SentenceType::CoherentPair,
        SentenceType::UnrelatedPair,
        SentenceType::GrammaticalError,
        SentenceType::SemanticAnomaly,
    ];

    pub fn token(self) -> &'static str {
        match self {
            SentenceType::Alphanumeric => "alphanumeric",
            SentenceType::Alphabetic => "alphabetic",
            SentenceType::Numeric => "numeric",
            SentenceType::NaturalEnglish => "natural_english",
            SentenceType::CoherentPair => "coherent_pair",
            SentenceType::UnrelatedPair => "unrelated_pair",
            SentenceType::GrammaticalError => "grammatical_error",
            SentenceType::SemanticAnomaly => "semantic_anomaly",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|t| t.token() == s)
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|t| *t == self).unwrap()
    }

    /// Sentences of this type each speaker records in the full corpus.
    pub fn per_speaker_count(self) -> usize {
        match self {
            SentenceType::Alphanumeric | SentenceType::Alphabetic | SentenceType::Numeric => 8,
            _ => 16,
        }
    }

    /// Total scripted sentences per speaker: 104.
    pub fn total_per_speaker() -> usize {
        Self::ALL.iter().map(|t| t.per_speaker_count()).sum()
    }
}

/// Speaker-reference context level used when cloning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloningCondition {
    /// Single sentence reference.
    C1,
    /// 16-sentence subset reference.
    C2,
    /// Full 104-sentence corpus reference.
    C3,
    /// Target sentence embedding.
    C4,
}

impl CloningCondition {
    pub fn token(self) -> &'static str {
        match self {
            CloningCondition::C1 => "C1",
            CloningCondition::C2 => "C2",
            CloningCondition::C3 => "C3",
            CloningCondition::C4 => "C4",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "C1" => Some(CloningCondition::C1),
            "C2" => Some(CloningCondition::C2),
            "C3" => Some(CloningCondition::C3),
            "C4" => Some(CloningCondition::C4),
            _ => None,
        }
    }
}

pub const SIMILARITY_THRESHOLD: f64 = 0.70;
/// Flag acknowledging a similarity score below the threshold.
pub const FLAG_LOW_SIMILARITY: &str = "low_similarity";
/// Flag set by ingestion when sidecar metadata was missing.
pub const FLAG_INCOMPLETE: &str = "incomplete";
/// Flag set when the degradation peak limiter clipped samples.
pub const FLAG_CLIPPED: &str = "clipped";

/// One segment's placement inside a composed utterance, in output samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentBoundary {
    pub kind: SourceKind,
    pub start: usize,
    pub end: usize,
}

/// Degradation provenance echoed into the manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationEcho {
    pub spec: DegradationSpec,
    pub seed: u64,
    pub clipped: bool,
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub age: u32,
    pub gender: Gender,
    pub sentence_type: SentenceType,
    pub class_label: ClassLabel,
    pub group: Group,
    pub cloning_condition: Option<CloningCondition>,
    pub similarity_score: Option<f64>,
    pub segment_boundaries: Option<Vec<SegmentBoundary>>,
    pub degradation: Option<DegradationEcho>,
    pub flags: Vec<String>,
    pub audio_path: String,
}

/// Full manifest: leading directives plus records, order-preserving.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub directives: Vec<String>,
    pub records: Vec<UtteranceRecord>,
}

pub const DIRECTIVE_CLEAN_COMPLETE: &str = "clean-complete";

impl Manifest {
    pub fn new(records: Vec<UtteranceRecord>) -> Self {
        Self {
            directives: Vec::new(),
            records,
        }
    }

    pub fn declares_clean_complete(&self) -> bool {
        self.directives.iter().any(|d| d == DIRECTIVE_CLEAN_COMPLETE)
    }
}

// ---------------------------------------------------------------------------
// Float formatting: six significant digits, %g-style plain/scientific choice
// ---------------------------------------------------------------------------

/// Formats with six significant digits, trimming trailing zeros; switches to
/// scientific notation outside [1e-4, 1e6).
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.5e}", x);
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("exponent");
    let neg = mant.starts_with('-');
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    debug_assert_eq!(digits.len(), 6);
    let sign = if neg { "-" } else { "" };

    if !(-4..6).contains(&exp) {
        let trimmed = digits.trim_end_matches('0');
        let trimmed = if trimmed.is_empty() { "0" } else { trimmed };
        if trimmed.len() == 1 {
            return format!("{sign}{trimmed}e{exp}");
        }
        return format!("{sign}{}.{}e{exp}", &trimmed[..1], &trimmed[1..]);
    }
    if exp >= 0 {
        let int_len = exp as usize + 1;
        let int_part = &digits[..int_len];
        let frac = digits[int_len..].trim_end_matches('0');
        if frac.is_empty() {
            format!("{sign}{int_part}")
        } else {
            format!("{sign}{int_part}.{frac}")
        }
    } else {
        let zeros = "0".repeat((-exp - 1) as usize);
        let frac = digits.trim_end_matches('0');
        format!("{sign}0.{zeros}{frac}")
    }
}

// ---------------------------------------------------------------------------
// Record serialization
// ---------------------------------------------------------------------------

const FIELD_ORDER: [&str; 13] = [
    "utt", "spk", "age", "gender", "sentence", "class", "group", "clone_cond", "sim", "segments",
    "degrade", "flags", "audio",
];

fn noise_token(noise: &NoiseKind) -> String {
    match noise {
        NoiseKind::None => "none".into(),
        NoiseKind::White => "white".into(),
        NoiseKind::External(id) => format!("ext:{id}"),
    }
}

fn parse_noise(s: &str) -> Result<NoiseKind> {
    match s {
        "none" => Ok(NoiseKind::None),
        "white" => Ok(NoiseKind::White),
        other => match other.strip_prefix("ext:") {
            Some(id) if !id.is_empty() => Ok(NoiseKind::External(id.into())),
            _ => Err(ManifestError::Field(format!("unknown noise kind '{s}'"))),
        },
    }
}

fn codec_token(codec: &Codec) -> String {
    match codec {
        Codec::None => "none".into(),
        Codec::Passthrough(_) => "ext".into(),
        Codec::Simulated { bitrate_kbps } => format!("sim:{bitrate_kbps}"),
    }
}

fn parse_codec(s: &str) -> Result<Codec> {
    match s {
        "none" => Ok(Codec::None),
        // the command template is environment configuration, not data
        "ext" => Ok(Codec::Passthrough(String::new())),
        other => match other.strip_prefix("sim:") {
            Some(kbps) => Ok(Codec::Simulated {
                bitrate_kbps: kbps
                    .parse()
                    .map_err(|_| ManifestError::Field(format!("bad bitrate in '{s}'")))?,
            }),
            None => Err(ManifestError::Field(format!("unknown codec '{s}'"))),
        },
    }
}

fn degradation_token(echo: &DegradationEcho) -> String {
    let lowpass = match echo.spec.lowpass_hz {
        Some(hz) => format_sig6(hz),
        None => "-".into(),
    };
    format!(
        "{{noise={},snr={},lowpass={},codec={},seed={},clipped={}}}",
        noise_token(&echo.spec.noise),
        format_sig6(echo.spec.snr_db),
        lowpass,
        codec_token(&echo.spec.codec),
        echo.seed,
        echo.clipped
    )
}

fn parse_degradation(s: &str) -> Result<DegradationEcho> {
    let body = s
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| ManifestError::Field(format!("bad degradation '{s}'")))?;
    let mut noise = None;
    let mut snr = None;
    let mut lowpass = None;
    let mut codec = None;
    let mut seed = None;
    let mut clipped = None;
    for part in body.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| ManifestError::Field(format!("bad degradation entry '{part}'")))?;
        match key {
            "noise" => noise = Some(parse_noise(value)?),
            "snr" => {
                snr = Some(value.parse::<f64>().map_err(|_| {
                    ManifestError::Field(format!("bad snr '{value}'"))
                })?)
            }
            "lowpass" => {
                lowpass = if value == "-" {
                    Some(None)
                } else {
                    Some(Some(value.parse::<f64>().map_err(|_| {
                        ManifestError::Field(format!("bad lowpass '{value}'"))
                    })?))
                }
            }
            "codec" => codec = Some(parse_codec(value)?),
            "seed" => {
                seed = Some(value.parse::<u64>().map_err(|_| {
                    ManifestError::Field(format!("bad seed '{value}'"))
                })?)
            }
            "clipped" => {
                clipped = Some(value.parse::<bool>().map_err(|_| {
                    ManifestError::Field(format!("bad clipped '{value}'"))
                })?)
            }
            _ => return Err(ManifestError::Field(format!("unknown degradation key '{key}'"))),
        }
    }
    let missing = || ManifestError::Field(format!("incomplete degradation '{s}'"));
    Ok(DegradationEcho {
        spec: DegradationSpec {
            noise: noise.ok_or_else(missing)?,
            snr_db: snr.ok_or_else(missing)?,
            lowpass_hz: lowpass.ok_or_else(missing)?,
            codec: codec.ok_or_else(missing)?,
        },
        seed: seed.ok_or_else(missing)?,
        clipped: clipped.ok_or_else(missing)?,
    })
}

fn segments_token(segments: &[SegmentBoundary]) -> String {
    let parts: Vec<String> = segments
        .iter()
        .map(|s| format!("({}:{}:{})", s.kind.token(), s.start, s.end))
        .collect();
    format!("[{}]", parts.join(","))
}

fn parse_segments(s: &str) -> Result<Vec<SegmentBoundary>> {
    let body = s
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| ManifestError::Field(format!("bad segment list '{s}'")))?;
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split(',')
        .map(|part| {
            let inner = part
                .strip_prefix('(')
                .and_then(|p| p.strip_suffix(')'))
                .ok_or_else(|| ManifestError::Field(format!("bad segment '{part}'")))?;
            let mut it = inner.split(':');
            let kind = it
                .next()
                .and_then(SourceKind::from_token)
                .ok_or_else(|| ManifestError::Field(format!("bad segment kind in '{part}'")))?;
            let start = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| ManifestError::Field(format!("bad segment start in '{part}'")))?;
            let end = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| ManifestError::Field(format!("bad segment end in '{part}'")))?;
            Ok(SegmentBoundary { kind, start, end })
        })
        .collect()
}

fn check_value(value: &str) -> Result<()> {
    if value.contains('\t') || value.contains('\n') {
        return Err(ManifestError::Field(format!(
            "value '{value}' contains a tab or newline"
        )));
    }
    Ok(())
}

/// Serializes one record to its manifest line.
pub fn record_to_line(record: &UtteranceRecord) -> Result<String> {
    for value in [
        &record.utterance_id,
        &record.speaker_id,
        &record.audio_path,
    ] {
        check_value(value)?;
    }
    for flag in &record.flags {
        check_value(flag)?;
        if flag.contains(',') || flag.is_empty() {
            return Err(ManifestError::Field(format!("bad flag '{flag}'")));
        }
    }
    let flags = if record.flags.is_empty() {
        "-".into()
    } else {
        format!("[{}]", record.flags.join(","))
    };
    let fields: [String; 13] = [
        record.utterance_id.clone(),
        record.speaker_id.clone(),
        record.age.to_string(),
        record.gender.token().into(),
        record.sentence_type.token().into(),
        record.class_label.index().to_string(),
        record.group.token().into(),
        record
            .cloning_condition
            .map(|c| c.token().into())
            .unwrap_or_else(|| "-".to_string()),
        record
            .similarity_score
            .map(format_sig6)
            .unwrap_or_else(|| "-".to_string()),
        record
            .segment_boundaries
            .as_ref()
            .map(|s| segments_token(s))
            .unwrap_or_else(|| "-".to_string()),
        record
            .degradation
            .as_ref()
            .map(degradation_token)
            .unwrap_or_else(|| "-".to_string()),
        flags,
        record.audio_path.clone(),
    ];
    let line: Vec<String> = FIELD_ORDER
        .iter()
        .zip(fields)
        .map(|(key, value)| format!("{key}={value}"))
        .collect();
    Ok(line.join("\t"))
}

/// Parses one manifest line.
pub fn record_from_line(line: &str) -> Result<UtteranceRecord> {
    let mut values: Vec<&str> = Vec::with_capacity(FIELD_ORDER.len());
    let parts: Vec<&str> = line.split('\t').collect();
    if parts.len() != FIELD_ORDER.len() {
        return Err(ManifestError::Field(format!(
            "expected {} fields, got {}",
            FIELD_ORDER.len(),
            parts.len()
        )));
    }
    for (part, expected) in parts.iter().zip(FIELD_ORDER) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| ManifestError::Field(format!("missing '=' in '{part}'")))?;
        if key != expected {
            return Err(ManifestError::Field(format!(
                "expected field '{expected}', got '{key}'"
            )));
        }
        values.push(value);
    }

    let field = |s: &str, what: &str| -> Result<String> {
        if s.is_empty() {
            return Err(ManifestError::Field(format!("empty {what}")));
        }
        Ok(s.to_string())
    };
    let class_index: usize = values[5]
        .parse()
        .map_err(|_| ManifestError::Field(format!("bad class '{}'", values[5])))?;
    Ok(UtteranceRecord {
        utterance_id: field(values[0], "utterance id")?,
        speaker_id: field(values[1], "speaker id")?,
        age: values[2]
            .parse()
            .map_err(|_| ManifestError::Field(format!("bad age '{}'", values[2])))?,
        gender: Gender::from_token(values[3])
            .ok_or_else(|| ManifestError::Field(format!("bad gender '{}'", values[3])))?,
        sentence_type: SentenceType::from_token(values[4])
            .ok_or_else(|| ManifestError::Field(format!("bad sentence type '{}'", values[4])))?,
        class_label: ClassLabel::from_index(class_index)
            .ok_or_else(|| ManifestError::Field(format!("bad class '{}'", values[5])))?,
        group: Group::from_token(values[6])
            .ok_or_else(|| ManifestError::Field(format!("bad group '{}'", values[6])))?,
        cloning_condition: match values[7] {
            "-" => None,
            s => Some(
                CloningCondition::from_token(s)
                    .ok_or_else(|| ManifestError::Field(format!("bad cloning condition '{s}'")))?,
            ),
        },
        similarity_score: match values[8] {
            "-" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|_| ManifestError::Field(format!("bad similarity '{s}'")))?,
            ),
        },
        segment_boundaries: match values[9] {
            "-" => None,
            s => Some(parse_segments(s)?),
        },
        degradation: match values[10] {
            "-" => None,
            s => Some(parse_degradation(s)?),
        },
        flags: match values[11] {
            "-" => Vec::new(),
            s => {
                let body = s
                    .strip_prefix('[')
                    .and_then(|s| s.strip_suffix(']'))
                    .ok_or_else(|| ManifestError::Field(format!("bad flag list '{s}'")))?;
                body.split(',').map(str::to_string).collect()
            }
        },
        audio_path: field(values[12], "audio path")?,
    })
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for directive in &manifest.directives {
        out.push('#');
        out.push_str(directive);
        out.push('\n');
    }
    for record in &manifest.records {
        out.push_str(&record_to_line(record)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut manifest = Manifest::default();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        if let Some(directive) = line.strip_prefix('#') {
            manifest.directives.push(directive.to_string());
            continue;
        }
        let record = record_from_line(line).map_err(|e| ManifestError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        manifest.records.push(record);
    }
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// A broken invariant, identified by rule id and offending record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: &'static str,
    pub utterance_id: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.rule, self.utterance_id, self.detail)
    }
}

/// Aggregate corpus counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSummary {
    pub total: usize,
    pub per_class: [usize; 4],
    pub per_group: [usize; 6],
    pub per_speaker: BTreeMap<String, usize>,
    pub per_sentence_type: [usize; 8],
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "utterances: {}", self.total)?;
        writeln!(f, "speakers: {}", self.per_speaker.len())?;
        for (class, count) in ClassLabel::ALL.iter().zip(self.per_class) {
            writeln!(f, "class {} ({:?}): {}", class.index(), class, count)?;
        }
        for (group, count) in Group::ALL.iter().zip(self.per_group) {
            writeln!(f, "group {}: {}", group.token(), count)?;
        }
        for (st, count) in SentenceType::ALL.iter().zip(self.per_sentence_type) {
            writeln!(f, "sentence {}: {}", st.token(), count)?;
        }
        Ok(())
    }
}

/// Validation outcome: the summary always, plus any rule violations.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub summary: DatasetSummary,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every record invariant plus, when `clean_complete` is set, the
/// corpus counting rules (per-speaker sentence-type counts and class
/// balance). Pure; never mutates input.
pub fn validate(records: &[UtteranceRecord], clean_complete: bool) -> ValidationReport {
    let mut summary = DatasetSummary {
        total: records.len(),
        ..Default::default()
    };
    let mut violations = Vec::new();
    let mut seen_ids: BTreeMap<&str, &str> = BTreeMap::new();
    let mut speaker_sentences: BTreeMap<&str, [usize; 8]> = BTreeMap::new();

    for record in records {
        summary.per_class[record.class_label.index()] += 1;
        summary.per_group[record.group.index()] += 1;
        *summary
            .per_speaker
            .entry(record.speaker_id.clone())
            .or_default() += 1;
        summary.per_sentence_type[record.sentence_type.index()] += 1;
        speaker_sentences.entry(&record.speaker_id).or_default()
            [record.sentence_type.index()] += 1;

        if let Some(first) = seen_ids.insert(&record.utterance_id, &record.audio_path) {
            violations.push(Violation {
                rule: "duplicate-utterance-id",
                utterance_id: record.utterance_id.clone(),
                detail: format!("appears at '{}' and '{}'", first, record.audio_path),
            });
        }
        if record.group.class_label() != record.class_label {
            violations.push(Violation {
                rule: "group-class-mismatch",
                utterance_id: record.utterance_id.clone(),
                detail: format!(
                    "group {} implies class {}, record says {}",
                    record.group.token(),
                    record.group.class_label().index(),
                    record.class_label.index()
                ),
            });
        }
        if record.cloning_condition.is_some() {
            let acknowledged = record.flags.iter().any(|f| f == FLAG_LOW_SIMILARITY);
            match record.similarity_score {
                Some(sim) if !(0.0..=1.0).contains(&sim) => violations.push(Violation {
                    rule: "similarity-out-of-range",
                    utterance_id: record.utterance_id.clone(),
                    detail: format!("similarity {sim} outside [0, 1]"),
                }),
                Some(sim) if sim < SIMILARITY_THRESHOLD && !acknowledged => {
                    violations.push(Violation {
                        rule: "similarity-below-threshold",
                        utterance_id: record.utterance_id.clone(),
                        detail: format!(
                            "similarity {} below {SIMILARITY_THRESHOLD} and not flagged '{FLAG_LOW_SIMILARITY}'",
                            format_sig6(sim)
                        ),
                    })
                }
                None if !acknowledged => violations.push(Violation {
                    rule: "similarity-missing",
                    utterance_id: record.utterance_id.clone(),
                    detail: "cloning condition present without a similarity score".into(),
                }),
                _ => {}
            }
        }
        match &record.segment_boundaries {
            None if record.group.requires_segments() => violations.push(Violation {
                rule: "segments-missing",
                utterance_id: record.utterance_id.clone(),
                detail: format!("group {} requires segment boundaries", record.group.token()),
            }),
            Some(segments) => {
                let ordered = segments.iter().all(|s| s.start < s.end)
                    && segments.windows(2).all(|w| w[0].start < w[1].start);
                if segments.is_empty() || !ordered {
                    violations.push(Violation {
                        rule: "segments-invalid",
                        utterance_id: record.utterance_id.clone(),
                        detail: "segment boundaries must be nonempty and ordered with start < end"
                            .into(),
                    });
                }
            }
            None => {}
        }
    }

    if clean_complete {
        let expected: [usize; 8] = SentenceType::ALL.map(|t| t.per_speaker_count());
        for (speaker, counts) in &speaker_sentences {
            if counts != &expected {
                violations.push(Violation {
                    rule: "sentence-type-counts",
                    utterance_id: format!("speaker:{speaker}"),
                    detail: format!("sentence-type counts {counts:?}, expected {expected:?}"),
                });
            }
        }
        if summary.per_class.iter().any(|&c| c != summary.per_class[0]) {
            violations.push(Violation {
                rule: "class-imbalance",
                utterance_id: "corpus".into(),
                detail: format!("per-class counts {:?} are not balanced", summary.per_class),
            });
        }
    }

    ValidationReport {
        summary,
        violations,
    }
}

// ---------------------------------------------------------------------------
// Directory ingestion
// ---------------------------------------------------------------------------

/// Computes `target` relative to `base_dir`; both should be absolute.
pub fn relative_path(base_dir: &Path, target: &Path) -> PathBuf {
    let base: Vec<Component> = base_dir.components().collect();
    let target_parts: Vec<Component> = target.components().collect();
    let common = base
        .iter()
        .zip(&target_parts)
        .take_while(|(a, b)| a == b)
        .count();
    let mut out = PathBuf::new();
    for _ in common..base.len() {
        out.push("..");
    }
    for part in &target_parts[common..] {
        out.push(part);
    }
    out
}

fn parse_sidecar(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|line| {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                return None;
            }
            line.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

/// Scans a directory for `.wav` files with optional `.meta` sidecars (the
/// same `key=value` dialect, one pair per line) and builds one record per
/// file. Files without complete metadata are flagged rather than dropped.
/// Audio paths are stored relative to `manifest_dir`.
pub fn ingest_directory(root: &Path, manifest_dir: &Path) -> Result<Vec<UtteranceRecord>> {
    let entries = fs::read_dir(root).map_err(|source| ManifestError::Io {
        path: root.display().to_string(),
        source,
    })?;
    let mut wavs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "wav"))
        .collect();
    wavs.sort();

    let mut seen: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut records = Vec::with_capacity(wavs.len());
    for wav in wavs {
        let id = wav
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default();
        if let Some(first) = seen.insert(id.clone(), wav.clone()) {
            return Err(ManifestError::DuplicateId {
                id,
                first: first.display().to_string(),
                second: wav.display().to_string(),
            });
        }
        // reject corrupt or unsupported audio at ingest time
        crate::audio::load_wav(&wav).map_err(|source| ManifestError::Unreadable {
            path: wav.display().to_string(),
            source,
        })?;
        let meta_path = wav.with_extension("meta");
        let meta = match fs::read_to_string(&meta_path) {
            Ok(text) => Some(parse_sidecar(&text)),
            Err(_) => None,
        };
        let mut flags = Vec::new();
        let mut incomplete = meta.is_none();
        let meta = meta.unwrap_or_default();
        let lookup = |key: &str| meta.get(key).map(String::as_str);

        let group = lookup("group").and_then(Group::from_token).unwrap_or_else(|| {
            incomplete = true;
            Group::G1
        });
        let required = |value: Option<&str>, or: &str, incomplete: &mut bool| -> String {
            match value {
                Some(v) if !v.is_empty() => v.to_string(),
                _ => {
                    *incomplete = true;
                    or.to_string()
                }
            }
        };
        let speaker_id = required(lookup("spk"), "unknown", &mut incomplete);
        let age = match lookup("age").and_then(|v| v.parse().ok()) {
            Some(a) => a,
            None => {
                incomplete = true;
                0
            }
        };
        let gender = match lookup("gender").and_then(Gender::from_token) {
            Some(g) => g,
            None => {
                incomplete = true;
                Gender::Other
            }
        };
        let sentence_type = match lookup("sentence").and_then(SentenceType::from_token) {
            Some(s) => s,
            None => {
                incomplete = true;
                SentenceType::NaturalEnglish
            }
        };
        if incomplete {
            flags.push(FLAG_INCOMPLETE.to_string());
        }

        let abs = fs::canonicalize(&wav).map_err(|source| ManifestError::Io {
            path: wav.display().to_string(),
            source,
        })?;
        let rel = relative_path(manifest_dir, &abs);
        records.push(UtteranceRecord {
            utterance_id: id,
            speaker_id,
            age,
            gender,
            sentence_type,
            class_label: group.class_label(),
            group,
            cloning_condition: lookup("clone_cond").and_then(CloningCondition::from_token),
            similarity_score: lookup("sim").and_then(|v| v.parse().ok()),
            segment_boundaries: None,
            degradation: None,
            flags,
            audio_path: rel.to_string_lossy().to_string(),
        });
    }
    Ok(records)
}
