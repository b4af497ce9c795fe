//! Evaluation protocol: the reliability threshold rule, accuracy, confusion
//! matrices, per-class precision/recall/F1 with FPR/FNR, EER over
//! spoof-vs-genuine scores, and per-group reliability statistics.

use std::fmt::Write as _;

use thiserror::Error;

use crate::manifest::{ClassLabel, Group, UtteranceRecord};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("bad record '{utterance_id}': {detail}")]
    Data {
        utterance_id: String,
        detail: String,
    },

    #[error("malformed report line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Histogram bin width used for the mode of reliability scores.
pub const MODE_BIN_WIDTH: f64 = 0.01;

/// Binary decision from the reliability threshold rule: 0 when
/// `|real_tag - reliability| < 0.5`, else 1 (the boundary counts as 1).
pub fn threshold_classify(real_tag: u8, reliability: f64) -> Result<u8> {
    if real_tag > 1 {
        return Err(EvalError::Argument(format!(
            "real_tag must be 0 or 1, got {real_tag}"
        )));
    }
    if !(0.0..=1.0).contains(&reliability) {
        return Err(EvalError::Argument(format!(
            "reliability {reliability} outside [0, 1]"
        )));
    }
    Ok(((real_tag as f64 - reliability).abs() >= 0.5) as u8)
}

/// Percentage accuracy `100 * correct / total`, rounded half-up to two
/// decimals.
pub fn accuracy(correct: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(EvalError::Argument("accuracy of zero samples".into()));
    }
    if correct > total {
        return Err(EvalError::Argument(format!(
            "correct {correct} exceeds total {total}"
        )));
    }
    let pct = 100.0 * correct as f64 / total as f64;
    Ok((pct * 100.0 + 0.5).floor() / 100.0)
}

/// Square truth-by-prediction count matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn at(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes).map(|i| self.at(i, i)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> usize {
        (0..self.classes).map(|p| self.at(truth, p)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> usize {
        (0..self.classes).map(|t| self.at(t, predicted)).sum()
    }
}

/// Precision, recall, F1, FPR, and FNR for one class against the rest.
/// Zero denominators yield zero by convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    pub fnr: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class one-vs-rest metrics from a confusion matrix.
pub fn prf_from_confusion(confusion: &ConfusionMatrix) -> Vec<ClassMetrics> {
    let total = confusion.total();
    (0..confusion.classes())
        .map(|k| {
            let tp = confusion.at(k, k);
            let fp = confusion.col_sum(k) - tp;
            let fn_ = confusion.row_sum(k) - tp;
            let tn = total - tp - fp - fn_;
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                fpr: ratio(fp, fp + tn),
                fnr: ratio(fn_, fn_ + tp),
            }
        })
        .collect()
}

/// Equal error rate for spoof-vs-genuine scores (higher = more spoof-like).
/// Thresholds sweep the union of observed scores; the crossing of FAR and
/// FRR is linearly interpolated.
pub fn eer(genuine_scores: &[f64], spoof_scores: &[f64]) -> Result<f64> {
    if genuine_scores.is_empty() || spoof_scores.is_empty() {
        return Err(EvalError::Argument("empty score list".into()));
    }
    for &s in genuine_scores.iter().chain(spoof_scores) {
        if !(0.0..=1.0).contains(&s) {
            return Err(EvalError::Argument(format!("score {s} outside [0, 1]")));
        }
    }
    // candidate thresholds: all scores plus sentinels so both (0,1) and
    // (1,0) endpoints of the (FAR, FRR) curve are present
    let mut thresholds: Vec<f64> = genuine_scores
        .iter()
        .chain(spoof_scores)
        .cloned()
        .collect();
    thresholds.push(0.0);
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    // decision: spoof when score >= threshold
    let far = |t: f64| -> f64 {
        // spoofed items accepted as genuine
        spoof_scores.iter().filter(|&&s| s < t).count() as f64 / spoof_scores.len() as f64
    };
    let frr = |t: f64| -> f64 {
        // genuine items rejected as spoof
        genuine_scores.iter().filter(|&&s| s >= t).count() as f64 / genuine_scores.len() as f64
    };

    let mut prev: Option<(f64, f64)> = None;
    for &t in &thresholds {
        let (fa, fr) = (far(t), frr(t));
        if fa >= fr {
            return Ok(match prev {
                // interpolate between the bracketing threshold points
                Some((pfa, pfr)) if fa != pfa || fr != pfr => {
                    let denom = (fa - pfa) + (pfr - fr);
                    if denom == 0.0 {
                        (fa + fr) / 2.0
                    } else {
                        let alpha = (pfr - pfa) / denom;
                        pfa + alpha * (fa - pfa)
                    }
                }
                _ => (fa + fr) / 2.0,
            });
        }
        prev = Some((fa, fr));
    }
    // FAR reaches 1 and FRR reaches 0 at the top sentinel, so the sweep
    // always crosses
    unreachable!("EER sweep did not cross");
}

/// Mean, population standard deviation, extrema, and histogram mode of a
/// reliability score sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliabilityStats {
    pub mean: f64,
    pub std_dev: f64,
    pub max: f64,
    pub min: f64,
    pub mode: f64,
}

/// Table-style statistics over scores in [0, 1]. The mode is the center of
/// the most populated histogram bin of width `bin_width`, ties broken
/// toward the lower bin; 1.0 falls into the top bin.
pub fn reliability_stats(scores: &[f64], bin_width: f64) -> Result<ReliabilityStats> {
    if scores.is_empty() {
        return Err(EvalError::Argument("empty score list".into()));
    }
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(EvalError::Argument(format!("bad bin width {bin_width}")));
    }
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(EvalError::Argument(format!("score {s} outside [0, 1]")));
        }
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);

    let bins = (1.0 / bin_width).ceil() as usize;
    let mut histogram = vec![0usize; bins];
    for &s in scores {
        let idx = ((s / bin_width) as usize).min(bins - 1);
        histogram[idx] += 1;
    }
    let mode_bin = histogram
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    let mode = (mode_bin as f64 + 0.5) * bin_width;

    Ok(ReliabilityStats {
        mean,
        std_dev: var.sqrt(),
        max,
        min,
        mode,
    })
}

/// One model output attached to its ground-truth record.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub record: UtteranceRecord,
    pub predicted: ClassLabel,
    pub probs: [f64; 4],
}

impl Prediction {
    /// Spoof confidence used for EER and the per-group statistics.
    pub fn reliability(&self) -> f64 {
        (1.0 - self.probs[ClassLabel::Human.index()]).clamp(0.0, 1.0)
    }
}

/// The full metric suite for one prediction set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy_pct: f64,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub eer: f64,
    pub reliability_bin_width: f64,
    /// Reliability statistics per spoofing group, where scored.
    pub per_group: Vec<(Group, ReliabilityStats)>,
}

/// Assembles the report: confusion and accuracy over the four classes, EER
/// over spoof-vs-genuine reliability scores, and per-group reliability
/// statistics.
pub fn evaluate(predictions: &[Prediction]) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(EvalError::Argument("no predictions to evaluate".into()));
    }
    let mut confusion = ConfusionMatrix::new(4);
    let mut genuine = Vec::new();
    let mut spoof = Vec::new();
    let mut group_scores: [Vec<f64>; 6] = Default::default();

    for p in predictions {
        let probs_ok = p.probs.iter().all(|v| (0.0..=1.0 + 1e-9).contains(v));
        if !probs_ok {
            return Err(EvalError::Data {
                utterance_id: p.record.utterance_id.clone(),
                detail: format!("probabilities {:?} outside [0, 1]", p.probs),
            });
        }
        if p.record.group.class_label() != p.record.class_label {
            return Err(EvalError::Data {
                utterance_id: p.record.utterance_id.clone(),
                detail: format!(
                    "group {} inconsistent with class {}",
                    p.record.group.token(),
                    p.record.class_label.index()
                ),
            });
        }
        confusion.record(p.record.class_label.index(), p.predicted.index());
        let score = p.reliability();
        if p.record.class_label == ClassLabel::Human {
            genuine.push(score);
        } else {
            spoof.push(score);
        }
        group_scores[p.record.group.index()].push(score);
    }

    let per_class = prf_from_confusion(&confusion);
    let correct = confusion.trace();
    let accuracy_pct = accuracy(correct, predictions.len())?;
    let eer_value = if genuine.is_empty() || spoof.is_empty() {
        // one-sided sets have no operating point; report 0 as degenerate
        0.0
    } else {
        eer(&genuine, &spoof)?
    };
    let per_group = Group::ALL
        .iter()
        .zip(&group_scores)
        .filter(|(_, scores)| !scores.is_empty())
        .map(|(group, scores)| Ok((*group, reliability_stats(scores, MODE_BIN_WIDTH)?)))
        .collect::<Result<Vec<_>>>()?;

    Ok(EvalReport {
        total: predictions.len(),
        correct,
        accuracy_pct,
        confusion,
        per_class,
        eer: eer_value,
        reliability_bin_width: MODE_BIN_WIDTH,
        per_group,
    })
}

// ---------------------------------------------------------------------------
// Rendering and machine round-trip
// ---------------------------------------------------------------------------

impl EvalReport {
    /// Human-oriented text document with matrix blocks and a groups table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "evaluation report");
        let _ = writeln!(out, "=================");
        let _ = writeln!(out, "samples:  {}", self.total);
        let _ = writeln!(out, "correct:  {}", self.correct);
        let _ = writeln!(out, "accuracy: {:.2}%", self.accuracy_pct);
        let _ = writeln!(out, "eer:      {:.4}", self.eer);
        let _ = writeln!(out);
        let _ = writeln!(out, "confusion (rows = truth, cols = prediction)");
        let _ = writeln!(out, "        pred0   pred1   pred2   pred3");
        for truth in 0..self.confusion.classes() {
            let _ = write!(out, "true{truth} ");
            for pred in 0..self.confusion.classes() {
                let _ = write!(out, "{:>8}", self.confusion.at(truth, pred));
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "class   precision  recall     f1        fpr       fnr");
        for (k, m) in self.per_class.iter().enumerate() {
            let _ = writeln!(
                out,
                "{k}       {:<10.4} {:<10.4} {:<9.4} {:<9.4} {:.4}",
                m.precision, m.recall, m.f1, m.fpr, m.fnr
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "reliability by group (bin width {})",
            self.reliability_bin_width
        );
        let _ = writeln!(out, "group   mean     std_dev  max      min      mode");
        for (group, s) in &self.per_group {
            let _ = writeln!(
                out,
                "{}      {:<8.4} {:<8.4} {:<8.4} {:<8.4} {:.4}",
                group.token(),
                s.mean,
                s.std_dev,
                s.max,
                s.min,
                s.mode
            );
        }
        out
    }

    /// Machine-readable line form; floats use the shortest round-trip
    /// representation so parsing is lossless.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "total={}", self.total);
        let _ = writeln!(out, "correct={}", self.correct);
        let _ = writeln!(out, "accuracy_pct={}", self.accuracy_pct);
        let _ = writeln!(out, "eer={}", self.eer);
        let _ = writeln!(out, "reliability_bin_width={}", self.reliability_bin_width);
        let _ = writeln!(out, "classes={}", self.confusion.classes());
        for truth in 0..self.confusion.classes() {
            let row: Vec<String> = (0..self.confusion.classes())
                .map(|p| self.confusion.at(truth, p).to_string())
                .collect();
            let _ = writeln!(out, "confusion.{truth}=[{}]", row.join(","));
        }
        for (k, m) in self.per_class.iter().enumerate() {
            let _ = writeln!(
                out,
                "class.{k}=precision:{};recall:{};f1:{};fpr:{};fnr:{}",
                m.precision, m.recall, m.f1, m.fpr, m.fnr
            );
        }
        for (group, s) in &self.per_group {
            let _ = writeln!(
                out,
                "group.{}=mean:{};std:{};max:{};min:{};mode:{}",
                group.token(),
                s.mean,
                s.std_dev,
                s.max,
                s.min,
                s.mode
            );
        }
        out
    }

    /// Parses the [`Self::to_lines`] form back.
    pub fn from_lines(text: &str) -> Result<Self> {
        let mut total = None;
        let mut correct = None;
        let mut accuracy_pct = None;
        let mut eer_value = None;
        let mut bin_width = None;
        let mut classes = None;
        let mut confusion_rows: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut per_class: Vec<(usize, ClassMetrics)> = Vec::new();
        let mut per_group: Vec<(Group, ReliabilityStats)> = Vec::new();

        for (i, line) in text.lines().enumerate() {
            let fail = |detail: String| EvalError::Parse {
                line: i + 1,
                detail,
            };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("missing '=' in '{line}'")))?;
            let parse_f64 = |v: &str| -> Result<f64> {
                v.parse().map_err(|_| fail(format!("bad float '{v}'")))
            };
            let parse_usize = |v: &str| -> Result<usize> {
                v.parse().map_err(|_| fail(format!("bad integer '{v}'")))
            };
            let parse_kv_floats = |v: &str, keys: &[&str]| -> Result<Vec<f64>> {
                let mut values = Vec::with_capacity(keys.len());
                let parts: Vec<&str> = v.split(';').collect();
                if parts.len() != keys.len() {
                    return Err(fail(format!("expected {} entries in '{v}'", keys.len())));
                }
                for (part, expected) in parts.iter().zip(keys) {
                    let (k, val) = part
                        .split_once(':')
                        .ok_or_else(|| fail(format!("missing ':' in '{part}'")))?;
                    if k != *expected {
                        return Err(fail(format!("expected '{expected}', got '{k}'")));
                    }
                    values.push(parse_f64(val)?);
                }
                Ok(values)
            };

            match key {
                "total" => total = Some(parse_usize(value)?),
                "correct" => correct = Some(parse_usize(value)?),
                "accuracy_pct" => accuracy_pct = Some(parse_f64(value)?),
                "eer" => eer_value = Some(parse_f64(value)?),
                "reliability_bin_width" => bin_width = Some(parse_f64(value)?),
                "classes" => classes = Some(parse_usize(value)?),
                _ if key.starts_with("confusion.") => {
                    let truth = parse_usize(&key["confusion.".len()..])?;
                    let body = value
                        .strip_prefix('[')
                        .and_then(|v| v.strip_suffix(']'))
                        .ok_or_else(|| fail(format!("bad row '{value}'")))?;
                    let row = body
                        .split(',')
                        .map(parse_usize)
                        .collect::<Result<Vec<_>>>()?;
                    confusion_rows.push((truth, row));
                }
                _ if key.starts_with("class.") => {
                    let k = parse_usize(&key["class.".len()..])?;
                    let v = parse_kv_floats(value, &["precision", "recall", "f1", "fpr", "fnr"])?;
                    per_class.push((
                        k,
                        ClassMetrics {
                            precision: v[0],
                            recall: v[1],
                            f1: v[2],
                            fpr: v[3],
                            fnr: v[4],
                        },
                    ));
                }
                _ if key.starts_with("group.") => {
                    let group = Group::from_token(&key["group.".len()..])
                        .ok_or_else(|| fail(format!("bad group '{key}'")))?;
                    let v = parse_kv_floats(value, &["mean", "std", "max", "min", "mode"])?;
                    per_group.push((
                        group,
                        ReliabilityStats {
                            mean: v[0],
                            std_dev: v[1],
                            max: v[2],
                            min: v[3],
                            mode: v[4],
                        },
                    ));
                }
                _ => return Err(fail(format!("unknown key '{key}'"))),
            }
        }

        let classes = classes.ok_or_else(|| EvalError::Parse {
            line: 0,
            detail: "missing classes".into(),
        })?;
        let mut confusion = ConfusionMatrix::new(classes);
        for (truth, row) in confusion_rows {
            for (pred, count) in row.into_iter().enumerate() {
                for _ in 0..count {
                    confusion.record(truth, pred);
                }
            }
        }
        per_class.sort_by_key(|(k, _)| *k);
        let missing = |what: &str| EvalError::Parse {
            line: 0,
            detail: format!("missing {what}"),
        };
        Ok(EvalReport {
            total: total.ok_or_else(|| missing("total"))?,
            correct: correct.ok_or_else(|| missing("correct"))?,
            accuracy_pct: accuracy_pct.ok_or_else(|| missing("accuracy_pct"))?,
            confusion,
            per_class: per_class.into_iter().map(|(_, m)| m).collect(),
            eer: eer_value.ok_or_else(|| missing("eer"))?,
            reliability_bin_width: bin_width.ok_or_else(|| missing("reliability_bin_width"))?,
            per_group,
        })
    }

    /// Plain-text accuracy table in the baseline-comparison layout.
    pub fn render_accuracy_table(rows: &[(&str, usize, usize)]) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(out, "model            correct / total      accuracy");
        for (name, correct, total) in rows {
            let _ = writeln!(
                out,
                "{name:<16} {correct:>7} / {total:<10} {:>8.2}%",
                accuracy(*correct, *total)?
            );
        }
        Ok(out)
    }

    /// Plain-text reliability table in the per-group layout.
    pub fn render_group_table(groups: &[(Group, ReliabilityStats)]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Group  Mean    Std Dev  Max     Min     Mode");
        for (group, s) in groups {
            let _ = writeln!(
                out,
                "{:<6} {:<7.4} {:<8.4} {:<7.4} {:<7.4} {:.4}",
                group.token(),
                s.mean,
                s.std_dev,
                s.max,
                s.min,
                s.mode
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{Gender, SentenceType};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn threshold_rule_examples() {
        assert_eq!(threshold_classify(0, 0.3).unwrap(), 0);
        assert_eq!(threshold_classify(0, 0.8).unwrap(), 1);
        assert_eq!(threshold_classify(1, 0.8).unwrap(), 0);
        // strict inequality: the boundary classifies as 1
        assert_eq!(threshold_classify(0, 0.5).unwrap(), 1);
        assert_eq!(threshold_classify(1, 0.5).unwrap(), 1);
        assert!(threshold_classify(0, 1.5).is_err());
        assert!(threshold_classify(2, 0.5).is_err());
    }

    #[test]
    fn threshold_rule_brute_force_grid() {
        for real_tag in [0u8, 1] {
            for i in 0..=1000 {
                let reliability = i as f64 / 1000.0;
                let direct = if (real_tag as f64 - reliability).abs() < 0.5 {
                    0
                } else {
                    1
                };
                assert_eq!(
                    threshold_classify(real_tag, reliability).unwrap(),
                    direct,
                    "tag {real_tag} reliability {reliability}"
                );
            }
        }
    }

    #[test]
    fn accuracy_rounding_reference_values() {
        assert_eq!(accuracy(63_663, 71_237).unwrap(), 89.37);
        assert_eq!(accuracy(63_863, 71_237).unwrap(), 89.65);
        assert_eq!(accuracy(42_143, 71_237).unwrap(), 59.16);
        assert_eq!(accuracy(8, 8).unwrap(), 100.00);
        assert!(accuracy(1, 0).is_err());
        assert!(accuracy(2, 1).is_err());
    }

    #[test]
    fn prf_diagonal_and_hand_cases() {
        let mut confusion = ConfusionMatrix::new(3);
        for k in 0..3 {
            for _ in 0..5 {
                confusion.record(k, k);
            }
        }
        for m in prf_from_confusion(&confusion) {
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
            assert_eq!((m.fpr, m.fnr), (0.0, 0.0));
        }

        // TP=9, FP=1, FN=1 for class 0
        let mut confusion = ConfusionMatrix::new(2);
        for _ in 0..9 {
            confusion.record(0, 0);
        }
        confusion.record(1, 0); // FP
        confusion.record(0, 1); // FN
        for _ in 0..9 {
            confusion.record(1, 1);
        }
        let m = prf_from_confusion(&confusion)[0];
        assert_relative_eq!(m.precision, 0.9);
        assert_relative_eq!(m.recall, 0.9);
        assert_relative_eq!(m.f1, 0.9);

        // empty truth row: recall and f1 are 0 by convention
        let mut confusion = ConfusionMatrix::new(2);
        confusion.record(1, 1);
        let m = prf_from_confusion(&confusion)[0];
        assert_eq!((m.recall, m.f1), (0.0, 0.0));
    }

    #[test]
    fn confusion_row_sums_match_truth_counts() {
        let mut confusion = ConfusionMatrix::new(4);
        let mut rng = crate::rng::Rng::new(77);
        let mut truth_counts = [0usize; 4];
        for _ in 0..200 {
            let t = rng.next_below(4) as usize;
            let p = rng.next_below(4) as usize;
            confusion.record(t, p);
            truth_counts[t] += 1;
        }
        for (t, expected) in truth_counts.iter().enumerate() {
            assert_eq!(confusion.row_sum(t), *expected);
        }
        assert_eq!(confusion.total(), 200);
    }

    #[test]
    fn eer_separated_and_identical() {
        assert_eq!(eer(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 0.0);
        let same = [0.2, 0.4, 0.6];
        assert_relative_eq!(eer(&same, &same).unwrap(), 0.5, epsilon = 1e-12);
        assert!(eer(&[], &[0.5]).is_err());
    }

    /// Exhaustive fine-grid sweep, the independent oracle for the EER
    /// implementation.
    fn eer_grid_oracle(genuine: &[f64], spoof: &[f64]) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=1_000_000 {
            let t = i as f64 / 1_000_000.0;
            let far = spoof.iter().filter(|&&s| s < t).count() as f64 / spoof.len() as f64;
            let frr = genuine.iter().filter(|&&s| s >= t).count() as f64 / genuine.len() as f64;
            let gap = (far - frr).abs();
            if gap < best.0 {
                best = (gap, (far + frr) / 2.0);
            }
        }
        best.1
    }

    #[test]
    fn eer_matches_grid_oracle() {
        // crossing on a plateau: the interpolated value and the step-function
        // sweep coincide exactly
        let genuine = [0.1, 0.6];
        let spoof = [0.4, 0.9];
        let ours = eer(&genuine, &spoof).unwrap();
        let oracle = eer_grid_oracle(&genuine, &spoof);
        assert!((ours - oracle).abs() < 1e-6, "{ours} vs {oracle}");

        // when the crossing lands on a jump, the interpolated value stays
        // within half an empirical step of the sweep's closest approach
        let mut rng = crate::rng::Rng::new(13);
        for _ in 0..10 {
            let genuine: Vec<f64> = (0..9).map(|_| rng.next_f64() * 0.7).collect();
            let spoof: Vec<f64> = (0..7).map(|_| 0.3 + rng.next_f64() * 0.7).collect();
            let ours = eer(&genuine, &spoof).unwrap();
            let oracle = eer_grid_oracle(&genuine, &spoof);
            let bound = 0.5 * (1.0 / genuine.len() as f64 + 1.0 / spoof.len() as f64);
            assert!((ours - oracle).abs() <= bound, "{ours} vs {oracle}");
        }
    }

    proptest! {
        #[test]
        fn eer_invariant_under_monotone_transform(
            seed in 0u64..500,
            n_genuine in 2usize..12,
            n_spoof in 2usize..12,
        ) {
            let mut rng = crate::rng::Rng::new(seed);
            let genuine: Vec<f64> = (0..n_genuine).map(|_| rng.next_f64()).collect();
            let spoof: Vec<f64> = (0..n_spoof).map(|_| rng.next_f64()).collect();
            let base = eer(&genuine, &spoof).unwrap();
            // strictly monotone map of [0,1] onto itself
            let squash = |s: f64| s * s * 0.8 + s * 0.2;
            let genuine2: Vec<f64> = genuine.iter().map(|&s| squash(s)).collect();
            let spoof2: Vec<f64> = spoof.iter().map(|&s| squash(s)).collect();
            let mapped = eer(&genuine2, &spoof2).unwrap();
            prop_assert!((base - mapped).abs() < 1e-12);
        }
    }

    #[test]
    fn reliability_stats_hand_case() {
        let s = reliability_stats(&[0.2, 0.4, 0.6], 0.01).unwrap();
        assert_relative_eq!(s.mean, 0.4, epsilon = 1e-12);
        assert_relative_eq!(s.std_dev, 0.1633, epsilon = 1e-4);
        assert_eq!(s.max, 0.6);
        assert_eq!(s.min, 0.2);
    }

    #[test]
    fn reliability_stats_degenerate_and_ties() {
        let s = reliability_stats(&[0.5; 7], 0.01).unwrap();
        assert_eq!(s.std_dev, 0.0);
        assert_relative_eq!(s.mode, 0.505, epsilon = 1e-12);

        // tie between bins 10 and 20 resolves to the lower bin
        let s = reliability_stats(&[0.105, 0.205], 0.01).unwrap();
        assert_relative_eq!(s.mode, 0.105, epsilon = 1e-12);

        // 1.0 lands in the top bin rather than out of range
        let s = reliability_stats(&[1.0, 1.0, 0.2], 0.01).unwrap();
        assert_relative_eq!(s.mode, 0.995, epsilon = 1e-12);
        assert!(reliability_stats(&[], 0.01).is_err());
    }

    fn record_for(group: Group, id: &str) -> UtteranceRecord {
        UtteranceRecord {
            utterance_id: id.into(),
            speaker_id: "s1".into(),
            age: 30,
            gender: Gender::Other,
            sentence_type: SentenceType::Numeric,
            class_label: group.class_label(),
            group,
            cloning_condition: None,
            similarity_score: None,
            segment_boundaries: None,
            degradation: None,
            flags: Vec::new(),
            audio_path: format!("{id}.wav"),
        }
    }

    fn prediction(group: Group, predicted: ClassLabel, p_human: f64, id: &str) -> Prediction {
        let rest = (1.0 - p_human) / 3.0;
        let mut probs = [rest; 4];
        probs[0] = p_human;
        Prediction {
            record: record_for(group, id),
            predicted,
            probs,
        }
    }

    #[test]
    fn evaluate_all_correct() {
        let groups = [
            Group::G1,
            Group::G2,
            Group::G3,
            Group::G4,
            Group::G5,
            Group::G6,
            Group::G1,
            Group::G2,
        ];
        let predictions: Vec<Prediction> = groups
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let p_human = if g.class_label() == ClassLabel::Human {
                    0.9
                } else {
                    0.1
                };
                prediction(g, g.class_label(), p_human, &format!("u{i}"))
            })
            .collect();
        let report = evaluate(&predictions).unwrap();
        assert_eq!(report.accuracy_pct, 100.00);
        assert_eq!(report.eer, 0.0);
        for (k, m) in report.per_class.iter().enumerate() {
            if report.confusion.row_sum(k) > 0 {
                assert_eq!(m.f1, 1.0);
            }
        }
        assert_eq!(report.per_group.len(), 6);
    }

    #[test]
    fn evaluate_cyclic_shift_has_zero_diagonal() {
        let predictions: Vec<Prediction> = (0..8)
            .map(|i| {
                let truth = ClassLabel::ALL[i % 4];
                let group = match truth {
                    ClassLabel::Human => Group::G1,
                    ClassLabel::Cloned => Group::G2,
                    ClassLabel::Generated => Group::G3,
                    ClassLabel::Hybrid => Group::G4,
                };
                let predicted = ClassLabel::ALL[(i + 1) % 4];
                prediction(group, predicted, 0.25, &format!("u{i}"))
            })
            .collect();
        let report = evaluate(&predictions).unwrap();
        assert_eq!(report.accuracy_pct, 0.0);
        assert_eq!(report.confusion.trace(), 0);
    }

    #[test]
    fn evaluate_matches_hand_tabulated_confusion() {
        // 10 examples: truths [0,0,0,1,1,2,2,3,3,3],
        // predictions         [0,1,0,1,1,2,3,3,3,0]
        let truths = [0, 0, 0, 1, 1, 2, 2, 3, 3, 3];
        let preds = [0, 1, 0, 1, 1, 2, 3, 3, 3, 0];
        let groups = [
            Group::G1,
            Group::G1,
            Group::G6,
            Group::G2,
            Group::G2,
            Group::G3,
            Group::G3,
            Group::G4,
            Group::G5,
            Group::G4,
        ];
        let predictions: Vec<Prediction> = truths
            .iter()
            .zip(&preds)
            .zip(&groups)
            .enumerate()
            .map(|(i, ((_t, &p), &g))| {
                let p_human = if g.class_label() == ClassLabel::Human {
                    0.8
                } else {
                    0.3
                };
                prediction(g, ClassLabel::from_index(p).unwrap(), p_human, &format!("u{i}"))
            })
            .collect();
        let report = evaluate(&predictions).unwrap();
        // hand tabulation: diagonal = 2 + 2 + 1 + 2 = 7
        assert_eq!(report.correct, 7);
        assert_eq!(report.accuracy_pct, 70.0);
        assert_eq!(report.confusion.at(0, 0), 2);
        assert_eq!(report.confusion.at(0, 1), 1);
        assert_eq!(report.confusion.at(2, 3), 1);
        assert_eq!(report.confusion.at(3, 0), 1);
        // class 0 metrics by hand: TP=2, FP=1, FN=1, TN=6
        let m = report.per_class[0];
        assert_relative_eq!(m.precision, 2.0 / 3.0);
        assert_relative_eq!(m.recall, 2.0 / 3.0);
        assert_relative_eq!(m.fpr, 1.0 / 7.0);
        assert_relative_eq!(m.fnr, 1.0 / 3.0);
    }

    #[test]
    fn evaluate_rejects_inconsistent_records() {
        let mut p = prediction(Group::G2, ClassLabel::Cloned, 0.2, "bad");
        p.record.class_label = ClassLabel::Human;
        let err = evaluate(&[p]).unwrap_err();
        assert!(err.to_string().contains("bad"));
    }

    #[test]
    fn report_lines_round_trip() {
        let predictions: Vec<Prediction> = (0..10)
            .map(|i| {
                let g = Group::ALL[i % 6];
                let correct = i % 3 != 0;
                let predicted = if correct {
                    g.class_label()
                } else {
                    ClassLabel::ALL[(g.class_label().index() + 1) % 4]
                };
                let p_human = 0.05 + 0.09 * i as f64;
                prediction(g, predicted, p_human, &format!("u{i}"))
            })
            .collect();
        let report = evaluate(&predictions).unwrap();
        let lines = report.to_lines();
        let back = EvalReport::from_lines(&lines).unwrap();
        assert_eq!(back, report);
        // the text rendering at least mentions every group present
        let text = report.render_text();
        for (group, _) in &report.per_group {
            assert!(text.contains(group.token()));
        }
    }

    #[test]
    fn accuracy_table_layout() {
        let table = EvalReport::render_accuracy_table(&[
            ("baseline-a", 63_663, 71_237),
            ("baseline-b", 63_863, 71_237),
        ])
        .unwrap();
        assert!(table.contains("89.37"));
        assert!(table.contains("89.65"));
    }
}
