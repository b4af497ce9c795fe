//! Supervised fine-tuning: speaker-disjoint splitting, cosine learning-rate
//! decay, Adam with decoupled weight decay, and an early-stopping epoch
//! loop. Everything is a pure function of (data, config, seed), so training
//! runs are byte-reproducible.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::features::Spectrogram;
use crate::manifest::{ClassLabel, UtteranceRecord};
use crate::model::{self, ModelConfig, ModelParams};
use crate::parallel;
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite gradient in tensor '{tensor}' at epoch {epoch}, step {step}")]
    NonFiniteGradient {
        tensor: String,
        epoch: usize,
        step: usize,
    },

    #[error("model error at epoch {epoch}, step {step}: {source}")]
    Model {
        epoch: usize,
        step: usize,
        #[source]
        source: model::ModelError,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Fine-tuning hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub split_fraction: f64,
    /// Worker threads for per-batch gradient evaluation; results are
    /// reduced in example order regardless of this value.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 2e-5,
            epochs: 20,
            batch_size: 3,
            weight_decay: 1e-4,
            early_stop_patience: 3,
            seed: 0,
            split_fraction: 0.8,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(TrainError::Argument(format!(
                "split fraction {} outside (0, 1)",
                self.split_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Argument("batch size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::Argument("need at least one epoch".into()));
        }
        Ok(())
    }
}

/// Utterance-id partition produced by [`speaker_disjoint_split`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub train_speakers: Vec<String>,
    pub test_speakers: Vec<String>,
}

/// Splits records so no speaker appears on both sides. Speakers are sorted,
/// shuffled by the seed, and the first `round(fraction * S)` go to train —
/// the partition depends only on the speaker set and seed, not record order.
pub fn speaker_disjoint_split(
    records: &[UtteranceRecord],
    fraction: f64,
    seed: u64,
) -> Result<SplitIds> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(TrainError::Argument(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let speakers: BTreeSet<&str> = records.iter().map(|r| r.speaker_id.as_str()).collect();
    if speakers.len() < 2 {
        return Err(TrainError::Argument(format!(
            "need at least 2 speakers, got {}",
            speakers.len()
        )));
    }
    let mut shuffled: Vec<&str> = speakers.into_iter().collect();
    Rng::derive(seed, 0x5011).shuffle(&mut shuffled);
    let n_train = (fraction * shuffled.len() as f64).round() as usize;
    let n_train = n_train.clamp(1, shuffled.len() - 1);
    let train_speakers: BTreeSet<&str> = shuffled[..n_train].iter().copied().collect();

    let mut split = SplitIds {
        train: Vec::new(),
        test: Vec::new(),
        train_speakers: shuffled[..n_train].iter().map(|s| s.to_string()).collect(),
        test_speakers: shuffled[n_train..].iter().map(|s| s.to_string()).collect(),
    };
    for record in records {
        if train_speakers.contains(record.speaker_id.as_str()) {
            split.train.push(record.utterance_id.clone());
        } else {
            split.test.push(record.utterance_id.clone());
        }
    }
    Ok(split)
}

/// Cosine decay from `lr0` at step 0 to 0 at step `total`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64) -> f64 {
    assert!(total >= 1 && step <= total);
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

/// Per-tensor Adam accumulators.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
        Self {
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One Adam update with decoupled weight decay (`p -= lr * wd * p` before
/// the moment update). Rejects non-finite gradients, naming the tensor.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as f64;
    let bias1 = 1.0 - ADAM_BETA1.powf(t);
    let bias2 = 1.0 - ADAM_BETA2.powf(t);
    let grad_tensors = grads.tensors();
    for (ti, (name, tensor)) in params.tensors_mut().into_iter().enumerate() {
        let g = grad_tensors[ti].1;
        debug_assert_eq!(grad_tensors[ti].0, name);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                tensor: name,
                epoch: 0,
                step: state.step,
            });
        }
        let m = &mut state.m[ti];
        let v = &mut state.v[ti];
        for i in 0..tensor.len() {
            tensor[i] -= lr * weight_decay * tensor[i];
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            tensor[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// One training example: features plus target class.
#[derive(Debug, Clone)]
pub struct Example {
    pub spec: Spectrogram,
    pub label: ClassLabel,
}

/// Loss/accuracy trace for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Outcome of [`fit`]: parameters from the best-validation epoch plus the
/// full history.
#[derive(Debug)]
pub struct FitResult {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Mean loss and accuracy of `params` over a dataset.
pub fn evaluate_split(
    examples: &[Example],
    params: &ModelParams,
    config: &ModelConfig,
    jobs: usize,
) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(TrainError::Argument("empty evaluation split".into()));
    }
    let outputs = parallel::map_ordered(jobs, examples, |ex| {
        model::forward(&ex.spec, params, config).map(|out| {
            let label = ex.label.index();
            let loss = -out.probs[label].max(1e-300).ln();
            let predicted = out
                .probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            (loss, predicted == label)
        })
    });
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for out in outputs {
        let (loss, ok) = out.map_err(|source| TrainError::Model {
            epoch: 0,
            step: 0,
            source,
        })?;
        loss_sum += loss;
        correct += ok as usize;
    }
    Ok((
        loss_sum / examples.len() as f64,
        correct as f64 / examples.len() as f64,
    ))
}

/// Fine-tunes `initial` on the train split: per-epoch seeded shuffles,
/// batches with the last partial batch kept, loss and gradients averaged per
/// example, cosine-decayed Adam steps, and early stopping when the
/// validation loss fails to improve for `early_stop_patience` consecutive
/// epochs. Returns the best-validation-epoch parameters.
pub fn fit(
    train: &[Example],
    val: &[Example],
    initial: ModelParams,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Argument("empty train or validation set".into()));
    }

    let mut params = initial;
    let mut state = OptimizerState::new(&params);
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut stale_epochs = 0usize;
    let mut global_step = 0usize;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::derive(config.seed, epoch as u64).shuffle(&mut order);

        let mut train_loss_sum = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let batch_examples: Vec<&Example> = batch.iter().map(|&i| &train[i]).collect();
            let outputs = parallel::map_ordered(config.jobs, &batch_examples, |ex| {
                model::backward(&ex.spec, ex.label.index(), &params, model_config)
            });

            let mut grads = params.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for out in outputs {
                let out = out.map_err(|source| TrainError::Model {
                    epoch,
                    step,
                    source,
                })?;
                train_loss_sum += out.loss;
                for ((_, acc), (_, g)) in grads.tensors_mut().into_iter().zip(out.grads.tensors())
                {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += b * scale;
                    }
                }
            }

            let lr = cosine_lr(global_step, total_steps, config.lr0);
            adam_step(&mut params, &grads, &mut state, lr, config.weight_decay).map_err(
                |e| match e {
                    TrainError::NonFiniteGradient { tensor, .. } => {
                        TrainError::NonFiniteGradient {
                            tensor,
                            epoch,
                            step,
                        }
                    }
                    other => other,
                },
            )?;
            global_step += 1;
        }

        let (val_loss, val_acc) = evaluate_split(val, &params, model_config, config.jobs)?;
        history.push(EpochStats {
            epoch,
            train_loss: train_loss_sum / train.len() as f64,
            val_loss,
            val_acc,
        });

        let improved = best.as_ref().is_none_or(|(_, loss, _)| val_loss < *loss);
        if improved {
            best = Some((epoch, val_loss, params.clone()));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.early_stop_patience {
                break;
            }
        }
    }

    let (best_epoch, _, best_params) = best.expect("at least one epoch ran");
    Ok(FitResult {
        params: best_params,
        history,
        best_epoch,
    })
}

/// Renders history as the line-delimited `epoch train_loss val_loss val_acc`
/// form (full-precision floats so reruns are byte-comparable).
pub fn history_lines(history: &[EpochStats]) -> String {
    let mut out = String::new();
    for h in history {
        out.push_str(&format!(
            "epoch={}\ttrain_loss={}\tval_loss={}\tval_acc={}\n",
            h.epoch, h.train_loss, h.val_loss, h.val_acc
        ));
    }
    out
}
