//! Pipeline configuration: a `key=value` file in the manifest dialect,
//! overridden by command-line flags, echoed into outputs for provenance.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use spoofkit::model::ModelConfig;
use spoofkit::train::TrainConfig;

const KNOWN_KEYS: [&str; 17] = [
    "seed",
    "jobs",
    "seconds",
    "split_fraction",
    "lr0",
    "epochs",
    "batch_size",
    "weight_decay",
    "patience",
    "embed_dim",
    "layers",
    "heads",
    "mlp_ratio",
    "classes",
    "mel_bins",
    "max_time_patches",
    "fade_ms",
];

/// Effective pipeline settings after merging defaults, the config file, and
/// flag overrides.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seed: u64,
    pub jobs: usize,
    /// Fixed utterance duration fed to the featurizer.
    pub seconds: f64,
    pub fade_ms: f64,
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            seconds: 6.0,
            fade_ms: 10.0,
            train: TrainConfig::default(),
            model: ModelConfig::toy(),
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key=value", path.display(), i + 1))?;
            if !KNOWN_KEYS.contains(&key.trim()) {
                bail!("{}:{}: unknown config key '{}'", path.display(), i + 1, key);
            }
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        let mut config = Self::default();
        config.apply(&map)?;
        Ok(config)
    }

    fn apply(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        fn set<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str, slot: &mut T) -> Result<()> {
            if let Some(raw) = map.get(key) {
                *slot = raw
                    .parse()
                    .map_err(|_| anyhow::anyhow!("bad value '{raw}' for config key '{key}'"))?;
            }
            Ok(())
        }
        set(map, "seed", &mut self.seed)?;
        set(map, "jobs", &mut self.jobs)?;
        set(map, "seconds", &mut self.seconds)?;
        set(map, "fade_ms", &mut self.fade_ms)?;
        set(map, "split_fraction", &mut self.train.split_fraction)?;
        set(map, "lr0", &mut self.train.lr0)?;
        set(map, "epochs", &mut self.train.epochs)?;
        set(map, "batch_size", &mut self.train.batch_size)?;
        set(map, "weight_decay", &mut self.train.weight_decay)?;
        set(map, "patience", &mut self.train.early_stop_patience)?;
        set(map, "embed_dim", &mut self.model.embed_dim)?;
        set(map, "layers", &mut self.model.layers)?;
        set(map, "heads", &mut self.model.heads)?;
        set(map, "mlp_ratio", &mut self.model.mlp_ratio)?;
        set(map, "classes", &mut self.model.classes)?;
        set(map, "mel_bins", &mut self.model.mel_bins)?;
        set(map, "max_time_patches", &mut self.model.max_time_patches)?;
        self.train.seed = self.seed;
        self.train.jobs = self.jobs;
        Ok(())
    }

    /// Applies flag-level overrides after any config file.
    pub fn override_with(&mut self, seed: Option<u64>, jobs: Option<usize>, epochs: Option<usize>) {
        if let Some(seed) = seed {
            self.seed = seed;
            self.train.seed = seed;
        }
        if let Some(jobs) = jobs {
            self.jobs = jobs;
            self.train.jobs = jobs;
        }
        if let Some(epochs) = epochs {
            self.train.epochs = epochs;
        }
    }

    /// One-line `key=value` echo of the effective settings, embedded as a
    /// `#config` directive in outputs.
    pub fn echo(&self) -> String {
        let mut out = String::from("config");
        let mut push = |key: &str, value: String| {
            let _ = write!(out, " {key}={value}");
        };
        push("seed", self.seed.to_string());
        push("jobs", self.jobs.to_string());
        push("seconds", self.seconds.to_string());
        push("fade_ms", self.fade_ms.to_string());
        push("split_fraction", self.train.split_fraction.to_string());
        push("lr0", self.train.lr0.to_string());
        push("epochs", self.train.epochs.to_string());
        push("batch_size", self.train.batch_size.to_string());
        push("weight_decay", self.train.weight_decay.to_string());
        push("patience", self.train.early_stop_patience.to_string());
        push("embed_dim", self.model.embed_dim.to_string());
        push("layers", self.model.layers.to_string());
        push("heads", self.model.heads.to_string());
        push("max_time_patches", self.model.max_time_patches.to_string());
        out
    }
}
