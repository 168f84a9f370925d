use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use attncorr_core::metrics::KlDirection;
use attncorr_core::{Aggregator, CaptionMode, Split, SupervisionMode, TrainConfig, WorldConfig};
use serde::{Deserialize, Serialize};

/// Everything a run needs, loaded from TOML. Missing keys take defaults and
/// command-line flags override individual keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory written by `gen-data`.
    pub dataset: PathBuf,
    /// Output directory for checkpoints, logs and reports.
    pub output: PathBuf,
    /// Training seed. The dataset is seeded separately by `world.seed`.
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub world: WorldConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            output: PathBuf::from("run"),
            seed: 1,
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            world: WorldConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// LSTM units n.
    pub hidden: usize,
    /// Word embedding width m.
    pub embed: usize,
    /// Feature channels D; checked against the dataset when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<usize>,
    /// Grid side g; checked against the dataset when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_side: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: 32,
            embed: 16,
            features: None,
            grid_side: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub supervision: SupervisionMode,
    pub lambda: f64,
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub init_scale: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            supervision: SupervisionMode::None,
            lambda: 1.0,
            epochs: 20,
            lr: 5e-3,
            dropout: 0.0,
            init_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub split: Split,
    pub caption_mode: CaptionMode,
    pub aggregator: Aggregator,
    pub kl_direction: KlDirection,
    /// Longest greedy caption.
    pub max_len: usize,
    /// Images whose attention maps are dumped as PGM files.
    pub pgm_images: usize,
    pub histogram_bins: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split: Split::Test,
            caption_mode: CaptionMode::Gt,
            aggregator: Aggregator::Max,
            kl_direction: KlDirection::BetaAlpha,
            max_len: 24,
            pgm_images: 3,
            histogram_bins: 20,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if self.model.hidden == 0 || self.model.embed == 0 {
            bail!("model.hidden and model.embed must be positive");
        }
        if !(t.lambda >= 0.0 && t.lambda.is_finite()) {
            bail!("train.lambda must be a finite value >= 0, got {}", t.lambda);
        }
        if !(t.lr >= 0.0 && t.lr.is_finite()) {
            bail!("train.lr must be a finite value >= 0, got {}", t.lr);
        }
        if !(0.0..1.0).contains(&t.dropout) {
            bail!("train.dropout must lie in [0, 1), got {}", t.dropout);
        }
        if self.eval.max_len == 0 {
            bail!("eval.max_len must be positive");
        }
        if self.eval.histogram_bins == 0 {
            bail!("eval.histogram_bins must be positive");
        }
        self.world.validate()?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.train.lambda,
            supervision: self.train.supervision,
            epochs: self.train.epochs,
            lr: self.train.lr,
            dropout: self.train.dropout,
            seed: self.seed,
            init_scale: self.train.init_scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml(
            "seed = 3\n[train]\nsupervision = \"strong\"\nlambda = 2.5\n[eval]\ncaption_mode = \"generated\"\naggregator = \"mean\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.supervision, SupervisionMode::Strong);
        assert_eq!(cfg.train.lambda, 2.5);
        assert_eq!(cfg.train.epochs, TrainSection::default().epochs);
        assert_eq!(cfg.eval.caption_mode, CaptionMode::Generated);
        assert_eq!(cfg.eval.aggregator, Aggregator::Mean);
        assert_eq!(cfg.world, WorldConfig::default());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml("sed = 1\n").is_err());
        assert!(RunConfig::from_toml("[train]\ndropout = 1.0\n").is_err());
        assert!(RunConfig::from_toml("[train]\nlambda = -1.0\n").is_err());
        assert!(RunConfig::from_toml("[world]\nnoise = -0.5\n").is_err());
    }
}
