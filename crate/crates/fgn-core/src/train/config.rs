//! Flat key=value training configuration; CLI flags override file values.

use crate::error::{Error, Result};
use crate::model::{ModelTopology, ModelVariant};
use crate::preprocess::SampleGeometry;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub variant: ModelVariant,
    pub base_lr: f64,
    pub momentum: f64,
    pub decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: bool,
    pub cache_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub metrics_path: Option<PathBuf>,
    /// Input geometry; 64 frames / 224 crop / window 8 is the production
    /// network, smaller values exist for desk-scale fixtures.
    pub frames: usize,
    pub side: usize,
    pub fusion_window: usize,
    /// Evaluate the test split at every epoch end (slower, fills the
    /// test_acc column).
    pub eval_test_each_epoch: bool,
    /// Optional stopping conditions used by fixtures and smoke runs.
    pub max_steps: Option<u64>,
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: ModelVariant::FusionP3D,
            base_lr: 0.01,
            momentum: 0.9,
            decay: 1e-6,
            batch_size: 8,
            epochs: 30,
            seed: 0,
            augment: false,
            cache_dir: PathBuf::from("cache"),
            manifest_path: PathBuf::from("manifest.jsonl"),
            checkpoint_path: PathBuf::from("model.fgn"),
            metrics_path: None,
            frames: 64,
            side: 224,
            fusion_window: 8,
            eval_test_each_epoch: false,
            max_steps: None,
            target_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= 0.0 {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0,1), got {}", self.momentum)));
        }
        if self.decay < 0.0 {
            return Err(Error::Config(format!("decay must be >= 0, got {}", self.decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        self.topology().validate()
    }

    pub fn topology(&self) -> ModelTopology {
        ModelTopology {
            frames: self.frames,
            side: self.side,
            fusion_window: self.fusion_window,
        }
    }

    pub fn geometry(&self) -> SampleGeometry {
        SampleGeometry {
            frames: self.frames,
            side: self.side,
        }
    }

    /// Parses a `key = value` file ('#' starts a comment). Unknown keys are
    /// rejected so typos surface instead of silently using defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut config = Self::default();
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "variant" => self.variant = ModelVariant::parse(value)?,
            "base_lr" => self.base_lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "decay" => self.decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            "cache_dir" => self.cache_dir = PathBuf::from(value),
            "manifest_path" => self.manifest_path = PathBuf::from(value),
            "checkpoint_path" => self.checkpoint_path = PathBuf::from(value),
            "metrics_path" => self.metrics_path = Some(PathBuf::from(value)),
            "frames" => self.frames = parse(key, value)?,
            "side" => self.side = parse(key, value)?,
            "fusion_window" => self.fusion_window = parse(key, value)?,
            "eval_test_each_epoch" => self.eval_test_each_epoch = parse(key, value)?,
            "max_steps" => self.max_steps = Some(parse(key, value)?),
            "target_train_accuracy" => self.target_train_accuracy = Some(parse(key, value)?),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_override_defaults_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.cfg");
        std::fs::write(
            &path,
            "variant = rgb-only\nbase_lr = 0.05 # comment\nbatch_size=2\n\n# full line comment\nseed = 7\n",
        )
        .unwrap();
        let config = TrainConfig::from_file(&path).unwrap();
        assert_eq!(config.variant, ModelVariant::RgbOnly);
        assert_eq!(config.base_lr, 0.05);
        assert_eq!(config.batch_size, 2);
        assert_eq!(config.seed, 7);
        assert_eq!(config.epochs, 30);

        std::fs::write(&path, "no_such_key = 1\n").unwrap();
        assert!(TrainConfig::from_file(&path).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut config = TrainConfig::default();
        config.base_lr = 0.0;
        assert!(config.validate().is_err());
        config = TrainConfig::default();
        config.momentum = 1.0;
        assert!(config.validate().is_err());
        config = TrainConfig::default();
        config.frames = 65;
        assert!(config.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
