//! Plain-text key=value training configuration with command-line style
//! overrides.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::quantize::QuantVariant;

/// Which dataset the trainer reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Synthetic,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(Self::Mnist),
            "cifar10" => Ok(Self::Cifar10),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(Error::Config(format!("unknown dataset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    SmallCnn,
    Resnet20,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small_cnn" => Ok(Self::SmallCnn),
            "resnet20" => Ok(Self::Resnet20),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub model: ModelKind,
    /// None trains the full-precision baseline.
    pub variant: Option<QuantVariant>,
    pub fraction_pos: f64,
    pub ede: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate is multiplied by `lr_decay` every `lr_step` epochs.
    pub lr_step: usize,
    pub lr_decay: f64,
    pub seed: u64,
    /// Caps on the number of records used; 0 means the full split.
    pub train_limit: usize,
    pub eval_limit: usize,
    pub metrics_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    /// Synthetic dataset shape knobs.
    pub synth_samples: usize,
    pub synth_side: usize,
    pub synth_channels: usize,
    pub synth_classes: usize,
    pub synth_noise: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Synthetic,
            data_dir: PathBuf::from("."),
            model: ModelKind::SmallCnn,
            variant: Some(QuantVariant::SignedBinary),
            fraction_pos: 0.5,
            ede: true,
            epochs: 10,
            batch_size: 32,
            lr: 0.01,
            lr_step: 30,
            lr_decay: 0.1,
            seed: 1,
            train_limit: 0,
            eval_limit: 0,
            metrics_path: None,
            checkpoint_path: None,
            synth_samples: 256,
            synth_side: 12,
            synth_channels: 1,
            synth_classes: 4,
            synth_noise: 0.5,
        }
    }
}

impl TrainConfig {
    /// Parses `key=value` lines; `#` starts a comment and blank lines are
    /// skipped.
    pub fn from_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    /// Applies one override. Overrides use the same keys as the file.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
        }
        match key {
            "dataset" => self.dataset = value.parse()?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "model" => self.model = value.parse()?,
            "variant" => {
                self.variant = match value {
                    "fp" | "none" => None,
                    other => Some(other.parse()?),
                }
            }
            "fraction_pos" => self.fraction_pos = num(key, value)?,
            "ede" => self.ede = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "lr_step" => self.lr_step = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "train_limit" => self.train_limit = num(key, value)?,
            "eval_limit" => self.eval_limit = num(key, value)?,
            "metrics_path" => self.metrics_path = Some(PathBuf::from(value)),
            "checkpoint_path" => self.checkpoint_path = Some(PathBuf::from(value)),
            "synth_samples" => self.synth_samples = num(key, value)?,
            "synth_side" => self.synth_side = num(key, value)?,
            "synth_channels" => self.synth_channels = num(key, value)?,
            "synth_classes" => self.synth_classes = num(key, value)?,
            "synth_noise" => self.synth_noise = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let s = o.as_ref();
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{s}' is not key=value")))?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.fraction_pos) {
            return Err(Error::Config("fraction_pos must be in [0, 1]".into()));
        }
        if self.lr <= 0.0 || self.lr_decay <= 0.0 {
            return Err(Error::Config("lr and lr_decay must be positive".into()));
        }
        Ok(())
    }

    /// One line per key, parseable back by `from_str`. Embedded in metric
    /// headers so runs are reproducible from their outputs alone.
    pub fn to_key_values(&self) -> String {
        let variant = match self.variant {
            None => "fp".to_string(),
            Some(v) => v.to_string(),
        };
        let dataset = match self.dataset {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Synthetic => "synthetic",
        };
        let model = match self.model {
            ModelKind::SmallCnn => "small_cnn",
            ModelKind::Resnet20 => "resnet20",
        };
        let mut s = String::new();
        use std::fmt::Write;
        let _ = writeln!(s, "dataset={dataset}");
        let _ = writeln!(s, "data_dir={}", self.data_dir.display());
        let _ = writeln!(s, "model={model}");
        let _ = writeln!(s, "variant={variant}");
        let _ = writeln!(s, "fraction_pos={}", self.fraction_pos);
        let _ = writeln!(s, "ede={}", self.ede);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "lr_step={}", self.lr_step);
        let _ = writeln!(s, "lr_decay={}", self.lr_decay);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "train_limit={}", self.train_limit);
        let _ = writeln!(s, "eval_limit={}", self.eval_limit);
        let _ = writeln!(s, "synth_samples={}", self.synth_samples);
        let _ = writeln!(s, "synth_side={}", self.synth_side);
        let _ = writeln!(s, "synth_channels={}", self.synth_channels);
        let _ = writeln!(s, "synth_classes={}", self.synth_classes);
        let _ = writeln!(s, "synth_noise={}", self.synth_noise);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_with_comments_and_overrides() {
        let text = "\
# training run
dataset = mnist
variant = sb   # signed binary
epochs = 5
lr = 0.02
";
        let mut cfg = TrainConfig::from_str(text).unwrap();
        assert_eq!(cfg.dataset, DatasetKind::Mnist);
        assert_eq!(cfg.variant, Some(QuantVariant::SignedBinary));
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.lr, 0.02);
        cfg.apply_overrides(&["variant=fp", "seed=9"]).unwrap();
        assert_eq!(cfg.variant, None);
        assert_eq!(cfg.seed, 9);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::from_str("no_equals_here").is_err());
        assert!(TrainConfig::from_str("mystery=1").is_err());
        assert!(TrainConfig::from_str("epochs=beaucoup").is_err());
        let mut cfg = TrainConfig::default();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        cfg = TrainConfig::default();
        cfg.fraction_pos = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn key_values_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.apply_overrides(&["dataset=cifar10", "model=resnet20", "variant=t", "seed=42"])
            .unwrap();
        let text = cfg.to_key_values();
        let back = TrainConfig::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
