//! JSON run configuration shared by the command line and the tests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{gen_synthetic, load_dataset, read_cifar10, split, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::multiscale::MultiScaleConfig;
use crate::numerics::Rng;
use crate::trainer::TrainConfig;

/// Filters per conv layer in the preset models.
pub const PRESET_CONV_CHANNELS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// Generated in memory from `seed`.
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
        #[serde(default)]
        seed: u64,
    },
    /// A dataset file written by `save_dataset`.
    File { path: PathBuf },
    /// The six CIFAR-10 binary batches; the training batches are used.
    Cifar10 { dir: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            spec: SyntheticSpec::desk(),
            seed: 0,
        }
    }
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Synthetic { spec, seed } => gen_synthetic(spec, &mut Rng::new(*seed)),
            DataSource::File { path } => load_dataset(path),
            DataSource::Cifar10 { dir } => read_cifar10(dir).map(|(train, _)| train),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Held-out share used for validation loss and accuracy@1 queries.
    pub validation_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            validation_fraction: 0.2,
            stratified: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs/desk"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Picks the model widths when `model` is absent.
    pub preset: Preset,
    pub data: DataSource,
    pub split: SplitConfig,
    /// Defaults to the preset model for the data's image shape.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<MultiScaleConfig>,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected desk or paper)"
            ))),
        }
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        RunConfig {
            preset: Preset::Desk,
            data: DataSource::default(),
            split: SplitConfig::default(),
            model: None,
            train: TrainConfig::desk(),
            output: OutputConfig::default(),
        }
    }

    pub fn paper() -> Self {
        RunConfig {
            preset: Preset::Paper,
            train: TrainConfig::paper(),
            output: OutputConfig {
                dir: PathBuf::from("runs/paper"),
            },
            ..Self::desk()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.split.validation_fraction;
        if !(0.0..1.0).contains(&f) {
            return Err(Error::Config(format!(
                "split.validation_fraction must be in [0, 1), got {f}"
            )));
        }
        if let Some(m) = &self.model {
            m.validate()?;
        }
        self.train.validate()
    }

    /// The configured model, or the preset model for `input_shape`.
    pub fn model_for(&self, input_shape: &[usize]) -> MultiScaleConfig {
        self.model.clone().unwrap_or_else(|| match self.preset {
            Preset::Desk => MultiScaleConfig::desk(input_shape, PRESET_CONV_CHANNELS),
            Preset::Paper => MultiScaleConfig::paper_widths(input_shape, PRESET_CONV_CHANNELS),
        })
    }

    /// Training and held-out splits of `data`; no held-out split when the
    /// fraction is zero.
    pub fn split_data(&self, data: &Dataset) -> Result<(Dataset, Option<Dataset>)> {
        let f = self.split.validation_fraction;
        if f == 0.0 {
            return Ok((data.clone(), None));
        }
        let mut parts = split(
            data,
            &[1.0 - f, f],
            self.split.stratified,
            &mut Rng::new(self.split.seed),
        )?;
        let held_out = parts.pop().expect("two parts");
        Ok((parts.pop().expect("two parts"), Some(held_out)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_desk_preset() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::desk());
        let round = RunConfig::from_json(&RunConfig::paper().to_json()).unwrap();
        assert_eq!(round, RunConfig::paper());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_json(r#"{"train": {"learning_rate": 0.1}}"#).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        assert!(err.is_usage());
        let err = RunConfig::from_json(r#"{"train": {"optimizer": {"lr": 0.1}}}"#).unwrap_err();
        assert!(err.to_string().contains("lr"), "{err}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(RunConfig::from_json(r#"{"train": {"num_epochs": 0}}"#)
            .unwrap_err()
            .is_usage());
        assert!(
            RunConfig::from_json(r#"{"split": {"validation_fraction": 1.5}}"#)
                .unwrap_err()
                .is_usage()
        );
    }

    #[test]
    fn preset_model_widths() {
        let desk = RunConfig::desk().model_for(&[3, 16, 16]);
        assert_eq!(desk.fusion_input_dim(), 112);
        let paper = RunConfig::paper().model_for(&[3, 32, 32]);
        assert_eq!(paper.fusion_input_dim(), 4096 + 1024 + 512);
        assert_eq!(paper.joint_dim, 4096);
    }

    #[test]
    fn split_is_stratified_holdout() {
        let cfg = RunConfig::desk();
        let data = cfg.data.load().unwrap();
        let (train, held) = cfg.split_data(&data).unwrap();
        let held = held.unwrap();
        assert_eq!((train.len(), held.len()), (640, 160));
        assert!(held.class_counts().iter().all(|&c| c == 40));
    }
}
