//! Run configuration: one JSON file that fixes every knob of a pipeline
//! run. Unknown fields are rejected so typos fail loudly; omitted fields
//! take the documented defaults, and the fully materialized config is
//! echoed into every checkpoint manifest.

use crate::cformer::{CFormerConfig, EncoderTrainConfig};
use crate::cgan::{GanConfig, GanTrainConfig};
use crate::classifier::{ClassifierTrainConfig, ImageClassifierConfig};
use crate::dataio::{DEFAULT_EEG_PER_CLASS, DEFAULT_IMAGES_PER_CLASS};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset directories; when absent the corpus is synthesized from the
    /// run seed.
    pub eeg_dir: Option<PathBuf>,
    pub images_dir: Option<PathBuf>,
    pub eeg_per_class: usize,
    pub images_per_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            eeg_dir: None,
            images_dir: None,
            eeg_per_class: DEFAULT_EEG_PER_CLASS,
            images_per_class: DEFAULT_IMAGES_PER_CLASS,
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub model: CFormerConfig,
    pub train: EncoderTrainConfig,
}

#[derive(Serialize, Deserialize, Debug, Clone, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub model: ImageClassifierConfig,
    pub train: ClassifierTrainConfig,
}

#[derive(Serialize, Deserialize, Debug, Clone, Default)]
#[serde(deny_unknown_fields, default)]
pub struct GanSection {
    pub model: GanConfig,
    pub train: GanTrainConfig,
}

/// Both metrics are parameter-free by design (single-pass inception score,
/// hard-argmax diversity); the section exists so configs can state that
/// explicitly and so future knobs have a home. Unknown keys still fail.
#[derive(Serialize, Deserialize, Debug, Clone, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub encoder: EncoderSection,
    pub classifier: ClassifierSection,
    pub gan: GanSection,
    pub metrics: MetricsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            encoder: EncoderSection::default(),
            classifier: ClassifierSection::default(),
            gan: GanSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.model.validate()?;
        self.classifier.model.validate()?;
        self.gan.model.validate()?;
        if self.gan.model.embed_dim != self.encoder.model.embed_dim {
            return Err(Error::Config(format!(
                "gan.model.embed_dim {} must match encoder.model.embed_dim {}",
                self.gan.model.embed_dim, self.encoder.model.embed_dim
            )));
        }
        if self.gan.model.img_size != self.classifier.model.img_size {
            return Err(Error::Config(format!(
                "gan.model.img_size {} must match classifier.model.img_size {}",
                self.gan.model.img_size, self.classifier.model.img_size
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}
