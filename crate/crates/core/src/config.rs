//! The run configuration: one TOML document with a section per subsystem,
//! every key defaulted, unknown keys rejected. The resolved document is
//! echoed into each run directory and its hash ties checkpoints to the
//! configuration that produced them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CorpusConfig, FeatureConfig};
use crate::error::{Error, Result};
use crate::ifd::IfdConfig;
use crate::metrics::EvalConfig;
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub ifd: IfdConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Per-section checks plus the cross-section consistency rules.
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.features.validate()?;
        self.model.validate()?;
        self.ifd.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.corpus.sample_rate != self.features.sample_rate {
            return Err(Error::Config(format!(
                "features.sample_rate: {} does not match corpus.sample_rate {}",
                self.features.sample_rate, self.corpus.sample_rate
            )));
        }
        if self.model.n_mels != self.features.n_mels {
            return Err(Error::Config(format!(
                "model.n_mels: {} does not match features.n_mels {}",
                self.model.n_mels, self.features.n_mels
            )));
        }
        if self.model.n_classes != self.corpus.num_classes {
            return Err(Error::Config(format!(
                "model.n_classes: {} does not match corpus.num_classes {}",
                self.model.n_classes, self.corpus.num_classes
            )));
        }
        Ok(())
    }

    /// The fully resolved document, suitable as a run-directory snapshot.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config encode: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (stable field order), hex-encoded.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
