//! Run configuration read from TOML with `[data]`, `[model]`, `[train]`,
//! `[eval]` and `[ablation]` tables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SplitRatios;
use crate::model::{Ablations, ModelConfig};
use crate::train::metrics::{bins_from_edges, Bin, DEFAULT_BIN_EDGES};
use crate::train::{ApVariant, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kg_file: PathBuf,
    pub ddi_file: PathBuf,
    pub fingerprint_file: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub split: SplitRatios,
    pub stratified: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kg_file: PathBuf::new(),
            ddi_file: PathBuf::new(),
            fingerprint_file: None,
            out_dir: PathBuf::from("out"),
            split: SplitRatios::default(),
            stratified: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Lower edges of the train-support bins; the last bin is unbounded.
    pub bin_edges: Vec<usize>,
    pub ap_variant: ApVariant,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bin_edges: DEFAULT_BIN_EDGES.to_vec(),
            ap_variant: ApVariant::default(),
        }
    }
}

impl EvalConfig {
    pub fn bins(&self) -> Result<Vec<Bin>> {
        bins_from_edges(&self.bin_edges)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablation: Ablations,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Model settings with the ablation switches applied.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            ablation: self.ablation,
            ..self.model.clone()
        }
    }

    /// Checks values and that the input files exist.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.eval.bins()?;
        for (key, path) in [
            ("data.kg_file", &self.data.kg_file),
            ("data.ddi_file", &self.data.ddi_file),
        ] {
            if path.as_os_str().is_empty() {
                return Err(Error::Config(format!("{key} is not set")));
            }
        }
        let mut files = vec![&self.data.kg_file, &self.data.ddi_file];
        files.extend(self.data.fingerprint_file.as_ref());
        for f in files {
            if !f.is_file() {
                return Err(Error::io(
                    f,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.train.epochs, 50);
        assert_eq!(c.train.batch_size, 256);
        assert_eq!(c.eval.bin_edges, vec![0, 10, 50, 200, 1000]);
    }

    #[test]
    fn partial_tables_and_ablation() {
        let c =
            RunConfig::from_toml("[model]\nk = 3\n[train]\ntask_mode = \"multi-label\"\n[ablation]\nno_kg = true\n")
                .unwrap();
        assert_eq!(c.model.k, 3);
        assert_eq!(c.model.dim, 32);
        assert!(c.model_config().ablation.no_kg);
        assert!(!c.model_config().use_kg());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[model]\nhidden = 3\n").is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let mut c = RunConfig::default();
        c.data.kg_file = PathBuf::from("/nonexistent/kg.tsv");
        c.data.ddi_file = PathBuf::from("/nonexistent/ddi.tsv");
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("/nonexistent/kg.tsv"), "{err}");
    }
}
