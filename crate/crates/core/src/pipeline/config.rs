use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{CorpusConfig, Region};
use crate::error::{Error, Result};
use crate::heads::Thresholds;
use crate::metrics::{GroupScheme, PersistenceOptions};
use crate::patch::{AblationMetric, Granularity, PatchMode};
use crate::scalar::Precision;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `toy`, `toy:key=value,...`, or a name resolved under the model cache directory.
    pub id: String,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            id: "toy".into(),
            precision: Precision::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub granularities: Vec<Granularity>,
    pub mlp_mode: PatchMode,
    /// Sweep every generated pair instead of only the retained ones.
    pub force: bool,
    /// Seeded cap on the number of swept pairs.
    pub max_pairs: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            granularities: vec![Granularity::Resid, Granularity::Head, Granularity::Mlp],
            mlp_mode: PatchMode::Patch,
            force: false,
            max_pairs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub regions: Vec<Region>,
    pub metric: AblationMetric,
    /// Ablate every layer at once instead of one layer per bar.
    pub cumulative: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            regions: Region::ALL.to_vec(),
            metric: AblationMetric::Rld,
            cumulative: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub scheme: GroupScheme,
    pub persistence: PersistenceOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    /// Copied into the corpus seed and used for every seeded subsample.
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub sweeps: SweepConfig,
    pub ablation: AblationConfig,
    pub metrics: MetricsConfig,
    pub thresholds: Thresholds,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let corpus = CorpusConfig::default();
        ExperimentConfig {
            model: ModelConfig::default(),
            seed: corpus.seed,
            corpus,
            sweeps: SweepConfig::default(),
            ablation: AblationConfig::default(),
            metrics: MetricsConfig::default(),
            thresholds: Thresholds::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Corpus settings with the run seed applied.
    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            seed: self.seed,
            ..self.corpus.clone()
        }
    }

    /// sha256 of the canonical JSON form, ignoring where outputs are written.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.corpus.seed = self.seed;
        let json = serde_json::to_vec(&canonical).expect("config is serializable");
        hex::encode(Sha256::digest(&json))
    }
}
