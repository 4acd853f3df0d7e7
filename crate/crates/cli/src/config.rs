use std::path::Path;

use brainprint::nn::EncoderConfig;
use brainprint::retrieval::DEFAULT_KMEANS_ITERS;
use brainprint::training::TrainConfig;
use brainprint::transforms::PreprocConfig;
use brainprint::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub preproc: PreprocConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Inverted-file cell count; `None` means `round(sqrt(N))`.
    pub n_cells: Option<usize>,
    pub n_probe: usize,
    pub kmeans_iters: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            n_cells: None,
            n_probe: 1,
            kmeans_iters: DEFAULT_KMEANS_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: brainprint::eval::DEFAULT_K }
    }
}

/// Everything a command may need, with every field defaulted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: EncoderConfig,
    pub train: TrainConfig,
    pub retrieval: RetrievalConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| Error::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.preproc.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.retrieval.n_cells == Some(0) {
            return Err(Error::InvalidArgument("retrieval.n_cells must be positive".into()));
        }
        if self.retrieval.n_probe == 0 {
            return Err(Error::InvalidArgument("retrieval.n_probe must be positive".into()));
        }
        if self.eval.k == 0 {
            return Err(Error::InvalidArgument("eval.k must be positive".into()));
        }
        Ok(())
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn to_compact(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
