//! Versioned, self-contained model files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::eval::MetricsRecord;
use crate::moe::ModelParams;
use crate::similarity::StatsTable;
use crate::train::{EmState, TrainConfig};

pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to score questions without the training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub vocabulary: Vocabulary,
    pub corpus_stats: StatsTable,
    pub model_params: ModelParams,
    pub train_config: TrainConfig,
    pub objective: f64,
    pub em: Option<EmState>,
    pub metrics: Vec<MetricsRecord>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

impl ModelArtifact {
    pub fn new(
        vocabulary: Vocabulary,
        corpus_stats: StatsTable,
        model_params: ModelParams,
        train_config: TrainConfig,
        objective: f64,
        em: Option<EmState>,
    ) -> Self {
        ModelArtifact {
            format_version: FORMAT_VERSION,
            vocabulary,
            corpus_stats,
            model_params,
            train_config,
            objective,
            em,
            metrics: Vec::new(),
        }
    }

    /// Canonical JSON: fixed field order, sorted maps, shortest round-trip floats.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: probe.format_version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moe::Variant;

    fn artifact() -> ModelArtifact {
        let docs = vec![vec!["a".to_string(), "b".to_string()]];
        let vocab = Vocabulary::from_documents(&docs, 10).unwrap();
        let mut params = ModelParams::zeros(Variant::Moe, vocab.len(), 1e-3);
        params.kappa = [0.1 + 0.2, -1.0 / 3.0];
        params.mu[1] = 1e-300;
        ModelArtifact::new(vocab, StatsTable::default(), params, TrainConfig::default(), -1.5, None)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let a = artifact();
        let text = a.to_json().unwrap();
        let back = ModelArtifact::from_json(&text).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn rejects_other_versions() {
        let mut a = artifact();
        a.format_version = 2;
        let text = a.to_json().unwrap();
        assert!(matches!(
            ModelArtifact::from_json(&text),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
    }
}
