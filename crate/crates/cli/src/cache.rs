//! Binary corpus cache shared by the pipeline commands.

use std::fs;
use std::path::Path;

use opqa::corpus::Corpus;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CACHE_VERSION: u32 = 1;

/// Tokenized corpus with labels. Feature vectors are left empty; they
/// depend on the vocabulary chosen at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusCache {
    pub format_version: u32,
    pub drop_stopwords: bool,
    pub corpus: Corpus,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

impl CorpusCache {
    pub fn new(corpus: Corpus, drop_stopwords: bool) -> Self {
        CorpusCache {
            format_version: CACHE_VERSION,
            drop_stopwords,
            corpus,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = bincode::serialize(self).map_err(|source| CliError::Cache {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, bytes).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        let cache_err = |source| CliError::Cache {
            path: path.to_path_buf(),
            source,
        };
        let probe: VersionProbe = bincode::deserialize(&bytes).map_err(cache_err)?;
        if probe.format_version != CACHE_VERSION {
            return Err(CliError::CacheVersion {
                path: path.to_path_buf(),
                found: probe.format_version,
                expected: CACHE_VERSION,
            });
        }
        bincode::deserialize(&bytes).map_err(cache_err)
    }
}
