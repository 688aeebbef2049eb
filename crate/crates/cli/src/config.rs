//! Pipeline configuration: a flat key/value TOML file whose keys mirror the
//! settings below. Unknown keys are errors. Command-line flags override
//! config values, which override the built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    // Paths.
    pub corpus: Option<PathBuf>,
    pub train_corpus: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub vocabulary: Option<PathBuf>,
    pub code_table: Option<PathBuf>,
    pub mine_stats: Option<PathBuf>,
    pub expanded_corpus: Option<PathBuf>,
    pub expanded_test_corpus: Option<PathBuf>,
    pub expansion_report: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub pr_curve: Option<PathBuf>,
    pub borda_table: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,

    // Split settings.
    pub split_ratio: Option<f64>,

    // Mining settings.
    pub min_frequency: Option<u64>,
    pub minsup: Option<u64>,
    pub prune: Option<bool>,
    pub candidate_cap: Option<usize>,

    // Expansion settings.
    pub k: Option<usize>,
    pub metric: Option<String>,
    pub all_tie_branches: Option<bool>,
    pub expand_test: Option<bool>,

    // Training settings.
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub stage_epochs: Option<usize>,
    pub weight_decay: Option<f64>,
    pub dropout_rate: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub mode: Option<String>,

    // Evaluation settings.
    pub p_at: Option<Vec<usize>>,
    pub label: Option<String>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let config: PipelineConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config file {}", path.display()))?;
        Ok(config)
    }
}

/// Resolve an optional flag against its config key and a default.
pub fn setting<T: Clone>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

/// Resolve a required path: flag first, then the named config key.
pub fn required_path(
    flag: Option<PathBuf>,
    config: &Option<PathBuf>,
    flag_name: &str,
    config_key: &str,
) -> Result<PathBuf> {
    flag.or_else(|| config.clone()).ok_or_else(|| {
        anyhow::anyhow!("missing required path: pass {flag_name} or set `{config_key}` in the config file")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<PipelineConfig>("no_such_key = 1").unwrap_err();
        assert!(err.to_string().contains("no_such_key"));
    }

    #[test]
    fn flat_keys_parse() {
        let config: PipelineConfig = toml::from_str(
            "corpus = \"data/corpus.jsonl\"\nminsup = 3\nmetric = \"cosine\"\np_at = [10, 20]\n",
        )
        .unwrap();
        assert_eq!(config.corpus.unwrap(), PathBuf::from("data/corpus.jsonl"));
        assert_eq!(config.minsup, Some(3));
        assert_eq!(config.p_at.unwrap(), vec![10, 20]);
    }
}
