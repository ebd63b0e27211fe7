//! Experiment configuration files and data loading.

use std::path::{Path, PathBuf};

use polyglot_ner::corpus::{LabeledCorpus, LanguageId, TagSet};
use polyglot_ner::training::{Regime, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{usage, CliResult};

/// One training experiment. Relative paths are resolved against the
/// working directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Must match the subcommand when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    /// One directory per language holding `{train,dev,test}.conll`; the
    /// directory name is the language code.
    #[serde(default)]
    pub data: Vec<PathBuf>,
    /// Defaults to `tagset.json` in the first data directory or its parent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tagset: Option<PathBuf>,
    /// Checkpoint to start fine-tuning from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Runs this one seed instead of `training.seeds`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub training: TrainConfig,
}

impl ExperimentSpec {
    pub fn validate(&self, regime: Regime) -> CliResult<()> {
        if let Some(r) = self.regime {
            if r != regime {
                return Err(usage(format!("config declares regime {r:?} but the command trains {regime:?}")));
            }
        }
        match (regime, self.data.len()) {
            (Regime::Polyglot, n) if n < 2 => return Err(usage(format!("polyglot training needs at least 2 data directories, got {n}"))),
            (Regime::Mono | Regime::Finetune, n) if n != 1 => return Err(usage(format!("{regime:?} training needs exactly 1 data directory, got {n}"))),
            _ => {}
        }
        if regime == Regime::Finetune && self.init.is_none() {
            return Err(usage("fine-tuning needs an initial checkpoint (--init or \"init\")"));
        }
        if self.output.is_none() {
            return Err(usage("no output directory (--out or \"output\")"));
        }
        self.training.validate().map_err(usage)?;
        Ok(())
    }

    /// Seeds to run: the single override, or the configured list.
    pub fn seeds(&self) -> Vec<u64> {
        self.seed.map_or_else(|| self.training.seeds.clone(), |s| vec![s])
    }
}

/// Reads a JSON config; any problem is a usage error.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

pub fn load_tagset(explicit: Option<&Path>, data_dirs: &[PathBuf]) -> CliResult<TagSet> {
    let candidates: Vec<PathBuf> = match explicit {
        Some(p) => vec![p.to_path_buf()],
        None => data_dirs
            .first()
            .map(|d| {
                let mut c = vec![d.join("tagset.json")];
                if let Some(parent) = d.parent() {
                    c.push(parent.join("tagset.json"));
                }
                c
            })
            .unwrap_or_default(),
    };
    let found = candidates.iter().find(|p| p.exists()).ok_or_else(|| {
        usage("no tagset.json found beside the data; pass --tagset FILE with {\"entity_types\": [...]}")
    })?;
    read_config(found)
}

pub fn language_of(dir: &Path) -> CliResult<LanguageId> {
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| usage(format!("cannot take a language code from {}", dir.display())))?;
    LanguageId::new(name).map_err(|e| usage(format!("data directory {}: {e}", dir.display())))
}

pub fn load_corpus(dir: &Path, tagset: &TagSet) -> CliResult<LabeledCorpus> {
    let lang = language_of(dir)?;
    Ok(LabeledCorpus::from_dir(dir, tagset, lang)?)
}

pub fn load_corpora(dirs: &[PathBuf], tagset: &TagSet) -> CliResult<Vec<LabeledCorpus>> {
    dirs.iter().map(|d| load_corpus(d, tagset)).collect()
}
