use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::detectors::{DetectorKind, Hyperparams};

/// One open-set split: the classes withheld from training and presented as
/// semantic OOD. An empty `held_out` list means the manifest's explicit
/// roles are used as-is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OsrSplit {
    pub id: String,
    #[serde(default)]
    pub held_out: Vec<u32>,
    /// Per-split manifest, for splits backed by separately trained models.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Default manifest for splits that do not name their own.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub detectors: Vec<DetectorKind>,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub splits: Vec<OsrSplit>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Fit detectors on a seeded random subset of at most this many train rows.
    #[serde(default)]
    pub train_subsample: Option<usize>,
    /// Adds total/epistemic-uncertainty rows from the manifest's member dumps.
    #[serde(default)]
    pub ensemble: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let mut cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, path.parent().map(Path::to_path_buf).unwrap_or_default())
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: impl Into<PathBuf>) {
        self.base_dir = dir.into();
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Splits to run; a config without splits runs one implicit split over
    /// the explicit manifest roles.
    pub fn effective_splits(&self) -> Vec<OsrSplit> {
        if self.splits.is_empty() {
            vec![OsrSplit {
                id: "all".into(),
                held_out: Vec::new(),
                manifest: None,
            }]
        } else {
            self.splits.clone()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        let unique_seeds: BTreeSet<_> = self.seeds.iter().collect();
        if unique_seeds.len() != self.seeds.len() {
            return Err(HarnessError::Config("duplicate seed".into()));
        }
        let unique: BTreeSet<_> = self.detectors.iter().collect();
        if unique.len() != self.detectors.len() {
            return Err(HarnessError::Config("duplicate detector".into()));
        }
        if self.threads == Some(0) {
            return Err(HarnessError::Config("threads must be >= 1".into()));
        }
        if self.train_subsample == Some(0) {
            return Err(HarnessError::Config("train_subsample must be >= 1".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &self.effective_splits() {
            if !ids.insert(&s.id) {
                return Err(HarnessError::Config(format!("duplicate split id {:?}", s.id)));
            }
            let held: BTreeSet<_> = s.held_out.iter().collect();
            if held.len() != s.held_out.len() {
                return Err(HarnessError::Config(format!("split {:?} repeats a held-out class", s.id)));
            }
            if s.manifest.is_none() && self.manifest.is_none() {
                return Err(HarnessError::Config(format!("split {:?} has no manifest", s.id)));
            }
        }
        Ok(())
    }
}
