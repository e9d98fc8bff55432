//! JSON dataset manifests mapping experiment roles to dump files.
//!
//! Relative paths resolve against the directory holding the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_eds_file, read_head_file, EdsError, EmbeddingSet, ModelHead};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub id_train: PathBuf,
    pub id_test: PathBuf,
    #[serde(default)]
    pub semantic_ood: Option<PathBuf>,
    #[serde(default)]
    pub covariate_ood: Vec<PathBuf>,
    #[serde(default)]
    pub head: Option<PathBuf>,
    /// Deep-ensemble member dumps, row-aligned with the matching role.
    #[serde(default)]
    pub id_test_members: Vec<PathBuf>,
    #[serde(default)]
    pub semantic_ood_members: Vec<PathBuf>,
    /// One member list per covariate dump, in the same order.
    #[serde(default)]
    pub covariate_ood_members: Vec<Vec<PathBuf>>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    #[serde(skip)]
    base_dir: PathBuf,
}

/// Loaded ensemble member dumps for each evaluation role.
#[derive(Debug, Clone)]
pub struct MemberDumps {
    pub id_test: Vec<EmbeddingSet>,
    pub semantic_ood: Vec<EmbeddingSet>,
    pub covariate_ood: Vec<Vec<EmbeddingSet>>,
}

/// Every dump referenced by a manifest, loaded and cross-checked.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub id_train: EmbeddingSet,
    pub id_test: EmbeddingSet,
    pub semantic_ood: Option<EmbeddingSet>,
    /// `(file name, set)` per covariate dump.
    pub covariate_ood: Vec<(String, EmbeddingSet)>,
    pub head: Option<ModelHead>,
    pub members: Option<MemberDumps>,
}

impl DatasetManifest {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, EdsError> {
        let mut m: DatasetManifest =
            serde_json::from_str(text).map_err(|e| EdsError::Manifest(e.to_string()))?;
        m.base_dir = base_dir.into();
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EdsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| EdsError::Manifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn read(&self, role: &str, p: &Path) -> Result<EmbeddingSet, EdsError> {
        let full = self.resolve(p);
        read_eds_file(&full).map_err(|e| EdsError::Manifest(format!("{role} ({}): {e}", full.display())))
    }

    fn read_members(&self, role: &str, paths: &[PathBuf]) -> Result<Vec<EmbeddingSet>, EdsError> {
        paths.iter().map(|p| self.read(role, p)).collect()
    }

    /// Loads every referenced dump and checks that all sets share `d` and `c`
    /// and that member dumps are row-aligned with their role.
    pub fn load_all(&self) -> Result<LoadedDataset, EdsError> {
        let id_train = self.read("id_train", &self.id_train)?;
        let id_test = self.read("id_test", &self.id_test)?;
        let (d, c) = (id_train.d(), id_train.c());
        let check = |role: &str, s: &EmbeddingSet| -> Result<(), EdsError> {
            if s.d() != d || s.c() != c {
                return Err(EdsError::Manifest(format!(
                    "{role} has d={}, c={} but id_train has d={d}, c={c}",
                    s.d(),
                    s.c()
                )));
            }
            Ok(())
        };
        check("id_test", &id_test)?;
        let semantic_ood = match &self.semantic_ood {
            Some(p) => {
                let s = self.read("semantic_ood", p)?;
                check("semantic_ood", &s)?;
                Some(s)
            }
            None => None,
        };
        let mut covariate_ood = Vec::with_capacity(self.covariate_ood.len());
        for p in &self.covariate_ood {
            let s = self.read("covariate_ood", p)?;
            check("covariate_ood", &s)?;
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            covariate_ood.push((name, s));
        }
        let head = match &self.head {
            Some(p) => {
                let full = self.resolve(p);
                let h = read_head_file(&full)
                    .map_err(|e| EdsError::Manifest(format!("head ({}): {e}", full.display())))?;
                if h.c() != c || h.d() != d {
                    return Err(EdsError::Manifest(format!(
                        "head is {}x{} but dumps have c={c}, d={d}",
                        h.c(),
                        h.d()
                    )));
                }
                Some(h)
            }
            None => None,
        };

        let members = if self.id_test_members.is_empty() {
            None
        } else {
            let aligned = |role: &str, sets: &[EmbeddingSet], n: usize| -> Result<(), EdsError> {
                for s in sets {
                    if s.n() != n || s.c() != c {
                        return Err(EdsError::Manifest(format!(
                            "{role} member has n={}, c={} but expected n={n}, c={c}",
                            s.n(),
                            s.c()
                        )));
                    }
                }
                Ok(())
            };
            let m_test = self.read_members("id_test_members", &self.id_test_members)?;
            aligned("id_test_members", &m_test, id_test.n())?;
            let m_sem = self.read_members("semantic_ood_members", &self.semantic_ood_members)?;
            if let Some(s) = &semantic_ood {
                if m_sem.len() != m_test.len() {
                    return Err(EdsError::Manifest(
                        "semantic_ood_members must list as many members as id_test_members".into(),
                    ));
                }
                aligned("semantic_ood_members", &m_sem, s.n())?;
            }
            if !self.covariate_ood_members.is_empty()
                && self.covariate_ood_members.len() != covariate_ood.len()
            {
                return Err(EdsError::Manifest(
                    "covariate_ood_members needs one member list per covariate dump".into(),
                ));
            }
            let mut m_cov = Vec::new();
            for (paths, (_, s)) in self.covariate_ood_members.iter().zip(&covariate_ood) {
                let sets = self.read_members("covariate_ood_members", paths)?;
                if sets.len() != m_test.len() {
                    return Err(EdsError::Manifest(
                        "every covariate member list must match id_test_members in length".into(),
                    ));
                }
                aligned("covariate_ood_members", &sets, s.n())?;
                m_cov.push(sets);
            }
            Some(MemberDumps {
                id_test: m_test,
                semantic_ood: m_sem,
                covariate_ood: m_cov,
            })
        };

        Ok(LoadedDataset {
            id_train,
            id_test,
            semantic_ood,
            covariate_ood,
            head,
            members,
        })
    }
}
