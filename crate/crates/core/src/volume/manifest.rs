use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub case_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub image: PathBuf,
    pub label: PathBuf,
    pub modality_count: usize,
    pub split: Split,
}

/// The list of cases a run trains and evaluates on, stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub cases: Vec<CaseEntry>,
    /// `(D, H, W)`
    pub patch_size: [usize; 3],
    pub num_classes: usize,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let [pd, ph, pw] = self.patch_size;
        if pd == 0 || ph == 0 || pw == 0 || ph % 16 != 0 || pw % 16 != 0 {
            return Err(Error::validation(
                "$.patch_size",
                format!("need D >= 1 and H, W positive multiples of 16, got {:?}", self.patch_size),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::validation("$.num_classes", "must be >= 2"));
        }
        if self.cases.is_empty() {
            return Err(Error::validation("$.cases", "manifest lists no cases"));
        }
        let m = self.cases[0].modality_count;
        for (i, c) in self.cases.iter().enumerate() {
            if c.modality_count != m || m == 0 {
                return Err(Error::validation(
                    format!("$.cases[{i}].modality_count"),
                    format!("case {} has {} modalities, expected {m}", c.case_id, c.modality_count),
                ));
            }
        }
        let mut ids: Vec<&str> = self.cases.iter().map(|c| c.case_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::validation("$.cases", format!("duplicate case_id {}", w[0])));
        }
        Ok(())
    }

    pub fn modality_count(&self) -> usize {
        self.cases.first().map_or(0, |c| c.modality_count)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut manifest: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::validation(format!("$.{}", e.path()), e.inner().to_string()))?;
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn cases_in(&self, split: Split) -> impl Iterator<Item = &CaseEntry> {
        self.cases.iter().filter(move |c| c.split == split)
    }
}
