//! Content-addressed on-disk embedding cache.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array4, Ix4};
use sha2::{Digest, Sha256};

use super::{encode_volume, EmbeddingVolume, Encoder};
use crate::error::{Error, Result};
use crate::volume::rvf::{rvf_read, rvf_write_atomic, RvfData, RvfTensor};
use crate::volume::Volume;

/// Hex SHA-256 over the shape and little-endian values of a volume.
pub fn content_digest(vol: &Volume) -> String {
    let mut h = Sha256::new();
    for &n in vol.data.shape() {
        h.update((n as u64).to_le_bytes());
    }
    for &v in vol.data.iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug)]
pub struct EmbeddingCache {
    dir: PathBuf,
    encoder_calls: AtomicUsize,
}

impl EmbeddingCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            encoder_calls: AtomicUsize::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Number of encoder executions triggered through this handle.
    pub fn encoder_calls(&self) -> usize {
        self.encoder_calls.load(Ordering::SeqCst)
    }

    pub fn key(vol: &Volume, enc: &Encoder) -> String {
        let mut h = Sha256::new();
        h.update(content_digest(vol).as_bytes());
        h.update(b"/");
        h.update(enc.digest().as_bytes());
        hex::encode(h.finalize())
    }

    pub fn entry_path(&self, case_id: &str, key: &str) -> PathBuf {
        let safe: String = case_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        self.dir.join(format!("{safe}-{}.rvf", &key[..16]))
    }

    fn read_entry(path: &Path, key: &str, stride: usize) -> Result<EmbeddingVolume> {
        let t = rvf_read(path)?;
        if t.metadata.get("cache_key").and_then(|v| v.as_str()) != Some(key) {
            return Err(Error::format("cache_key", "entry belongs to a different key"));
        }
        let data = t
            .data
            .into_f32()?
            .into_dimensionality::<Ix4>()
            .map_err(|e| Error::format("shape", e.to_string()))?;
        Ok(EmbeddingVolume { data, stride })
    }

    pub fn get_or_compute(&self, case_id: &str, vol: &Volume, enc: &Encoder) -> Result<EmbeddingVolume> {
        let key = Self::key(vol, enc);
        let path = self.entry_path(case_id, &key);
        if path.exists() {
            match Self::read_entry(&path, &key, enc.stride()) {
                Ok(e) => return Ok(e),
                Err(e) => log::warn!("cache entry {} unreadable ({e}); recomputing", path.display()),
            }
        }
        self.encoder_calls.fetch_add(1, Ordering::SeqCst);
        let emb = encode_volume(vol, enc)?;
        let tensor = RvfTensor::new(RvfData::F32(to_dyn(&emb.data)))
            .with_metadata("cache_key", key.as_str())
            .with_metadata("case_id", case_id)
            .with_metadata("encoder_digest", enc.digest());
        rvf_write_atomic(&path, &tensor)?;
        Ok(emb)
    }
}

fn to_dyn(a: &Array4<f32>) -> ndarray::ArrayD<f32> {
    a.as_standard_layout().into_owned().into_dyn()
}
