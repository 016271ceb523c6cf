//! Checkpoint directories: `manifest.json` plus one RVF file per tensor.

use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::{Decoder, DecoderConfig};
use crate::error::{Error, Result};
use crate::volume::rvf::{rvf_read, rvf_write, RvfData, RvfTensor};

const FORMAT: &str = "volseg-checkpoint/1";

/// Hex SHA-256 of a value's JSON serialization.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigDigests {
    pub encoder: String,
    pub decoder: String,
    pub train: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    /// Epochs completed; training resumes at this epoch.
    pub epoch: usize,
    pub iteration: u64,
    pub decoder_config: DecoderConfig,
    pub digests: ConfigDigests,
    pub tensors: Vec<TensorEntry>,
}

/// Everything needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub decoder: Decoder<f32>,
    pub velocity: Decoder<f32>,
    pub epoch: usize,
    pub iteration: u64,
}

fn entries(dec: &Decoder<f32>, role: &str) -> Vec<(TensorEntry, Vec<f32>)> {
    dec.params()
        .into_iter()
        .map(|p| {
            (
                TensorEntry {
                    file: format!("{role}/{}.rvf", p.name),
                    name: p.name,
                    role: role.to_string(),
                    shape: p.shape,
                },
                p.data.to_vec(),
            )
        })
        .collect()
}

/// Writes the checkpoint into a sibling temp directory, then renames it over `dir`.
pub fn save_checkpoint(state: &TrainingState, digests: &ConfigDigests, dir: &Path) -> Result<()> {
    let parent = dir.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    let mut tensors = Vec::new();
    for role in ["param", "velocity"] {
        std::fs::create_dir_all(tmp.join(role)).map_err(|e| Error::io(tmp.join(role), e))?;
        let dec = if role == "param" { &state.decoder } else { &state.velocity };
        for (entry, values) in entries(dec, role) {
            let arr = ArrayD::from_shape_vec(IxDyn(&entry.shape), values).map_err(|e| Error::shape(e.to_string()))?;
            rvf_write(tmp.join(&entry.file), &RvfTensor::new(RvfData::F32(arr)).with_metadata("name", entry.name.as_str()))?;
            tensors.push(entry);
        }
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        epoch: state.epoch,
        iteration: state.iteration,
        decoder_config: state.decoder.cfg.clone(),
        digests: digests.clone(),
        tensors,
    };
    let mpath = tmp.join("manifest.json");
    std::fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn fill(dec: &mut Decoder<f32>, role: &str, dir: &Path, manifest: &CheckpointManifest) -> Result<()> {
    for p in dec.params_mut() {
        let entry = manifest
            .tensors
            .iter()
            .find(|t| t.role == role && t.name == p.name)
            .ok_or_else(|| Error::Checkpoint(format!("manifest lists no {role} tensor {}", p.name)))?;
        let path: PathBuf = dir.join(&entry.file);
        if !path.exists() {
            return Err(Error::Checkpoint(format!("missing {role} tensor {} ({})", p.name, path.display())));
        }
        let t = rvf_read(&path).map_err(|e| Error::Checkpoint(format!("{role} tensor {}: {e}", p.name)))?;
        if t.data.shape() != p.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{role} tensor {} has shape {:?}, expected {:?}",
                p.name,
                t.data.shape(),
                p.shape
            )));
        }
        let arr = t.data.into_f32()?;
        p.data.copy_from_slice(arr.as_standard_layout().as_slice().unwrap());
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(TrainingState, CheckpointManifest)> {
    let mpath = dir.join("manifest.json");
    let bytes = std::fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes)?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown checkpoint format {}", manifest.format)));
    }
    manifest.decoder_config.validate()?;
    let mut decoder = Decoder::zeros(&manifest.decoder_config);
    let mut velocity = Decoder::zeros(&manifest.decoder_config);
    fill(&mut decoder, "param", dir, &manifest)?;
    fill(&mut velocity, "velocity", dir, &manifest)?;
    Ok((
        TrainingState {
            decoder,
            velocity,
            epoch: manifest.epoch,
            iteration: manifest.iteration,
        },
        manifest,
    ))
}

impl ConfigDigests {
    /// Names of the configurations that differ.
    pub fn mismatches(&self, live: &ConfigDigests) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.encoder != live.encoder {
            out.push("encoder");
        }
        if self.decoder != live.decoder {
            out.push("decoder");
        }
        if self.train != live.train {
            out.push("train");
        }
        out
    }
}
