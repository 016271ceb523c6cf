//! Frozen 2D slice encoder applied across depth.
//!
//! Each depth slice of each modality is triplicated to three channels, encoded to a
//! stride-16 feature map, and the maps are stacked along depth. Modalities are
//! concatenated along channels, giving `(embed_dim * M, D, H / 16, W / 16)`.

mod cache;
mod layers;
mod posembed;
mod toy;
mod vit;

use std::path::PathBuf;

use ndarray::{s, Array2, Array4, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::volume::Volume;

pub use cache::{content_digest, EmbeddingCache};
pub use posembed::interpolate_position_embeddings;
pub use vit::VitSettings;

use toy::ToyEncoder;
use vit::VitEncoder;

/// Depth slices of one modality with three identical channels, `(D, 3, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceBatch {
    pub slices: Array4<f32>,
}

/// Stacked slice embeddings, `(C_e, D, H / stride, W / stride)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVolume {
    pub data: Array4<f32>,
    pub stride: usize,
}

impl EmbeddingVolume {
    pub fn channels(&self) -> usize {
        self.data.dim().0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderBackend {
    Toy,
    PretrainedVit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub backend: EncoderBackend,
    /// Weight seed of the toy backend.
    pub seed: u64,
    /// Safetensors file for the pretrained backend.
    pub checkpoint_path: Option<PathBuf>,
    pub embed_dim: usize,
    pub patch_stride: usize,
    pub toy_depth: usize,
    pub toy_heads: usize,
    pub toy_mlp_ratio: usize,
    pub vit_heads: usize,
    pub vit_window: usize,
    pub vit_global_blocks: Vec<usize>,
    pub pixel_mean: [f32; 3],
    pub pixel_std: [f32; 3],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backend: EncoderBackend::Toy,
            seed: 0,
            checkpoint_path: None,
            embed_dim: 256,
            patch_stride: 16,
            toy_depth: 2,
            toy_heads: 4,
            toy_mlp_ratio: 2,
            vit_heads: 12,
            vit_window: 14,
            vit_global_blocks: vec![2, 5, 8, 11],
            pixel_mean: [123.675, 116.28, 103.53],
            pixel_std: [58.395, 57.12, 57.375],
        }
    }
}

impl EncoderConfig {
    pub fn toy(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_stride != 16 {
            return Err(Error::Unsupported {
                what: "encoder patch stride (the decoder upsamples by exactly 16)",
                value: self.patch_stride.to_string(),
            });
        }
        if self.embed_dim == 0 {
            return Err(Error::validation("encoder.embed_dim", "must be >= 1"));
        }
        match self.backend {
            EncoderBackend::Toy => {
                if self.toy_heads == 0 || self.embed_dim % self.toy_heads != 0 || self.embed_dim % 4 != 0 {
                    return Err(Error::validation(
                        "encoder.toy_heads",
                        format!("embed_dim {} must be divisible by 4 and by the head count", self.embed_dim),
                    ));
                }
                if self.toy_mlp_ratio == 0 {
                    return Err(Error::validation("encoder.toy_mlp_ratio", "must be >= 1"));
                }
            }
            EncoderBackend::PretrainedVit => {
                if self.checkpoint_path.is_none() {
                    return Err(Error::validation("encoder.checkpoint_path", "required for the pretrained_vit backend"));
                }
                if self.vit_heads == 0 || self.vit_window == 0 {
                    return Err(Error::validation("encoder.vit_heads", "heads and window must be >= 1"));
                }
                if self.pixel_std.iter().any(|&s| s <= 0.0) {
                    return Err(Error::validation("encoder.pixel_std", "must be positive"));
                }
            }
        }
        Ok(())
    }
}

enum Backend {
    Toy(ToyEncoder),
    Vit(Box<VitEncoder>),
}

/// A constructed, immutable encoder. Weights are private and never exposed for update.
pub struct Encoder {
    cfg: EncoderConfig,
    backend: Backend,
    digest: String,
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoder")
            .field("backend", &self.cfg.backend)
            .field("digest", &self.digest)
            .finish()
    }
}

impl Encoder {
    pub fn new(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let (backend, identity) = match cfg.backend {
            EncoderBackend::Toy => (
                Backend::Toy(ToyEncoder::new(
                    cfg.seed,
                    cfg.embed_dim,
                    cfg.patch_stride,
                    cfg.toy_depth,
                    cfg.toy_heads,
                    cfg.toy_mlp_ratio,
                )),
                serde_json::json!({
                    "backend": "toy",
                    "seed": cfg.seed,
                    "embed_dim": cfg.embed_dim,
                    "patch_stride": cfg.patch_stride,
                    "depth": cfg.toy_depth,
                    "heads": cfg.toy_heads,
                    "mlp_ratio": cfg.toy_mlp_ratio,
                }),
            ),
            EncoderBackend::PretrainedVit => {
                let path = cfg.checkpoint_path.as_ref().unwrap();
                let settings = VitSettings {
                    heads: cfg.vit_heads,
                    window: cfg.vit_window,
                    global_blocks: cfg.vit_global_blocks.clone(),
                    pixel_mean: cfg.pixel_mean,
                    pixel_std: cfg.pixel_std,
                };
                let enc = VitEncoder::load(path, &settings, cfg.embed_dim, cfg.patch_stride)?;
                let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
                (
                    Backend::Vit(Box::new(enc)),
                    serde_json::json!({
                        "backend": "pretrained_vit",
                        "checkpoint_sha256": hex::encode(Sha256::digest(&bytes)),
                        "embed_dim": cfg.embed_dim,
                        "patch_stride": cfg.patch_stride,
                        "heads": cfg.vit_heads,
                        "window": cfg.vit_window,
                        "global_blocks": cfg.vit_global_blocks,
                        "pixel_mean": cfg.pixel_mean,
                        "pixel_std": cfg.pixel_std,
                    }),
                )
            }
        };
        let digest = hex::encode(Sha256::digest(identity.to_string().as_bytes()));
        Ok(Self {
            cfg: cfg.clone(),
            backend,
            digest,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Hex SHA-256 identifying the encoder function (config and weights).
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    pub fn stride(&self) -> usize {
        self.cfg.patch_stride
    }

    fn check_grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let s = self.stride();
        if h == 0 || w == 0 || h % s != 0 || w % s != 0 {
            return Err(Error::shape(format!("slice size {h}x{w} is not a positive multiple of {s}")));
        }
        Ok((h / s, w / s))
    }

    /// Per-slice embeddings `(D, embed_dim, H / 16, W / 16)`. Slices are independent.
    pub fn encode_slices(&self, batch: &SliceBatch) -> Result<Array4<f32>> {
        let (d, c, h, w) = batch.slices.dim();
        if c != 3 {
            return Err(Error::shape(format!("slice batch has {c} channels, expected 3")));
        }
        let (gh, gw) = self.check_grid(h, w)?;
        let tokens: Vec<Array2<f32>> = (0..d)
            .into_par_iter()
            .map(|i| {
                let img = batch.slices.index_axis(Axis(0), i);
                match &self.backend {
                    Backend::Toy(t) => t.forward_slice(&img),
                    Backend::Vit(v) => v.forward_slice(&img),
                }
            })
            .collect();
        let dim = self.embed_dim();
        let mut out = Array4::<f32>::zeros((d, dim, gh, gw));
        for (i, t) in tokens.iter().enumerate() {
            let grid = t.t().as_standard_layout().into_owned().into_shape_with_order((dim, gh, gw)).unwrap();
            out.index_axis_mut(Axis(0), i).assign(&grid);
        }
        Ok(out)
    }
}

/// Copies one modality's depth slices into three identical channels.
pub fn split_into_slices(vol: &Volume, modality: usize) -> Result<SliceBatch> {
    if modality >= vol.modalities() {
        return Err(Error::shape(format!(
            "modality {modality} requested from a volume with {}",
            vol.modalities()
        )));
    }
    let m = vol.modality(modality);
    let (d, h, w) = m.dim();
    let mut slices = Array4::<f32>::zeros((d, 3, h, w));
    for c in 0..3 {
        slices.slice_mut(s![.., c, .., ..]).assign(&m);
    }
    Ok(SliceBatch { slices })
}

/// Encodes every modality and concatenates along channels.
pub fn encode_volume(vol: &Volume, enc: &Encoder) -> Result<EmbeddingVolume> {
    let [d, h, w] = vol.spatial_shape();
    let (gh, gw) = enc.check_grid(h, w)?;
    let dim = enc.embed_dim();
    let mut data = Array4::<f32>::zeros((dim * vol.modalities(), d, gh, gw));
    for m in 0..vol.modalities() {
        let per_slice = enc.encode_slices(&split_into_slices(vol, m)?)?;
        data.slice_mut(s![m * dim..(m + 1) * dim, .., .., ..])
            .assign(&per_slice.permuted_axes([1, 0, 2, 3]));
    }
    Ok(EmbeddingVolume {
        data,
        stride: enc.stride(),
    })
}

/// The toy backend with default widths, for one-off calls.
pub fn toy_encoder_forward(slices: &SliceBatch, seed: u64) -> Result<Array4<f32>> {
    Encoder::new(&EncoderConfig::toy(seed))?.encode_slices(slices)
}

#[cfg(test)]
mod tests;
