//! Pretrained ViT image-encoder backend (the SAM ViT-B layout) read from safetensors.
//!
//! Slices run at native resolution: absolute position embeddings are resized to the
//! slice's token grid and relative-position tables are resampled as needed.

use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayD, ArrayView2, ArrayView3, Ix1, Ix2};
use safetensors::{Dtype, SafeTensors};

use super::layers::{gelu, multi_head_attention, patch_tokens, LayerNorm, Linear};
use super::posembed::{interpolate_position_embeddings, interpolate_rows};
use crate::error::{Error, Result};

const LN_EPS: f32 = 1e-6;

/// Architecture facts that cannot be read off tensor shapes.
#[derive(Debug, Clone)]
pub struct VitSettings {
    pub heads: usize,
    pub window: usize,
    pub global_blocks: Vec<usize>,
    pub pixel_mean: [f32; 3],
    pub pixel_std: [f32; 3],
}

#[derive(Debug, Clone)]
struct VitBlock {
    norm1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    norm2: LayerNorm,
    lin1: Linear,
    lin2: Linear,
    rel_pos: Option<(Array2<f32>, Array2<f32>)>,
    /// 0 for global attention.
    window: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct VitEncoder {
    stride: usize,
    heads: usize,
    patch: Linear,
    pos_embed: Option<Array3<f32>>,
    blocks: Vec<VitBlock>,
    neck1: Array2<f32>,
    neck_norm1: LayerNorm,
    neck2: Array2<f32>,
    neck_norm2: LayerNorm,
    pixel_mean: [f32; 3],
    pixel_std: [f32; 3],
}

struct Weights<'a> {
    st: SafeTensors<'a>,
    prefix: String,
}

impl Weights<'_> {
    fn has(&self, name: &str) -> bool {
        self.st.tensor(&format!("{}{name}", self.prefix)).is_ok()
    }

    fn get(&self, name: &str) -> Result<ArrayD<f32>> {
        let full = format!("{}{name}", self.prefix);
        let view = self
            .st
            .tensor(&full)
            .map_err(|_| Error::Checkpoint(format!("encoder checkpoint is missing tensor {full}")))?;
        if view.dtype() != Dtype::F32 {
            return Err(Error::Unsupported {
                what: "encoder checkpoint dtype",
                value: format!("{full}: {:?} (convert to F32)", view.dtype()),
            });
        }
        let values: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        ArrayD::from_shape_vec(view.shape().to_vec(), values).map_err(|e| Error::Checkpoint(format!("{full}: {e}")))
    }

    fn matrix(&self, name: &str, rows: usize) -> Result<Array2<f32>> {
        let t = self.get(name)?;
        let n = t.len();
        if rows == 0 || n % rows != 0 || t.shape()[0] != rows {
            return Err(Error::Checkpoint(format!("{name}: unexpected shape {:?}", t.shape())));
        }
        Ok(t.into_shape_with_order((rows, n / rows)).unwrap())
    }

    fn vector(&self, name: &str, len: usize) -> Result<Array1<f32>> {
        let t = self.get(name)?;
        if t.shape() != [len] {
            return Err(Error::Checkpoint(format!("{name}: expected [{len}], got {:?}", t.shape())));
        }
        Ok(t.into_dimensionality::<Ix1>().unwrap())
    }

    fn linear(&self, name: &str, out: usize, bias: bool) -> Result<Linear> {
        Ok(Linear {
            weight: self.matrix(&format!("{name}.weight"), out)?,
            bias: if bias { Some(self.vector(&format!("{name}.bias"), out)?) } else { None },
        })
    }

    fn norm(&self, name: &str, dim: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: self.vector(&format!("{name}.weight"), dim)?,
            beta: self.vector(&format!("{name}.bias"), dim)?,
            eps: LN_EPS,
        })
    }
}

impl VitEncoder {
    pub fn load(path: &Path, settings: &VitSettings, out_dim: usize, stride: usize) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let st = SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: not a safetensors file: {e}", path.display())))?;
        let prefix = if st.names().iter().any(|n| n.starts_with("image_encoder.")) {
            "image_encoder.".to_string()
        } else {
            String::new()
        };
        let w = Weights { st, prefix };

        let pw = w.get("patch_embed.proj.weight")?;
        if pw.ndim() != 4 || pw.shape()[1..] != [3, stride, stride] {
            return Err(Error::Checkpoint(format!(
                "patch_embed.proj.weight: expected [dim, 3, {stride}, {stride}], got {:?}",
                pw.shape()
            )));
        }
        let dim = pw.shape()[0];
        if dim % settings.heads != 0 {
            return Err(Error::Checkpoint(format!("embedding width {dim} not divisible by {} heads", settings.heads)));
        }
        let patch = Linear {
            weight: pw.into_shape_with_order((dim, 3 * stride * stride)).unwrap(),
            bias: Some(w.vector("patch_embed.proj.bias", dim)?),
        };
        let pos_embed = if w.has("pos_embed") {
            let p = w.get("pos_embed")?;
            if p.ndim() != 4 || p.shape()[0] != 1 || p.shape()[3] != dim {
                return Err(Error::Checkpoint(format!("pos_embed: unexpected shape {:?}", p.shape())));
            }
            let (gh, gw) = (p.shape()[1], p.shape()[2]);
            Some(p.into_shape_with_order((gh, gw, dim)).unwrap())
        } else {
            None
        };

        let mut blocks = Vec::new();
        while w.has(&format!("blocks.{}.norm1.weight", blocks.len())) {
            let i = blocks.len();
            let b = format!("blocks.{i}");
            let rel_pos = if w.has(&format!("{b}.attn.rel_pos_h")) {
                let h = w.get(&format!("{b}.attn.rel_pos_h"))?.into_dimensionality::<Ix2>();
                let v = w.get(&format!("{b}.attn.rel_pos_w"))?.into_dimensionality::<Ix2>();
                match (h, v) {
                    (Ok(h), Ok(v)) if h.dim().1 == dim / settings.heads && v.dim().1 == dim / settings.heads => Some((h, v)),
                    _ => return Err(Error::Checkpoint(format!("{b}: relative position tables do not match head width"))),
                }
            } else {
                None
            };
            let hidden = w.get(&format!("{b}.mlp.lin1.weight"))?.shape()[0];
            blocks.push(VitBlock {
                norm1: w.norm(&format!("{b}.norm1"), dim)?,
                qkv: w.linear(&format!("{b}.attn.qkv"), 3 * dim, true)?,
                proj: w.linear(&format!("{b}.attn.proj"), dim, true)?,
                norm2: w.norm(&format!("{b}.norm2"), dim)?,
                lin1: w.linear(&format!("{b}.mlp.lin1"), hidden, true)?,
                lin2: w.linear(&format!("{b}.mlp.lin2"), dim, true)?,
                rel_pos,
                window: if settings.global_blocks.contains(&i) { 0 } else { settings.window },
            });
        }
        if blocks.is_empty() {
            return Err(Error::Checkpoint("encoder checkpoint has no transformer blocks".into()));
        }
        if let Some(&g) = settings.global_blocks.iter().find(|&&g| g >= blocks.len()) {
            return Err(Error::Checkpoint(format!("global block index {g} exceeds depth {}", blocks.len())));
        }

        let neck1 = w.matrix("neck.0.weight", out_dim)?;
        let neck2 = w.matrix("neck.2.weight", out_dim)?;
        if neck1.dim().1 != dim || neck2.dim().1 != out_dim * 9 {
            return Err(Error::Checkpoint(format!(
                "neck weights have shapes {:?} and {:?}, expected [{out_dim}, {dim}] and [{out_dim}, {}]",
                neck1.dim(),
                neck2.dim(),
                out_dim * 9
            )));
        }
        Ok(Self {
            stride,
            heads: settings.heads,
            patch,
            pos_embed,
            blocks,
            neck1,
            neck_norm1: w.norm("neck.1", out_dim)?,
            neck2,
            neck_norm2: w.norm("neck.3", out_dim)?,
            pixel_mean: settings.pixel_mean,
            pixel_std: settings.pixel_std,
        })
    }

    /// Per-slice min-max rescale to [0, 255], then per-channel standardization.
    fn preprocess(&self, img: &ArrayView3<f32>) -> Array3<f32> {
        let lo = img.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = img.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let range = hi - lo;
        let mut out = img.to_owned();
        for (c, mut ch) in out.outer_iter_mut().enumerate() {
            let (m, s) = (self.pixel_mean[c], self.pixel_std[c]);
            ch.mapv_inplace(|v| {
                let scaled = if range > 0.0 { (v - lo) / range * 255.0 } else { 0.0 };
                (scaled - m) / s
            });
        }
        out
    }

    /// One `(3, H, W)` slice to `(tokens, out_dim)`.
    pub fn forward_slice(&self, img: &ArrayView3<f32>) -> Array2<f32> {
        let (_, h, w) = img.dim();
        let (gh, gw) = (h / self.stride, w / self.stride);
        let x = self.preprocess(img);
        let mut x = self.patch.forward(&patch_tokens(&x.view(), self.stride).view());
        if let Some(pe) = &self.pos_embed {
            let pe = interpolate_position_embeddings(pe, (gh, gw));
            x += &pe.into_shape_with_order((gh * gw, x.dim().1)).unwrap();
        }
        for b in &self.blocks {
            let xn = b.norm1.forward(&x.view());
            let a = if b.window == 0 {
                self.attention(b, &xn.view(), gh, gw)
            } else {
                self.windowed_attention(b, &xn, gh, gw)
            };
            x += &a;
            let mut hidden = b.lin1.forward(&b.norm2.forward(&x.view()).view());
            hidden.mapv_inplace(gelu);
            x += &b.lin2.forward(&hidden.view());
        }
        self.neck(&x, gh, gw)
    }

    fn attention(&self, b: &VitBlock, x: &ArrayView2<f32>, gh: usize, gw: usize) -> Array2<f32> {
        let tables = b
            .rel_pos
            .as_ref()
            .map(|(th, tw)| (relative_table(th, gh), relative_table(tw, gw)));
        multi_head_attention(x, &b.qkv, &b.proj, self.heads, |_, q| {
            tables.as_ref().map(|(rh, rw)| decomposed_bias(q, rh, rw, gh, gw))
        })
    }

    fn windowed_attention(&self, b: &VitBlock, x: &Array2<f32>, gh: usize, gw: usize) -> Array2<f32> {
        let ws = b.window;
        let dim = x.dim().1;
        let (ph, pw) = (gh.div_ceil(ws) * ws, gw.div_ceil(ws) * ws);
        let mut out = Array2::<f32>::zeros((gh * gw, dim));
        for wy in (0..ph).step_by(ws) {
            for wx in (0..pw).step_by(ws) {
                // tokens past the grid edge are zero padding
                let mut win = Array2::<f32>::zeros((ws * ws, dim));
                for i in 0..ws {
                    for j in 0..ws {
                        let (y, x_) = (wy + i, wx + j);
                        if y < gh && x_ < gw {
                            win.row_mut(i * ws + j).assign(&x.row(y * gw + x_));
                        }
                    }
                }
                let a = self.attention(b, &win.view(), ws, ws);
                for i in 0..ws {
                    for j in 0..ws {
                        let (y, x_) = (wy + i, wx + j);
                        if y < gh && x_ < gw {
                            out.row_mut(y * gw + x_).assign(&a.row(i * ws + j));
                        }
                    }
                }
            }
        }
        out
    }

    fn neck(&self, x: &Array2<f32>, gh: usize, gw: usize) -> Array2<f32> {
        let y = self.neck_norm1.forward(&x.dot(&self.neck1.t()).view());
        let c = y.dim().1;
        // 3x3 zero-padded conv as an unfolded matmul; features ordered (c, ky, kx)
        let mut cols = Array2::<f32>::zeros((gh * gw, c * 9));
        for r in 0..gh {
            for q in 0..gw {
                let mut row = cols.row_mut(r * gw + q);
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (sy, sx) = (r as isize + ky as isize - 1, q as isize + kx as isize - 1);
                        if sy < 0 || sx < 0 || sy >= gh as isize || sx >= gw as isize {
                            continue;
                        }
                        let src = y.row(sy as usize * gw + sx as usize);
                        for ch in 0..c {
                            row[ch * 9 + ky * 3 + kx] = src[ch];
                        }
                    }
                }
            }
        }
        self.neck_norm2.forward(&cols.dot(&self.neck2.t()).view())
    }
}

/// `(size, size, hd)` gather of a relative-position table for equal query/key extents.
fn relative_table(table: &Array2<f32>, size: usize) -> Array3<f32> {
    let resized = interpolate_rows(table, 2 * size - 1);
    let hd = table.dim().1;
    let mut out = Array3::<f32>::zeros((size, size, hd));
    for q in 0..size {
        for k in 0..size {
            out.slice_mut(s![q, k, ..]).assign(&resized.row(q + size - 1 - k));
        }
    }
    out
}

/// Additive `(tokens, tokens)` bias from decomposed height and width terms.
fn decomposed_bias(q: &ArrayView2<f32>, rh: &Array3<f32>, rw: &Array3<f32>, gh: usize, gw: usize) -> Array2<f32> {
    let n = gh * gw;
    let mut bias = Array2::<f32>::zeros((n, n));
    for i in 0..gh {
        for j in 0..gw {
            let t = i * gw + j;
            let qt = q.row(t);
            let bh: Vec<f32> = (0..gh).map(|k| qt.dot(&rh.slice(s![i, k, ..]))).collect();
            let bw: Vec<f32> = (0..gw).map(|k| qt.dot(&rw.slice(s![j, k, ..]))).collect();
            let mut row = bias.row_mut(t);
            for ki in 0..gh {
                for kj in 0..gw {
                    row[ki * gw + kj] = bh[ki] + bw[kj];
                }
            }
        }
    }
    bias
}
