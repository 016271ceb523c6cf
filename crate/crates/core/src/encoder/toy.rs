//! Seeded stand-in for the pretrained backbone: patch projection, fixed sinusoidal
//! position encoding and a short stack of pre-norm transformer blocks.

use ndarray::{Array1, Array2, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{gelu, multi_head_attention, patch_tokens, LayerNorm, Linear};
use super::posembed::sinusoidal_2d;

pub const WEIGHT_STD: f32 = 0.02;
const LN_EPS: f32 = 1e-6;

#[derive(Debug, Clone)]
struct Block {
    norm1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct ToyEncoder {
    stride: usize,
    dim: usize,
    heads: usize,
    patch: Linear,
    blocks: Vec<Block>,
}

impl ToyEncoder {
    pub fn new(seed: u64, dim: usize, stride: usize, depth: usize, heads: usize, mlp_ratio: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, WEIGHT_STD).unwrap();
        let mut linear = |out: usize, inp: usize| Linear {
            weight: Array2::from_shape_simple_fn((out, inp), || normal.sample(&mut rng)),
            bias: Some(Array1::zeros(out)),
        };
        let patch = linear(dim, 3 * stride * stride);
        let blocks = (0..depth)
            .map(|_| Block {
                norm1: LayerNorm::identity(dim, LN_EPS),
                qkv: linear(3 * dim, dim),
                proj: linear(dim, dim),
                norm2: LayerNorm::identity(dim, LN_EPS),
                fc1: linear(mlp_ratio * dim, dim),
                fc2: linear(dim, mlp_ratio * dim),
            })
            .collect();
        Self {
            stride,
            dim,
            heads,
            patch,
            blocks,
        }
    }

    /// Runs the transformer stack on `(tokens, dim)`.
    pub fn transform(&self, mut x: Array2<f32>) -> Array2<f32> {
        for b in &self.blocks {
            let a = multi_head_attention(&b.norm1.forward(&x.view()).view(), &b.qkv, &b.proj, self.heads, |_, _| None);
            x += &a;
            let mut hidden = b.fc1.forward(&b.norm2.forward(&x.view()).view());
            hidden.mapv_inplace(gelu);
            x += &b.fc2.forward(&hidden.view());
        }
        x
    }

    /// Position-encoding tokens for a `(gh, gw)` grid.
    pub fn position_tokens(&self, gh: usize, gw: usize) -> Array2<f32> {
        sinusoidal_2d(gh, gw, self.dim)
    }

    /// One `(3, H, W)` slice to `(tokens, dim)`.
    pub fn forward_slice(&self, img: &ArrayView3<f32>) -> Array2<f32> {
        let (_, h, w) = img.dim();
        let (gh, gw) = (h / self.stride, w / self.stride);
        let x = self.patch.forward(&patch_tokens(img, self.stride).view()) + self.position_tokens(gh, gw);
        self.transform(x)
    }
}
