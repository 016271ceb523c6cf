//! The trainable lightweight 3D decoder.
//!
//! Four residual blocks, each followed by `(1, 2, 2)` trilinear upsampling, take the
//! stride-16 slice embeddings back to full in-plane resolution. Three heads produce
//! logits: the main head on block 4 (full resolution) and two deep-supervision heads
//! on blocks 3 and 2 (1/2 and 1/4 in-plane resolution). Depth is never resampled.

mod init;
mod params;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    leaky_relu, leaky_relu_backward, upsample_inplane2, upsample_inplane2_backward, Conv3d,
    InstanceNorm, NormCache, Scalar,
};

pub use init::{initialize_weights, init_std};
pub use params::{count_parameters, ParamCount, ParamKind, ParamRef, ParamMut};

/// Number of supervision stages.
pub const STAGES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    /// `256 * modalities` for the standard encoders.
    pub in_channels: usize,
    pub block_channels: [usize; 4],
    pub num_classes: usize,
}

impl DecoderConfig {
    pub const DEFAULT_BLOCKS: [usize; 4] = [128, 64, 32, 16];

    pub fn new(modalities: usize, num_classes: usize) -> Self {
        Self {
            in_channels: 256 * modalities,
            block_channels: Self::DEFAULT_BLOCKS,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::validation("decoder.in_channels", "must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::validation("decoder.num_classes", "must be >= 2"));
        }
        let c = self.block_channels;
        if c.windows(2).any(|w| w[1] >= w[0]) || c[3] < 2 {
            return Err(Error::validation(
                "decoder.block_channels",
                format!("must be strictly decreasing with the last >= 2, got {c:?}"),
            ));
        }
        Ok(())
    }

    /// `(input channels, output channels)` of each block.
    pub fn block_io(&self) -> [(usize, usize); 4] {
        let c = self.block_channels;
        [(self.in_channels, c[0]), (c[0], c[1]), (c[1], c[2]), (c[2], c[3])]
    }

    /// Input channels of the heads in stage order: main (block 4), block 3, block 2.
    pub fn head_inputs(&self) -> [usize; STAGES] {
        let c = self.block_channels;
        [c[3], c[2], c[1]]
    }
}

/// Logits per supervision stage, each `(N, D, H_l, W_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutputs<T> {
    pub logits: Vec<Array4<T>>,
}

impl<T: Scalar> DecoderOutputs<T> {
    pub fn main(&self) -> &Array4<T> {
        &self.logits[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<T> {
    pub conv1: Conv3d<T>,
    pub norm1: InstanceNorm<T>,
    pub conv2: Conv3d<T>,
    pub norm2: InstanceNorm<T>,
    pub proj: Conv3d<T>,
}

#[derive(Debug)]
pub struct BlockCache<T> {
    x: Array4<T>,
    n1: NormCache<T>,
    r1: Array4<T>,
    n2: NormCache<T>,
    out: Array4<T>,
}

impl<T: Scalar> ResBlock<T> {
    fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            conv1: Conv3d::zeros(c_in, c_out, 3),
            norm1: InstanceNorm::zeros(c_out),
            conv2: Conv3d::zeros(c_out, c_out, 3),
            norm2: InstanceNorm::zeros(c_out),
            proj: Conv3d::zeros(c_in, c_out, 1),
        }
    }

    /// Block output before activation and upsampling; exposed for the residual identity.
    pub fn pre_activation(&self, x: &Array4<T>) -> Array4<T> {
        let (n1, _) = self.norm1.forward(&self.conv1.forward(x));
        let r1 = leaky_relu(&n1);
        let (n2, _) = self.norm2.forward(&self.conv2.forward(&r1));
        n2 + self.proj.forward(x)
    }

    fn forward(&self, x: &Array4<T>) -> Array4<T> {
        upsample_inplane2(&leaky_relu(&self.pre_activation(x)))
    }

    fn forward_cached(&self, x: Array4<T>) -> (Array4<T>, BlockCache<T>) {
        let (y1, n1) = self.norm1.forward(&self.conv1.forward(&x));
        let r1 = leaky_relu(&y1);
        let (y2, n2) = self.norm2.forward(&self.conv2.forward(&r1));
        let out = leaky_relu(&(y2 + self.proj.forward(&x)));
        let up = upsample_inplane2(&out);
        (up, BlockCache { x, n1, r1, n2, out })
    }

    fn backward(&self, cache: &BlockCache<T>, dup: &Array4<T>, grad: &mut Self, need_input: bool) -> Option<Array4<T>> {
        let dout = upsample_inplane2_backward(dup);
        let ds = leaky_relu_backward(&dout, &cache.out);
        let dy2 = self.norm2.backward(&cache.n2, &ds, &mut grad.norm2);
        let dr1 = self.conv2.backward(&cache.r1, &dy2, &mut grad.conv2);
        let dy1 = self.norm1.backward(&cache.n1, &leaky_relu_backward(&dr1, &cache.r1), &mut grad.norm1);
        let dx_main = conv_backward(&self.conv1, &cache.x, &dy1, &mut grad.conv1, need_input);
        let dx_proj = conv_backward(&self.proj, &cache.x, &ds, &mut grad.proj, need_input);
        match (dx_main, dx_proj) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        }
    }
}

fn conv_backward<T: Scalar>(
    conv: &Conv3d<T>,
    x: &Array4<T>,
    dy: &Array4<T>,
    grad: &mut Conv3d<T>,
    need_input: bool,
) -> Option<Array4<T>> {
    if need_input {
        Some(conv.backward(x, dy, grad))
    } else {
        conv.backward_params(x, dy, grad);
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    pub conv: Conv3d<T>,
    pub norm: InstanceNorm<T>,
    pub out: Conv3d<T>,
}

#[derive(Debug)]
pub struct HeadCache<T> {
    x: Array4<T>,
    n: NormCache<T>,
    r: Array4<T>,
}

impl<T: Scalar> Head<T> {
    fn zeros(c_in: usize, num_classes: usize) -> Self {
        Self {
            conv: Conv3d::zeros(c_in, c_in / 2, 3),
            norm: InstanceNorm::zeros(c_in / 2),
            out: Conv3d::zeros(c_in / 2, num_classes, 1),
        }
    }

    fn forward(&self, x: &Array4<T>) -> Array4<T> {
        let (n, _) = self.norm.forward(&self.conv.forward(x));
        self.out.forward(&leaky_relu(&n))
    }

    fn forward_cached(&self, x: &Array4<T>) -> (Array4<T>, HeadCache<T>) {
        let (n, nc) = self.norm.forward(&self.conv.forward(x));
        let r = leaky_relu(&n);
        let y = self.out.forward(&r);
        (
            y,
            HeadCache {
                x: x.clone(),
                n: nc,
                r,
            },
        )
    }

    fn backward(&self, cache: &HeadCache<T>, dy: &Array4<T>, grad: &mut Self) -> Array4<T> {
        let dr = self.out.backward(&cache.r, dy, &mut grad.out);
        let dn = self.norm.backward(&cache.n, &leaky_relu_backward(&dr, &cache.r), &mut grad.norm);
        self.conv.backward(&cache.x, &dn, &mut grad.conv)
    }
}

/// Decoder parameters. The same structure doubles as gradient and momentum storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T> {
    pub cfg: DecoderConfig,
    pub blocks: Vec<ResBlock<T>>,
    /// Stage order: main, block-3 auxiliary, block-2 auxiliary.
    pub heads: Vec<Head<T>>,
}

/// Activations retained by [`Decoder::forward_train`] for the backward pass.
#[derive(Debug)]
pub struct DecoderCache<T> {
    blocks: Vec<BlockCache<T>>,
    heads: Vec<HeadCache<T>>,
}

impl<T: Scalar> DecoderCache<T> {
    /// Sign of every leaky-rectifier input, in a fixed order. Two evaluations with equal
    /// signatures lie on the same linear piece of every rectifier.
    pub fn rectifier_signs(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.r1.iter().map(|v| *v > T::zero()));
            out.extend(b.out.iter().map(|v| *v > T::zero()));
        }
        for h in &self.heads {
            out.extend(h.r.iter().map(|v| *v > T::zero()));
        }
        out
    }
}

impl<T: Scalar> Decoder<T> {
    /// All parameters zero, including norm scales.
    pub fn zeros(cfg: &DecoderConfig) -> Self {
        let blocks = cfg.block_io().iter().map(|&(i, o)| ResBlock::zeros(i, o)).collect();
        let heads = cfg
            .head_inputs()
            .iter()
            .map(|&c| Head::zeros(c, cfg.num_classes))
            .collect();
        Self {
            cfg: cfg.clone(),
            blocks,
            heads,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.cfg)
    }

    fn check_input(&self, emb: &Array4<T>) -> Result<()> {
        if emb.dim().0 != self.cfg.in_channels {
            return Err(Error::shape(format!(
                "embedding has {} channels, decoder expects {}",
                emb.dim().0,
                self.cfg.in_channels
            )));
        }
        Ok(())
    }

    pub fn forward(&self, emb: &Array4<T>) -> Result<DecoderOutputs<T>> {
        self.check_input(emb)?;
        let mut feats = Vec::with_capacity(4);
        let mut x = emb.as_standard_layout().into_owned();
        for b in &self.blocks {
            x = b.forward(&x);
            feats.push(x.clone());
        }
        let logits = vec![
            self.heads[0].forward(&feats[3]),
            self.heads[1].forward(&feats[2]),
            self.heads[2].forward(&feats[1]),
        ];
        Ok(DecoderOutputs { logits })
    }

    /// Stage-1 logits only, skipping the auxiliary heads.
    pub fn forward_main(&self, emb: &Array4<T>) -> Result<Array4<T>> {
        self.check_input(emb)?;
        let mut x = emb.as_standard_layout().into_owned();
        for b in &self.blocks {
            x = b.forward(&x);
        }
        Ok(self.heads[0].forward(&x))
    }

    pub fn forward_train(&self, emb: &Array4<T>) -> Result<(DecoderOutputs<T>, DecoderCache<T>)> {
        self.check_input(emb)?;
        let mut caches = Vec::with_capacity(4);
        let mut feats = Vec::with_capacity(4);
        let mut x = emb.as_standard_layout().into_owned();
        for b in &self.blocks {
            let (y, c) = b.forward_cached(x);
            feats.push(y.clone());
            caches.push(c);
            x = y;
        }
        let (l1, h1) = self.heads[0].forward_cached(&feats[3]);
        let (l2, h2) = self.heads[1].forward_cached(&feats[2]);
        let (l3, h3) = self.heads[2].forward_cached(&feats[1]);
        Ok((
            DecoderOutputs {
                logits: vec![l1, l2, l3],
            },
            DecoderCache {
                blocks: caches,
                heads: vec![h1, h2, h3],
            },
        ))
    }

    /// Accumulates the gradient of a scalar loss, given its gradients w.r.t. every stage's logits.
    pub fn backward(&self, cache: DecoderCache<T>, dlogits: &[Array4<T>], grad: &mut Self) -> Result<()> {
        if dlogits.len() != STAGES {
            return Err(Error::shape(format!("expected {STAGES} logit gradients, got {}", dlogits.len())));
        }
        let d4 = self.heads[0].backward(&cache.heads[0], &dlogits[0], &mut grad.heads[0]);
        let d3h = self.heads[1].backward(&cache.heads[1], &dlogits[1], &mut grad.heads[1]);
        let d2h = self.heads[2].backward(&cache.heads[2], &dlogits[2], &mut grad.heads[2]);
        let (b0, b1, b2, b3) = (&self.blocks[0], &self.blocks[1], &self.blocks[2], &self.blocks[3]);
        let mut d3 = b3.backward(&cache.blocks[3], &d4, &mut grad.blocks[3], true).unwrap();
        d3 += &d3h;
        let mut d2 = b2.backward(&cache.blocks[2], &d3, &mut grad.blocks[2], true).unwrap();
        d2 += &d2h;
        let d1 = b1.backward(&cache.blocks[1], &d2, &mut grad.blocks[1], true).unwrap();
        b0.backward(&cache.blocks[0], &d1, &mut grad.blocks[0], false);
        Ok(())
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Decoder<U> {
        let mut out = Decoder::<U>::zeros(&self.cfg);
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d = U::from_f64(s.to_f64().unwrap()).unwrap();
            }
        }
        out
    }
}
