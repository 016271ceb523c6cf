use serde::Serialize;

use super::{Decoder, DecoderConfig, Head, ResBlock};
use crate::nn::{Conv3d, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    NormScale,
    NormShift,
}

impl ParamKind {
    pub fn is_norm_affine(self) -> bool {
        matches!(self, Self::NormScale | Self::NormShift)
    }
}

pub struct ParamRef<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

pub struct ParamMut<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub data: &'a mut [T],
}

fn conv_shape<T>(c: &Conv3d<T>) -> Vec<usize> {
    vec![c.c_out, c.c_in, c.k, c.k, c.k]
}

macro_rules! visit_conv {
    ($out:ident, $ty:ident, $prefix:expr, $conv:expr, $slice:ident) => {{
        let shape = conv_shape(&$conv);
        let n = $conv.c_out;
        $out.push($ty {
            name: format!("{}.weight", $prefix),
            kind: ParamKind::ConvWeight,
            shape,
            data: $conv.weight.$slice().unwrap(),
        });
        $out.push($ty {
            name: format!("{}.bias", $prefix),
            kind: ParamKind::ConvBias,
            shape: vec![n],
            data: $conv.bias.$slice().unwrap(),
        });
    }};
}

macro_rules! visit_norm {
    ($out:ident, $ty:ident, $prefix:expr, $norm:expr, $slice:ident) => {{
        let n = $norm.gamma.len();
        $out.push($ty {
            name: format!("{}.gamma", $prefix),
            kind: ParamKind::NormScale,
            shape: vec![n],
            data: $norm.gamma.$slice().unwrap(),
        });
        $out.push($ty {
            name: format!("{}.beta", $prefix),
            kind: ParamKind::NormShift,
            shape: vec![n],
            data: $norm.beta.$slice().unwrap(),
        });
    }};
}

const HEAD_NAMES: [&str; 3] = ["main", "aux_block3", "aux_block2"];

impl<T: Scalar> Decoder<T> {
    /// Every trainable tensor with a stable dotted name, in a fixed order.
    pub fn params(&self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::new();
        for (i, ResBlock { conv1, norm1, conv2, norm2, proj }) in self.blocks.iter().enumerate() {
            visit_conv!(out, ParamRef, format!("blocks.{i}.conv1"), conv1, as_slice);
            visit_norm!(out, ParamRef, format!("blocks.{i}.norm1"), norm1, as_slice);
            visit_conv!(out, ParamRef, format!("blocks.{i}.conv2"), conv2, as_slice);
            visit_norm!(out, ParamRef, format!("blocks.{i}.norm2"), norm2, as_slice);
            visit_conv!(out, ParamRef, format!("blocks.{i}.proj"), proj, as_slice);
        }
        for (name, Head { conv, norm, out: o }) in HEAD_NAMES.iter().zip(&self.heads) {
            visit_conv!(out, ParamRef, format!("heads.{name}.conv"), conv, as_slice);
            visit_norm!(out, ParamRef, format!("heads.{name}.norm"), norm, as_slice);
            visit_conv!(out, ParamRef, format!("heads.{name}.out"), o, as_slice);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        for (i, ResBlock { conv1, norm1, conv2, norm2, proj }) in self.blocks.iter_mut().enumerate() {
            visit_conv!(out, ParamMut, format!("blocks.{i}.conv1"), conv1, as_slice_mut);
            visit_norm!(out, ParamMut, format!("blocks.{i}.norm1"), norm1, as_slice_mut);
            visit_conv!(out, ParamMut, format!("blocks.{i}.conv2"), conv2, as_slice_mut);
            visit_norm!(out, ParamMut, format!("blocks.{i}.norm2"), norm2, as_slice_mut);
            visit_conv!(out, ParamMut, format!("blocks.{i}.proj"), proj, as_slice_mut);
        }
        for (name, Head { conv, norm, out: o }) in HEAD_NAMES.iter().zip(self.heads.iter_mut()) {
            visit_conv!(out, ParamMut, format!("heads.{name}.conv"), conv, as_slice_mut);
            visit_norm!(out, ParamMut, format!("heads.{name}.norm"), norm, as_slice_mut);
            visit_conv!(out, ParamMut, format!("heads.{name}.out"), o, as_slice_mut);
        }
        out
    }

    /// Number of allocated trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }
}

/// Closed-form parameter count with a per-layer breakdown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub per_layer: Vec<(String, usize)>,
}

fn conv_params(c_in: usize, c_out: usize, k: usize) -> usize {
    k * k * k * c_in * c_out + c_out
}

/// Counts parameters from the configuration alone: `27·Cin·Cout + Cout` per 3×3×3 conv,
/// `Cin·Cout + Cout` per 1×1×1 conv and `2·C` per affine norm.
pub fn count_parameters(cfg: &DecoderConfig) -> ParamCount {
    let mut per_layer = Vec::new();
    for (i, (c_in, c_out)) in cfg.block_io().into_iter().enumerate() {
        per_layer.push((format!("blocks.{i}.conv1"), conv_params(c_in, c_out, 3)));
        per_layer.push((format!("blocks.{i}.norm1"), 2 * c_out));
        per_layer.push((format!("blocks.{i}.conv2"), conv_params(c_out, c_out, 3)));
        per_layer.push((format!("blocks.{i}.norm2"), 2 * c_out));
        per_layer.push((format!("blocks.{i}.proj"), conv_params(c_in, c_out, 1)));
    }
    for (name, c) in HEAD_NAMES.iter().zip(cfg.head_inputs()) {
        let mid = c / 2;
        per_layer.push((format!("heads.{name}.conv"), conv_params(c, mid, 3)));
        per_layer.push((format!("heads.{name}.norm"), 2 * mid));
        per_layer.push((format!("heads.{name}.out"), conv_params(mid, cfg.num_classes, 1)));
    }
    ParamCount {
        total: per_layer.iter().map(|(_, n)| n).sum(),
        per_layer,
    }
}

