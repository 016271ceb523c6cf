//! Full-volume prediction by Gaussian-weighted sliding windows.

use ndarray::{s, Array3, Array4, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::Decoder;
use crate::encoder::{encode_volume, Encoder};
use crate::error::{Error, Result};
use crate::nn::softmax_channels;
use crate::volume::{pad_edge_volume, LabelVolume, Shape3, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// `(D, H, W)`; the manifest's patch size when absent.
    pub window: Option<[usize; 3]>,
    pub overlap: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            window: None,
            overlap: 0.5,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::validation("inference.overlap", "must lie in [0, 1)"));
        }
        if let Some(w) = self.window {
            check_window(w).map_err(|e| Error::validation("inference.window", e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowGrid {
    pub window_size: Shape3,
    /// Lexicographically sorted window corners in the padded volume.
    pub origins: Vec<Shape3>,
    pub overlap_fraction: f64,
    /// Volume shape after padding each axis up to the window.
    pub padded_shape: Shape3,
}

fn axis_origins(len: usize, window: usize, overlap: f64) -> Vec<usize> {
    let stride = ((window as f64 * (1.0 - overlap)).ceil() as usize).max(1);
    let last = len - window;
    let mut out: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o < last).collect();
    out.push(last);
    out.dedup();
    out
}

/// Window corners with stride `ceil(window * (1 - overlap))`, the last one flush with the end.
pub fn compute_window_grid(shape: Shape3, window: Shape3, overlap: f64) -> Result<WindowGrid> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::validation("overlap", format!("{overlap} outside [0, 1)")));
    }
    if window.contains(&0) || shape.contains(&0) {
        return Err(Error::shape(format!("window {window:?} and shape {shape:?} must be positive")));
    }
    let padded: Shape3 = std::array::from_fn(|a| shape[a].max(window[a]));
    let per_axis: Vec<Vec<usize>> = (0..3).map(|a| axis_origins(padded[a], window[a], overlap)).collect();
    let mut origins = Vec::new();
    for &d in &per_axis[0] {
        for &h in &per_axis[1] {
            for &w in &per_axis[2] {
                origins.push([d, h, w]);
            }
        }
    }
    Ok(WindowGrid {
        window_size: window,
        origins,
        overlap_fraction: overlap,
        padded_shape: padded,
    })
}

/// Separable Gaussian centred in the window with `σ = extent / 8`, max 1, floored at 1e-4.
pub fn gaussian_importance_map(window: Shape3) -> Array3<f64> {
    let profile = |n: usize| -> Vec<f64> {
        let c = (n as f64 - 1.0) / 2.0;
        let sigma = n as f64 / 8.0;
        (0..n).map(|i| (-0.5 * ((i as f64 - c) / sigma).powi(2)).exp()).collect()
    };
    let (pd, ph, pw) = (profile(window[0]), profile(window[1]), profile(window[2]));
    let mut map = Array3::from_shape_fn((window[0], window[1], window[2]), |(d, h, w)| pd[d] * ph[h] * pw[w]);
    let max = map.iter().cloned().fold(0.0, f64::max);
    map.mapv_inplace(|v| (v / max).max(1e-4));
    map
}

fn check_window(window: Shape3) -> Result<()> {
    if window[0] == 0 || window[1] == 0 || window[2] == 0 || window[1] % 16 != 0 || window[2] % 16 != 0 {
        return Err(Error::shape(format!(
            "window {window:?} needs positive extents with H and W multiples of 16"
        )));
    }
    Ok(())
}

/// Softmax of the main-stage logits for one window.
fn window_probs(vol: &Volume, enc: &Encoder, dec: &Decoder<f32>) -> Result<Array4<f32>> {
    let emb = encode_volume(vol, enc)?;
    Ok(softmax_channels(&dec.forward_main(&emb.data)?))
}

/// Class probabilities `(N, D, H, W)`. Windows are evaluated in parallel and fused in grid
/// order into float64 buffers, so the result does not depend on the thread count.
pub fn sliding_window_predict(
    vol: &Volume,
    enc: &Encoder,
    dec: &Decoder<f32>,
    window: Shape3,
    overlap: f64,
) -> Result<Array4<f32>> {
    check_window(window)?;
    let shape = vol.spatial_shape();
    let grid = compute_window_grid(shape, window, overlap)?;
    let (padded, offset) = pad_edge_volume(vol, window);
    let weights = gaussian_importance_map(window);
    let n = dec.cfg.num_classes;
    let [pd, ph, pw] = grid.padded_shape;
    let mut acc = Array4::<f64>::zeros((n, pd, ph, pw));
    let mut wsum = Array3::<f64>::zeros((pd, ph, pw));

    let chunk = rayon::current_num_threads().max(1);
    for origins in grid.origins.chunks(chunk) {
        let probs: Vec<Array4<f32>> = origins
            .par_iter()
            .map(|o| {
                let crop = padded
                    .data
                    .slice(s![.., o[0]..o[0] + window[0], o[1]..o[1] + window[1], o[2]..o[2] + window[2]])
                    .to_owned();
                window_probs(&Volume { data: crop, ..padded.clone() }, enc, dec)
            })
            .collect::<Result<_>>()?;
        for (o, p) in origins.iter().zip(&probs) {
            let region = s![o[0]..o[0] + window[0], o[1]..o[1] + window[1], o[2]..o[2] + window[2]];
            for c in 0..n {
                Zip::from(acc.index_axis_mut(Axis(0), c).slice_mut(region))
                    .and(p.index_axis(Axis(0), c))
                    .and(&weights)
                    .for_each(|a, &v, &w| *a += v as f64 * w);
            }
            wsum.slice_mut(region).zip_mut_with(&weights, |a, &w| *a += w);
        }
    }

    if let Some(idx) = wsum.indexed_iter().find(|(_, &w)| !(w > 0.0)).map(|(i, _)| i) {
        return Err(Error::Coverage(format!("voxel {idx:?} received no window weight")));
    }
    let [od, oh, ow] = offset;
    let crop = s![od..od + shape[0], oh..oh + shape[1], ow..ow + shape[2]];
    let w = wsum.slice(crop);
    let mut out = Array4::<f32>::zeros((n, shape[0], shape[1], shape[2]));
    for c in 0..n {
        Zip::from(out.index_axis_mut(Axis(0), c))
            .and(acc.index_axis(Axis(0), c).slice(crop))
            .and(&w)
            .for_each(|o, &a, &w| *o = (a / w) as f32);
    }
    Ok(out)
}

/// Per-voxel argmax over classes; ties go to the lowest class index.
pub fn argmax_segmentation(probs: &Array4<f32>) -> Result<LabelVolume> {
    if probs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("class probabilities".into()));
    }
    let n = probs.dim().0;
    if !(2..=256).contains(&n) {
        return Err(Error::shape(format!("{n} classes cannot form a label map")));
    }
    let labels = probs.map_axis(Axis(0), |v| {
        let mut best = 0;
        for c in 1..v.len() {
            if v[c] > v[best] {
                best = c;
            }
        }
        best as u8
    });
    LabelVolume::new(labels, n)
}
