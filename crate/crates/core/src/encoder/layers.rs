//! Inference-only transformer pieces shared by the encoder backends. All `f32`.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayView3, Axis};

#[derive(Debug, Clone)]
pub struct Linear {
    /// `(out, in)`
    pub weight: Array2<f32>,
    pub bias: Option<Array1<f32>>,
}

impl Linear {
    /// `x` is `(tokens, in)`; returns `(tokens, out)`.
    pub fn forward(&self, x: &ArrayView2<f32>) -> Array2<f32> {
        let mut y = x.dot(&self.weight.t());
        if let Some(b) = &self.bias {
            y += b;
        }
        y
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
    pub eps: f32,
}

impl LayerNorm {
    pub fn identity(dim: usize, eps: f32) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            eps,
        }
    }

    /// Normalizes each row of `(tokens, dim)`.
    pub fn forward(&self, x: &ArrayView2<f32>) -> Array2<f32> {
        let mut y = x.to_owned();
        for mut row in y.axis_iter_mut(Axis(0)) {
            let n = row.len() as f32;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
            let inv = 1.0 / (var + self.eps).sqrt();
            row.iter_mut()
                .zip(self.gamma.iter().zip(&self.beta))
                .for_each(|(v, (g, b))| *v = (*v - mean) * inv * g + b);
        }
        y
    }
}

/// Gaussian error linear unit, exact erf form.
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * std::f32::consts::FRAC_1_SQRT_2))
}

pub fn softmax_rows(x: &mut Array2<f32>) {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e;
            e
        });
        row.mapv_inplace(|v| v / sum);
    }
}

/// Multi-head self-attention over `(tokens, dim)` with a fused qkv projection.
/// `bias_fn(head, q_head)` may return an additive `(tokens, tokens)` logit bias.
pub fn multi_head_attention(
    x: &ArrayView2<f32>,
    qkv: &Linear,
    proj: &Linear,
    heads: usize,
    bias_fn: impl Fn(usize, &ArrayView2<f32>) -> Option<Array2<f32>>,
) -> Array2<f32> {
    let (tokens, dim) = x.dim();
    let hd = dim / heads;
    let scale = 1.0 / (hd as f32).sqrt();
    let fused = qkv.forward(x);
    let mut out = Array2::<f32>::zeros((tokens, dim));
    for h in 0..heads {
        let q = fused.slice(s![.., h * hd..(h + 1) * hd]);
        let k = fused.slice(s![.., dim + h * hd..dim + (h + 1) * hd]);
        let v = fused.slice(s![.., 2 * dim + h * hd..2 * dim + (h + 1) * hd]);
        let mut logits = q.dot(&k.t()) * scale;
        if let Some(b) = bias_fn(h, &q) {
            logits += &b;
        }
        softmax_rows(&mut logits);
        out.slice_mut(s![.., h * hd..(h + 1) * hd]).assign(&logits.dot(&v));
    }
    proj.forward(&out.view())
}

/// Unfolds a `(C, H, W)` image into non-overlapping `stride x stride` patches, one row per
/// patch in row-major grid order, features ordered `(c, ky, kx)` like a conv kernel.
pub fn patch_tokens(img: &ArrayView3<f32>, stride: usize) -> Array2<f32> {
    let (c, h, w) = img.dim();
    let (gh, gw) = (h / stride, w / stride);
    let mut out = Array2::<f32>::zeros((gh * gw, c * stride * stride));
    for gy in 0..gh {
        for gx in 0..gw {
            let mut row = out.row_mut(gy * gw + gx);
            let patch = img.slice(s![.., gy * stride..(gy + 1) * stride, gx * stride..(gx + 1) * stride]);
            for (dst, src) in row.iter_mut().zip(patch.iter()) {
                *dst = *src;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn patches_follow_kernel_order() {
        let img = ndarray::Array3::from_shape_fn((2, 4, 4), |(c, y, x)| (c * 100 + y * 10 + x) as f32);
        let t = patch_tokens(&img.view(), 2);
        assert_eq!(t.dim(), (4, 8));
        assert_eq!(t.row(1).to_vec(), vec![2.0, 3.0, 12.0, 13.0, 102.0, 103.0, 112.0, 113.0]);
    }

    #[test]
    fn layer_norm_rows() {
        let ln = LayerNorm::identity(4, 1e-6);
        let y = ln.forward(&arr2(&[[1.0f32, 2.0, 3.0, 4.0]]).view());
        assert!(y.sum().abs() < 1e-5);
        assert!((y.mapv(|v| v * v).sum() / 4.0 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn gelu_shape() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_7).abs() < 1e-6);
        assert!((gelu(3.0) - 3.0).abs() < 0.01);
        assert!(gelu(-3.0).abs() < 0.01);
    }

    #[test]
    fn attention_with_identical_tokens_returns_projected_value() {
        let dim = 4;
        let eye = Linear { weight: Array2::eye(dim), bias: None };
        let qkv = Linear {
            weight: ndarray::concatenate![Axis(0), Array2::eye(dim), Array2::eye(dim), Array2::eye(dim)],
            bias: None,
        };
        let x = arr2(&[[1.0f32, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0]]);
        let y = multi_head_attention(&x.view(), &qkv, &eye, 2, |_, _| None);
        assert!((y - &x).iter().all(|v| v.abs() < 1e-6));
    }
}
