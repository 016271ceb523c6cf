//! Position encodings: the fixed sinusoidal grid of the toy backend and resampling of
//! learned tables for the pretrained backend.

use ndarray::{Array2, Array3};

/// Half-pixel source coordinate, clamped at the low edge; returns `(i0, i1, frac)`.
fn source_index(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f32) {
    let scale = src_len as f64 / dst_len as f64;
    let x = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (x.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, (x - i0 as f64) as f32)
}

/// Bilinear resize of a `(h0, w0, C)` table to `(h1, w1, C)`, half-pixel aligned.
pub fn interpolate_position_embeddings(table: &Array3<f32>, target: (usize, usize)) -> Array3<f32> {
    let (h0, w0, c) = table.dim();
    let (h1, w1) = target;
    if (h0, w0) == (h1, w1) {
        return table.clone();
    }
    let mut out = Array3::<f32>::zeros((h1, w1, c));
    for y in 0..h1 {
        let (y0, y1, fy) = source_index(y, h0, h1);
        for x in 0..w1 {
            let (x0, x1, fx) = source_index(x, w0, w1);
            for ch in 0..c {
                let top = table[[y0, x0, ch]] * (1.0 - fx) + table[[y0, x1, ch]] * fx;
                let bottom = table[[y1, x0, ch]] * (1.0 - fx) + table[[y1, x1, ch]] * fx;
                out[[y, x, ch]] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Linear resize of a `(L, C)` table along its first axis.
pub fn interpolate_rows(table: &Array2<f32>, len: usize) -> Array2<f32> {
    let (l0, c) = table.dim();
    if l0 == len {
        return table.clone();
    }
    Array2::from_shape_fn((len, c), |(i, ch)| {
        let (i0, i1, f) = source_index(i, l0, len);
        table[[i0, ch]] * (1.0 - f) + table[[i1, ch]] * f
    })
}

/// Fixed 2D sinusoidal encoding as `(h * w, dim)` in row-major token order. The
/// channel quarters hold sin(y), cos(y), sin(x), cos(x) over geometric frequencies.
pub fn sinusoidal_2d(h: usize, w: usize, dim: usize) -> Array2<f32> {
    let quarter = dim / 4;
    let freqs: Vec<f64> = (0..quarter)
        .map(|i| 1.0 / 10000f64.powf(i as f64 / quarter as f64))
        .collect();
    Array2::from_shape_fn((h * w, dim), |(t, ch)| {
        let (y, x) = ((t / w) as f64, (t % w) as f64);
        let (part, i) = (ch / quarter, ch % quarter);
        let v = match part {
            0 => (y * freqs[i]).sin(),
            1 => (y * freqs[i]).cos(),
            2 => (x * freqs[i]).sin(),
            _ => (x * freqs[i]).cos(),
        };
        v as f32
    })
}
