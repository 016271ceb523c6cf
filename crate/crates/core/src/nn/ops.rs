use ndarray::{Array4, Axis, Zip};

use super::{lit, Scalar};

pub const LEAKY_SLOPE: f64 = 0.01;

pub fn leaky_relu<T: Scalar>(x: &Array4<T>) -> Array4<T> {
    let slope: T = lit(LEAKY_SLOPE);
    x.mapv(|v| if v > T::zero() { v } else { v * slope })
}

/// `reference` is either the pre-activation or the activation; both share its sign.
pub fn leaky_relu_backward<T: Scalar>(dy: &Array4<T>, reference: &Array4<T>) -> Array4<T> {
    let slope: T = lit(LEAKY_SLOPE);
    let mut dx = dy.clone();
    Zip::from(&mut dx)
        .and(reference)
        .for_each(|g, &r| {
            if r <= T::zero() {
                *g = *g * slope
            }
        });
    dx
}

#[inline]
fn taps(j: usize, n: usize) -> (usize, usize, f64, f64) {
    // half-pixel centers: source = (j + 0.5) / 2 - 0.5, clamped at the borders
    let i = j / 2;
    if j % 2 == 0 {
        (i.saturating_sub(1), i, 0.25, 0.75)
    } else {
        (i, (i + 1).min(n - 1), 0.75, 0.25)
    }
}

/// Trilinear upsampling by `(1, 2, 2)`; depth is untouched so this is bilinear per slice.
pub fn upsample_inplane2<T: Scalar>(x: &Array4<T>) -> Array4<T> {
    let (c, d, h, w) = x.dim();
    let mut out = Array4::<T>::zeros((c, d, 2 * h, 2 * w));
    let xs = x.as_slice().expect("standard layout");
    let os = out.as_slice_mut().unwrap();
    let wt: Vec<(usize, usize, T, T)> = (0..2 * w)
        .map(|j| {
            let (a, b, wa, wb) = taps(j, w);
            (a, b, lit(wa), lit(wb))
        })
        .collect();
    let ht: Vec<(usize, usize, T, T)> = (0..2 * h)
        .map(|j| {
            let (a, b, wa, wb) = taps(j, h);
            (a, b, lit(wa), lit(wb))
        })
        .collect();
    let mut row = vec![T::zero(); 2 * w];
    for plane in 0..c * d {
        let src = &xs[plane * h * w..(plane + 1) * h * w];
        let dst = &mut os[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for (oy, &(ya, yb, wya, wyb)) in ht.iter().enumerate() {
            let ra = &src[ya * w..(ya + 1) * w];
            let rb = &src[yb * w..(yb + 1) * w];
            for (ox, &(xa, xb, wxa, wxb)) in wt.iter().enumerate() {
                row[ox] = wya * (wxa * ra[xa] + wxb * ra[xb]) + wyb * (wxa * rb[xa] + wxb * rb[xb]);
            }
            dst[oy * 2 * w..(oy + 1) * 2 * w].copy_from_slice(&row);
        }
    }
    out
}

pub fn upsample_inplane2_backward<T: Scalar>(dy: &Array4<T>) -> Array4<T> {
    let (c, d, h2, w2) = dy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array4::<T>::zeros((c, d, h, w));
    let ds = dy.as_slice().expect("standard layout");
    let xs = dx.as_slice_mut().unwrap();
    let wt: Vec<(usize, usize, T, T)> = (0..w2)
        .map(|j| {
            let (a, b, wa, wb) = taps(j, w);
            (a, b, lit(wa), lit(wb))
        })
        .collect();
    let ht: Vec<(usize, usize, T, T)> = (0..h2)
        .map(|j| {
            let (a, b, wa, wb) = taps(j, h);
            (a, b, lit(wa), lit(wb))
        })
        .collect();
    let mut rowacc = vec![T::zero(); w];
    for plane in 0..c * d {
        let src = &ds[plane * h2 * w2..(plane + 1) * h2 * w2];
        let dst = &mut xs[plane * h * w..(plane + 1) * h * w];
        for (oy, &(ya, yb, wya, wyb)) in ht.iter().enumerate() {
            rowacc.iter_mut().for_each(|v| *v = T::zero());
            for (ox, &(xa, xb, wxa, wxb)) in wt.iter().enumerate() {
                let g = src[oy * w2 + ox];
                rowacc[xa] += wxa * g;
                rowacc[xb] += wxb * g;
            }
            for x in 0..w {
                dst[ya * w + x] += wya * rowacc[x];
                dst[yb * w + x] += wyb * rowacc[x];
            }
        }
    }
    dx
}

/// Softmax over the channel axis of a `(N, D, H, W)` logit volume.
pub fn softmax_channels<T: Scalar>(logits: &Array4<T>) -> Array4<T> {
    let mut out = logits.clone();
    let n = logits.dim().0;
    let v = logits.len() / n.max(1);
    let mut flat = out
        .view_mut()
        .into_shape_with_order((n, v))
        .expect("standard layout");
    for mut col in flat.axis_iter_mut(Axis(1)) {
        let max = col.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        col.mapv_inplace(|z| {
            let e = (z - max).exp();
            sum += e;
            e
        });
        col.mapv_inplace(|e| e / sum);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    #[test]
    fn upsample_matches_half_pixel_bilinear() {
        let x = Array::from_shape_vec((1, 1, 1, 2), vec![0.0f64, 4.0]).unwrap();
        let y = upsample_inplane2(&x);
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        assert_eq!(y.as_slice().unwrap(), &[0.0, 1.0, 3.0, 4.0, 0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn upsample_of_constant_is_constant() {
        let x = Array4::from_elem((2, 3, 3, 5), 1.5f32);
        assert!(upsample_inplane2(&x).iter().all(|&v| v == 1.5));
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let x = Array4::from_shape_fn((2, 2, 3, 4), |(a, b, c, d)| (a * 7 + b * 5 + c * 3 + d) as f64 * 0.1 - 1.0);
        let r = Array4::from_shape_fn((2, 2, 6, 8), |(a, b, c, d)| ((a + 2 * b + 3 * c + 5 * d) % 7) as f64 - 3.0);
        let lhs = (&upsample_inplane2(&x) * &r).sum();
        let rhs = (&x * &upsample_inplane2_backward(&r)).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn softmax_is_stable_and_normalized() {
        let z = Array::from_shape_vec((2, 1, 1, 2), vec![1000.0f64, 0.0, 1000.0, 0.0]).unwrap();
        let p = softmax_channels(&z);
        assert_eq!(p[[0, 0, 0, 0]], 0.5);
        assert!((p[[0, 0, 0, 1]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn leaky_backward_uses_sign() {
        let x = Array::from_shape_vec((1, 1, 1, 2), vec![-2.0f64, 3.0]).unwrap();
        let y = leaky_relu(&x);
        assert_eq!(y.as_slice().unwrap(), &[-0.02, 3.0]);
        let g = leaky_relu_backward(&Array4::ones((1, 1, 1, 2)), &y);
        assert_eq!(g.as_slice().unwrap(), &[0.01, 1.0]);
    }
}
