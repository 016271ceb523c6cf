use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView2, Axis};

use super::Scalar;

/// A 3D convolution with cubic kernel `k` (odd), stride 1 and zero padding `k / 2`.
///
/// The kernel is stored flattened as `(c_out, c_in * k^3)` so the forward pass is a
/// single GEMM against the im2col matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

fn im2col<T: Scalar>(x: &Array4<T>, k: usize) -> Array2<T> {
    let (c, d, h, w) = x.dim();
    let x = x.as_slice().expect("standard layout");
    let pad = (k / 2) as isize;
    let k3 = k * k * k;
    let v = d * h * w;
    let mut cols = Array2::<T>::zeros((c * k3, v));
    let out = cols.as_slice_mut().unwrap();
    for ci in 0..c {
        let src = &x[ci * v..(ci + 1) * v];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let row = ci * k3 + (kd * k + kh) * k + kw;
                    let dst = &mut out[row * v..(row + 1) * v];
                    let (od, oh, ow) = (kd as isize - pad, kh as isize - pad, kw as isize - pad);
                    let w_lo = (-ow).max(0) as usize;
                    let w_hi = (w as isize - ow).min(w as isize).max(0) as usize;
                    if w_lo >= w_hi {
                        continue;
                    }
                    for z in 0..d {
                        let sz = z as isize + od;
                        if sz < 0 || sz >= d as isize {
                            continue;
                        }
                        for y in 0..h {
                            let sy = y as isize + oh;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let dbase = (z * h + y) * w;
                            let sbase = ((sz as usize * h + sy as usize) * w) as isize + ow;
                            dst[dbase + w_lo..dbase + w_hi].copy_from_slice(
                                &src[(sbase + w_lo as isize) as usize..(sbase + w_hi as isize) as usize],
                            );
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &Array2<T>, shape: (usize, usize, usize, usize), k: usize) -> Array4<T> {
    let (c, d, h, w) = shape;
    let pad = (k / 2) as isize;
    let k3 = k * k * k;
    let v = d * h * w;
    let mut x = Array4::<T>::zeros(shape);
    let xs = x.as_slice_mut().unwrap();
    let cs = cols.as_slice().expect("standard layout");
    for ci in 0..c {
        let dst = &mut xs[ci * v..(ci + 1) * v];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let row = ci * k3 + (kd * k + kh) * k + kw;
                    let src = &cs[row * v..(row + 1) * v];
                    let (od, oh, ow) = (kd as isize - pad, kh as isize - pad, kw as isize - pad);
                    let w_lo = (-ow).max(0) as usize;
                    let w_hi = (w as isize - ow).min(w as isize).max(0) as usize;
                    if w_lo >= w_hi {
                        continue;
                    }
                    for z in 0..d {
                        let sz = z as isize + od;
                        if sz < 0 || sz >= d as isize {
                            continue;
                        }
                        for y in 0..h {
                            let sy = y as isize + oh;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let sbase = (z * h + y) * w;
                            let dbase = ((sz as usize * h + sy as usize) * w) as isize + ow;
                            let dst_row = &mut dst[(dbase + w_lo as isize) as usize..(dbase + w_hi as isize) as usize];
                            for (o, &g) in dst_row.iter_mut().zip(&src[sbase + w_lo..sbase + w_hi]) {
                                *o += g;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

fn flat<T: Scalar>(x: &Array4<T>) -> ArrayView2<'_, T> {
    let (c, d, h, w) = x.dim();
    x.view().into_shape_with_order((c, d * h * w)).expect("standard layout")
}

impl<T: Scalar> Conv3d<T> {
    pub fn zeros(c_in: usize, c_out: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        Self {
            weight: Array2::zeros((c_out, c_in * k * k * k)),
            bias: Array1::zeros(c_out),
            c_in,
            c_out,
            k,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn fan_in(&self) -> usize {
        self.c_in * self.k * self.k * self.k
    }

    pub fn forward(&self, x: &Array4<T>) -> Array4<T> {
        let (c, d, h, w) = x.dim();
        assert_eq!(c, self.c_in, "conv input channels");
        let v = d * h * w;
        let mut y = Array2::<T>::zeros((self.c_out, v));
        for (mut row, &b) in y.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row.fill(b);
        }
        if self.k == 1 {
            general_mat_mul(T::one(), &self.weight, &flat(x), T::one(), &mut y);
        } else {
            let cols = im2col(x, self.k);
            general_mat_mul(T::one(), &self.weight, &cols, T::one(), &mut y);
        }
        y.into_shape_with_order((self.c_out, d, h, w)).unwrap()
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub fn backward(&self, x: &Array4<T>, dy: &Array4<T>, grad: &mut Conv3d<T>) -> Array4<T> {
        let dy2 = flat(dy);
        grad.bias += &dy2.sum_axis(Axis(1));
        if self.k == 1 {
            let x2 = flat(x);
            general_mat_mul(T::one(), &dy2, &x2.t(), T::one(), &mut grad.weight);
            let mut dx = Array2::<T>::zeros(x2.raw_dim());
            general_mat_mul(T::one(), &self.weight.t(), &dy2, T::zero(), &mut dx);
            dx.into_shape_with_order(x.raw_dim()).unwrap()
        } else {
            let cols = im2col(x, self.k);
            general_mat_mul(T::one(), &dy2, &cols.t(), T::one(), &mut grad.weight);
            let mut dcols = cols;
            general_mat_mul(T::one(), &self.weight.t(), &dy2, T::zero(), &mut dcols);
            col2im(&dcols, x.dim(), self.k)
        }
    }

    /// Parameter gradients only; the input gradient is not formed.
    pub fn backward_params(&self, x: &Array4<T>, dy: &Array4<T>, grad: &mut Conv3d<T>) {
        let dy2 = flat(dy);
        grad.bias += &dy2.sum_axis(Axis(1));
        if self.k == 1 {
            general_mat_mul(T::one(), &dy2, &flat(x).t(), T::one(), &mut grad.weight);
        } else {
            let cols = im2col(x, self.k);
            general_mat_mul(T::one(), &dy2, &cols.t(), T::one(), &mut grad.weight);
        }
    }

    /// Input gradient only; parameter gradients are skipped.
    pub fn backward_input(&self, x_shape: (usize, usize, usize, usize), dy: &Array4<T>) -> Array4<T> {
        let dy2 = flat(dy);
        let (c, d, h, w) = x_shape;
        let mut dcols = Array2::<T>::zeros((c * self.k * self.k * self.k, d * h * w));
        general_mat_mul(T::one(), &self.weight.t(), &dy2, T::zero(), &mut dcols);
        if self.k == 1 {
            dcols.into_shape_with_order(x_shape).unwrap()
        } else {
            col2im(&dcols, x_shape, self.k)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct seven-loop convolution used as the reference.
    fn naive(conv: &Conv3d<f64>, x: &Array4<f64>) -> Array4<f64> {
        let (_, d, h, w) = x.dim();
        let k = conv.k as isize;
        let p = k / 2;
        Array4::from_shape_fn((conv.c_out, d, h, w), |(o, z, y, xx)| {
            let mut acc = conv.bias[o];
            for ci in 0..conv.c_in {
                for kd in 0..k {
                    for kh in 0..k {
                        for kw in 0..k {
                            let (sz, sy, sx) = (z as isize + kd - p, y as isize + kh - p, xx as isize + kw - p);
                            if sz < 0 || sy < 0 || sx < 0 || sz >= d as isize || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            let widx = ci * (k * k * k) as usize + ((kd * k + kh) * k + kw) as usize;
                            acc += conv.weight[[o, widx]] * x[[ci, sz as usize, sy as usize, sx as usize]];
                        }
                    }
                }
            }
            acc
        })
    }

    fn random_conv(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, k: usize) -> Conv3d<f64> {
        let mut conv = Conv3d::zeros(c_in, c_out, k);
        conv.weight.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        conv.bias.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        conv
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, shape) in &[(3, (2, 3, 4, 5)), (1, (3, 2, 2, 3)), (3, (1, 1, 1, 1))] {
            let conv = random_conv(&mut rng, shape.0, 3, k);
            let x = Array4::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0));
            let fast = conv.forward(&x);
            let slow = naive(&conv, &x);
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in [1, 3] {
            let conv = random_conv(&mut rng, 2, 2, k);
            let x = Array4::from_shape_simple_fn((2, 2, 3, 3), || rng.gen_range(-1.0..1.0));
            let r = Array4::from_shape_simple_fn((2, 2, 3, 3), || rng.gen_range(-1.0..1.0));
            // loss = <r, conv(x)>
            let loss = |c: &Conv3d<f64>, x: &Array4<f64>| (&c.forward(x) * &r).sum();
            let mut grad = Conv3d::zeros(2, 2, k);
            let dx = conv.backward(&x, &r, &mut grad);
            let h = 1e-6;
            for idx in 0..x.len() {
                let mut xp = x.clone();
                xp.as_slice_mut().unwrap()[idx] += h;
                let mut xm = x.clone();
                xm.as_slice_mut().unwrap()[idx] -= h;
                let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h);
                assert!((fd - dx.as_slice().unwrap()[idx]).abs() < 1e-6);
            }
            for idx in 0..conv.weight.len() {
                let mut cp = conv.clone();
                cp.weight.as_slice_mut().unwrap()[idx] += h;
                let mut cm = conv.clone();
                cm.weight.as_slice_mut().unwrap()[idx] -= h;
                let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h);
                assert!((fd - grad.weight.as_slice().unwrap()[idx]).abs() < 1e-6);
            }
            let dx2 = conv.backward_input(x.dim(), &r);
            assert_eq!(dx, dx2);
        }
    }

    #[test]
    fn param_count_closed_form() {
        let conv = Conv3d::<f32>::zeros(2, 3, 3);
        assert_eq!(conv.param_count(), 165);
    }
}
