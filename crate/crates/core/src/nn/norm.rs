use ndarray::{Array1, Array4, Axis, Zip};

use super::{lit, Scalar};

pub const NORM_EPS: f64 = 1e-5;

/// Instance normalization with a learnable per-channel affine.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

/// What the backward pass needs: normalized activations and per-channel `1 / sigma`.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub xhat: Array4<T>,
    pub inv_std: Vec<T>,
}

impl<T: Scalar> InstanceNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            gamma: Array1::zeros(channels),
            beta: Array1::zeros(channels),
        }
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    pub fn forward(&self, x: &Array4<T>) -> (Array4<T>, NormCache<T>) {
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.dim().0);
        for mut ch in xhat.axis_iter_mut(Axis(0)) {
            let n = ch.len() as f64;
            let mean = ch.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / n;
            let var = ch
                .iter()
                .map(|v| (v.to_f64().unwrap() - mean).powi(2))
                .sum::<f64>()
                / n;
            let istd = 1.0 / (var + NORM_EPS).sqrt();
            let (m, s): (T, T) = (lit(mean), lit(istd));
            ch.mapv_inplace(|v| (v - m) * s);
            inv_std.push(s);
        }
        let mut y = xhat.clone();
        for ((mut ch, &g), &b) in y.axis_iter_mut(Axis(0)).zip(&self.gamma).zip(&self.beta) {
            ch.mapv_inplace(|v| v * g + b);
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &NormCache<T>, dy: &Array4<T>, grad: &mut InstanceNorm<T>) -> Array4<T> {
        let mut dx = Array4::<T>::zeros(dy.raw_dim());
        for c in 0..dy.dim().0 {
            let dyc = dy.index_axis(Axis(0), c);
            let xh = cache.xhat.index_axis(Axis(0), c);
            let n = dyc.len() as f64;
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xh = 0.0f64;
            Zip::from(&dyc).and(&xh).for_each(|&g, &x| {
                let g = g.to_f64().unwrap();
                sum_dy += g;
                sum_dy_xh += g * x.to_f64().unwrap();
            });
            grad.beta[c] += lit(sum_dy);
            grad.gamma[c] += lit(sum_dy_xh);
            let scale = self.gamma[c] * cache.inv_std[c];
            let (mean_dy, mean_dy_xh): (T, T) = (lit(sum_dy / n), lit(sum_dy_xh / n));
            Zip::from(dx.index_axis_mut(Axis(0), c))
                .and(&dyc)
                .and(&xh)
                .for_each(|o, &g, &x| *o = scale * (g - mean_dy - x * mean_dy_xh));
        }
        dx
    }
}
