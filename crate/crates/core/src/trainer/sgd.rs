use crate::decoder::Decoder;
use crate::error::{Error, Result};
use crate::nn::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
}

/// One heavy-ball step on a flat tensor:
/// `g' = g + wd * p; v = momentum * v + g'; p -= lr * v`.
pub fn sgd_step<T: Scalar>(p: &mut [T], g: &[T], v: &mut [T], hp: &SgdParams, decay: bool) {
    let (lr, mu): (T, T) = (lit(hp.lr), lit(hp.momentum));
    let wd: T = if decay { lit(hp.weight_decay) } else { T::zero() };
    for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
        let gd = g + wd * *p;
        *v = mu * *v + gd;
        let step = if hp.nesterov { gd + mu * *v } else { *v };
        *p -= lr * step;
    }
}

/// Updates every decoder tensor in place; `velocity` has the decoder's structure.
/// Norm affine parameters are exempt from weight decay. Gradients are checked for
/// non-finite values before anything is modified.
pub fn sgd_update<T: Scalar>(
    params: &mut Decoder<T>,
    grads: &Decoder<T>,
    velocity: &mut Decoder<T>,
    hp: &SgdParams,
) -> Result<()> {
    if params.cfg != grads.cfg || params.cfg != velocity.cfg {
        return Err(Error::shape("parameter, gradient and velocity structures differ"));
    }
    let g = grads.params();
    for t in &g {
        if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {} has {} at flat index {i}",
                t.name, t.data[i]
            )));
        }
    }
    for ((p, g), v) in params.params_mut().into_iter().zip(&g).zip(velocity.params_mut()) {
        sgd_step(p.data, g.data, v.data, hp, !p.kind.is_norm_affine());
    }
    Ok(())
}
