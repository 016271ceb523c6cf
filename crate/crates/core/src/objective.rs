//! Soft-dice + cross-entropy with deep supervision, with analytic gradients w.r.t. logits.

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::decoder::DecoderOutputs;
use crate::error::{Error, Result};
use crate::nn::{lit, softmax_channels, Scalar};
use crate::volume::{downsample_label_volume, LabelVolume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub epsilon: f64,
    pub include_background_in_dice: bool,
    /// Stage weights, main stage first. Renormalized to sum 1 on use.
    pub ds_weights: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            include_background_in_dice: true,
            ds_weights: deep_supervision_weights(3),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::validation("loss.epsilon", "must be > 0"));
        }
        if self.ds_weights.is_empty() || self.ds_weights.iter().any(|w| !(*w >= 0.0)) || self.ds_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::validation("loss.ds_weights", "need non-negative weights with positive sum"));
        }
        Ok(())
    }

    fn normalized_weights(&self) -> Vec<f64> {
        let s: f64 = self.ds_weights.iter().sum();
        self.ds_weights.iter().map(|w| w / s).collect()
    }
}

/// Loss value split into its two terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossTerms {
    pub total: f64,
    pub dice: f64,
    pub ce: f64,
}

impl std::ops::AddAssign for LossTerms {
    fn add_assign(&mut self, o: Self) {
        self.total += o.total;
        self.dice += o.dice;
        self.ce += o.ce;
    }
}

impl LossTerms {
    pub fn scaled(self, w: f64) -> Self {
        Self {
            total: self.total * w,
            dice: self.dice * w,
            ce: self.ce * w,
        }
    }
}

/// Weights `w_l ∝ 2^(1-l)`, `l = 1..=levels`, normalized to sum 1.
pub fn deep_supervision_weights(levels: usize) -> Vec<f64> {
    assert!(levels >= 1, "need at least one level");
    let raw: Vec<f64> = (0..levels).map(|l| 0.5f64.powi(l as i32)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / s).collect()
}

fn check<T: Scalar>(logits: &Array4<T>, target: &LabelVolume) -> Result<()> {
    let (n, d, h, w) = logits.dim();
    if [d, h, w] != target.shape() {
        return Err(Error::shape(format!(
            "logits spatial shape {:?} differs from target {:?}",
            [d, h, w],
            target.shape()
        )));
    }
    if let Some(&bad) = target.labels.iter().find(|&&v| v as usize >= n) {
        return Err(Error::validation(
            "target",
            format!("label {bad} is not below the {n} logit channels"),
        ));
    }
    Ok(())
}

struct Evaluated<T> {
    dice: f64,
    ce: f64,
    grad_dice: Option<Array4<T>>,
    grad_ce: Option<Array4<T>>,
}

fn evaluate<T: Scalar>(logits: &Array4<T>, target: &LabelVolume, cfg: &LossConfig, want_grad: bool) -> Result<Evaluated<T>> {
    check(logits, target)?;
    let n = logits.dim().0;
    let v = target.labels.len();
    let p = softmax_channels(logits);
    let pf = p.view().into_shape_with_order((n, v)).unwrap();
    let labels = target.labels.as_slice().expect("standard layout");

    let mut inter = vec![0.0f64; n];
    let mut psq = vec![0.0f64; n];
    let mut gcount = vec![0.0f64; n];
    let mut ce = 0.0f64;
    for (k, &t) in labels.iter().enumerate() {
        let t = t as usize;
        gcount[t] += 1.0;
        let pt = pf[[t, k]].to_f64().unwrap();
        inter[t] += pt;
        // log-softmax from logits for stability
        ce -= log_softmax_at(logits, t, k, n, v);
    }
    for c in 0..n {
        psq[c] = pf.row(c).iter().map(|x| x.to_f64().unwrap().powi(2)).sum();
    }
    ce /= v as f64;

    let eps = cfg.epsilon;
    let classes: Vec<usize> = if cfg.include_background_in_dice {
        (0..n).collect()
    } else {
        (1..n).collect()
    };
    let m = classes.len().max(1) as f64;
    let mut dice_mean = 0.0;
    for &c in &classes {
        dice_mean += (2.0 * inter[c] + eps) / (psq[c] + gcount[c] + eps);
    }
    let dice_loss = 1.0 - dice_mean / m;

    if !want_grad {
        return Ok(Evaluated {
            dice: dice_loss,
            ce,
            grad_dice: None,
            grad_ce: None,
        });
    }

    // d(dice)/dp, then through the softmax Jacobian
    let mut dp = Array4::<T>::zeros(logits.raw_dim());
    {
        let mut dpf = dp.view_mut().into_shape_with_order((n, v)).unwrap();
        for &c in &classes {
            let u = psq[c] + gcount[c] + eps;
            let a: T = lit(-2.0 / (m * u));
            let b: T = lit(2.0 * (2.0 * inter[c] + eps) / (m * u * u));
            for (k, o) in dpf.row_mut(c).iter_mut().enumerate() {
                let g = if labels[k] as usize == c { T::one() } else { T::zero() };
                *o = a * g + b * pf[[c, k]];
            }
        }
    }
    let mut grad_dice = Array4::<T>::zeros(logits.raw_dim());
    {
        let dpf = dp.view().into_shape_with_order((n, v)).unwrap();
        let mut gf = grad_dice.view_mut().into_shape_with_order((n, v)).unwrap();
        for k in 0..v {
            let mut dot = T::zero();
            for c in 0..n {
                dot += pf[[c, k]] * dpf[[c, k]];
            }
            for c in 0..n {
                gf[[c, k]] = pf[[c, k]] * (dpf[[c, k]] - dot);
            }
        }
    }
    let inv_v: T = lit(1.0 / v as f64);
    let mut grad_ce = p.clone();
    {
        let mut gf = grad_ce.view_mut().into_shape_with_order((n, v)).unwrap();
        for (k, &t) in labels.iter().enumerate() {
            gf[[t as usize, k]] -= T::one();
        }
        gf.mapv_inplace(|x| x * inv_v);
    }
    Ok(Evaluated {
        dice: dice_loss,
        ce,
        grad_dice: Some(grad_dice),
        grad_ce: Some(grad_ce),
    })
}

fn log_softmax_at<T: Scalar>(logits: &Array4<T>, class: usize, k: usize, n: usize, v: usize) -> f64 {
    let flat = logits.as_slice().expect("standard layout");
    let mut max = f64::NEG_INFINITY;
    for c in 0..n {
        max = max.max(flat[c * v + k].to_f64().unwrap());
    }
    let mut sum = 0.0;
    for c in 0..n {
        sum += (flat[c * v + k].to_f64().unwrap() - max).exp();
    }
    flat[class * v + k].to_f64().unwrap() - max - sum.ln()
}

/// `1 - mean_c dice_c` with per-class sums inside the ratio; in `[0, 1]`.
pub fn soft_dice_loss<T: Scalar>(logits: &Array4<T>, target: &LabelVolume, cfg: &LossConfig) -> Result<f64> {
    Ok(evaluate(logits, target, cfg, false)?.dice)
}

/// Mean over voxels of `-log softmax(logits)[target]`.
pub fn cross_entropy_loss<T: Scalar>(logits: &Array4<T>, target: &LabelVolume) -> Result<f64> {
    Ok(evaluate(logits, target, &LossConfig::default(), false)?.ce)
}

/// Dice term plus cross-entropy term, unit weights.
pub fn combined_loss<T: Scalar>(logits: &Array4<T>, target: &LabelVolume, cfg: &LossConfig) -> Result<LossTerms> {
    let e = evaluate(logits, target, cfg, false)?;
    Ok(LossTerms {
        total: e.dice + e.ce,
        dice: e.dice,
        ce: e.ce,
    })
}

/// [`combined_loss`] and its gradient w.r.t. the logits.
pub fn combined_loss_grad<T: Scalar>(logits: &Array4<T>, target: &LabelVolume, cfg: &LossConfig) -> Result<(LossTerms, Array4<T>)> {
    let e = evaluate(logits, target, cfg, true)?;
    let grad = e.grad_dice.unwrap() + e.grad_ce.unwrap();
    Ok((
        LossTerms {
            total: e.dice + e.ce,
            dice: e.dice,
            ce: e.ce,
        },
        grad,
    ))
}

fn stage_target(target: &LabelVolume, logits_shape: &[usize], stage: usize) -> Result<LabelVolume> {
    let f = 1usize << stage;
    let expected = [target.shape()[0], target.shape()[1] / f, target.shape()[2] / f];
    if logits_shape[1..] != expected {
        return Err(Error::shape(format!(
            "stage {} logits {:?} do not match target {:?} downsampled by (1, {f}, {f})",
            stage + 1,
            &logits_shape[1..],
            target.shape()
        )));
    }
    downsample_label_volume(target, [1, f, f])
}

fn ds_impl<T: Scalar>(
    outputs: &DecoderOutputs<T>,
    target: &LabelVolume,
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(LossTerms, Vec<Array4<T>>)> {
    let weights = cfg.normalized_weights();
    if weights.len() != outputs.logits.len() {
        return Err(Error::shape(format!(
            "{} supervision weights for {} stages",
            weights.len(),
            outputs.logits.len()
        )));
    }
    let mut total = LossTerms::default();
    let mut grads = Vec::new();
    for (l, (logits, &w)) in outputs.logits.iter().zip(&weights).enumerate() {
        let t = stage_target(target, logits.shape(), l)?;
        if want_grad {
            let (terms, g) = combined_loss_grad(logits, &t, cfg)?;
            total += terms.scaled(w);
            grads.push(g * lit::<T>(w));
        } else {
            total += combined_loss(logits, &t, cfg)?.scaled(w);
        }
    }
    Ok((total, grads))
}

/// `Σ_l α_l · L_l` with the target downsampled to each stage's resolution.
pub fn deep_supervision_loss<T: Scalar>(outputs: &DecoderOutputs<T>, target: &LabelVolume, cfg: &LossConfig) -> Result<LossTerms> {
    Ok(ds_impl(outputs, target, cfg, false)?.0)
}

/// [`deep_supervision_loss`] and its gradient w.r.t. each stage's logits.
pub fn deep_supervision_loss_grad<T: Scalar>(
    outputs: &DecoderOutputs<T>,
    target: &LabelVolume,
    cfg: &LossConfig,
) -> Result<(LossTerms, Vec<Array4<T>>)> {
    ds_impl(outputs, target, cfg, true)
}

/// Logits whose softmax is (numerically) the one-hot encoding of `target`.
pub fn one_hot_logits<T: Scalar>(target: &LabelVolume, num_classes: usize, margin: f64) -> Array4<T> {
    let [d, h, w] = target.shape();
    let mut out = Array4::<T>::zeros((num_classes, d, h, w));
    for ((z, y, x), &c) in target.labels.indexed_iter() {
        out[[c as usize, z, y, x]] = lit(margin);
    }
    out
}
