//! Central finite differences against the analytic decoder gradient.
//!
//! The decoder is piecewise smooth: a perturbation that moves any leaky-rectifier input
//! across zero makes the difference quotient meaningless. Each probe therefore compares
//! the rectifier sign pattern at `θ ± h` with the one at `θ` and, on a change, retries
//! with a ten times smaller step down to `min_step`.

use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::decoder::{initialize_weights, Decoder, DecoderConfig, ParamKind};
use crate::error::{Error, Result};
use crate::objective::{deep_supervision_loss_grad, LossConfig};
use crate::volume::LabelVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FdProbe {
    pub tensor: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub min_step: f64,
    pub tolerance: f64,
    /// Lower bound of the relative-error denominator, for parameters whose true
    /// gradient is zero (biases feeding a normalization).
    pub scale_floor: f64,
    /// Embedding `(D, h, w)`; the target is `(D, 16h, 16w)`.
    pub embedding_shape: [usize; 3],
    /// Multiply one analytic entry, `(tensor name, index, factor)`, before comparing.
    pub fault: Option<(String, usize, f64)>,
    /// Probe only these tensors; all when `None`.
    pub tensors: Option<Vec<String>>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            min_step: 1e-7,
            tolerance: 1e-3,
            scale_floor: 1e-8,
            embedding_shape: [2, 2, 2],
            fault: None,
            tensors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `name[index]` of the largest error.
    pub worst: Option<String>,
    /// Probes that needed a step below the nominal one.
    pub refined: usize,
    /// Probes still straddling a kink at `min_step`; excluded from the maximum.
    pub unresolved: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.unresolved == 0 && self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Generic driver. `eval(probe, delta)` returns the loss and rectifier signature with the
/// probed parameter shifted by `delta`.
pub fn audit_gradients(
    names: &[String],
    analytic: &[Vec<f64>],
    probes: &[FdProbe],
    opts: &GradCheckOptions,
    mut eval: impl FnMut(&FdProbe, f64) -> Result<(f64, Vec<bool>)>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        refined: 0,
        unresolved: 0,
        tolerance: opts.tolerance,
    };
    if probes.is_empty() {
        return Ok(report);
    }
    let (_, base) = eval(&probes[0], 0.0)?;
    for p in probes {
        let mut h = opts.step;
        let fd = loop {
            let (lp, sp) = eval(p, h)?;
            let (lm, sm) = eval(p, -h)?;
            if sp == base && sm == base {
                break Some((lp - lm) / (2.0 * h));
            }
            h /= 10.0;
            if h < opts.min_step * (1.0 - 1e-9) {
                break None;
            }
        };
        if h < opts.step {
            report.refined += 1;
        }
        let Some(fd) = fd else {
            report.unresolved += 1;
            continue;
        };
        report.checked += 1;
        let rel = relative_error(analytic[p.tensor][p.index], fd, opts.scale_floor);
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(format!("{}[{}]", names[p.tensor], p.index));
        }
    }
    Ok(report)
}

/// Random decoder with non-trivial biases and norm affines, embedding and target.
fn instance(cfg: &DecoderConfig, seed: u64, shape: [usize; 3]) -> Result<(Decoder<f64>, Array4<f64>, LabelVolume)> {
    cfg.validate()?;
    let mut dec = initialize_weights::<f64>(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for p in dec.params_mut() {
        match p.kind {
            ParamKind::ConvBias => p.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1)),
            ParamKind::NormScale => p.data.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5)),
            ParamKind::NormShift => p.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5)),
            ParamKind::ConvWeight => {}
        }
    }
    let [d, h, w] = shape;
    let emb = Array4::from_shape_simple_fn((cfg.in_channels, d, h, w), || rng.sample(StandardNormal));
    let labels = Array3::from_shape_simple_fn((d, 16 * h, 16 * w), || rng.gen_range(0..cfg.num_classes as u8));
    Ok((dec, emb, LabelVolume::new(labels, cfg.num_classes)?))
}

pub fn finite_difference_gradient_check_with(
    cfg: &DecoderConfig,
    loss_cfg: &LossConfig,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (dec, emb, target) = instance(cfg, seed, opts.embedding_shape)?;
    let (out, cache) = dec.forward_train(&emb)?;
    let (_, dlogits) = deep_supervision_loss_grad(&out, &target, loss_cfg)?;
    let mut grad = dec.zeros_like();
    dec.backward(cache, &dlogits, &mut grad)?;

    let names: Vec<String> = grad.params().iter().map(|p| p.name.clone()).collect();
    let mut analytic: Vec<Vec<f64>> = grad.params().iter().map(|p| p.data.to_vec()).collect();
    if let Some((name, index, factor)) = &opts.fault {
        let t = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::validation("fault", format!("no tensor named {name}")))?;
        let slot = analytic[t]
            .get_mut(*index)
            .ok_or_else(|| Error::validation("fault", format!("{name} has no index {index}")))?;
        *slot *= factor;
    }
    let wanted = |t: usize| opts.tensors.as_ref().map_or(true, |list| list.contains(&names[t]));
    let probes: Vec<FdProbe> = analytic
        .iter()
        .enumerate()
        .filter(|(t, _)| wanted(*t))
        .flat_map(|(tensor, v)| (0..v.len()).map(move |index| FdProbe { tensor, index }))
        .collect();

    let mut work = dec.clone();
    audit_gradients(&names, &analytic, &probes, opts, |p, delta| {
        let original = dec.params()[p.tensor].data[p.index];
        work.params_mut()[p.tensor].data[p.index] = original + delta;
        let result = work.forward_train(&emb).and_then(|(out, cache)| {
            let loss = crate::objective::deep_supervision_loss(&out, &target, loss_cfg)?;
            Ok((loss.total, cache.rectifier_signs()))
        });
        work.params_mut()[p.tensor].data[p.index] = original;
        result
    })
}

/// Audit of every parameter with the default options.
pub fn finite_difference_gradient_check(cfg: &DecoderConfig, loss_cfg: &LossConfig, seed: u64) -> Result<GradCheckReport> {
    finite_difference_gradient_check_with(cfg, loss_cfg, seed, &GradCheckOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DecoderConfig {
        DecoderConfig {
            in_channels: 4,
            block_channels: [8, 6, 4, 2],
            num_classes: 2,
        }
    }

    #[test]
    fn empty_parameter_set_passes_vacuously() {
        let report = audit_gradients(&[], &[], &[], &GradCheckOptions::default(), |_, _| unreachable!()).unwrap();
        assert_eq!(report.checked, 0);
        assert!(report.passed());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-8), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-8) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-12, 1e-8) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn kinks_shrink_the_step() {
        // |x| at x = 5e-5: the nominal step straddles the kink, 1e-5 does not
        let names = vec!["x".to_string()];
        let analytic = vec![vec![1.0]];
        let x0 = 5e-5;
        let report = audit_gradients(
            &names,
            &analytic,
            &[FdProbe { tensor: 0, index: 0 }],
            &GradCheckOptions::default(),
            |_, d| {
                let x: f64 = x0 + d;
                Ok((x.abs(), vec![x > 0.0]))
            },
        )
        .unwrap();
        assert_eq!(report.refined, 1);
        assert!(report.max_rel_error < 1e-9);
        assert!(report.passed());
    }

    #[test]
    fn small_decoder_passes_and_fault_is_caught() {
        let cfg = small();
        let loss = LossConfig::default();
        let report = finite_difference_gradient_check(&cfg, &loss, 3).unwrap();
        assert_eq!(report.checked + report.unresolved, crate::decoder::count_parameters(&cfg).total);
        assert!(report.passed(), "{report:?}");

        let opts = GradCheckOptions {
            fault: Some(("heads.main.out.weight".into(), 0, 2.0)),
            tensors: Some(vec!["heads.main.out.weight".into()]),
            ..GradCheckOptions::default()
        };
        let faulty = finite_difference_gradient_check_with(&cfg, &loss, 3, &opts).unwrap();
        assert!(faulty.max_rel_error > 0.1, "{faulty:?}");
        assert!(!faulty.passed());
        assert_eq!(faulty.worst.as_deref(), Some("heads.main.out.weight[0]"));
    }
}
