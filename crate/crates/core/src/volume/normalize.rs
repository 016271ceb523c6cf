use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::{LabelVolume, Volume};
use crate::error::{Error, Result};

const STD_FLOOR: f64 = 1e-8;

/// Per-modality intensity normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormalizationScheme {
    /// Mean 0, standard deviation 1. Used for MRI.
    Zscore,
    /// Clip to the `[p_low, p_high]` percentiles of foreground intensities, then z-score. Used for CT.
    ClipZscore { p_low: f64, p_high: f64 },
}

impl NormalizationScheme {
    pub fn ct_default() -> Self {
        Self::ClipZscore {
            p_low: 0.5,
            p_high: 99.5,
        }
    }
}

/// Percentile with linear interpolation between order statistics; `sorted` must be ascending.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Normalizes each modality independently. Percentiles for [`NormalizationScheme::ClipZscore`]
/// are taken over all voxels; see [`normalize_intensity_with_foreground`] to restrict them.
pub fn normalize_intensity(vol: &Volume, scheme: NormalizationScheme) -> Result<Volume> {
    normalize_impl(vol, scheme, None)
}

/// Like [`normalize_intensity`], with clip percentiles taken over the nonzero-label voxels.
/// Cases without foreground fall back to all voxels.
pub fn normalize_intensity_with_foreground(
    vol: &Volume,
    scheme: NormalizationScheme,
    labels: &LabelVolume,
) -> Result<Volume> {
    super::check_paired(vol, labels)?;
    normalize_impl(vol, scheme, Some(labels))
}

fn normalize_impl(
    vol: &Volume,
    scheme: NormalizationScheme,
    labels: Option<&LabelVolume>,
) -> Result<Volume> {
    if !vol.is_finite() {
        return Err(Error::NonFinite("volume before normalization".into()));
    }
    if let NormalizationScheme::ClipZscore { p_low, p_high } = scheme {
        if !(0.0..=100.0).contains(&p_low) || !(0.0..=100.0).contains(&p_high) || p_low > p_high {
            return Err(Error::validation(
                "normalization",
                format!("invalid percentile range [{p_low}, {p_high}]"),
            ));
        }
    }
    let mut out = vol.clone();
    for mut channel in out.data.axis_iter_mut(Axis(0)) {
        if let NormalizationScheme::ClipZscore { p_low, p_high } = scheme {
            let mut fg: Vec<f64> = match labels.filter(|l| l.has_foreground()) {
                Some(l) => channel
                    .iter()
                    .zip(l.labels.iter())
                    .filter(|(_, &lab)| lab != 0)
                    .map(|(&v, _)| v as f64)
                    .collect(),
                None => channel.iter().map(|&v| v as f64).collect(),
            };
            fg.sort_by(|a, b| a.total_cmp(b));
            let lo = percentile_sorted(&fg, p_low) as f32;
            let hi = percentile_sorted(&fg, p_high) as f32;
            channel.mapv_inplace(|v| v.clamp(lo, hi));
        }
        let n = channel.len() as f64;
        let mean = channel.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = channel.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(STD_FLOOR);
        channel.mapv_inplace(|v| ((v as f64 - mean) / std) as f32);
    }
    Ok(out)
}
