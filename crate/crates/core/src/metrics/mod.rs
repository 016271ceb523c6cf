//! Overlap and surface-distance metrics.

mod edt;
mod report;

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{percentile_sorted, LabelVolume};

pub use edt::squared_distance_transform;
pub use report::{write_csv_summary, write_json_report, CaseReport, EvaluationReport};

/// Boundary-pair budget of [`hd95_bruteforce`].
pub const BRUTEFORCE_LIMIT: usize = 10_000;

fn check_shapes(a: &Array3<bool>, b: &Array3<bool>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::validation(
            "mask",
            format!("shapes differ: {:?} vs {:?}", a.dim(), b.dim()),
        ));
    }
    Ok(())
}

/// `2|A ∩ B| / (|A| + |B|)`; 1 when both masks are empty.
pub fn dice_coefficient(pred: &Array3<bool>, gt: &Array3<bool>) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (mut inter, mut total) = (0usize, 0usize);
    Zip::from(pred).and(gt).for_each(|&p, &g| {
        inter += (p && g) as usize;
        total += p as usize + g as usize;
    });
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// Foreground voxels with at least one background 6-neighbour; outside counts as background.
pub fn boundary_mask(mask: &Array3<bool>) -> Array3<bool> {
    let (d, h, w) = mask.dim();
    Array3::from_shape_fn((d, h, w), |(z, y, x)| {
        if !mask[[z, y, x]] {
            return false;
        }
        let bg = |dz: isize, dy: isize, dx: isize| {
            let (zz, yy, xx) = (z as isize + dz, y as isize + dy, x as isize + dx);
            zz < 0 || yy < 0 || xx < 0 || zz >= d as isize || yy >= h as isize || xx >= w as isize
                || !mask[[zz as usize, yy as usize, xx as usize]]
        };
        bg(-1, 0, 0) || bg(1, 0, 0) || bg(0, -1, 0) || bg(0, 1, 0) || bg(0, 0, -1) || bg(0, 0, 1)
    })
}

/// Boundary voxel coordinates in row-major order.
pub fn extract_boundary(mask: &Array3<bool>) -> Vec<[usize; 3]> {
    boundary_mask(mask)
        .indexed_iter()
        .filter(|(_, &b)| b)
        .map(|((z, y, x), _)| [z, y, x])
        .collect()
}

/// 95th percentile, interpolating linearly between order statistics.
fn p95(mut d: Vec<f64>) -> f64 {
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    percentile_sorted(&d, 95.0)
}

/// Symmetric 95th-percentile boundary distance in millimetres; `None` when either mask is empty.
pub fn hd95(pred: &Array3<bool>, gt: &Array3<bool>, spacing: [f64; 3]) -> Result<Option<f64>> {
    check_shapes(pred, gt)?;
    let (ba, bb) = (boundary_mask(pred), boundary_mask(gt));
    if !ba.iter().any(|&v| v) || !bb.iter().any(|&v| v) {
        return Ok(None);
    }
    let directed = |from: &Array3<bool>, to: &Array3<bool>| {
        let dt = squared_distance_transform(to, spacing);
        let d: Vec<f64> = Zip::from(from)
            .and(&dt)
            .fold(Vec::new(), |mut acc, &f, &v| {
                if f {
                    acc.push(v.sqrt());
                }
                acc
            });
        p95(d)
    };
    Ok(Some(directed(&ba, &bb).max(directed(&bb, &ba))))
}

/// Exhaustive-search reference for [`hd95`]. Refuses more than [`BRUTEFORCE_LIMIT`]
/// boundary voxels in total.
pub fn hd95_bruteforce(pred: &Array3<bool>, gt: &Array3<bool>, spacing: [f64; 3]) -> Result<Option<f64>> {
    check_shapes(pred, gt)?;
    let (a, b) = (extract_boundary(pred), extract_boundary(gt));
    if a.len() + b.len() > BRUTEFORCE_LIMIT {
        return Err(Error::validation(
            "hd95_bruteforce",
            format!("{} boundary voxels exceed the limit of {BRUTEFORCE_LIMIT}", a.len() + b.len()),
        ));
    }
    if a.is_empty() || b.is_empty() {
        return Ok(None);
    }
    let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| {
        let d = from
            .iter()
            .map(|p| {
                to.iter()
                    .map(|q| {
                        (0..3)
                            .map(|k| ((p[k] as f64 - q[k] as f64) * spacing[k]).powi(2))
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect();
        p95(d)
    };
    Ok(Some(directed(&a, &b).max(directed(&b, &a))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: usize,
    pub dsc: f64,
    /// Millimetres; `None` when either boundary is empty.
    pub hd95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    /// Foreground classes `1..N`.
    pub per_class: Vec<ClassMetrics>,
    pub mean_dsc: f64,
    /// Over classes with a defined HD95; `None` when there are none.
    pub mean_hd95: Option<f64>,
}

pub fn evaluate_volume(pred: &LabelVolume, gt: &LabelVolume, spacing: [f64; 3], num_classes: usize) -> Result<CaseMetrics> {
    if pred.shape() != gt.shape() {
        return Err(Error::validation(
            "prediction",
            format!("shape {:?} differs from ground truth {:?}", pred.shape(), gt.shape()),
        ));
    }
    if num_classes < 2 {
        return Err(Error::validation("num_classes", "must be >= 2"));
    }
    let per_class = (1..num_classes)
        .map(|c| {
            let (p, g) = (pred.mask(c as u8), gt.mask(c as u8));
            Ok(ClassMetrics {
                class_id: c,
                dsc: dice_coefficient(&p, &g)?,
                hd95: hd95(&p, &g, spacing)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_dsc = per_class.iter().map(|m| m.dsc).sum::<f64>() / per_class.len() as f64;
    let defined: Vec<f64> = per_class.iter().filter_map(|m| m.hd95).collect();
    let mean_hd95 = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(CaseMetrics {
        per_class,
        mean_dsc,
        mean_hd95,
    })
}

#[cfg(test)]
mod tests;
