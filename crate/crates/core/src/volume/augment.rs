use ndarray::{Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_paired, LabelVolume, Volume};
use crate::error::Result;

/// Trigger probabilities and ranges of the training-time augmentations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub p_rotation: f64,
    /// In-plane rotation drawn uniformly from `±max_rotation_deg`.
    pub max_rotation_deg: f64,
    pub p_scale: f64,
    pub scale_range: (f64, f64),
    pub p_brightness: f64,
    pub brightness_range: (f64, f64),
    pub p_gamma: f64,
    pub gamma_range: (f64, f64),
    /// Per-axis probability, axes `(D, H, W)`.
    pub p_mirror: [f64; 3],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_rotation: 0.2,
            max_rotation_deg: 30.0,
            p_scale: 0.2,
            scale_range: (0.7, 1.4),
            p_brightness: 0.2,
            brightness_range: (0.75, 1.25),
            p_gamma: 0.2,
            gamma_range: (0.7, 1.5),
            p_mirror: [0.5; 3],
        }
    }
}

impl AugmentConfig {
    /// True when no transform can trigger.
    pub fn is_identity(&self) -> bool {
        [self.p_rotation, self.p_scale, self.p_brightness, self.p_gamma]
            .iter()
            .chain(&self.p_mirror)
            .all(|&p| p <= 0.0)
    }

    pub fn disabled() -> Self {
        Self {
            p_rotation: 0.0,
            p_scale: 0.0,
            p_brightness: 0.0,
            p_gamma: 0.0,
            p_mirror: [0.0; 3],
            ..Self::default()
        }
    }
}

/// Flips image and labels along spatial axis `axis` (0 = D, 1 = H, 2 = W).
pub fn mirror_axis(vol: &mut Volume, lab: &mut LabelVolume, axis: usize) {
    vol.data.invert_axis(Axis(axis + 1));
    vol.data = vol.data.as_standard_layout().into_owned();
    lab.labels.invert_axis(Axis(axis));
    lab.labels = lab.labels.as_standard_layout().into_owned();
}

fn sample_linear(img: &ndarray::ArrayView3<f32>, z: f64, y: f64, x: f64) -> f32 {
    let dims = img.dim();
    let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    let (z, y, x) = (clamp(z, dims.0), clamp(y, dims.1), clamp(x, dims.2));
    let (z0, y0, x0) = (z.floor() as usize, y.floor() as usize, x.floor() as usize);
    let (z1, y1, x1) = ((z0 + 1).min(dims.0 - 1), (y0 + 1).min(dims.1 - 1), (x0 + 1).min(dims.2 - 1));
    let (fz, fy, fx) = (z - z0 as f64, y - y0 as f64, x - x0 as f64);
    let g = |a: usize, b: usize, c: usize| img[[a, b, c]] as f64;
    let c00 = g(z0, y0, x0) * (1.0 - fx) + g(z0, y0, x1) * fx;
    let c01 = g(z0, y1, x0) * (1.0 - fx) + g(z0, y1, x1) * fx;
    let c10 = g(z1, y0, x0) * (1.0 - fx) + g(z1, y0, x1) * fx;
    let c11 = g(z1, y1, x0) * (1.0 - fx) + g(z1, y1, x1) * fx;
    let c0 = c00 * (1.0 - fy) + c01 * fy;
    let c1 = c10 * (1.0 - fy) + c11 * fy;
    (c0 * (1.0 - fz) + c1 * fz) as f32
}

fn spatial_transform(vol: &Volume, lab: &LabelVolume, angle: f64, scale: f64) -> (Volume, LabelVolume) {
    let [d, h, w] = vol.spatial_shape();
    let (cz, cy, cx) = ((d as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    // output voxel -> source coordinate: inverse rotation, then divide by zoom
    let source = |z: usize, y: usize, x: usize| {
        let (dz, dy, dx) = (z as f64 - cz, y as f64 - cy, x as f64 - cx);
        let ry = cos * dy + sin * dx;
        let rx = -sin * dy + cos * dx;
        (cz + dz / scale, cy + ry / scale, cx + rx / scale)
    };
    let mut data = Array4::zeros(vol.data.raw_dim());
    for m in 0..vol.modalities() {
        let src = vol.modality(m);
        let mut dst = data.index_axis_mut(Axis(0), m);
        for ((z, y, x), v) in dst.indexed_iter_mut() {
            let (sz, sy, sx) = source(z, y, x);
            *v = sample_linear(&src, sz, sy, sx);
        }
    }
    let labels = Array3::from_shape_fn((d, h, w), |(z, y, x)| {
        let (sz, sy, sx) = source(z, y, x);
        let r = |v: f64, n: usize| (v.round().clamp(0.0, (n - 1) as f64)) as usize;
        lab.labels[[r(sz, d), r(sy, h), r(sx, w)]]
    });
    (
        Volume {
            data,
            spacing: vol.spacing,
            origin: vol.origin,
        },
        LabelVolume {
            labels,
            num_classes: lab.num_classes,
        },
    )
}

/// Applies rotation, scaling, brightness, gamma and mirroring, each behind its own trigger.
/// Geometric transforms act identically on image and labels; shapes never change.
pub fn apply_augmentations(
    vol: &Volume,
    lab: &LabelVolume,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<(Volume, LabelVolume)> {
    check_paired(vol, lab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vol = vol.clone();
    let mut lab = lab.clone();

    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };

    let rotate = rng.gen_bool(cfg.p_rotation.clamp(0.0, 1.0));
    let max = cfg.max_rotation_deg.to_radians();
    let angle = uniform(&mut rng, (-max, max));
    let zoom = rng.gen_bool(cfg.p_scale.clamp(0.0, 1.0));
    let scale = uniform(&mut rng, cfg.scale_range);
    if rotate || zoom {
        let angle = if rotate { angle } else { 0.0 };
        let scale = if zoom { scale } else { 1.0 };
        (vol, lab) = spatial_transform(&vol, &lab, angle, scale);
    }

    let brighten = rng.gen_bool(cfg.p_brightness.clamp(0.0, 1.0));
    let factor = uniform(&mut rng, cfg.brightness_range) as f32;
    if brighten {
        vol.data.mapv_inplace(|v| v * factor);
    }

    let gamma_on = rng.gen_bool(cfg.p_gamma.clamp(0.0, 1.0));
    let gamma = uniform(&mut rng, cfg.gamma_range);
    if gamma_on {
        for mut ch in vol.data.axis_iter_mut(Axis(0)) {
            let lo = ch.iter().cloned().fold(f32::INFINITY, f32::min) as f64;
            let hi = ch.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let range = hi - lo;
            if range > 0.0 {
                ch.mapv_inplace(|v| (((v as f64 - lo) / range).powf(gamma) * range + lo) as f32);
            }
        }
    }

    for axis in 0..3 {
        if rng.gen_bool(cfg.p_mirror[axis].clamp(0.0, 1.0)) {
            mirror_axis(&mut vol, &mut lab, axis);
        }
    }
    Ok((vol, lab))
}
