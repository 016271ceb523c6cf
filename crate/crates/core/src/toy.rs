//! Synthetic volumes with exact label maps for desk-scale runs.

use std::path::Path;

use ndarray::{Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::trainer::derive_seed;
use crate::volume::nifti::{write_nifti, write_nifti_labels};
use crate::volume::{CaseEntry, DatasetManifest, LabelVolume, Split, Volume};

/// Voxel spacing written to every toy case, `(D, H, W)` in millimetres.
pub const TOY_SPACING: [f64; 3] = [2.5, 1.0, 1.0];

const NOISE_AMPLITUDE: f32 = 0.3;
const MAX_PLACEMENT_TRIES: usize = 64;

/// Half-pixel linear resampling along one axis with edge clamping.
fn resize_axis(a: &Array3<f32>, axis: usize, n_out: usize) -> Array3<f32> {
    let n_in = a.len_of(Axis(axis));
    if n_in == n_out {
        return a.clone();
    }
    let mut shape = [a.dim().0, a.dim().1, a.dim().2];
    shape[axis] = n_out;
    let mut out = Array3::zeros(shape);
    let scale = n_in as f64 / n_out as f64;
    for i in 0..n_out {
        let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        let t = (src - lo as f64) as f32;
        let v = &a.index_axis(Axis(axis), lo) * (1.0 - t) + &a.index_axis(Axis(axis), hi) * t;
        out.index_axis_mut(Axis(axis), i).assign(&v);
    }
    out
}

fn smooth_noise(rng: &mut ChaCha8Rng, [d, h, w]: [usize; 3]) -> Array3<f32> {
    let coarse = [d, (h / 8).max(1), (w / 8).max(1)];
    let n = Array3::from_shape_simple_fn(coarse, || rng.sample::<f32, _>(StandardNormal));
    let n = resize_axis(&n, 1, h);
    resize_axis(&n, 2, w)
}

struct Solid {
    centre: [f64; 3],
    half_axes: [f64; 3],
}

impl Solid {
    fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        let p = [z as f64, y as f64, x as f64];
        (0..3)
            .map(|k| ((p[k] - self.centre[k]) / self.half_axes[k]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// Odd classes are near-spheres, even classes flatter ellipsoids; sizes scale with the
/// in-plane extent (radius 14 to 20 voxels at 64×64).
fn draw_solid(rng: &mut ChaCha8Rng, class: usize, [d, h, w]: [usize; 3]) -> Solid {
    let s = h.min(w) as f64 / 64.0;
    let cz = d as f64 / 2.0 - 0.5;
    let (ry, rx, rz) = if class % 2 == 1 {
        let r = (14.0 + 6.0 * rng.gen::<f64>()) * s;
        (r, r, r * d as f64 / 32.0)
    } else {
        let ry = (12.0 + 6.0 * rng.gen::<f64>()) * s;
        let rx = (12.0 + 6.0 * rng.gen::<f64>()) * s;
        (ry, rx, 0.4375 * d as f64)
    };
    let mut centre_in = |r: f64, n: usize| {
        let lo = r.min(n as f64 / 2.0);
        lo + (n as f64 - 2.0 * lo) * rng.gen::<f64>()
    };
    let cy = centre_in(ry, h);
    let cx = centre_in(rx, w);
    Solid {
        centre: [cz, cy, cx],
        half_axes: [rz.max(0.5), ry.max(0.5), rx.max(0.5)],
    }
}

/// One case: solids over smooth noise, odd classes bright (+2), even classes dark (-2),
/// later classes painted over earlier ones, then z-scored.
pub fn generate_toy_case(shape: [usize; 3], num_classes: usize, seed: u64) -> Result<(Volume, LabelVolume)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = smooth_noise(&mut rng, shape) * NOISE_AMPLITUDE;
    let mut labels = Array3::<u8>::zeros(shape);
    for _ in 0..MAX_PLACEMENT_TRIES {
        labels.fill(0);
        for c in 1..num_classes {
            let solid = draw_solid(&mut rng, c, shape);
            for ((z, y, x), l) in labels.indexed_iter_mut() {
                if solid.contains(z, y, x) {
                    *l = c as u8;
                }
            }
        }
        let mut present = vec![false; num_classes];
        labels.iter().for_each(|&l| present[l as usize] = true);
        if present[1..].iter().all(|&p| p) {
            break;
        }
    }
    for (v, &l) in img.iter_mut().zip(labels.iter()) {
        if l == 0 {
            continue;
        }
        if l % 2 == 1 {
            *v += 2.0;
        } else {
            *v = -2.0 + 0.3 * *v;
        }
    }
    let n = img.len() as f64;
    let mean = img.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = img.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let std = var.sqrt().max(1e-8);
    img.mapv_inplace(|v| ((v as f64 - mean) / std) as f32);
    let data: Array4<f32> = img.insert_axis(Axis(0));
    Ok((Volume::new(data, TOY_SPACING)?, LabelVolume::new(labels, num_classes)?))
}

/// Writes `n_cases` image/label pairs plus `manifest.json` under `out_dir`. All cases go to
/// the training split and the patch size is the full volume.
pub fn generate_toy_dataset(
    out_dir: &Path,
    n_cases: usize,
    shape: [usize; 3],
    num_classes: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    let [d, h, w] = shape;
    if d == 0 || h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
        return Err(Error::validation("shape", format!("need H, W positive multiples of 16, got {shape:?}")));
    }
    if !(2..=256).contains(&num_classes) {
        return Err(Error::validation("num_classes", "must lie in 2..=256"));
    }
    if n_cases == 0 {
        return Err(Error::validation("n_cases", "must be >= 1"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut cases = Vec::with_capacity(n_cases);
    for i in 0..n_cases {
        let id = format!("toy_{i:03}");
        let (vol, lab) = generate_toy_case(shape, num_classes, derive_seed(seed, &[i as u64]))?;
        let image = format!("{id}.nii");
        let label = format!("{id}_seg.nii");
        write_nifti(out_dir.join(&image), &vol)?;
        write_nifti_labels(out_dir.join(&label), &lab, vol.spacing, vol.origin, None)?;
        cases.push(CaseEntry {
            case_id: id,
            image: image.into(),
            label: label.into(),
            modality_count: 1,
            split: Split::Train,
        });
    }
    let mut manifest = DatasetManifest {
        cases,
        patch_size: shape,
        num_classes,
        root: out_dir.to_path_buf(),
    };
    manifest.validate()?;
    manifest.save(out_dir.join("manifest.json"))?;
    manifest.root = out_dir.to_path_buf();
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::nifti::read_nifti_labels;

    #[test]
    fn resize_is_identity_at_same_size_and_preserves_constants() {
        let a = Array3::from_elem((2, 3, 4), 1.5f32);
        let r = resize_axis(&a, 2, 32);
        assert!(r.iter().all(|&v| (v - 1.5).abs() < 1e-6));
        assert_eq!(resize_axis(&a, 0, 2), a);
    }

    #[test]
    fn cases_contain_every_class() {
        for seed in 0..20 {
            let (vol, lab) = generate_toy_case([8, 64, 64], 3, seed).unwrap();
            for c in 1..3u8 {
                assert!(lab.labels.iter().any(|&l| l == c), "seed {seed} lacks class {c}");
            }
            assert!(vol.is_finite());
            let mean = vol.data.mean().unwrap();
            assert!(mean.abs() < 1e-4);
        }
    }

    #[test]
    fn dataset_layout_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = generate_toy_dataset(a.path(), 4, [8, 64, 64], 3, 11).unwrap();
        generate_toy_dataset(b.path(), 4, [8, 64, 64], 3, 11).unwrap();
        assert_eq!(m.cases.len(), 4);
        for c in &m.cases {
            let (lab, _) = read_nifti_labels(m.resolve(&c.label), 3).unwrap();
            assert!(lab.labels.iter().all(|&l| l < 3));
            for f in [&c.image, &c.label] {
                assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
            }
        }
        let loaded = DatasetManifest::load(a.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.cases, m.cases);
    }

    #[test]
    fn rejects_bad_shapes() {
        let d = tempfile::tempdir().unwrap();
        assert!(generate_toy_dataset(d.path(), 1, [8, 60, 64], 3, 0).is_err());
        assert!(generate_toy_dataset(d.path(), 1, [8, 64, 64], 1, 0).is_err());
    }
}
