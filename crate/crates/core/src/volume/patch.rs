use ndarray::{s, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_paired, LabelVolume, Shape3, Volume};
use crate::error::{Error, Result};

/// Lower corner of a crop in (possibly padded) voxel coordinates.
pub type PatchOrigin = [usize; 3];

fn pad_amounts(shape: Shape3, target: Shape3) -> [(usize, usize); 3] {
    let mut out = [(0, 0); 3];
    for a in 0..3 {
        let extra = target[a].saturating_sub(shape[a]);
        out[a] = (extra / 2, extra - extra / 2);
    }
    out
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Pads every axis smaller than `min_shape` up to it by edge replication, centered.
/// Returns the padded volume and the offset of the original data inside it.
pub fn pad_edge_volume(vol: &Volume, min_shape: Shape3) -> (Volume, Shape3) {
    let shape = vol.spatial_shape();
    let pads = pad_amounts(shape, min_shape);
    if pads.iter().all(|&(a, b)| a == 0 && b == 0) {
        return (vol.clone(), [0; 3]);
    }
    let new: Shape3 = std::array::from_fn(|a| shape[a] + pads[a].0 + pads[a].1);
    let data = Array4::from_shape_fn((vol.modalities(), new[0], new[1], new[2]), |(m, d, h, w)| {
        vol.data[[
            m,
            clamp_index(d as isize - pads[0].0 as isize, shape[0]),
            clamp_index(h as isize - pads[1].0 as isize, shape[1]),
            clamp_index(w as isize - pads[2].0 as isize, shape[2]),
        ]]
    });
    let out = Volume {
        data,
        spacing: vol.spacing,
        origin: vol.origin,
    };
    (out, [pads[0].0, pads[1].0, pads[2].0])
}

pub fn pad_edge_label(lab: &LabelVolume, min_shape: Shape3) -> (LabelVolume, Shape3) {
    let shape = lab.shape();
    let pads = pad_amounts(shape, min_shape);
    if pads.iter().all(|&(a, b)| a == 0 && b == 0) {
        return (lab.clone(), [0; 3]);
    }
    let new: Shape3 = std::array::from_fn(|a| shape[a] + pads[a].0 + pads[a].1);
    let labels = Array3::from_shape_fn((new[0], new[1], new[2]), |(d, h, w)| {
        lab.labels[[
            clamp_index(d as isize - pads[0].0 as isize, shape[0]),
            clamp_index(h as isize - pads[1].0 as isize, shape[1]),
            clamp_index(w as isize - pads[2].0 as isize, shape[2]),
        ]]
    });
    (
        LabelVolume {
            labels,
            num_classes: lab.num_classes,
        },
        [pads[0].0, pads[1].0, pads[2].0],
    )
}

/// Which batch slots must contain foreground: the last `ceil(batch / 3)` of them.
pub fn forced_foreground_slots(batch: usize) -> Vec<bool> {
    let forced = batch.div_ceil(3);
    (0..batch).map(|b| b >= batch - forced).collect()
}

fn choose_origin(lab: &LabelVolume, patch: Shape3, force_foreground: bool, rng: &mut ChaCha8Rng) -> PatchOrigin {
    let shape = lab.shape();
    let max_origin: Shape3 = std::array::from_fn(|a| shape[a] - patch[a]);
    if force_foreground {
        // pick a present class uniformly, then one of its voxels
        let mut present = [false; 256];
        for &v in lab.labels.iter() {
            present[v as usize] = true;
        }
        let classes: Vec<u8> = (1..=255u8).filter(|&c| present[c as usize]).collect();
        if !classes.is_empty() {
            let class = classes[rng.gen_range(0..classes.len())];
            let count = lab.labels.iter().filter(|&&v| v == class).count();
            let pick = rng.gen_range(0..count);
            let (idx, _) = lab
                .labels
                .indexed_iter()
                .filter(|(_, &v)| v == class)
                .nth(pick)
                .expect("counted voxel");
            let voxel = [idx.0, idx.1, idx.2];
            return std::array::from_fn(|a| {
                (voxel[a] as isize - (patch[a] / 2) as isize).clamp(0, max_origin[a] as isize) as usize
            });
        }
    }
    std::array::from_fn(|a| rng.gen_range(0..=max_origin[a]))
}

/// Crops a training patch of exactly `patch_size`, padding by edge replication first when the
/// case is smaller. With `force_foreground` the crop contains foreground whenever the case has any.
pub fn sample_training_patch(
    vol: &Volume,
    lab: &LabelVolume,
    patch_size: Shape3,
    force_foreground: bool,
    seed: u64,
) -> Result<(Volume, LabelVolume)> {
    check_paired(vol, lab)?;
    if patch_size.iter().any(|&p| p == 0) {
        return Err(Error::shape(format!("patch size must be positive, got {patch_size:?}")));
    }
    let (vol, _) = pad_edge_volume(vol, patch_size);
    let (lab, _) = pad_edge_label(lab, patch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let o = choose_origin(&lab, patch_size, force_foreground, &mut rng);
    let [pd, ph, pw] = patch_size;
    let data = vol
        .data
        .slice(s![.., o[0]..o[0] + pd, o[1]..o[1] + ph, o[2]..o[2] + pw])
        .to_owned();
    let labels = lab
        .labels
        .slice(s![o[0]..o[0] + pd, o[1]..o[1] + ph, o[2]..o[2] + pw])
        .to_owned();
    Ok((
        Volume {
            data,
            spacing: vol.spacing,
            origin: vol.origin,
        },
        LabelVolume {
            labels,
            num_classes: lab.num_classes,
        },
    ))
}

/// Nearest-neighbor subsampling keeping the voxel at `i * f` along each axis.
pub fn downsample_label_volume(lab: &LabelVolume, factor: Shape3) -> Result<LabelVolume> {
    let shape = lab.shape();
    for a in 0..3 {
        if factor[a] == 0 || shape[a] % factor[a] != 0 {
            return Err(Error::shape(format!(
                "label shape {shape:?} is not divisible by factor {factor:?}"
            )));
        }
    }
    if factor == [1, 1, 1] {
        return Ok(lab.clone());
    }
    let labels = lab
        .labels
        .slice(s![
            ..;factor[0] as isize,
            ..;factor[1] as isize,
            ..;factor[2] as isize
        ])
        .to_owned();
    Ok(LabelVolume {
        labels,
        num_classes: lab.num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr3;

    fn case(shape: Shape3) -> (Volume, LabelVolume) {
        let [d, h, w] = shape;
        let data = Array4::from_shape_fn((1, d, h, w), |(_, z, y, x)| (z * 1000 + y * 37 + x) as f32);
        let labels = Array3::from_shape_fn((d, h, w), |(z, y, x)| {
            if z == d - 1 && y == h - 1 && x == w - 1 {
                2
            } else {
                0
            }
        });
        (Volume::from_data(data).unwrap(), LabelVolume::new(labels, 3).unwrap())
    }

    #[test]
    fn exact_size_crop_is_whole_volume() {
        let (vol, lab) = case([8, 64, 64]);
        let (pv, pl) = sample_training_patch(&vol, &lab, [8, 64, 64], false, 3).unwrap();
        assert_eq!(pv, vol);
        assert_eq!(pl, lab);
    }

    #[test]
    fn all_background_with_forcing_terminates() {
        let vol = Volume::from_data(Array4::zeros((1, 32, 32, 32))).unwrap();
        let lab = LabelVolume::new(Array3::zeros((32, 32, 32)), 2).unwrap();
        let (pv, pl) = sample_training_patch(&vol, &lab, [16, 16, 16], true, 9).unwrap();
        assert_eq!(pv.spatial_shape(), [16, 16, 16]);
        assert_eq!(pl.shape(), [16, 16, 16]);
    }

    #[test]
    fn forcing_finds_the_single_foreground_voxel() {
        let (vol, lab) = case([10, 40, 40]);
        for seed in 0..20 {
            let (_, pl) = sample_training_patch(&vol, &lab, [4, 16, 16], true, seed).unwrap();
            assert!(pl.has_foreground(), "seed {seed}");
        }
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let (vol, lab) = case([10, 40, 40]);
        let a = sample_training_patch(&vol, &lab, [4, 16, 16], false, 5).unwrap();
        let b = sample_training_patch(&vol, &lab, [4, 16, 16], false, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn undersized_volume_is_edge_padded() {
        let (vol, lab) = case([2, 4, 4]);
        let (pv, pl) = sample_training_patch(&vol, &lab, [4, 8, 8], false, 0).unwrap();
        assert_eq!(pv.spatial_shape(), [4, 8, 8]);
        assert_eq!(pl.shape(), [4, 8, 8]);
        // corner replicates the original corner
        assert_eq!(pv.data[[0, 0, 0, 0]], vol.data[[0, 0, 0, 0]]);
        assert_eq!(pv.data[[0, 3, 7, 7]], vol.data[[0, 1, 3, 3]]);
        assert_eq!(pl.labels[[3, 7, 7]], 2);
    }

    #[test]
    fn forced_slots() {
        assert_eq!(forced_foreground_slots(2), vec![false, true]);
        assert_eq!(forced_foreground_slots(4), vec![false, false, true, true]);
        assert_eq!(forced_foreground_slots(3), vec![false, false, true]);
    }

    #[test]
    fn downsample_takes_first_index() {
        let lab = LabelVolume::new(arr3(&[[[0u8, 1], [2, 3]]]), 4).unwrap();
        let out = downsample_label_volume(&lab, [1, 2, 2]).unwrap();
        assert_eq!(out.labels, arr3(&[[[0u8]]]));
        assert_eq!(downsample_label_volume(&lab, [1, 1, 1]).unwrap(), lab);
    }

    #[test]
    fn downsample_rejects_indivisible() {
        let lab = LabelVolume::new(Array3::zeros((1, 3, 4)), 2).unwrap();
        assert!(matches!(downsample_label_volume(&lab, [1, 2, 2]), Err(Error::Shape(_))));
    }

    #[test]
    fn downsample_preserves_constant() {
        let lab = LabelVolume::new(Array3::from_elem((4, 8, 8), 3), 5).unwrap();
        let out = downsample_label_volume(&lab, [2, 4, 2]).unwrap();
        assert_eq!(out.shape(), [2, 2, 4]);
        assert!(out.labels.iter().all(|&v| v == 3));
    }
}
