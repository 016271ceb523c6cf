//! Writes and reads back a NIfTI image, a label map and an RVF tensor, then normalizes
//! and augments the image.
//!
//! cargo run --example volume_io

use ndarray::{Array3, Array4, ArrayD};
use volseg::volume::nifti::{read_nifti, read_nifti_labels, write_nifti, write_nifti_labels};
use volseg::volume::rvf::{rvf_read, rvf_write, RvfData, RvfTensor};
use volseg::volume::{apply_augmentations, normalize_intensity, AugmentConfig, LabelVolume, NormalizationScheme, Volume};

fn main() -> volseg::Result<()> {
    let dir = std::env::temp_dir().join(format!("volseg_io_{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| volseg::Error::io(&dir, e))?;

    let data = Array4::from_shape_fn((1, 6, 32, 32), |(_, z, y, x)| (z * 100 + y * 3 + x) as f32 - 500.0);
    let vol = Volume::new(data, [2.5, 0.75, 0.75])?;
    let labels = LabelVolume::new(Array3::from_shape_fn((6, 32, 32), |(_, y, x)| (y > 10 && x > 12) as u8), 2)?;

    write_nifti(dir.join("img.nii.gz"), &vol)?;
    write_nifti_labels(dir.join("seg.nii"), &labels, vol.spacing, vol.origin, None)?;
    let back = read_nifti(dir.join("img.nii.gz"))?;
    let (lab_back, _) = read_nifti_labels(dir.join("seg.nii"), 2)?;
    println!("nifti roundtrip: image equal {}, labels equal {}", back.volume.data == vol.data, lab_back == labels);
    println!("spacing from header {:?}", back.header.spacing());

    let t = RvfTensor::new(RvfData::F32(ArrayD::from_shape_vec(vec![2, 3], vec![0.5, -1.0, 2.0, 3.5, 0.0, 1e-7]).unwrap()))
        .with_metadata("note", "demo");
    rvf_write(dir.join("t.rvf"), &t)?;
    println!("rvf roundtrip equal {}", rvf_read(dir.join("t.rvf"))? == t);

    let ct = normalize_intensity(&vol, NormalizationScheme::ct_default())?;
    println!("normalized mean {:.2e}", ct.data.mean().unwrap());
    let cfg = AugmentConfig {
        p_rotation: 1.0,
        p_mirror: [0.0, 0.0, 1.0],
        ..AugmentConfig::default()
    };
    let (_, aug_lab) = apply_augmentations(&ct, &labels, &cfg, 5)?;
    let fg = |l: &LabelVolume| l.labels.iter().filter(|&&v| v > 0).count();
    println!("foreground voxels before {} after rotate+mirror {}", fg(&labels), fg(&aug_lab));
    std::fs::remove_dir_all(dir).ok();
    Ok(())
}
