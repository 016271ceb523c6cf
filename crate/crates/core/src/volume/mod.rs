//! Volumetric images, label maps and the operations that prepare them for training.
//!
//! Axis order is `(modality, depth, height, width)` for images and
//! `(depth, height, width)` for labels everywhere in the crate.

mod augment;
mod dataset;
mod manifest;
pub mod nifti;
mod normalize;
mod patch;
pub mod rvf;

use ndarray::{Array3, Array4, ArrayView3};

use crate::error::{Error, Result};

pub use dataset::{load_case, LoadedCase};
pub use augment::{apply_augmentations, mirror_axis, AugmentConfig};
pub use manifest::{CaseEntry, DatasetManifest, Split};
pub use normalize::{normalize_intensity, normalize_intensity_with_foreground, percentile_sorted, NormalizationScheme};
pub use patch::{
    downsample_label_volume, forced_foreground_slots, pad_edge_label, pad_edge_volume,
    sample_training_patch, PatchOrigin,
};

/// Spatial extent `(D, H, W)`.
pub type Shape3 = [usize; 3];

/// A scalar image with one or more modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    /// `(M, D, H, W)`
    pub data: Array4<f32>,
    /// Millimeters per voxel along `(D, H, W)`.
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Volume {
    pub fn new(data: Array4<f32>, spacing: [f64; 3]) -> Result<Self> {
        let vol = Self {
            data,
            spacing,
            origin: [0.0; 3],
        };
        vol.validate()?;
        Ok(vol)
    }

    /// Unit spacing, zero origin.
    pub fn from_data(data: Array4<f32>) -> Result<Self> {
        Self::new(data, [1.0; 3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.shape().iter().any(|&n| n == 0) {
            return Err(Error::shape(format!(
                "volume dimensions must be >= 1, got {:?}",
                self.data.shape()
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::validation(
                "spacing",
                format!("all spacing components must be > 0, got {:?}", self.spacing),
            ));
        }
        Ok(())
    }

    pub fn modalities(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn spatial_shape(&self) -> Shape3 {
        let s = self.data.shape();
        [s[1], s[2], s[3]]
    }

    pub fn modality(&self, m: usize) -> ArrayView3<'_, f32> {
        self.data.index_axis(ndarray::Axis(0), m)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Integer class map; `0` is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    /// `(D, H, W)`
    pub labels: Array3<u8>,
    pub num_classes: usize,
}

impl LabelVolume {
    pub fn new(labels: Array3<u8>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::validation(
                "num_classes",
                format!("need at least 2 classes, got {num_classes}"),
            ));
        }
        if num_classes > 256 {
            return Err(Error::validation(
                "num_classes",
                format!("at most 256 classes are supported, got {num_classes}"),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&v| v as usize >= num_classes) {
            return Err(Error::validation(
                "labels",
                format!("label value {bad} is not below num_classes = {num_classes}"),
            ));
        }
        Ok(Self {
            labels,
            num_classes,
        })
    }

    pub fn shape(&self) -> Shape3 {
        let s = self.labels.shape();
        [s[0], s[1], s[2]]
    }

    /// Boolean mask of voxels equal to `class`.
    pub fn mask(&self, class: u8) -> Array3<bool> {
        self.labels.mapv(|v| v == class)
    }

    pub fn has_foreground(&self) -> bool {
        self.labels.iter().any(|&v| v != 0)
    }
}

pub(crate) fn check_paired(vol: &Volume, lab: &LabelVolume) -> Result<()> {
    if vol.spatial_shape() != lab.shape() {
        return Err(Error::shape(format!(
            "image spatial shape {:?} differs from label shape {:?}",
            vol.spatial_shape(),
            lab.shape()
        )));
    }
    Ok(())
}
