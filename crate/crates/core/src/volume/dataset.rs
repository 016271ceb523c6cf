use super::nifti::{read_nifti, read_nifti_labels, NiftiHeader};
use super::{normalize_intensity_with_foreground, CaseEntry, DatasetManifest, LabelVolume, NormalizationScheme, Volume};
use crate::error::{Error, Result};

/// One case read from disk and normalized.
#[derive(Debug, Clone)]
pub struct LoadedCase {
    pub case_id: String,
    pub image: Volume,
    pub labels: LabelVolume,
    /// Header of the image file, reused when writing predictions.
    pub header: NiftiHeader,
}

/// Reads, checks and normalizes a case. Errors carry the case id.
pub fn load_case(manifest: &DatasetManifest, entry: &CaseEntry, scheme: NormalizationScheme) -> Result<LoadedCase> {
    let tag = |e: Error| Error::Other(format!("case {}: {e}", entry.case_id));
    let img = read_nifti(manifest.resolve(&entry.image)).map_err(tag)?;
    let (labels, _) = read_nifti_labels(manifest.resolve(&entry.label), manifest.num_classes).map_err(tag)?;
    if img.volume.modalities() != entry.modality_count {
        return Err(tag(Error::shape(format!(
            "image has {} modalities, manifest says {}",
            img.volume.modalities(),
            entry.modality_count
        ))));
    }
    let image = normalize_intensity_with_foreground(&img.volume, scheme, &labels).map_err(tag)?;
    Ok(LoadedCase {
        case_id: entry.case_id.clone(),
        image,
        labels,
        header: img.header,
    })
}
