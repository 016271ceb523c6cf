//! NIfTI-1 single-file (`.nii`, `.nii.gz`) and header/image pair (`.hdr` + `.img`) support.
//!
//! NIfTI stores voxels with `x` varying fastest, which is exactly the C order
//! of an `(M, D, H, W)` array when `x -> W`, `y -> H`, `z -> D`, `t -> M`.
//! No transposition is needed between the file and the in-memory layout.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::{Array3, Array4};

use super::{LabelVolume, Volume};
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
const SINGLE_FILE_OFFSET: usize = 352;

/// Voxel storage types accepted by the reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiType {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl NiftiType {
    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Self::Uint8,
            4 => Self::Int16,
            8 => Self::Int32,
            16 => Self::Float32,
            64 => Self::Float64,
            other => {
                return Err(Error::Unsupported {
                    what: "NIfTI datatype",
                    value: other.to_string(),
                })
            }
        })
    }

    pub fn code(self) -> i16 {
        match self {
            Self::Uint8 => 2,
            Self::Int16 => 4,
            Self::Int32 => 8,
            Self::Float32 => 16,
            Self::Float64 => 64,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Self::Uint8 => 1,
            Self::Int16 => 2,
            Self::Int32 | Self::Float32 => 4,
            Self::Float64 => 8,
        }
    }
}

/// The parsed subset of a NIfTI-1 header, plus the raw bytes so a header can
/// be reused as a template for derived outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub datatype: NiftiType,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qoffset: [f32; 3],
    pub magic: [u8; 4],
    pub big_endian: bool,
    raw: Vec<u8>,
}

impl NiftiHeader {
    /// Parses and validates the first 348 bytes of a NIfTI-1 file.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::format(
                "sizeof_hdr",
                format!("file holds {} bytes, header needs {HEADER_SIZE}", bytes.len()),
            ));
        }
        let big_endian = match (
            LittleEndian::read_i32(&bytes[0..4]),
            BigEndian::read_i32(&bytes[0..4]),
        ) {
            (348, _) => false,
            (_, 348) => true,
            (le, _) => {
                return Err(Error::format(
                    "sizeof_hdr",
                    format!("expected 348, found {le}"),
                ))
            }
        };
        let i16_at = |off: usize| {
            if big_endian {
                BigEndian::read_i16(&bytes[off..off + 2])
            } else {
                LittleEndian::read_i16(&bytes[off..off + 2])
            }
        };
        let f32_at = |off: usize| {
            if big_endian {
                BigEndian::read_f32(&bytes[off..off + 4])
            } else {
                LittleEndian::read_f32(&bytes[off..off + 4])
            }
        };

        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[344..348]);
        if &magic != b"n+1\0" && &magic != b"ni1\0" {
            return Err(Error::format(
                "magic",
                format!("expected \"n+1\" or \"ni1\", found {:?}", String::from_utf8_lossy(&magic[..3])),
            ));
        }

        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = i16_at(40 + 2 * i);
        }
        if !(1..=7).contains(&dim[0]) {
            return Err(Error::format("dim[0]", format!("must be in 1..=7, found {}", dim[0])));
        }
        if dim[0] > 4 {
            return Err(Error::Unsupported {
                what: "dimensionality",
                value: format!("{} dimensions (at most 4 supported)", dim[0]),
            });
        }
        for i in 1..=dim[0] as usize {
            if dim[i] < 1 {
                return Err(Error::format(
                    format!("dim[{i}]"),
                    format!("must be >= 1, found {}", dim[i]),
                ));
            }
        }

        let datatype = NiftiType::from_code(i16_at(70))?;
        let bitpix = i16_at(72);
        if bitpix as usize != datatype.size() * 8 {
            return Err(Error::format(
                "bitpix",
                format!("{bitpix} does not match datatype {datatype:?}"),
            ));
        }

        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = f32_at(76 + 4 * i);
        }
        let vox_offset = f32_at(108);
        if &magic == b"n+1\0" && (vox_offset < HEADER_SIZE as f32 || !vox_offset.is_finite()) {
            return Err(Error::format(
                "vox_offset",
                format!("must be >= {HEADER_SIZE} for single-file NIfTI, found {vox_offset}"),
            ));
        }

        Ok(Self {
            dim,
            datatype,
            pixdim,
            vox_offset,
            scl_slope: f32_at(112),
            scl_inter: f32_at(116),
            qoffset: [f32_at(268), f32_at(272), f32_at(276)],
            magic,
            big_endian,
            raw: bytes[..HEADER_SIZE].to_vec(),
        })
    }

    /// `(M, D, H, W)` from `dim[4], dim[3], dim[2], dim[1]`; missing trailing dims are 1.
    pub fn shape(&self) -> [usize; 4] {
        let d = |i: usize| {
            if i <= self.dim[0] as usize {
                self.dim[i] as usize
            } else {
                1
            }
        };
        [d(4), d(3), d(2), d(1)]
    }

    /// Spacing along `(D, H, W)`. Non-positive entries fall back to 1 mm.
    pub fn spacing(&self) -> [f64; 3] {
        let s = |v: f32| if v > 0.0 && v.is_finite() { v as f64 } else { 1.0 };
        [s(self.pixdim[3]), s(self.pixdim[2]), s(self.pixdim[1])]
    }

    fn scaling(&self) -> Option<(f32, f32)> {
        let (m, b) = (self.scl_slope, self.scl_inter);
        if m == 0.0 || !m.is_finite() || (m == 1.0 && b == 0.0) {
            None
        } else {
            Some((m, b))
        }
    }

    fn is_pair(&self) -> bool {
        &self.magic == b"ni1\0"
    }
}

/// A decoded image together with its header.
#[derive(Debug, Clone)]
pub struct NiftiImage {
    pub volume: Volume,
    pub header: NiftiHeader,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        MultiGzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn image_path_for(header_path: &Path) -> PathBuf {
    let name = header_path.to_string_lossy();
    if let Some(stem) = name.strip_suffix(".hdr.gz") {
        PathBuf::from(format!("{stem}.img.gz"))
    } else {
        header_path.with_extension("img")
    }
}

fn read_raw(path: &Path) -> Result<(NiftiHeader, Vec<f32>)> {
    let bytes = read_maybe_gz(path)?;
    let header = NiftiHeader::parse(&bytes)?;
    let shape = header.shape();
    let count: usize = shape.iter().product();
    let nbytes = count * header.datatype.size();

    let payload_owner;
    let payload: &[u8] = if header.is_pair() {
        payload_owner = read_maybe_gz(&image_path_for(path))?;
        let off = header.vox_offset.max(0.0) as usize;
        payload_owner.get(off..).unwrap_or(&[])
    } else {
        let off = header.vox_offset as usize;
        bytes.get(off..).unwrap_or(&[])
    };
    if payload.len() < nbytes {
        return Err(Error::format(
            "data",
            format!("expected {nbytes} payload bytes, found {}", payload.len()),
        ));
    }
    let payload = &payload[..nbytes];

    let be = header.big_endian;
    let mut values: Vec<f32> = match header.datatype {
        NiftiType::Uint8 => payload.iter().map(|&v| v as f32).collect(),
        NiftiType::Int16 => payload
            .chunks_exact(2)
            .map(|c| if be { BigEndian::read_i16(c) } else { LittleEndian::read_i16(c) } as f32)
            .collect(),
        NiftiType::Int32 => payload
            .chunks_exact(4)
            .map(|c| if be { BigEndian::read_i32(c) } else { LittleEndian::read_i32(c) } as f32)
            .collect(),
        NiftiType::Float32 => payload
            .chunks_exact(4)
            .map(|c| if be { BigEndian::read_f32(c) } else { LittleEndian::read_f32(c) })
            .collect(),
        NiftiType::Float64 => payload
            .chunks_exact(8)
            .map(|c| if be { BigEndian::read_f64(c) } else { LittleEndian::read_f64(c) } as f32)
            .collect(),
    };
    if let Some((m, b)) = header.scaling() {
        values.iter_mut().for_each(|v| *v = *v * m + b);
    }
    Ok((header, values))
}

/// Reads an image as `float32` with axes `(M, D, H, W)`. Gzip is detected from content.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    let (header, values) = read_raw(path)?;
    let data = Array4::from_shape_vec(header.shape(), values)
        .map_err(|e| Error::shape(e.to_string()))?;
    let mut volume = Volume::new(data, header.spacing())?;
    volume.origin = [
        header.qoffset[2] as f64,
        header.qoffset[1] as f64,
        header.qoffset[0] as f64,
    ];
    Ok(NiftiImage { volume, header })
}

/// Reads a label map. Values must be non-negative integers below `num_classes`.
pub fn read_nifti_labels(
    path: impl AsRef<Path>,
    num_classes: usize,
) -> Result<(LabelVolume, NiftiHeader)> {
    let path = path.as_ref();
    let (header, values) = read_raw(path)?;
    let [m, d, h, w] = header.shape();
    if m != 1 {
        return Err(Error::shape(format!(
            "label map {} has {m} volumes, expected 1",
            path.display()
        )));
    }
    let mut labels = Vec::with_capacity(values.len());
    for v in values {
        if v < 0.0 || v.fract() != 0.0 || v as usize >= num_classes {
            return Err(Error::validation(
                path.display().to_string(),
                format!("label value {v} is not an integer in [0, {num_classes})"),
            ));
        }
        labels.push(v as u8);
    }
    let labels =
        Array3::from_shape_vec((d, h, w), labels).map_err(|e| Error::shape(e.to_string()))?;
    Ok((LabelVolume::new(labels, num_classes)?, header))
}

fn base_header(template: Option<&NiftiHeader>) -> Vec<u8> {
    match template {
        Some(t) if !t.big_endian => t.raw.clone(),
        _ => {
            let mut raw = vec![0u8; HEADER_SIZE];
            LittleEndian::write_i32(&mut raw[0..4], HEADER_SIZE as i32);
            // xyzt_units: millimeters
            raw[123] = 2;
            raw
        }
    }
}

fn encode_header(
    template: Option<&NiftiHeader>,
    shape: [usize; 4],
    datatype: NiftiType,
    spacing: [f64; 3],
    origin: [f64; 3],
) -> Result<Vec<u8>> {
    let mut raw = base_header(template);
    let [m, d, h, w] = shape;
    let ndim: i16 = if m > 1 { 4 } else { 3 };
    let mut dim = [ndim, w as i16, h as i16, d as i16, m as i16, 1, 1, 1];
    if ndim == 3 {
        dim[4] = 1;
    }
    for (i, &ext) in [w, h, d, m].iter().enumerate() {
        if ext > i16::MAX as usize {
            return Err(Error::shape(format!("dimension {ext} exceeds NIfTI-1 limit")));
        }
        let _ = i;
    }
    for (i, v) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut raw[40 + 2 * i..42 + 2 * i], *v);
    }
    LittleEndian::write_i16(&mut raw[70..72], datatype.code());
    LittleEndian::write_i16(&mut raw[72..74], (datatype.size() * 8) as i16);
    let mut pixdim = [0f32; 8];
    if let Some(t) = template {
        pixdim = t.pixdim;
    }
    if pixdim[0] != -1.0 {
        pixdim[0] = 1.0;
    }
    pixdim[1] = spacing[2] as f32;
    pixdim[2] = spacing[1] as f32;
    pixdim[3] = spacing[0] as f32;
    if m > 1 && pixdim[4] <= 0.0 {
        pixdim[4] = 1.0;
    }
    for (i, v) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut raw[76 + 4 * i..80 + 4 * i], *v);
    }
    LittleEndian::write_f32(&mut raw[108..112], SINGLE_FILE_OFFSET as f32);
    LittleEndian::write_f32(&mut raw[112..116], 0.0);
    LittleEndian::write_f32(&mut raw[116..120], 0.0);
    if template.is_none() {
        LittleEndian::write_f32(&mut raw[268..272], origin[2] as f32);
        LittleEndian::write_f32(&mut raw[272..276], origin[1] as f32);
        LittleEndian::write_f32(&mut raw[276..280], origin[0] as f32);
    }
    raw[344..348].copy_from_slice(b"n+1\0");
    Ok(raw)
}

fn write_file(path: &Path, header: Vec<u8>, payload: Vec<u8>) -> Result<()> {
    let mut bytes = header;
    bytes.extend_from_slice(&[0u8; SINGLE_FILE_OFFSET - HEADER_SIZE]);
    bytes.extend_from_slice(&payload);
    let gz = path.to_string_lossy().ends_with(".gz");
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let res = if gz {
        let mut enc = GzEncoder::new(file, Compression::fast());
        enc.write_all(&bytes).and_then(|_| enc.finish().map(|_| ()))
    } else {
        let mut file = file;
        file.write_all(&bytes)
    };
    res.map_err(|e| Error::io(path, e))
}

/// Writes a `float32` single-file NIfTI. A `.gz` suffix selects gzip compression.
pub fn write_nifti(path: impl AsRef<Path>, vol: &Volume) -> Result<()> {
    write_nifti_with(path, vol, None)
}

/// Like [`write_nifti`], copying unrelated header fields from `template`.
pub fn write_nifti_with(
    path: impl AsRef<Path>,
    vol: &Volume,
    template: Option<&NiftiHeader>,
) -> Result<()> {
    let s = vol.data.shape();
    let header = encode_header(
        template,
        [s[0], s[1], s[2], s[3]],
        NiftiType::Float32,
        vol.spacing,
        vol.origin,
    )?;
    let mut payload = Vec::with_capacity(vol.data.len() * 4);
    for v in vol.data.iter() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path.as_ref(), header, payload)
}

/// Writes a `uint8` label map.
pub fn write_nifti_labels(
    path: impl AsRef<Path>,
    labels: &LabelVolume,
    spacing: [f64; 3],
    origin: [f64; 3],
    template: Option<&NiftiHeader>,
) -> Result<()> {
    let [d, h, w] = labels.shape();
    let header = encode_header(template, [1, d, h, w], NiftiType::Uint8, spacing, origin)?;
    let payload = labels.labels.iter().copied().collect();
    write_file(path.as_ref(), header, payload)
}
