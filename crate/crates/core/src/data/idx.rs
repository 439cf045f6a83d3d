use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Magic for unsigned-byte rank-3 arrays (images).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Magic for unsigned-byte rank-1 arrays (labels).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const U8_TYPE: u8 = 0x08;

/// Raw unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn magic(&self) -> u32 {
        ((U8_TYPE as u32) << 8) | self.dims.len() as u32
    }
}

fn format_err<T>(offset: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Format { offset, msg: msg.into() })
}

pub fn decode_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return format_err(bytes.len(), "file ends inside the magic number");
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return format_err(0, format!("bad magic {:02x}{:02x}{:02x}{:02x}", bytes[0], bytes[1], bytes[2], bytes[3]));
    }
    if bytes[2] != U8_TYPE {
        return format_err(2, format!("unsupported element type 0x{:02x}", bytes[2]));
    }
    let rank = bytes[3] as usize;
    if rank == 0 {
        return format_err(3, "rank 0 array");
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return format_err(bytes.len(), format!("file ends inside the {rank} dimension fields"));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let remaining = bytes.len() - header;
    match count {
        Some(c) if c == remaining => Ok(IdxArray { dims, data: bytes[header..].to_vec() }),
        Some(c) => format_err(header, format!("dimensions {dims:?} declare {c} elements but {remaining} bytes follow")),
        None => format_err(4, format!("dimensions {dims:?} overflow")),
    }
}

pub fn encode_idx(arr: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * arr.dims.len() + arr.data.len());
    out.extend_from_slice(&arr.magic().to_be_bytes());
    for &d in &arr.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&arr.data);
    out
}

pub fn read_idx_file(path: &Path) -> Result<IdxArray> {
    decode_idx(&std::fs::read(path)?)
}

/// Builds a dataset of `[N, 1, H, W]` images scaled to `[0, 1]`. The class
/// count defaults to the largest label plus one.
pub fn dataset_from_idx(images: &IdxArray, labels: &IdxArray, classes: Option<usize>, split: Split) -> Result<Dataset> {
    if images.magic() != IDX_IMAGES_MAGIC {
        return format_err(0, format!("image file magic 0x{:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}", images.magic()));
    }
    if labels.magic() != IDX_LABELS_MAGIC {
        return format_err(0, format!("label file magic 0x{:08x}, expected 0x{IDX_LABELS_MAGIC:08x}", labels.magic()));
    }
    let (n, h, w) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != n {
        return format_err(4, format!("label file holds {} labels for {n} images", labels.dims[0]));
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::Data(format!("empty image array {:?}", images.dims)));
    }
    let labels: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let pixels = images.data.iter().map(|&b| b as f64 / 255.0).collect();
    Dataset::new(Tensor::new(vec![n, 1, h, w], pixels)?, labels, classes, split)
}

pub fn load_idx(images_path: &Path, labels_path: &Path, classes: Option<usize>, split: Split) -> Result<Dataset> {
    let images = read_idx_file(images_path)?;
    let labels = read_idx_file(labels_path)?;
    dataset_from_idx(&images, &labels, classes, split)
}

/// Inverse of [`dataset_from_idx`]. Pixels must be multiples of 1/255 in
/// `[0, 1]` and labels must fit in a byte.
pub fn dataset_to_idx(ds: &Dataset) -> Result<(IdxArray, IdxArray)> {
    let shape = ds.inputs().shape();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(Error::Dimension(format!("IDX images need shape [N, 1, H, W], got {shape:?}")));
    }
    let mut data = Vec::with_capacity(ds.inputs().len());
    for &v in ds.inputs().data() {
        let scaled = (v * 255.0).round();
        if !(0.0..=255.0).contains(&scaled) || scaled / 255.0 != v {
            return Err(Error::Data(format!("pixel {v} is not a byte level")));
        }
        data.push(scaled as u8);
    }
    let labels = ds
        .labels()
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| Error::Data(format!("label {l} does not fit in a byte"))))
        .collect::<Result<Vec<u8>>>()?;
    Ok((
        IdxArray { dims: vec![shape[0], shape[2], shape[3]], data },
        IdxArray { dims: vec![labels.len()], data: labels },
    ))
}
