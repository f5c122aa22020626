//! IDX binary files (the MNIST container): big-endian magic, big-endian
//! u32 dimensions, then unsigned bytes.

use std::path::{Path, PathBuf};

use super::{LabeledSet, Pattern};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            format_err(
                path,
                bytes.len(),
                format!("truncated header: expected at least {} bytes, found {}", offset + 4, bytes.len()),
            )
        })
}

/// Parses the header and returns `(dims, payload offset)`.
fn parse_header(bytes: &[u8], path: &Path, magic: u32, ndims: usize) -> Result<(Vec<usize>, usize)> {
    let found = read_u32(bytes, 0, path)?;
    if found != magic {
        return Err(format_err(path, 0, format!("bad magic 0x{found:08x}, expected 0x{magic:08x}")));
    }
    let dims = (0..ndims)
        .map(|k| read_u32(bytes, 4 + 4 * k, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let offset = 4 + 4 * ndims;
    let expected = offset + dims.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(format_err(
            path,
            bytes.len().min(expected),
            format!("expected {expected} bytes for dimensions {dims:?}, found {}", bytes.len()),
        ));
    }
    Ok((dims, offset))
}

pub(crate) fn parse_idx(images: &[u8], images_path: &Path, labels: &[u8], labels_path: &Path) -> Result<LabeledSet> {
    let (idims, ioff) = parse_header(images, images_path, IMAGES_MAGIC, 3)?;
    let (ldims, loff) = parse_header(labels, labels_path, LABELS_MAGIC, 1)?;
    let (count, dim) = (idims[0], idims[1] * idims[2]);
    if ldims[0] != count {
        return Err(format_err(
            labels_path,
            4,
            format!("label count {} does not match image count {count}", ldims[0]),
        ));
    }
    if dim == 0 {
        return Err(format_err(images_path, 8, "images have zero pixels"));
    }
    let raw_labels = &labels[loff..];
    let classes = raw_labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let patterns = images[ioff..]
        .chunks_exact(dim)
        .zip(raw_labels)
        .map(|(px, &l)| Pattern {
            input: px.iter().map(|&b| f64::from(b) / 255.0).collect(),
            label: l as usize,
        })
        .collect();
    Ok(LabeledSet { dim, classes, patterns })
}

/// Loads an image file (magic 0x803) and its label file (magic 0x801).
/// Pixel bytes are scaled to [0,1]; images are flattened row-major. Class
/// ids are the raw label bytes, so the class count is `max label + 1`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledSet> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(PathBuf::from(p), e));
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    parse_idx(&read(ip)?, ip, &read(lp)?, lp)
}
