//! IDX binary loader for MNIST-style corpora.
//!
//! Big-endian headers: magic `0x00000803` for u8 image tensors, `0x00000801`
//! for u8 label vectors. Pixels are scaled to `[0, 1]` by division with 255
//! and images are row-flattened.

use std::fs;
use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn read_u32(&mut self) -> Result<u32> {
        let end = self.offset + 4;
        let slice = self.bytes.get(self.offset..end).ok_or_else(|| {
            Error::format(
                self.path,
                self.offset as u64,
                "file truncated while reading a big-endian u32",
            )
        })?;
        self.offset = end;
        Ok(u32::from_be_bytes(slice.try_into().expect("4 bytes")))
    }

    fn read_bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.offset + n;
        let slice = self.bytes.get(self.offset..end).ok_or_else(|| {
            Error::format(
                self.path,
                self.offset as u64,
                format!("file truncated: expected {n} more payload bytes"),
            )
        })?;
        self.offset = end;
        Ok(slice)
    }
}

fn read_images(path: &Path) -> Result<(Matrix, usize, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        offset: 0,
        path,
    };
    let magic = r.read_u32()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(
            path,
            0,
            format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = r.read_u32()? as usize;
    let rows = r.read_u32()? as usize;
    let cols = r.read_u32()? as usize;
    let pixels = r.read_bytes(count * rows * cols)?;
    let data: Vec<f64> = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Ok((Matrix::from_vec(count, rows * cols, data)?, rows, cols))
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        offset: 0,
        path,
    };
    let magic = r.read_u32()?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(
            path,
            0,
            format!("bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        ));
    }
    let count = r.read_u32()? as usize;
    let labels = r.read_bytes(count)?;
    Ok(labels.iter().map(|&l| l as usize).collect())
}

/// Loads an image/label IDX pair into a flattened, `[0, 1]`-scaled dataset.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let (samples, _, _) = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if labels.len() != samples.rows() {
        return Err(Error::format(
            labels_path,
            4,
            format!(
                "label count {} does not match image count {}",
                labels.len(),
                samples.rows()
            ),
        ));
    }
    LabeledDataset::new(samples, Some(labels))
}
