//! MNIST in the IDX format: big-endian headers, magic `0x00000803` for image
//! files and `0x00000801` for label files.

use std::fs;
use std::path::{Path, PathBuf};

use super::{ImageDataset, Split};
use crate::error::{Error, Result};
use crate::models::InputShape;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// `(images, labels)` file names for a split.
pub fn file_names(split: Split) -> (&'static str, &'static str) {
    match split {
        Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, file: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format {
            file: file.to_path_buf(),
            offset: bytes.len() as u64,
            message: format!("file ends inside the header (needs byte {})", offset + 4),
        })
}

/// Parses an IDX image file into `(rows, cols, pixel bytes)`.
pub fn parse_images(bytes: &[u8], file: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            file: file.to_path_buf(),
            offset: 0,
            message: format!("bad magic number {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, file)? as usize;
    let rows = be_u32(bytes, 8, file)? as usize;
    let cols = be_u32(bytes, 12, file)? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::Format {
            file: file.to_path_buf(),
            offset: bytes.len() as u64,
            message: format!("truncated: header promises {count} images of {rows}x{cols} ({need} bytes)"),
        });
    }
    Ok((rows, cols, bytes[16..need].to_vec()))
}

pub fn parse_labels(bytes: &[u8], file: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            file: file.to_path_buf(),
            offset: 0,
            message: format!("bad magic number {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, file)? as usize;
    let need = 8 + count;
    if bytes.len() < need {
        return Err(Error::Format {
            file: file.to_path_buf(),
            offset: bytes.len() as u64,
            message: format!("truncated: header promises {count} labels"),
        });
    }
    let labels = bytes[8..need].to_vec();
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::Format {
            file: file.to_path_buf(),
            offset: (8 + pos) as u64,
            message: format!("label {} outside 0..=9", labels[pos]),
        });
    }
    Ok(labels)
}

/// Loads one MNIST split from `root`, scaling pixels to `[0, 1]` on access.
pub fn load_mnist(root: &Path, split: Split) -> Result<ImageDataset> {
    let (img_name, lbl_name) = file_names(split);
    let img_path: PathBuf = root.join(img_name);
    let lbl_path: PathBuf = root.join(lbl_name);
    for p in [&img_path, &lbl_path] {
        if !p.is_file() {
            return Err(Error::MissingData(format!(
                "MNIST {split} split needs {} and {} in {}; {} is missing",
                img_name,
                lbl_name,
                root.display(),
                p.display()
            )));
        }
    }
    let (rows, cols, pixels) = parse_images(&read(&img_path)?, &img_path)?;
    if (rows, cols) != (28, 28) {
        return Err(Error::Format {
            file: img_path,
            offset: 8,
            message: format!("expected 28x28 images, header says {rows}x{cols}"),
        });
    }
    let labels = parse_labels(&read(&lbl_path)?, &lbl_path)?;
    if labels.len() * rows * cols != pixels.len() {
        return Err(Error::Format {
            file: lbl_path,
            offset: 4,
            message: format!(
                "{} labels but {} images",
                labels.len(),
                pixels.len() / (rows * cols)
            ),
        });
    }
    ImageDataset::new("mnist", split, InputShape::MNIST, 10, pixels, labels)
}

/// Encodes images and labels as IDX files (the inverse of [`load_mnist`]).
pub fn write_idx(root: &Path, split: Split, images: &[u8], labels: &[u8]) -> Result<()> {
    let (img_name, lbl_name) = file_names(split);
    let mut img = Vec::with_capacity(16 + images.len());
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    img.extend_from_slice(&28u32.to_be_bytes());
    img.extend_from_slice(&28u32.to_be_bytes());
    img.extend_from_slice(images);
    let mut lbl = Vec::with_capacity(8 + labels.len());
    lbl.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lbl.extend_from_slice(labels);
    let ip = root.join(img_name);
    fs::write(&ip, img).map_err(|e| Error::io(&ip, e))?;
    let lp = root.join(lbl_name);
    fs::write(&lp, lbl).map_err(|e| Error::io(&lp, e))
}
