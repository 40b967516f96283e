//! CIFAR-10 binary batches: 3073-byte records, one label byte followed by the
//! red, green and blue 32×32 planes.

use std::fs;
use std::path::Path;

use super::{ImageDataset, Split};
use crate::error::{Error, Result};
use crate::models::InputShape;

pub const RECORD_LEN: usize = 3073;
const PLANE: usize = 32 * 32;

pub const CATEGORY_NAMES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

pub fn file_names(split: Split) -> Vec<String> {
    match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".to_string()],
    }
}

/// Decodes one record into its label and height × width × channel bytes.
pub fn decode_record(record: &[u8]) -> (u8, Vec<u8>) {
    debug_assert_eq!(record.len(), RECORD_LEN);
    let mut hwc = vec![0u8; 3 * PLANE];
    for ch in 0..3 {
        let plane = &record[1 + ch * PLANE..1 + (ch + 1) * PLANE];
        for (pix, &v) in plane.iter().enumerate() {
            hwc[pix * 3 + ch] = v;
        }
    }
    (record[0], hwc)
}

/// Inverse of [`decode_record`].
pub fn encode_record(label: u8, hwc: &[u8]) -> Vec<u8> {
    let mut rec = vec![0u8; RECORD_LEN];
    rec[0] = label;
    for (i, &v) in hwc.iter().enumerate() {
        let (pix, ch) = (i / 3, i % 3);
        rec[1 + ch * PLANE + pix] = v;
    }
    rec
}

/// Parses every record of one batch file, appending to `pixels`/`labels`.
pub fn parse_batch(bytes: &[u8], file: &Path, pixels: &mut Vec<u8>, labels: &mut Vec<u8>) -> Result<()> {
    if !bytes.len().is_multiple_of(RECORD_LEN) {
        let whole = bytes.len() / RECORD_LEN;
        return Err(Error::Format {
            file: file.to_path_buf(),
            offset: (whole * RECORD_LEN) as u64,
            message: format!(
                "file length {} is not a multiple of the {RECORD_LEN}-byte record length",
                bytes.len()
            ),
        });
    }
    for (i, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        let (label, hwc) = decode_record(rec);
        if label > 9 {
            return Err(Error::Format {
                file: file.to_path_buf(),
                offset: (i * RECORD_LEN) as u64,
                message: format!("label {label} outside 0..=9"),
            });
        }
        labels.push(label);
        pixels.extend_from_slice(&hwc);
    }
    Ok(())
}

pub fn load_cifar10(root: &Path, split: Split) -> Result<ImageDataset> {
    let names = file_names(split);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for name in &names {
        let path = root.join(name);
        if !path.is_file() {
            return Err(Error::MissingData(format!(
                "CIFAR-10 {split} split needs {} in {}; {} is missing",
                names.join(", "),
                root.display(),
                path.display()
            )));
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        parse_batch(&bytes, &path, &mut pixels, &mut labels)?;
    }
    ImageDataset::new("cifar10", split, InputShape::CIFAR10, 10, pixels, labels)
}
