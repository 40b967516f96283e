use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::InputShape;
use crate::numerics::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Labelled 8-bit images stored height × width × channels, one after another.
#[derive(Debug, Clone)]
pub struct ImageDataset {
    name: String,
    split: Split,
    shape: InputShape,
    num_categories: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl ImageDataset {
    pub fn new(
        name: impl Into<String>,
        split: Split,
        shape: InputShape,
        num_categories: usize,
        pixels: Vec<u8>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if pixels.len() != labels.len() * shape.numel() {
            return Err(Error::invalid(format!(
                "{} pixel bytes for {} images of {:?}",
                pixels.len(),
                labels.len(),
                shape
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_categories) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_categories} categories"
            )));
        }
        Ok(Self {
            name: name.into(),
            split,
            shape,
            num_categories,
            pixels,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn shape(&self) -> InputShape {
        self.shape
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Raw bytes of image `index` (height × width × channels).
    pub fn image_bytes(&self, index: usize) -> &[u8] {
        let n = self.shape.numel();
        &self.pixels[index * n..(index + 1) * n]
    }

    /// Image `index` with every byte `b` mapped to `b / 255`.
    pub fn image<T: Scalar>(&self, index: usize) -> Tensor<T> {
        let data = self
            .image_bytes(index)
            .iter()
            .map(|&b| T::lit(b as f64 / 255.0))
            .collect();
        Tensor::new(self.shape.hwc().to_vec(), data).expect("stored images match shape")
    }

    /// The first `n` images (all of them if `n` exceeds the size).
    pub fn truncated(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        self.labels.truncate(n);
        self.pixels.truncate(n * self.shape.numel());
        self
    }

    /// Keeps only images whose label satisfies `keep`.
    pub fn filtered(&self, keep: impl Fn(usize) -> bool) -> Self {
        let n = self.shape.numel();
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for i in 0..self.len() {
            if keep(self.label(i)) {
                pixels.extend_from_slice(self.image_bytes(i));
                labels.push(self.labels[i]);
            }
        }
        debug_assert_eq!(pixels.len(), labels.len() * n);
        Self {
            name: self.name.clone(),
            split: self.split,
            shape: self.shape,
            num_categories: self.num_categories,
            pixels,
            labels,
        }
    }
}
